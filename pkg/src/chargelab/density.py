"""Vectorized density-operator MPS engine.

A density operator is stored as an MPS whose physical index at each site
is the pair (row qubit, column qubit), flattened as p = 2*r + c; the
column index is the conjugated one, so a map X -> A X B^dag acts locally
as A tensor conj(B).  The dephasing channel and the forced-measurement
maps are then constant 16x16 two-site superoperators.

The same MPS core also serves the classical-distribution variant with
physical dimension 2 (see chargelab.u1).

Magnitudes are kept in log space: every two-site update strips the local
norm into `log_scale`, and all closure contractions rescale as they sweep,
so likelihoods that decay exponentially in the number of measurements
never underflow.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from math import comb
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.linalg

from chargelab.circuits import GATE, MeasurementRecord, choose_outcome
from chargelab.symmetry import ChargeLabel, initial_amplitudes, projector_set, sym_gate

NEG_INF = float("-inf")

TRACE_VEC = np.array([1.0, 0.0, 0.0, 1.0], dtype=complex)

_TIE_REL_TOL = 1e-12


@dataclass(frozen=True)
class TruncationPolicy:
    """Discarded-squared-weight cutoff relative to the local norm, plus an
    optional hard bond-dimension cap."""

    cutoff: float = 1e-12
    max_chi: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.cutoff > 0:
            raise ValueError("cutoff must be positive")
        if self.max_chi is not None and self.max_chi < 1:
            raise ValueError("max_chi must be >= 1")


DEFAULT_POLICY = TruncationPolicy()


class VectorMPS:
    """Open-boundary MPS with site tensors of shape (chi_l, d, chi_r),
    a canonical center, and a log-scale accumulator."""

    __slots__ = ("tensors", "center", "log_scale", "is_null", "peak_bond")

    def __init__(self, tensors: list[np.ndarray], log_scale: float = 0.0, canonicalize: bool = True):
        self.tensors = [np.ascontiguousarray(t, dtype=complex) for t in tensors]
        self.center = 0
        self.log_scale = float(log_scale)
        self.is_null = False
        self.peak_bond = self.max_bond()
        if canonicalize:
            self._canonicalize()

    # -- basic accessors ---------------------------------------------------

    @property
    def L(self) -> int:
        return len(self.tensors)

    @property
    def phys_dim(self) -> int:
        return self.tensors[0].shape[1]

    def bond_dims(self) -> list[int]:
        return [t.shape[2] for t in self.tensors[:-1]]

    def max_bond(self) -> int:
        return max((t.shape[2] for t in self.tensors[:-1]), default=1)

    def copy(self) -> "VectorMPS":
        out = VectorMPS.__new__(VectorMPS)
        out.tensors = [t.copy() for t in self.tensors]
        out.center = self.center
        out.log_scale = self.log_scale
        out.is_null = self.is_null
        out.peak_bond = self.peak_bond
        return out

    def mark_null(self) -> None:
        self.is_null = True
        self.log_scale = NEG_INF
        for k, t in enumerate(self.tensors):
            self.tensors[k] = np.zeros((1, t.shape[1], 1), dtype=complex)
        self.center = 0

    # -- canonical form ----------------------------------------------------

    def _canonicalize(self) -> None:
        """Right-orthogonalize every tensor but the first and strip the
        residual norm into log_scale; center lands at site 0."""
        for site in range(self.L - 1, 0, -1):
            self._orthogonalize_left_step(site)
        t0 = self.tensors[0]
        nrm = float(np.linalg.norm(t0))
        if nrm == 0.0:
            self.mark_null()
            return
        self.tensors[0] = t0 / nrm
        self.log_scale += float(np.log(nrm))
        self.center = 0

    def _orthogonalize_left_step(self, site: int) -> None:
        t = self.tensors[site]
        chi_l, d, chi_r = t.shape
        r_mat, q_mat = scipy.linalg.rq(t.reshape(chi_l, d * chi_r), mode="economic")
        k = q_mat.shape[0]
        self.tensors[site] = q_mat.reshape(k, d, chi_r)
        self.tensors[site - 1] = np.tensordot(self.tensors[site - 1], r_mat, axes=(2, 0))

    def _orthogonalize_right_step(self, site: int) -> None:
        t = self.tensors[site]
        chi_l, d, chi_r = t.shape
        q_mat, r_mat = np.linalg.qr(t.reshape(chi_l * d, chi_r))
        k = q_mat.shape[1]
        self.tensors[site] = q_mat.reshape(chi_l, d, k)
        self.tensors[site + 1] = np.tensordot(r_mat, self.tensors[site + 1], axes=(1, 0))

    def move_center(self, site: int) -> None:
        while self.center < site:
            self._orthogonalize_right_step(self.center)
            self.center += 1
        while self.center > site:
            self._orthogonalize_left_step(self.center)
            self.center -= 1


def _truncation_rank(s: np.ndarray, policy: TruncationPolicy) -> int:
    """Number of singular values kept: discard the smallest tail whose
    squared weight stays below cutoff * total, never splitting a group of
    (near-)degenerate values; a hard cap shrinks to the enclosing group
    boundary when possible."""
    weights = s * s
    total = float(weights.sum())
    n = len(s)
    tail = np.cumsum(weights[::-1])[::-1]
    allowed = np.nonzero(tail <= policy.cutoff * total)[0]
    k = int(allowed[0]) if len(allowed) else n
    k = max(k, 1)
    tie = _TIE_REL_TOL * float(s[0])
    while k < n and s[k - 1] - s[k] <= tie:
        k += 1
    if policy.max_chi is not None and k > policy.max_chi:
        k = policy.max_chi
        j = k
        while j > 1 and s[j - 1] - s[j] <= tie:
            j -= 1
        if j > 1 or s[0] - s[1] > tie:
            k = j
    return k


def _svd(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    try:
        return np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError:
        return scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesvd")


def apply_two_site(mps: VectorMPS, site: int, op: Optional[np.ndarray], policy: TruncationPolicy) -> None:
    """Contract sites (site, site+1), apply a d^2 x d^2 operator on the
    merged physical pair, and re-split with policy truncation.  `site` is
    0-based; op=None performs a pure compression step."""
    if mps.is_null:
        return
    if mps.center < site:
        mps.move_center(site)
    elif mps.center > site + 1:
        mps.move_center(site + 1)
    d = mps.phys_dim
    t1, t2 = mps.tensors[site], mps.tensors[site + 1]
    chi_l, chi_r = t1.shape[0], t2.shape[2]
    theta = np.tensordot(t1, t2, axes=(2, 0))  # (chi_l, d, d, chi_r)
    if op is not None:
        flat = theta.reshape(chi_l, d * d, chi_r)
        tmp = op @ flat.transpose(1, 0, 2).reshape(d * d, chi_l * chi_r)
        theta = tmp.reshape(d * d, chi_l, chi_r).transpose(1, 0, 2)
    u, s, vh = _svd(theta.reshape(chi_l * d, d * chi_r))
    total = float(s @ s)
    if not total > 0.0:
        mps.mark_null()
        return
    k = _truncation_rank(s, policy)
    kept = s[:k]
    nrm = float(np.linalg.norm(kept))
    mps.tensors[site] = np.ascontiguousarray(u[:, :k].reshape(chi_l, d, k))
    mps.tensors[site + 1] = np.ascontiguousarray(((kept / nrm)[:, None] * vh[:k]).reshape(k, d, chi_r))
    mps.log_scale += float(np.log(nrm))
    mps.center = site + 1
    if k > mps.peak_bond:
        mps.peak_bond = k


def mps_add(a: VectorMPS, b: VectorMPS) -> VectorMPS:
    """Direct-sum addition of two same-shape MPS with zero log_scale."""
    if a.L != b.L or a.phys_dim != b.phys_dim:
        raise ValueError("length or physical dimension mismatch")
    if a.log_scale != 0.0 or b.log_scale != 0.0:
        raise ValueError("mps_add requires unscaled inputs")
    d = a.phys_dim
    tensors = []
    for i, (ta, tb) in enumerate(zip(a.tensors, b.tensors)):
        if i == 0 and a.L == 1:
            tensors.append(ta + tb)
        elif i == 0:
            tensors.append(np.concatenate([ta, tb], axis=2))
        elif i == a.L - 1:
            tensors.append(np.concatenate([ta, tb], axis=0))
        else:
            al, _, ar = ta.shape
            bl, _, br = tb.shape
            t = np.zeros((al + bl, d, ar + br), dtype=complex)
            t[:al, :, :ar] = ta
            t[al:, :, ar:] = tb
            tensors.append(t)
    return VectorMPS(tensors, canonicalize=False)


def compress(mps: VectorMPS, policy: TruncationPolicy) -> VectorMPS:
    """Two canonicalized truncation sweeps; used after direct sums."""
    mps._canonicalize()
    for i in range(mps.L - 1):
        apply_two_site(mps, i, None, policy)
    for i in range(mps.L - 2, -1, -1):
        apply_two_site(mps, i, None, policy)
    return mps


# --- closure contractions ---------------------------------------------------


def _closure_scaled(mps: VectorMPS, site_vecs: Sequence[np.ndarray]) -> tuple[complex, float]:
    """Contract each site tensor against a per-site physical vector and
    the bond chain; returns (mantissa, log magnitude)."""
    if mps.is_null:
        return 0.0, 0.0
    v = np.ones(1, dtype=complex)
    log = mps.log_scale
    for t, u in zip(mps.tensors, site_vecs):
        v = v @ np.tensordot(u, t, axes=(0, 1))
        nrm = float(np.linalg.norm(v))
        if nrm == 0.0:
            return 0.0, 0.0
        v /= nrm
        log += float(np.log(nrm))
    return complex(v[0]), log


def _overlap_scaled(a: VectorMPS, b: VectorMPS) -> tuple[complex, float]:
    """<a|b> = Tr(A^dag B) in vectorized form, scale-managed."""
    if a.is_null or b.is_null:
        return 0.0, 0.0
    env = np.ones((1, 1), dtype=complex)
    log = a.log_scale + b.log_scale
    for ta, tb in zip(a.tensors, b.tensors):
        env = np.tensordot(env, tb, axes=(1, 0))  # (chi_a, d, chi_b')
        env = np.tensordot(ta.conj(), env, axes=((0, 1), (0, 1)))  # (chi_a', chi_b')
        nrm = float(np.linalg.norm(env))
        if nrm == 0.0:
            return 0.0, 0.0
        env /= nrm
        log += float(np.log(nrm))
    return complex(env[0, 0]), log


def trace(dm: VectorMPS) -> float:
    """Tr(rho) with the log scale folded back in."""
    mant, log = _closure_scaled(dm, [TRACE_VEC] * dm.L)
    return float((mant * np.exp(log)).real)


def log_trace(dm: VectorMPS) -> float:
    mant, log = _closure_scaled(dm, [TRACE_VEC] * dm.L)
    re = mant.real
    if re <= 0.0:
        return NEG_INF
    return float(np.log(re) + log)


def hs_inner(a: VectorMPS, b: VectorMPS) -> complex:
    """Hilbert-Schmidt inner product Tr(a^dag b)."""
    if a.L != b.L:
        raise ValueError("length mismatch")
    mant, log = _overlap_scaled(a, b)
    return complex(mant * np.exp(log))


def trace_against(dm: VectorMPS, mpo: VectorMPS) -> float:
    """Tr(mpo * dm) for Hermitian mpo (so the conjugated overlap equals
    the plain trace pairing)."""
    return float(hs_inner(mpo, dm).real)


def log_trace_against(dm: VectorMPS, mpo: VectorMPS) -> float:
    mant, log = _overlap_scaled(mpo, dm)
    re = mant.real
    if re <= 0.0:
        return NEG_INF
    return float(np.log(re) + log)


# --- superoperator constants --------------------------------------------------


def pair_superop(op_row: np.ndarray, op_col: np.ndarray) -> np.ndarray:
    """16x16 action of X -> A X B^dag on the merged two-site physical
    pair, given A = op_row and conj(B) = op_col (both 4x4 on qubit pairs)."""
    a = op_row.reshape(2, 2, 2, 2)
    b = op_col.reshape(2, 2, 2, 2)
    s = np.einsum("aeAE,bfBF->abefABEF", a, b)
    return np.ascontiguousarray(s.reshape(16, 16))


def site_superop(op_row: np.ndarray, op_col: np.ndarray) -> np.ndarray:
    """4x4 single-site analogue of pair_superop."""
    return np.ascontiguousarray(np.einsum("rR,cC->rcRC", op_row, op_col).reshape(4, 4))


@lru_cache(maxsize=1)
def channel_superop() -> np.ndarray:
    """The two-site dephasing channel Sum_k P_k . P_k in vectorized form."""
    out = np.zeros((16, 16), dtype=complex)
    for p in projector_set().as_tuple():
        out += pair_superop(p, p.conj())
    out.flags.writeable = False
    return out


@lru_cache(maxsize=None)
def forced_superop(outcome: str) -> np.ndarray:
    idx = {"1": 0, "s": 1, "a": 2}[outcome]
    p = projector_set().as_tuple()[idx]
    out = pair_superop(p, p.conj())
    out.flags.writeable = False
    return out


@lru_cache(maxsize=None)
def _pair_trace_op(outcome: Optional[str]) -> np.ndarray:
    """W[p1, p2] such that Sum W[p1,p2] rho[(p1,p2)] = Tr(P rho) on the
    pair; outcome None gives the plain pair trace."""
    if outcome is None:
        op = np.eye(4, dtype=complex)
    else:
        idx = {"1": 0, "s": 1, "a": 2}[outcome]
        op = projector_set().as_tuple()[idx]
    w = np.transpose(op.reshape(2, 2, 2, 2), (2, 0, 3, 1)).reshape(4, 4)
    out = np.ascontiguousarray(w)
    out.flags.writeable = False
    return out


# --- constructors -------------------------------------------------------------


def identity_mps(L: int) -> VectorMPS:
    """Product MPS of the identity operator; trace 2^L, bond dimension 1."""
    if L < 2:
        raise ValueError("L must be >= 2")
    t = TRACE_VEC.reshape(1, 4, 1)
    return VectorMPS([t.copy() for _ in range(L)])


def _counter_tensors(L: int, n_ones: int, flip: bool, phys_dim: int = 4) -> list[np.ndarray]:
    """MPS of the diagonal charge projector (flip=False) or of its
    composition with the global bit flip (flip=True), built from a
    running count of row-qubit ones."""

    def counts(k: int) -> list[int]:
        return list(range(max(0, n_ones - (L - k)), min(k, n_ones) + 1))

    tensors = []
    for site in range(1, L + 1):
        cin = counts(site - 1)
        cout = counts(site)
        index = {n: i for i, n in enumerate(cout)}
        t = np.zeros((len(cin), phys_dim, len(cout)), dtype=complex)
        for ii, n in enumerate(cin):
            for r in (0, 1):
                jj = index.get(n + r)
                if jj is None:
                    continue
                if phys_dim == 4:
                    c = (1 - r) if flip else r
                    t[ii, 2 * r + c, jj] = 1.0
                else:
                    t[ii, r, jj] = 1.0
        tensors.append(t)
    return tensors


@lru_cache(maxsize=None)
def _sector_mixed_template(label: ChargeLabel, L: int):
    if L < 2 or L % 2:
        raise ValueError("L must be an even integer >= 2")
    half = L // 2
    if label is ChargeLabel.ZERO_PLUS:
        parts = [(half, False), (half, True)]
        norm = comb(L, half)
    else:
        parts = [(half + 1, False), (half - 1, False), (half + 1, True), (half - 1, True)]
        norm = 2 * comb(L, half + 1)
    acc = VectorMPS(_counter_tensors(L, parts[0][0], parts[0][1]), canonicalize=False)
    for n_ones, flip in parts[1:]:
        acc = mps_add(acc, VectorMPS(_counter_tensors(L, n_ones, flip), canonicalize=False))
    compress(acc, TruncationPolicy(cutoff=1e-28))
    acc.log_scale -= float(np.log(norm))
    return tuple((t.tobytes(), t.shape) for t in acc.tensors), acc.log_scale, acc.center


def sector_mixed_mpo(label: ChargeLabel, L: int) -> VectorMPS:
    """Maximally mixed state of the labelled symmetry sector: for the
    half-filling label the (q=0, parity +) projector over its dimension;
    for the |q|=1 label the flip-even projector of the two-sector doublet
    over its dimension (the parity-coherent block survives the strongly
    symmetric dynamics, so it belongs in the scrambled state)."""
    template, log_scale, center = _sector_mixed_template(label, L)
    tensors = [np.frombuffer(raw, dtype=complex).reshape(shape).copy() for raw, shape in template]
    out = VectorMPS(tensors, canonicalize=False)
    out.log_scale = log_scale
    out.center = center
    return out


def max_bond(dm: VectorMPS) -> int:
    return dm.max_bond()


def diagonal_sector_mixture(L: int, n_ones: int) -> VectorMPS:
    """Uniform classical mixture over all bitstrings with a fixed number
    of ones, as a (diagonal) density MPS."""
    out = VectorMPS(_counter_tensors(L, n_ones, flip=False))
    out.log_scale -= float(np.log(comb(L, n_ones)))
    return out


def pure_initial_mps_tensors(label: ChargeLabel, L: int) -> list[np.ndarray]:
    """chi=2 pure-state MPS of the weakly entangled start states."""
    if L < 2 or L % 2:
        raise ValueError("L must be an even integer >= 2")
    pair_s = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex) / np.sqrt(2.0)
    pair_bell = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=complex) / np.sqrt(2.0)
    tensors = []
    for pair_idx in range(L // 2):
        mat = pair_bell if (label is ChargeLabel.ONE and pair_idx == 0) else pair_s
        tensors.append(np.eye(2, dtype=complex).reshape(1, 2, 2))
        tensors.append(mat.reshape(2, 2, 1))
    return tensors


def density_from_pure(label: ChargeLabel, L: int) -> VectorMPS:
    """Vectorized |psi><psi| of the labelled start state."""
    tensors = []
    for a in pure_initial_mps_tensors(label, L):
        chi_l, _, chi_r = a.shape
        d = np.einsum("arb,AcB->aArcbB", a, a.conj())
        tensors.append(d.reshape(chi_l * chi_l, 4, chi_r * chi_r))
    return VectorMPS(tensors)


def to_dense(dm: VectorMPS, max_sites: int = 8) -> np.ndarray:
    """Dense matrix of a density MPS; guarded to small chains."""
    L = dm.L
    if L > max_sites:
        raise ValueError(f"to_dense guarded to L <= {max_sites}")
    if dm.is_null:
        return np.zeros((2**L, 2**L), dtype=complex)
    cur = dm.tensors[0].reshape(dm.tensors[0].shape[1], -1)
    for t in dm.tensors[1:]:
        cur = np.tensordot(cur, t, axes=(-1, 0)).reshape(-1, t.shape[2])
    vec = cur.reshape(-1) * np.exp(dm.log_scale)
    arr = vec.reshape([2] * (2 * L))
    perm = list(range(0, 2 * L, 2)) + list(range(1, 2 * L, 2))
    return np.ascontiguousarray(np.transpose(arr, perm).reshape(2**L, 2**L))


# --- channel and measurement maps ---------------------------------------------


def apply_channel(dm: VectorMPS, bond: int, policy: TruncationPolicy = DEFAULT_POLICY) -> VectorMPS:
    """Two-site dephasing channel at a bond (1-based left site)."""
    _check_bond(dm, bond)
    apply_two_site(dm, bond - 1, channel_superop(), policy)
    return dm


def apply_forced_measurement(
    dm: VectorMPS, bond: int, outcome: str, policy: TruncationPolicy = DEFAULT_POLICY
) -> VectorMPS:
    """Trace-nonincreasing projection superoperator for a recorded
    outcome; the branch weight is absorbed into log_scale.  A vanishing
    branch flags the state null instead of raising."""
    _check_bond(dm, bond)
    apply_two_site(dm, bond - 1, forced_superop(outcome), policy)
    return dm


def _check_bond(dm: VectorMPS, bond: int) -> None:
    if not 1 <= bond < dm.L:
        raise ValueError(f"bond {bond} out of range for L={dm.L}")


def born_probs_bond(dm: VectorMPS, bond: int) -> tuple[float, float, float]:
    """Normalized Born weights of the three projector outcomes at a bond."""
    _check_bond(dm, bond)
    if dm.is_null:
        raise ValueError("null state has no Born weights")
    i = bond - 1
    mats = [np.tensordot(TRACE_VEC, t, axes=(0, 1)) for t in dm.tensors]
    left = np.ones(1, dtype=complex)
    for k in range(i):
        left = left @ mats[k]
        left = _rescale(left)
    right = np.ones(1, dtype=complex)
    for k in range(dm.L - 1, i + 1, -1):
        right = mats[k] @ right
        right = _rescale(right)
    theta = np.tensordot(dm.tensors[i], dm.tensors[i + 1], axes=(2, 0))  # (a, p1, p2, c)
    weights = []
    for outcome in (None, "1", "s", "a"):
        w = _pair_trace_op(outcome)
        local = np.einsum("pq,apqc->ac", w, theta, optimize=True)
        weights.append(complex(left @ local @ right))
    total = weights[0].real
    if not total > 0.0:
        raise ValueError("non-positive trace; cannot sample outcome")
    probs = np.array([w.real for w in weights[1:]]) / total
    probs = np.clip(probs, 0.0, None)
    return tuple(float(x) for x in probs)


def _rescale(v: np.ndarray) -> np.ndarray:
    nrm = float(np.linalg.norm(v))
    return v if nrm == 0.0 else v / nrm


def sample_measure_bond(
    dm: VectorMPS, bond: int, rng: np.random.Generator, policy: TruncationPolicy = DEFAULT_POLICY
) -> tuple[str, float]:
    """Born-sample an outcome at a bond and project onto it."""
    w = np.array(born_probs_bond(dm, bond))
    w = w / w.sum()
    idx = choose_outcome(rng, w)
    outcome = ("1", "s", "a")[idx]
    apply_forced_measurement(dm, bond, outcome, policy)
    return outcome, float(w[idx])


# --- record evolution ----------------------------------------------------------


def dual_evolve_identity(record: MeasurementRecord, policy: TruncationPolicy = DEFAULT_POLICY) -> VectorMPS:
    """Evolve the identity through the record's hybrid slots in exact
    reverse order, channels for gates and projection superoperators for
    recorded outcomes.  Every elementary map here is Hilbert-Schmidt
    self-adjoint, so this computes the adjoint of the forward sequence and
    Tr(sigma_Q K(rho)) = Tr(K_dual(1)-weighted overlap with sigma_Q)."""
    dm = identity_mps(record.L)
    for layer in reversed(record.hybrid.layers):
        for slot in reversed(layer):
            if slot.kind == GATE:
                apply_channel(dm, slot.bond, policy)
            else:
                apply_forced_measurement(dm, slot.bond, slot.outcome, policy)
            if dm.is_null:
                return dm
    return dm


def likelihood_noisy(
    record: MeasurementRecord,
    hypothesis: ChargeLabel,
    policy: TruncationPolicy = DEFAULT_POLICY,
    dual_state: Optional[VectorMPS] = None,
) -> float:
    """log P(record | hypothesis) under the dephasing-channel model; the
    dual-evolved identity may be passed in to share it across hypotheses."""
    if dual_state is None:
        dual_state = dual_evolve_identity(record, policy)
    if dual_state.is_null:
        return NEG_INF
    sigma = sector_mixed_mpo(hypothesis, record.L)
    return log_trace_against(dual_state, sigma)


def peak_bond_of_run(record: MeasurementRecord, policy: TruncationPolicy = DEFAULT_POLICY) -> int:
    """Largest bond dimension reached during the dual-decode evolution."""
    return dual_evolve_identity(record, policy).peak_bond


def channel_scramble(
    label: ChargeLabel,
    L: int,
    policy: TruncationPolicy = DEFAULT_POLICY,
    n_steps: Optional[int] = None,
) -> VectorMPS:
    """Brickwork dephasing-channel evolution of the labelled pure start
    state; converges to the sector-mixed state.  Defaults to L^2 layers."""
    if n_steps is None:
        n_steps = L * L
    dm = density_from_pure(label, L)
    odd = list(range(1, L, 2))
    even = list(range(2, L, 2))
    for _ in range(n_steps):
        for bond in odd + even:
            apply_channel(dm, bond, policy)
    return dm


def peak_bond_of_scramble(
    label: ChargeLabel, L: int, policy: TruncationPolicy = DEFAULT_POLICY, n_steps: Optional[int] = None
) -> int:
    return channel_scramble(label, L, policy, n_steps).peak_bond


# --- dense oracle ----------------------------------------------------------------


MAX_ORACLE_SITES = 6


def _dense_embed(op4: np.ndarray, bond: int, L: int) -> np.ndarray:
    return np.kron(np.kron(np.eye(2 ** (bond - 1)), op4), np.eye(2 ** (L - bond - 1)))


def dense_sector_mixed(label: ChargeLabel, L: int) -> np.ndarray:
    """Dense reference for sector_mixed_mpo."""
    n = 2**L
    ones = np.array([bin(i).count("1") for i in range(n)])
    flip = np.zeros((n, n))
    flip[np.arange(n)[::-1], np.arange(n)] = 1.0
    if label is ChargeLabel.ZERO_PLUS:
        mask = (ones == L // 2).astype(float)
        proj = np.diag(mask)
        return (proj + proj @ flip).astype(complex) / comb(L, L // 2)
    mask = ((ones == L // 2 + 1) | (ones == L // 2 - 1)).astype(float)
    proj = np.diag(mask)
    return (proj + proj @ flip).astype(complex) / (2 * comb(L, L // 2 + 1))


def dense_apply_channel_bond(rho: np.ndarray, bond: int, L: int) -> np.ndarray:
    out = np.zeros_like(rho)
    for p in projector_set().as_tuple():
        k = _dense_embed(p, bond, L)
        out += k @ rho @ k
    return out


def dense_apply_projection(rho: np.ndarray, bond: int, outcome: str, L: int) -> np.ndarray:
    idx = {"1": 0, "s": 1, "a": 2}[outcome]
    p = _dense_embed(projector_set().as_tuple()[idx], bond, L)
    return p @ rho @ p


def dense_oracle(record: MeasurementRecord, hypothesis: ChargeLabel, unitary_mode: bool = False) -> float:
    """Exact forward evolution of the full density matrix: channels plus
    forced projections starting from the sector-mixed state, or (in
    unitary mode) the record's own gates acting on the pure scrambled
    hypothesis state.  Returns the final trace P(record | hypothesis)."""
    L = record.L
    if L > MAX_ORACLE_SITES:
        raise ValueError(f"dense oracle guarded to L <= {MAX_ORACLE_SITES}")
    if unitary_mode:
        psi = initial_amplitudes(hypothesis, L)
        rho = np.outer(psi, psi.conj())
        for layer in record.scramble.layers:
            for slot in layer:
                u = _dense_embed(sym_gate(slot.params), slot.bond, L)
                rho = u @ rho @ u.conj().T
    else:
        rho = dense_sector_mixed(hypothesis, L)
    for layer in record.hybrid.layers:
        for slot in layer:
            if slot.kind == GATE:
                if unitary_mode:
                    u = _dense_embed(sym_gate(slot.params), slot.bond, L)
                    rho = u @ rho @ u.conj().T
                else:
                    rho = dense_apply_channel_bond(rho, slot.bond, L)
            else:
                rho = dense_apply_projection(rho, slot.bond, slot.outcome, L)
    return float(np.trace(rho).real)


# --- checkpointing ----------------------------------------------------------------

_CHECKPOINT_MAGIC = b"CLMP"
_CHECKPOINT_VERSION = 1


def save_checkpoint(dm: VectorMPS, path) -> None:
    """Versioned little-endian binary dump: header, then shape-prefixed
    complex128 tensors."""
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IIIq d B", _CHECKPOINT_VERSION, dm.L, dm.phys_dim, dm.center, dm.log_scale, int(dm.is_null)))
        for t in dm.tensors:
            fh.write(struct.pack("<QQQ", *t.shape))
            fh.write(np.ascontiguousarray(t, dtype="<c16").tobytes())


def load_checkpoint(path) -> VectorMPS:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError("not a chargelab checkpoint")
        version, L, d, center, log_scale, is_null = struct.unpack("<IIIq d B", fh.read(struct.calcsize("<IIIq d B")))
        if version != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        tensors = []
        for _ in range(L):
            shape = struct.unpack("<QQQ", fh.read(24))
            count = shape[0] * shape[1] * shape[2]
            data = np.frombuffer(fh.read(count * 16), dtype="<c16")
            tensors.append(data.reshape(shape).astype(complex))
    out = VectorMPS(tensors, canonicalize=False)
    out.center = center
    out.log_scale = log_scale
    out.is_null = bool(is_null)
    return out
