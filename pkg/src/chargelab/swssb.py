"""Strong-to-weak symmetry-breaking diagnostics.

The second-Renyi fidelity correlator compares a state against itself with
one unit of charge displaced between two sites; algebraic decay marks the
fuzzy phase, exponential decay the sharp phase.  The same quantities are
aggregated over Born-sampled trajectories into the system-plus-apparatus
estimator, and the subsystem charge variance gives an independent probe.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from multiprocessing import Pool
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.stats

from chargelab import density
from chargelab.circuits import choose_outcome, make_rng, record_seed
from chargelab.density import TRACE_VEC, TruncationPolicy, VectorMPS, site_superop
from chargelab.symmetry import ChargeLabel

LOWERING = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
RAISING = LOWERING.T.copy()

MISSING_FLOOR = 1e-12


@lru_cache(maxsize=1)
def _charge_move_superops() -> tuple[np.ndarray, np.ndarray]:
    """Per-site physical superoperators of X -> A X A^dag with
    A = (raise at far site) (lower at reference site)."""
    remove = site_superop(LOWERING, LOWERING.conj())
    add = site_superop(RAISING, RAISING.conj())
    return remove, add


def _overlap_with_insertions(a: VectorMPS, b: VectorMPS, inserts: dict[int, np.ndarray]) -> tuple[complex, float]:
    """<a | O b> with single-site physical superoperators applied to b's
    tensors on the fly (0-based sites); avoids copying the whole MPS."""
    if a.is_null or b.is_null:
        return 0.0, 0.0
    env = np.ones((1, 1), dtype=complex)
    log = a.log_scale + b.log_scale
    for site, (ta, tb) in enumerate(zip(a.tensors, b.tensors)):
        op = inserts.get(site)
        if op is not None:
            tb = np.einsum("pq,aqb->apb", op, tb)
        env = np.tensordot(env, tb, axes=(1, 0))
        env = np.tensordot(ta.conj(), env, axes=((0, 1), (0, 1)))
        nrm = float(np.linalg.norm(env))
        if nrm == 0.0:
            return 0.0, 0.0
        env /= nrm
        log += float(np.log(nrm))
    return complex(env[0, 0]), log


def renyi2_corr(dm: VectorMPS, site0: int, x: int) -> float:
    """Tr(rho rho_x) / Tr(rho^2) where rho_x displaces one unit of charge
    from site0 to site0 + x (1-based sites); invariant under global phase
    and rescaling of the input."""
    L = dm.L
    if not (1 <= site0 <= L and 1 <= site0 + x <= L and x >= 1):
        raise ValueError("correlator sites out of range")
    remove, add = _charge_move_superops()
    num_m, num_log = _overlap_with_insertions(dm, dm, {site0 - 1: remove, site0 + x - 1: add})
    den_m, den_log = _overlap_scaled_pair(dm)
    if num_m == 0.0:
        return 0.0
    return float(num_m.real / den_m.real * np.exp(num_log - den_log))


def _overlap_scaled_pair(dm: VectorMPS) -> tuple[complex, float]:
    return density._overlap_scaled(dm, dm)


def trajectory_correlators(dm: VectorMPS, site0: int, distances: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Per-distance (Tr(sigma rho_x), Tr(sigma^2)) of the normalized state
    sigma = dm / Tr(dm); the second entry is constant over x."""
    remove, add = _charge_move_superops()
    tr_m, tr_log = density._closure_scaled(dm, [TRACE_VEC] * dm.L)
    if tr_m.real <= 0.0:
        raise ValueError("non-positive trace")
    log_tr = float(np.log(tr_m.real) + tr_log)
    den_m, den_log = _overlap_scaled_pair(dm)
    t2 = float(den_m.real * np.exp(den_log - 2.0 * log_tr))
    t1 = np.empty(len(distances))
    for k, x in enumerate(distances):
        num_m, num_log = _overlap_with_insertions(dm, dm, {site0 - 1: remove, site0 + x - 1: add})
        t1[k] = 0.0 if num_m == 0.0 else float(num_m.real * np.exp(num_log - 2.0 * log_tr))
    return t1, t2


def phi_aggregate(trajectories: Sequence[tuple[float, float, float]]) -> float:
    """System-plus-apparatus correlator from Born-sampled trajectories
    given as (log p_m, Tr(sigma rho_x), Tr(sigma^2)); each trajectory
    already appears with Born frequency, so one extra p_m factor weights
    both sums."""
    if not trajectories:
        raise ValueError("no trajectories")
    logs = np.array([t[0] for t in trajectories])
    top = np.array([t[1] for t in trajectories])
    bottom = np.array([t[2] for t in trajectories])
    ref = logs.max()
    if ref == float("-inf"):
        raise ValueError("all trajectory weights vanished")
    w = np.exp(logs - ref)
    denom = float(np.dot(w, bottom))
    if denom == 0.0:
        raise ValueError("aggregate denominator vanished")
    return float(np.dot(w, top) / denom)


def subsystem_charge_variance(dm: VectorMPS, ell: int) -> float:
    """Var(N_ell) over the leftmost ell sites of the normalized state."""
    L = dm.L
    if not 1 <= ell <= L:
        raise ValueError("subsystem size out of range")
    number_vec = np.array([0.0, 0.0, 0.0, 1.0], dtype=complex)  # Tr(n rho) site closure
    mats = []
    num_mats = []
    for t in dm.tensors:
        m = np.tensordot(TRACE_VEC, t, axes=(0, 1))
        scale = float(np.linalg.norm(m))
        if scale == 0.0:
            raise ValueError("zero trace closure")
        mats.append(m / scale)
        num_mats.append(np.tensordot(number_vec, t, axes=(0, 1)) / scale)
    rights = [np.ones(1, dtype=complex)]
    for m in reversed(mats):
        rights.append(m @ rights[-1])
    rights.reverse()  # rights[k] closes sites k..L-1
    trace_raw = complex(rights[0][0])
    left = np.ones(1, dtype=complex)
    acc = np.zeros(1, dtype=complex)
    singles_sum = 0.0
    pair_sum = 0.0
    for k in range(ell):
        singles_sum += (left @ num_mats[k] @ rights[k + 1]).real
        pair_sum += (acc @ num_mats[k] @ rights[k + 1]).real
        acc = acc @ mats[k] + left @ num_mats[k]
        left = left @ mats[k]
    mean = singles_sum / trace_raw.real
    second = (singles_sum + 2.0 * pair_sum) / trace_raw.real
    return float(second - mean * mean)


# --- trajectory experiment -------------------------------------------------------


@dataclass
class CorrelatorSeries:
    """Per-trajectory correlator values on a distance grid plus their
    ensemble aggregates."""

    model: str
    L: int
    p: float
    site0: int
    distances: list[int]
    values: np.ndarray  # (n_traj, n_x) per-trajectory C2, NaN when unresolved
    log_weights: np.ndarray  # (n_traj,)
    tr_rho_hat: np.ndarray  # (n_traj, n_x) Tr(sigma rho_x)
    tr_rho_sq: np.ndarray  # (n_traj,)   Tr(sigma^2)
    mean: np.ndarray = field(default=None)
    stderr: np.ndarray = field(default=None)
    typical: np.ndarray = field(default=None)
    phi: np.ndarray = field(default=None)
    missing: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        # raw trajectory values (including exact zeros and roundoff noise)
        # enter the arithmetic mean; a distance is missing when even the
        # ensemble mean sits below numerical resolution
        raw = np.where(np.isfinite(self.values), self.values, 0.0)
        n = max(raw.shape[0], 1)
        self.mean = raw.mean(axis=0)
        self.stderr = raw.std(axis=0) / np.sqrt(n)
        self.missing = ~(self.mean > MISSING_FLOOR)
        self.typical = np.full(len(self.distances), np.nan)
        for j in range(len(self.distances)):
            col = self.values[:, j]
            ok = col[np.isfinite(col) & (col > MISSING_FLOOR)]
            if len(ok):
                self.typical[j] = float(np.exp(np.mean(np.log(ok))))
        self.phi = np.full(len(self.distances), np.nan)
        for j in range(len(self.distances)):
            try:
                self.phi[j] = phi_aggregate(
                    [
                        (float(self.log_weights[i]), float(self.tr_rho_hat[i, j]), float(self.tr_rho_sq[i]))
                        for i in range(len(self.log_weights))
                    ]
                )
            except ValueError:
                pass


def default_distances(L: int, site0: int) -> list[int]:
    """Roughly log-spaced integer distances staying inside the bulk
    window [site0, 3L/4]."""
    x_max = max(1, min(L - site0, (3 * L) // 4 - site0))
    grid = np.unique(np.rint(np.geomspace(1, x_max, num=min(8, x_max))).astype(int))
    return [int(x) for x in grid]


def _swssb_trajectory(args) -> tuple[float, np.ndarray, float]:
    (master_seed, index, L, p, t_steps, cutoff, max_chi, site0, distances) = args
    rng = make_rng(record_seed(master_seed, index))
    policy = TruncationPolicy(cutoff=cutoff, max_chi=max_chi)
    dm = density.sector_mixed_mpo(ChargeLabel.ZERO_PLUS, L)
    log_weight = 0.0
    bonds = list(range(1, L, 2)) + list(range(2, L, 2))
    for _ in range(t_steps):
        for bond in bonds:
            if rng.random() < p:
                _, prob = density.sample_measure_bond(dm, bond, rng, policy)
                log_weight += float(np.log(prob))
            else:
                density.apply_channel(dm, bond, policy)
    t1, t2 = trajectory_correlators(dm, site0, distances)
    return log_weight, t1, t2


def run_swssb_experiment(
    L: int,
    p: float,
    n_traj: int,
    policy: TruncationPolicy = TruncationPolicy(cutoff=1e-12, max_chi=256),
    t_steps: Optional[int] = None,
    master_seed: int = 0,
    site0: Optional[int] = None,
    distances: Optional[Sequence[int]] = None,
    workers: int = 1,
) -> CorrelatorSeries:
    """Born-sampled noisy brickwork trajectories started from the
    half-filling sector-mixed state, with the charge-displacement
    correlator evaluated on a log-spaced grid at the final time (t = L by
    default)."""
    if t_steps is None:
        t_steps = L
    if site0 is None:
        site0 = max(1, L // 4)
    if distances is None:
        distances = default_distances(L, site0)
    tasks = [
        (master_seed, i, L, p, t_steps, policy.cutoff, policy.max_chi, site0, tuple(distances))
        for i in range(n_traj)
    ]
    if workers > 1 and len(tasks) > 1:
        with Pool(processes=workers) as pool:
            results = list(pool.imap(_swssb_trajectory, tasks, chunksize=1))
    else:
        results = [_swssb_trajectory(t) for t in tasks]
    log_weights = np.array([r[0] for r in results])
    t1 = np.stack([r[1] for r in results])
    t2 = np.array([r[2] for r in results])
    with np.errstate(divide="ignore", invalid="ignore"):
        values = t1 / t2[:, None]
    return CorrelatorSeries(
        model="u1xz2",
        L=L,
        p=p,
        site0=site0,
        distances=list(distances),
        values=values,
        log_weights=log_weights,
        tr_rho_hat=t1,
        tr_rho_sq=t2,
    )


# --- decay-shape diagnostics -------------------------------------------------------


@dataclass
class DecayFits:
    rms_loglog: float
    rms_semilog: float

    @property
    def prefers_power_law(self) -> bool:
        return self.rms_loglog < self.rms_semilog


def decay_fit_residuals(distances: Sequence[float], values: Sequence[float]) -> DecayFits:
    """RMS residuals of a linear fit of log(value) against log(distance)
    (power law) and against distance (exponential); smaller wins."""
    x = np.asarray(distances, dtype=float)
    y = np.asarray(values, dtype=float)
    keep = np.isfinite(y) & (y > 0)
    x, y = x[keep], y[keep]
    if len(x) < 3:
        raise ValueError("need at least three resolved points to compare decay fits")
    logy = np.log(y)

    def rms(xs):
        res = scipy.stats.linregress(xs, logy)
        return float(np.sqrt(np.mean((logy - (res.intercept + res.slope * xs)) ** 2)))

    return DecayFits(rms_loglog=rms(np.log(x)), rms_semilog=rms(x))


# --- dense reference ------------------------------------------------------------------


def dense_renyi2(rho: np.ndarray, site0: int, x: int, L: int) -> float:
    """Dense-matrix reference for renyi2_corr."""

    def embed1(op: np.ndarray, site: int) -> np.ndarray:
        return np.kron(np.kron(np.eye(2 ** (site - 1)), op), np.eye(2 ** (L - site)))

    a = embed1(RAISING, site0 + x) @ embed1(LOWERING, site0)
    rho_x = a @ rho @ a.conj().T
    return float(np.trace(rho @ rho_x).real / np.trace(rho @ rho).real)


# --- CSV output -------------------------------------------------------------------------

CORRELATOR_COLUMNS = ["model", "L", "p", "x", "n_traj", "c2_mean", "c2_stderr", "c2_typical", "c2_phi", "missing"]


def write_correlator_csv(path, series_list: Iterable[CorrelatorSeries]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CORRELATOR_COLUMNS)
        for s in series_list:
            n_traj = len(s.log_weights)
            for j, x in enumerate(s.distances):
                missing = bool(s.missing[j])
                writer.writerow(
                    [
                        s.model,
                        s.L,
                        repr(s.p),
                        x,
                        n_traj,
                        "" if missing else repr(float(s.mean[j])),
                        "" if missing else repr(float(s.stderr[j])),
                        "" if missing else repr(float(s.typical[j])),
                        "" if missing or not np.isfinite(s.phi[j]) else repr(float(s.phi[j])),
                        int(missing),
                    ]
                )
