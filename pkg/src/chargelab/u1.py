"""The fully dephased scalar-U(1) variant.

Records come from exact qubit dynamics with number-conserving gates
(free phases on |00>, |11> and a Haar 2x2 block on the one-particle pair
subspace) plus single-site occupation measurements at rate p per site per
layer.  The decoder marginalizes the gates: a distribution over
bitstrings, stored as an MPS over 2-dimensional sites, is evolved by
pair-symmetrizing channels (the Haar average of the gate action on
diagonal states) and by forced occupation measurements.
"""

from __future__ import annotations

from functools import lru_cache
from math import comb
from multiprocessing import Pool
from typing import Optional, Sequence

import numpy as np

from chargelab import density
from chargelab.circuits import (
    GATE,
    MEASURE,
    MeasurementRecord,
    Schedule,
    Slot,
    U1,
    choose_outcome,
    make_rng,
    record_seed,
)
from chargelab.decoding import Posterior, posterior
from chargelab.density import TruncationPolicy, VectorMPS, apply_two_site
from chargelab.statevector import MAX_DENSE_SITES, PureState
from chargelab.swssb import CorrelatorSeries, _overlap_with_insertions

ONES_VEC = np.array([1.0, 1.0], dtype=complex)

ADD_PARTICLE = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)
REMOVE_PARTICLE = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)


@lru_cache(maxsize=1)
def twirl_op() -> np.ndarray:
    """Pair map on 2-site configurations: 00 and 11 weights pass through,
    01 and 10 are replaced by their mean (doubly stochastic)."""
    op = np.zeros((4, 4), dtype=complex)
    op[0, 0] = op[3, 3] = 1.0
    op[1:3, 1:3] = 0.5
    op.flags.writeable = False
    return op


def uniform_sector_dist(L: int, n_ones: int) -> VectorMPS:
    """Normalized uniform distribution over all bitstrings with a fixed
    particle number, as a distribution MPS."""
    out = VectorMPS(density._counter_tensors(L, n_ones, flip=False, phys_dim=2))
    out.log_scale -= float(np.log(comb(L, n_ones)))
    return out


def total_weight_log(dist: VectorMPS) -> float:
    mant, log = density._closure_scaled(dist, [ONES_VEC] * dist.L)
    if mant.real <= 0.0:
        return float("-inf")
    return float(np.log(mant.real) + log)


def u1_twirl_channel(dist: VectorMPS, bond: int, policy: TruncationPolicy = density.DEFAULT_POLICY) -> VectorMPS:
    if not 1 <= bond < dist.L:
        raise ValueError(f"bond {bond} out of range for L={dist.L}")
    apply_two_site(dist, bond - 1, twirl_op(), policy)
    return dist


def site_occupation_weights(dist: VectorMPS, site: int) -> tuple[float, float]:
    """Conditional probabilities of occupation 0/1 at a site (1-based)."""
    if not 1 <= site <= dist.L:
        raise ValueError(f"site {site} out of range")
    vecs = [ONES_VEC] * dist.L
    vecs[site - 1] = np.array([1.0, 0.0], dtype=complex)
    m0, l0 = density._closure_scaled(dist, vecs)
    vecs[site - 1] = np.array([0.0, 1.0], dtype=complex)
    m1, l1 = density._closure_scaled(dist, vecs)
    w = np.array([m0.real * np.exp(l0 - max(l0, l1)), m1.real * np.exp(l1 - max(l0, l1))])
    w = np.clip(w, 0.0, None)
    total = w.sum()
    if not total > 0.0:
        raise ValueError("distribution has no weight; cannot measure")
    return float(w[0] / total), float(w[1] / total)


def u1_site_measure(
    dist: VectorMPS,
    site: int,
    forced_outcome: Optional[str] = None,
    rng: Optional[np.random.Generator] = None,
) -> tuple[str, float]:
    """Occupation measurement: Born weight is the conditional probability;
    the distribution is restricted and the weight lands in log_scale."""
    if dist.is_null:
        return forced_outcome if forced_outcome is not None else "0", 0.0
    w0, w1 = site_occupation_weights(dist, site)
    if forced_outcome is None:
        idx = choose_outcome(rng, (w0, w1))
        outcome = "01"[idx]
    else:
        outcome = forced_outcome
    weight = (w0, w1)["01".index(outcome)]
    keep = int(outcome)
    t = dist.tensors[site - 1]
    t[:, 1 - keep, :] = 0.0
    nrm = float(np.linalg.norm(t))
    # conditional weights of consistent outcomes are bounded well away
    # from zero at these sizes; anything smaller is truncation fuzz on an
    # exactly vanishing branch
    if weight <= 1e-12 or nrm == 0.0:
        dist.mark_null()
        return outcome, 0.0
    dist.tensors[site - 1] = t / nrm
    dist.log_scale += float(np.log(nrm))
    return outcome, weight


# --- record generation -------------------------------------------------------


def _haar_block(rng: np.random.Generator) -> np.ndarray:
    z = (rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    return q * (np.diagonal(r) / np.abs(np.diagonal(r)))


def _apply_u1_gate_vec(state: PureState, bond: int, block: np.ndarray) -> None:
    view = state.amplitudes.reshape(2 ** (bond - 1), 2, 2, 2 ** (state.L - bond - 1))
    v01 = view[:, 0, 1, :]
    v10 = view[:, 1, 0, :]
    new01 = block[0, 0] * v01 + block[0, 1] * v10
    view[:, 1, 0, :] = block[1, 0] * v01 + block[1, 1] * v10
    view[:, 0, 1, :] = new01


def _measure_site_vec(state: PureState, site: int, rng: np.random.Generator) -> tuple[str, float]:
    view = state.amplitudes.reshape(2 ** (site - 1), 2, 2 ** (state.L - site))
    w1 = float(np.vdot(view[:, 1, :], view[:, 1, :]).real)
    w0 = float(np.vdot(view[:, 0, :], view[:, 0, :]).real)
    total = w0 + w1
    probs = (w0 / total, w1 / total)
    idx = choose_outcome(rng, probs)
    view[:, 1 - idx, :] = 0.0
    state.amplitudes /= np.sqrt(probs[idx] * total)
    state.log_norm += float(np.log(probs[idx]))
    return "01"[idx], probs[idx]


def u1_initial_state(L: int, n_ones: int) -> PureState:
    amps = np.zeros(2**L, dtype=complex)
    amps[int("1" * n_ones + "0" * (L - n_ones), 2) if n_ones else 0] = 1.0
    return PureState(amps, L)


def u1_generate(
    L: int,
    p: float,
    n_ones: int,
    rng: np.random.Generator,
    seed: int = 0,
    scramble_steps: Optional[int] = None,
    n_hybrid_steps: Optional[int] = None,
) -> MeasurementRecord:
    """One record of the plain-U(1) protocol: scramble a definite-number
    product state with number-conserving gates, then run layers of gates
    on every bond followed by Bernoulli(p) occupation measurements per
    site."""
    if L > MAX_DENSE_SITES:
        raise ValueError(f"dense simulation guarded to L <= {MAX_DENSE_SITES}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"measurement rate p={p} outside [0, 1]")
    if scramble_steps is None:
        scramble_steps = L
    if n_hybrid_steps is None:
        n_hybrid_steps = L
    state = u1_initial_state(L, n_ones)
    bonds = list(range(1, L, 2)) + list(range(2, L, 2))
    scramble_layers = []
    for _ in range(scramble_steps):
        layer = []
        for bond in bonds:
            block = _haar_block(rng)
            _apply_u1_gate_vec(state, bond, block)
            layer.append(Slot(bond=bond, kind=GATE, block=block))
        scramble_layers.append(layer)
    hybrid_layers = []
    log_weight = 0.0
    for _ in range(n_hybrid_steps):
        layer = []
        for bond in bonds:
            block = _haar_block(rng)
            _apply_u1_gate_vec(state, bond, block)
            layer.append(Slot(bond=bond, kind=GATE, block=block))
        for site in range(1, L + 1):
            if rng.random() < p:
                outcome, prob = _measure_site_vec(state, site, rng)
                layer.append(Slot(bond=site, kind=MEASURE, outcome=outcome))
                log_weight += float(np.log(prob))
        hybrid_layers.append(layer)
    return MeasurementRecord(
        L=L,
        p=p,
        seed=seed,
        true_label=f"n:{n_ones}",
        scramble_steps=scramble_steps,
        scramble=Schedule(L=L, layers=scramble_layers),
        hybrid=Schedule(L=L, layers=hybrid_layers),
        log_weight=log_weight,
        model=U1,
    )


# --- decoding ------------------------------------------------------------------


def u1_likelihood(record: MeasurementRecord, n_ones: int, policy: TruncationPolicy = density.DEFAULT_POLICY) -> float:
    """log P(record | N = n_ones) under the marginalized (twirled) model.
    The scramble stage is skipped: the uniform sector distribution is a
    fixed point of the twirl."""
    dist = uniform_sector_dist(record.L, n_ones)
    for layer in record.hybrid.layers:
        for slot in layer:
            if slot.kind == GATE:
                u1_twirl_channel(dist, slot.bond, policy)
            else:
                _, weight = u1_site_measure(dist, slot.bond, forced_outcome=slot.outcome)
            if dist.is_null:
                return float("-inf")
    return total_weight_log(dist)


def u1_decode(record: MeasurementRecord, hypotheses: tuple[int, int], policy: TruncationPolicy = density.DEFAULT_POLICY) -> Posterior:
    """Posterior between two particle-number hypotheses; the first entry
    is taken as the record's true sector."""
    true_n, wrong_n = hypotheses
    llc = u1_likelihood(record, true_n, policy)
    llw = u1_likelihood(record, wrong_n, policy)
    return posterior(llc, llw)


def u1_generate_and_decode(
    L: int,
    p: float,
    true_n: int,
    rng: np.random.Generator,
    seed: int = 0,
    policy: TruncationPolicy = density.DEFAULT_POLICY,
    scramble_steps: Optional[int] = None,
) -> Posterior:
    wrong_n = L // 2 + 1 if true_n == L // 2 else L // 2
    record = u1_generate(L, p, true_n, rng, seed=seed, scramble_steps=scramble_steps)
    return u1_decode(record, (true_n, wrong_n), policy)


def u1_dense_likelihood(record: MeasurementRecord, n_ones: int) -> float:
    """Dense diagonal-superoperator oracle: the full 2^L probability
    vector evolved by pair symmetrization and occupation restrictions."""
    L = record.L
    if L > 12:
        raise ValueError("dense distribution oracle guarded to L <= 12")
    n = 2**L
    ones = np.array([bin(i).count("1") for i in range(n)])
    prob = (ones == n_ones).astype(float)
    prob /= prob.sum()
    log_weight = 0.0
    for layer in record.hybrid.layers:
        for slot in layer:
            if slot.kind == GATE:
                view = prob.reshape(2 ** (slot.bond - 1), 2, 2, 2 ** (L - slot.bond - 1))
                mean = 0.5 * (view[:, 0, 1, :] + view[:, 1, 0, :])
                view[:, 0, 1, :] = mean
                view[:, 1, 0, :] = mean
            else:
                site = slot.bond
                view = prob.reshape(2 ** (site - 1), 2, 2 ** (L - site))
                keep = int(slot.outcome)
                weight = float(view[:, keep, :].sum())
                total = float(prob.sum())
                if weight <= 0.0:
                    return float("-inf")
                view[:, 1 - keep, :] = 0.0
                log_weight += float(np.log(weight / total))
                prob /= weight / total
    return log_weight


# --- classical correlator ----------------------------------------------------------


def classical_c2(dist: VectorMPS, site0: int, x: int) -> float:
    """Sum_s p_s p_{Ts} / Sum_s p_s^2 where T moves one particle from
    site0 + x to site0 (zero weight when inapplicable)."""
    L = dist.L
    if not (1 <= site0 <= L and 1 <= site0 + x <= L and x >= 1):
        raise ValueError("correlator sites out of range")
    num_m, num_log = _overlap_with_insertions(dist, dist, {site0 - 1: ADD_PARTICLE, site0 + x - 1: REMOVE_PARTICLE})
    den_m, den_log = density._overlap_scaled(dist, dist)
    if num_m == 0.0:
        return 0.0
    return float(num_m.real / den_m.real * np.exp(num_log - den_log))


def classical_trajectory_correlators(
    dist: VectorMPS, site0: int, distances: Sequence[int]
) -> tuple[np.ndarray, np.ndarray]:
    """Per-distance (<P|move|P>, <P|P>) normalized by <1|P>^2."""
    log_tr = total_weight_log(dist)
    den_m, den_log = density._overlap_scaled(dist, dist)
    t2 = float(den_m.real * np.exp(den_log - 2.0 * log_tr))
    t1 = np.empty(len(distances))
    for k, x in enumerate(distances):
        num_m, num_log = _overlap_with_insertions(
            dist, dist, {site0 - 1: ADD_PARTICLE, site0 + x - 1: REMOVE_PARTICLE}
        )
        t1[k] = 0.0 if num_m == 0.0 else float(num_m.real * np.exp(num_log - 2.0 * log_tr))
    return t1, t2


def _u1_trajectory(args) -> tuple[float, np.ndarray, float]:
    (master_seed, index, L, p, t_steps, cutoff, max_chi, site0, distances) = args
    rng = make_rng(record_seed(master_seed, index))
    policy = TruncationPolicy(cutoff=cutoff, max_chi=max_chi)
    dist = uniform_sector_dist(L, L // 2)
    bonds = list(range(1, L, 2)) + list(range(2, L, 2))
    log_weight = 0.0
    for _ in range(t_steps):
        for bond in bonds:
            u1_twirl_channel(dist, bond, policy)
        for site in range(1, L + 1):
            if rng.random() < p:
                _, weight = u1_site_measure(dist, site, rng=rng)
                log_weight += float(np.log(weight))
    t1, t2 = classical_trajectory_correlators(dist, site0, distances)
    return log_weight, t1, t2


def run_u1_correlator(
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
    """Classical analogue of the charge-displacement correlator ensemble,
    started from the uniform half-filling distribution."""
    from chargelab.swssb import default_distances

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
            results = list(pool.imap(_u1_trajectory, tasks, chunksize=1))
    else:
        results = [_u1_trajectory(t) for t in tasks]
    log_weights = np.array([r[0] for r in results])
    t1 = np.stack([r[1] for r in results])
    t2 = np.array([r[2] for r in results])
    with np.errstate(divide="ignore", invalid="ignore"):
        values = t1 / t2[:, None]
    return CorrelatorSeries(
        model=U1,
        L=L,
        p=p,
        site0=site0,
        distances=list(distances),
        values=values,
        log_weights=log_weights,
        tr_rho_hat=t1,
        tr_rho_sq=t2,
    )


# --- accuracy driver -----------------------------------------------------------------


def _u1_decode_worker(args) -> Posterior:
    master_seed, index, L, p, cutoff, max_chi, scramble_steps = args
    true_n = L // 2 if index % 2 == 0 else L // 2 + 1
    seed = record_seed(master_seed, index)
    post = u1_generate_and_decode(
        L, p, true_n, make_rng(seed), seed=seed,
        policy=TruncationPolicy(cutoff=cutoff, max_chi=max_chi),
        scramble_steps=scramble_steps,
    )
    return post


def run_u1_accuracy_point(
    L: int,
    p: float,
    n_records: int,
    master_seed: int = 0,
    policy: TruncationPolicy = density.DEFAULT_POLICY,
    workers: int = 1,
    scramble_steps: Optional[int] = None,
) -> list[Posterior]:
    tasks = [(master_seed, i, L, p, policy.cutoff, policy.max_chi, scramble_steps) for i in range(n_records)]
    if workers > 1 and len(tasks) > 1:
        with Pool(processes=workers) as pool:
            return list(pool.imap(_u1_decode_worker, tasks, chunksize=4))
    return [_u1_decode_worker(t) for t in tasks]
