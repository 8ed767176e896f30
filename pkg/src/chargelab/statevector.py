"""Exact dense pure-state simulator: record generation and the optimal
decoder's evolution backend.

Amplitudes are stored flat over 2^L basis states with site 1 as the most
significant bit.  Symmetric gates touch only the {|01>, |10>} block of a
bond, which the jitted kernels exploit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from chargelab import _kernels
from chargelab.circuits import (
    GATE,
    MeasurementRecord,
    Schedule,
    choose_outcome,
    sample_schedule,
    scramble_schedule,
)
from chargelab.symmetry import ChargeLabel, GateParams, gate_middle_block, initial_amplitudes

MAX_DENSE_SITES = 24

NEG_INF = float("-inf")

_OUTCOME_CODE = {"1": 0, "s": 1, "a": 2}
_OUTCOMES = ("1", "s", "a")


@dataclass
class PureState:
    """Dense amplitudes plus the accumulated log Born weight of forced
    projections.  After Born-sampled measurements the stored vector is
    normalized and log_norm carries the total weight."""

    amplitudes: np.ndarray
    L: int
    log_norm: float = 0.0

    @property
    def is_null(self) -> bool:
        return self.log_norm == NEG_INF

    def copy(self) -> "PureState":
        return PureState(self.amplitudes.copy(), self.L, self.log_norm)

    def norm_sq(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)


def initial_state(label: ChargeLabel, L: int) -> PureState:
    if L > MAX_DENSE_SITES:
        raise ValueError(f"dense simulation guarded to L <= {MAX_DENSE_SITES}")
    return PureState(initial_amplitudes(label, L), L)


def _dims(state: PureState, bond: int) -> tuple[int, int]:
    if not 1 <= bond < state.L:
        raise ValueError(f"bond {bond} out of range for L={state.L}")
    return 2 ** (bond - 1), 2 ** (state.L - bond - 1)


def apply_gate(state: PureState, bond: int, params: GateParams) -> PureState:
    """In-place symmetric two-site gate; |00> and |11> pair amplitudes are
    untouched, the middle block gets a 2x2 unitary."""
    a_dim, b_dim = _dims(state, bond)
    _kernels.middle_block_update(state.amplitudes, a_dim, b_dim, gate_middle_block(params))
    return state


def _apply_middle_block(state: PureState, bond: int, block: np.ndarray) -> PureState:
    """Any charge-conserving gate acting trivially on |00>, |11>."""
    a_dim, b_dim = _dims(state, bond)
    _kernels.middle_block_update(state.amplitudes, a_dim, b_dim, block)
    return state


def apply_two_site(state: PureState, bond: int, op: np.ndarray) -> PureState:
    """Generic dense 4x4 two-site operator (not necessarily unitary)."""
    a_dim, b_dim = _dims(state, bond)
    block = state.amplitudes.reshape(a_dim, 4, b_dim)
    np.copyto(block, np.einsum("ij,ajb->aib", op, block, optimize=True))
    return state


def bond_outcome_weights(state: PureState, bond: int) -> tuple[float, float, float]:
    """Expectation values of the projector triple at a bond; they sum to
    the state's squared norm."""
    a_dim, b_dim = _dims(state, bond)
    return _kernels.pair_weights(state.amplitudes, a_dim, b_dim)


def measure_bond(state: PureState, bond: int, rng: np.random.Generator) -> tuple[str, float]:
    """Born-sample the projector triple; project, renormalize, accumulate
    the outcome probability into log_norm."""
    w1, ws, wa = bond_outcome_weights(state, bond)
    total = w1 + ws + wa
    if total < 1e-15:
        raise ValueError("state norm collapsed below 1e-15; cannot measure")
    probs = (w1 / total, ws / total, wa / total)
    idx = choose_outcome(rng, probs)
    a_dim, b_dim = _dims(state, bond)
    weight = _kernels.project_pair(state.amplitudes, a_dim, b_dim, idx)
    prob = weight / total
    state.amplitudes /= np.sqrt(weight)
    state.log_norm += float(np.log(prob))
    return _OUTCOMES[idx], prob


def force_outcome(state: PureState, bond: int, outcome: str) -> float:
    """Project onto a recorded outcome; returns the projector expectation
    (the Born weight on a normalized input).  Weight zero leaves a flagged
    null state rather than raising."""
    if state.is_null:
        return 0.0
    a_dim, b_dim = _dims(state, bond)
    weight = _kernels.project_pair(state.amplitudes, a_dim, b_dim, _OUTCOME_CODE[outcome])
    if weight <= 0.0:
        state.amplitudes[:] = 0.0
        state.log_norm = NEG_INF
        return 0.0
    state.amplitudes /= np.sqrt(weight)
    state.log_norm += float(np.log(weight))
    return weight


def _run_schedule_gates(state: PureState, schedule: Schedule) -> None:
    for layer in schedule.layers:
        for slot in layer:
            apply_gate(state, slot.bond, slot.params)


def run_generation(
    label: ChargeLabel,
    L: int,
    p: float,
    rng: np.random.Generator,
    seed: int = 0,
    scramble_steps: Optional[int] = None,
    n_hybrid_steps: Optional[int] = None,
) -> tuple[MeasurementRecord, PureState]:
    """Generate one Born-sampled measurement record: prepare the labelled
    start state, scramble it, then run hybrid brickwork dynamics filling
    in sampled outcomes."""
    if L > MAX_DENSE_SITES:
        raise ValueError(f"dense simulation guarded to L <= {MAX_DENSE_SITES}")
    if scramble_steps is None:
        scramble_steps = L * L
    if n_hybrid_steps is None:
        n_hybrid_steps = L
    state = initial_state(label, L)
    scramble = scramble_schedule(L, rng, n_steps=scramble_steps)
    _run_schedule_gates(state, scramble)
    hybrid = sample_schedule(L, p, n_hybrid_steps, rng)
    log_weight = 0.0
    for layer in hybrid.layers:
        for slot in layer:
            if slot.kind == GATE:
                apply_gate(state, slot.bond, slot.params)
            else:
                outcome, prob = measure_bond(state, slot.bond, rng)
                slot.outcome = outcome
                log_weight += float(np.log(prob))
    record = MeasurementRecord(
        L=L,
        p=p,
        seed=seed,
        true_label=label,
        scramble_steps=scramble_steps,
        scramble=scramble,
        hybrid=hybrid,
        log_weight=log_weight,
    )
    return record, state


def likelihood_exact(record: MeasurementRecord, hypothesis: ChargeLabel) -> float:
    """log P(record | hypothesis) under exact replay: prepare the
    hypothesis state with the record's own scramble circuit, then force
    every recorded outcome.  Returns -inf when any forced weight vanishes."""
    state = initial_state(hypothesis, record.L)
    _run_schedule_gates(state, record.scramble)
    log_weight = 0.0
    for layer in record.hybrid.layers:
        for slot in layer:
            if slot.kind == GATE:
                apply_gate(state, slot.bond, slot.params)
            else:
                weight = force_outcome(state, slot.bond, slot.outcome)
                if weight <= 0.0:
                    return NEG_INF
                log_weight += float(np.log(weight))
    return log_weight


def generate_with_both_hypotheses(
    label: ChargeLabel,
    L: int,
    p: float,
    rng: np.random.Generator,
    seed: int = 0,
    scramble_steps: Optional[int] = None,
    n_hybrid_steps: Optional[int] = None,
) -> tuple[MeasurementRecord, float, float]:
    """Generation fused with the exact-replay decode: the wrong-hypothesis
    state rides along through the same circuit, so the record and both
    exact log likelihoods come out of two scramble evolutions instead of
    three.  Returns (record, loglik true, loglik wrong)."""
    if L > MAX_DENSE_SITES:
        raise ValueError(f"dense simulation guarded to L <= {MAX_DENSE_SITES}")
    if scramble_steps is None:
        scramble_steps = L * L
    if n_hybrid_steps is None:
        n_hybrid_steps = L
    state = initial_state(label, L)
    other = initial_state(label.other, L)
    scramble = scramble_schedule(L, rng, n_steps=scramble_steps)
    _run_schedule_gates(state, scramble)
    _run_schedule_gates(other, scramble)
    hybrid = sample_schedule(L, p, n_hybrid_steps, rng)
    log_weight = 0.0
    log_wrong = 0.0
    for layer in hybrid.layers:
        for slot in layer:
            if slot.kind == GATE:
                apply_gate(state, slot.bond, slot.params)
                if not other.is_null:
                    apply_gate(other, slot.bond, slot.params)
            else:
                outcome, prob = measure_bond(state, slot.bond, rng)
                slot.outcome = outcome
                log_weight += float(np.log(prob))
                weight = force_outcome(other, slot.bond, outcome)
                log_wrong = NEG_INF if weight <= 0.0 else log_wrong + float(np.log(weight))
    record = MeasurementRecord(
        L=L,
        p=p,
        seed=seed,
        true_label=label,
        scramble_steps=scramble_steps,
        scramble=scramble,
        hybrid=hybrid,
        log_weight=log_weight,
    )
    return record, log_weight, log_wrong


def charge_offset_expectation(state: PureState) -> float:
    """<N_1> - L/2 of the current state; a conserved quantity under the
    symmetric dynamics, used by invariant checks."""
    probs = np.abs(state.amplitudes) ** 2
    ones = np.array([bin(i).count("1") for i in range(2**state.L)])
    return float(np.dot(probs, ones) - state.L / 2)
