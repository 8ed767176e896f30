import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chargelab import density as dn
from chargelab.circuits import make_rng
from chargelab.density import (
    TruncationPolicy,
    VectorMPS,
    apply_channel,
    apply_forced_measurement,
    born_probs_bond,
    channel_scramble,
    channel_superop,
    dense_oracle,
    dense_sector_mixed,
    diagonal_sector_mixture,
    dual_evolve_identity,
    hs_inner,
    identity_mps,
    likelihood_noisy,
    load_checkpoint,
    log_trace_against,
    peak_bond_of_run,
    sector_mixed_mpo,
    save_checkpoint,
    to_dense,
    trace,
    trace_against,
)
from chargelab.statevector import likelihood_exact, run_generation
from chargelab.symmetry import ChargeLabel, projector_set


def _random_record(seed, L=4, p=0.5, scramble_steps=None):
    record, _ = run_generation(
        ChargeLabel.ONE if seed % 2 else ChargeLabel.ZERO_PLUS,
        L, p, make_rng(seed), seed=seed, scramble_steps=scramble_steps,
    )
    return record


def test_identity_mps_basics():
    idm = identity_mps(5)
    assert abs(trace(idm) - 2**5) < 1e-10
    assert idm.max_bond() == 1
    assert abs(hs_inner(idm, idm).real - 2**5) < 1e-10


def test_sector_mixed_small_cases():
    sm = sector_mixed_mpo(ChargeLabel.ZERO_PLUS, 2)
    s = np.array([0, 1, 1, 0], dtype=complex) / np.sqrt(2)
    assert np.allclose(to_dense(sm), np.outer(s, s), atol=1e-12)
    sm1 = sector_mixed_mpo(ChargeLabel.ONE, 2)
    bell = np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2)
    assert np.allclose(to_dense(sm1), np.outer(bell, bell), atol=1e-12)


@pytest.mark.parametrize("label", list(ChargeLabel))
@pytest.mark.parametrize("L", [2, 4, 6])
def test_sector_mixed_matches_dense_reference(label, L):
    sm = sector_mixed_mpo(label, L)
    assert abs(trace(sm) - 1.0) < 1e-12
    assert np.abs(to_dense(sm) - dense_sector_mixed(label, L)).max() < 1e-12


def test_sector_mixed_bond_bound():
    for L in (4, 8, 12):
        assert sector_mixed_mpo(ChargeLabel.ZERO_PLUS, L).max_bond() <= 2 * (L // 2 + 1)


def test_sector_mixed_is_scrambling_fixed_point():
    # half-filling label: the analytic state is reached by the dephasing
    # brickwork well within L^2 layers at this size
    L = 4
    dm = channel_scramble(ChargeLabel.ZERO_PLUS, L)
    err = np.linalg.norm(to_dense(dm) - dense_sector_mixed(ChargeLabel.ZERO_PLUS, L))
    assert err < 1e-6


def test_channel_trace_preserving():
    dm = sector_mixed_mpo(ChargeLabel.ONE, 6)
    t0 = trace(dm)
    for bond in (1, 3, 5, 2, 4):
        apply_channel(dm, bond)
    assert abs(trace(dm) - t0) < 1e-10


def test_channel_idempotent():
    dm = channel_scramble(ChargeLabel.ZERO_PLUS, 4, n_steps=1)
    once = dm.copy()
    apply_channel(once, 2)
    twice = once.copy()
    apply_channel(twice, 2)
    diff = to_dense(once) - to_dense(twice)
    assert np.linalg.norm(diff) < 1e-10


def test_channel_fixed_point_on_pair_state():
    dm = sector_mixed_mpo(ChargeLabel.ZERO_PLUS, 2)
    before = to_dense(dm)
    apply_channel(dm, 1)
    assert np.linalg.norm(to_dense(dm) - before) < 1e-12


def test_channel_superop_matches_kraus_sum():
    ps = projector_set()
    rng = make_rng(5)
    x = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    direct = sum(p @ x @ p for p in ps.as_tuple())
    vec = np.transpose(x.reshape(2, 2, 2, 2), (0, 2, 1, 3)).reshape(16)
    out = (channel_superop() @ vec).reshape(2, 2, 2, 2)
    out = np.transpose(out, (0, 2, 1, 3)).reshape(4, 4)
    assert np.allclose(out, direct, atol=1e-13)


def test_forced_measurement_weights():
    dm = sector_mixed_mpo(ChargeLabel.ZERO_PLUS, 2)
    kept = dm.copy()
    apply_forced_measurement(kept, 1, "s")
    assert abs(trace(kept) - 1.0) < 1e-12

    null = dm.copy()
    apply_forced_measurement(null, 1, "a")
    assert null.is_null or abs(trace(null)) < 1e-12


def test_forced_measurement_outcomes_complete():
    dm = channel_scramble(ChargeLabel.ONE, 4, n_steps=2)
    parent = trace(dm)
    total = 0.0
    for outcome in ("1", "s", "a"):
        branch = dm.copy()
        apply_forced_measurement(branch, 2, outcome)
        total += trace(branch) if not branch.is_null else 0.0
    assert abs(total - parent) < 1e-10


def test_born_probs_match_forced_traces():
    dm = channel_scramble(ChargeLabel.ZERO_PLUS, 4, n_steps=1)
    probs = born_probs_bond(dm, 3)
    assert abs(sum(probs) - 1.0) < 1e-10
    parent = trace(dm)
    for outcome, p_ref in zip(("1", "s", "a"), probs):
        branch = dm.copy()
        apply_forced_measurement(branch, 3, outcome)
        w = trace(branch) / parent if not branch.is_null else 0.0
        assert abs(w - p_ref) < 1e-10


def test_hs_inner_positive():
    dm = sector_mixed_mpo(ChargeLabel.ONE, 4)
    val = hs_inner(dm, dm)
    assert val.real > 0 and abs(val.imag) < 1e-12 * val.real


def test_dual_of_empty_schedule_is_identity():
    record = _random_record(1, p=0.0, scramble_steps=2)
    record.hybrid.layers = []
    dm = dual_evolve_identity(record)
    assert abs(trace(dm) - 2**record.L) < 1e-8


def test_dual_single_projector_trace():
    record = _random_record(3, L=2, p=1.0, scramble_steps=0)
    record.hybrid.layers = [[record.hybrid.layers[0][0]]]
    record.hybrid.layers[0][0].outcome = "1"
    dm = dual_evolve_identity(record)
    assert abs(trace(dm) - 2.0) < 1e-10  # rank-2 projector


def _dense_dual(record):
    L = record.L
    rho = np.eye(2**L, dtype=complex)
    for layer in reversed(record.hybrid.layers):
        for slot in reversed(layer):
            if slot.kind == "gate":
                rho = dn.dense_apply_channel_bond(rho, slot.bond, L)
            else:
                rho = dn.dense_apply_projection(rho, slot.bond, slot.outcome, L)
    return rho


@pytest.mark.parametrize("seed", [2, 7, 12])
def test_dual_matches_dense_reverse_evolution(seed):
    record = _random_record(seed, L=4, p=0.6)
    dm = dual_evolve_identity(record)
    assert np.abs(to_dense(dm) - _dense_dual(record)).max() < 1e-8


def test_dual_state_is_hermitian():
    record = _random_record(21, L=4, p=0.5)
    dm = dual_evolve_identity(record)
    dense = to_dense(dm)
    assert np.abs(dense - dense.conj().T).max() < 1e-10


def test_noisy_likelihood_trivial_cases():
    record = _random_record(5, p=0.0)
    for hyp in ChargeLabel:
        assert abs(likelihood_noisy(record, hyp)) < 1e-9


def test_noisy_likelihood_outcome_completeness():
    record = _random_record(9, L=4, p=0.7)
    positions = [
        (i, j) for i, layer in enumerate(record.hybrid.layers) for j, s in enumerate(layer) if s.kind == "measure"
    ]
    i, j = positions[-1]
    from chargelab.circuits import truncate_record

    parent = truncate_record(record, i, j)
    child = truncate_record(record, i, j + 1)
    parent_ll = likelihood_noisy(parent, ChargeLabel.ZERO_PLUS)
    total = 0.0
    for outcome in ("1", "s", "a"):
        child.hybrid.layers[i][j].outcome = outcome
        ll = likelihood_noisy(child, ChargeLabel.ZERO_PLUS)
        total += np.exp(ll) if ll > float("-inf") else 0.0
    assert abs(total - np.exp(parent_ll)) < 1e-9


@pytest.mark.parametrize("seed,p", [(1, 0.3), (2, 0.5), (3, 0.8)])
def test_noisy_likelihood_matches_dense_oracle(seed, p):
    record = _random_record(seed, L=4, p=p)
    for hyp in ChargeLabel:
        ll = likelihood_noisy(record, hyp)
        got = np.exp(ll) if ll > float("-inf") else 0.0
        assert abs(got - dense_oracle(record, hyp)) < 1e-8


def test_dense_oracle_trivia():
    record = _random_record(4, L=4, p=0.0)
    for hyp in ChargeLabel:
        val = dense_oracle(record, hyp)
        assert abs(val - 1.0) < 1e-10
    record = _random_record(8, L=4, p=0.5)
    for hyp in ChargeLabel:
        assert -1e-12 <= dense_oracle(record, hyp) <= 1 + 1e-12


def test_dense_oracle_unitary_mode_agrees_with_exact_replay():
    record = _random_record(17, L=4, p=0.6)
    for hyp in ChargeLabel:
        ll = likelihood_exact(record, hyp)
        expected = np.exp(ll) if ll > float("-inf") else 0.0
        assert abs(dense_oracle(record, hyp, unitary_mode=True) - expected) < 1e-10


def test_strong_symmetry_of_evolved_output():
    # dense residual of commutators with charge and flip along a record
    from chargelab.symmetry import charge_generator, flip_matrix

    record = _random_record(13, L=4, p=0.6)
    rho = dense_sector_mixed(ChargeLabel.ZERO_PLUS, 4)
    z = np.diag(charge_generator(4))
    f = flip_matrix(4)
    for layer in record.hybrid.layers:
        for slot in layer:
            if slot.kind == "gate":
                rho = dn.dense_apply_channel_bond(rho, slot.bond, 4)
            else:
                rho = dn.dense_apply_projection(rho, slot.bond, slot.outcome, 4)
            assert np.abs(rho @ z - z @ rho).max() < 1e-9
            assert np.abs(rho @ f - f @ rho).max() < 1e-9


def test_peak_bond_reporting():
    assert identity_mps(4).peak_bond == 1
    record = _random_record(6, L=4, p=1.0)
    assert peak_bond_of_run(record) >= 1


def test_diagonal_sector_mixture_trace():
    dm = diagonal_sector_mixture(6, 3)
    assert abs(trace(dm) - 1.0) < 1e-12


def test_trace_against_dual_equals_oracle():
    record = _random_record(19, L=4, p=0.5)
    dual = dual_evolve_identity(record)
    sigma = sector_mixed_mpo(ChargeLabel.ONE, 4)
    assert abs(trace_against(dual, sigma) - dense_oracle(record, ChargeLabel.ONE)) < 1e-8
    ll = log_trace_against(dual, sigma)
    ref = dense_oracle(record, ChargeLabel.ONE)
    if ref > 0:
        assert abs(np.exp(ll) - ref) < 1e-8


# --- truncation policy ------------------------------------------------------


def test_truncation_rank_keeps_ties_together():
    s = np.array([1.0, 0.5, 0.5, 1e-9])
    k = dn._truncation_rank(s, TruncationPolicy(cutoff=1e-12, max_chi=2))
    assert k == 1  # cap splits the tied pair, shrink to the gap below it


def test_truncation_rank_cutoff():
    # the cutoff bounds the discarded squared weight
    s = np.array([1.0, 1e-5])
    assert dn._truncation_rank(s, TruncationPolicy(cutoff=1e-12)) == 2
    s = np.array([1.0, 1e-7])
    assert dn._truncation_rank(s, TruncationPolicy(cutoff=1e-12)) == 1


@settings(max_examples=40, deadline=None)
@given(
    values=st.lists(st.floats(min_value=1e-8, max_value=1.0), min_size=1, max_size=24),
    cap=st.one_of(st.none(), st.integers(min_value=1, max_value=8)),
)
def test_truncation_rank_properties(values, cap):
    s = np.sort(np.array(values))[::-1]
    policy = TruncationPolicy(cutoff=1e-12, max_chi=cap)
    k = dn._truncation_rank(s, policy)
    assert 1 <= k <= len(s)
    if cap is not None:
        assert k <= cap
    else:
        discarded = float(np.sum(s[k:] ** 2))
        assert discarded <= policy.cutoff * float(np.sum(s**2)) + 1e-30


def test_policy_validation():
    with pytest.raises(ValueError):
        TruncationPolicy(cutoff=0.0)
    with pytest.raises(ValueError):
        TruncationPolicy(cutoff=1e-12, max_chi=0)


def test_checkpoint_roundtrip(tmp_path):
    dm = channel_scramble(ChargeLabel.ONE, 4, n_steps=3)
    path = tmp_path / "state.clmp"
    save_checkpoint(dm, path)
    loaded = load_checkpoint(path)
    assert loaded.L == dm.L and loaded.log_scale == dm.log_scale
    assert np.abs(to_dense(loaded) - to_dense(dm)).max() == 0.0
    with pytest.raises(ValueError):
        load_checkpoint(__file__)


def test_scramble_converges_toward_sector_mixed_for_one_label():
    # the |q|=1 label keeps its flip-coherent block under scrambling and
    # approaches the analytic construction (slowly); after 2 L^2 layers it
    # is well inside 1e-6 at this size
    L = 4
    dm = channel_scramble(ChargeLabel.ONE, L, n_steps=2 * L * L)
    err = np.linalg.norm(to_dense(dm) - dense_sector_mixed(ChargeLabel.ONE, L))
    assert err < 1e-6
