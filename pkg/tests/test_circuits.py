import math
import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chargelab.circuits import (
    FORMAT_VERSION,
    GATE,
    MEASURE,
    MeasurementRecord,
    RecordFormatError,
    Schedule,
    Slot,
    VersionMismatchError,
    deserialize_record,
    make_rng,
    record_seed,
    sample_schedule,
    scramble_schedule,
    serialize_record,
    truncate_record,
    write_records,
    read_records,
)
from chargelab.statevector import run_generation
from chargelab.symmetry import ChargeLabel


def test_sample_schedule_degenerate_rates(rng):
    all_gates = sample_schedule(4, 0.0, 5, rng)
    assert all_gates.n_measure_slots() == 0
    all_measures = sample_schedule(4, 1.0, 5, rng)
    assert all_measures.n_gate_slots() == 0


def test_sample_schedule_rejects_bad_rate(rng):
    with pytest.raises(ValueError):
        sample_schedule(4, 1.5, 2, rng)


def test_sample_schedule_measure_fraction(rng):
    # binomial statistics over 16*16 slots at rate 0.3
    sched = sample_schedule(16, 0.3, 16, rng)
    n_slots = sum(len(layer) for layer in sched.layers)
    frac = sched.n_measure_slots() / n_slots
    stderr = math.sqrt(0.3 * 0.7 / n_slots)
    assert abs(frac - 0.3) < 3 * stderr


def test_schedule_slot_counts_are_pure_functions_of_shape(rng):
    sched = scramble_schedule(4, rng)
    assert len(sched.layers) == 16
    assert all(len(layer) == 3 for layer in sched.layers)
    assert sched.n_measure_slots() == 0


def test_layer_ordering_odd_then_even(rng):
    sched = sample_schedule(8, 0.5, 3, rng)
    for layer in sched.layers:
        bonds = [slot.bond for slot in layer]
        assert bonds == [1, 3, 5, 7, 2, 4, 6]


def test_scramble_determinism():
    a = scramble_schedule(6, make_rng(7))
    b = scramble_schedule(6, make_rng(7))
    assert a == b


def _small_record(seed=3, L=4, p=0.4) -> MeasurementRecord:
    record, _ = run_generation(ChargeLabel.ONE, L, p, make_rng(seed), seed=seed)
    return record


def test_serialize_roundtrip_field_for_field():
    record = _small_record()
    again = deserialize_record(serialize_record(record))
    assert again == record


def test_serialize_is_deterministic():
    assert serialize_record(_small_record()) == serialize_record(_small_record())


def test_truncated_stream_is_malformed():
    line = serialize_record(_small_record())
    with pytest.raises(RecordFormatError):
        deserialize_record(line[: len(line) // 2])


def test_version_mismatch():
    line = serialize_record(_small_record())
    bad = line.replace('"version":1', '"version":99', 1)
    with pytest.raises(VersionMismatchError):
        deserialize_record(bad)


def test_structural_validation_catches_missing_outcome():
    line = serialize_record(_small_record(p=0.9))
    bad = re.sub(r',"outcome":"[1sa]"', "", bad_line := line, count=1)
    assert bad != bad_line
    with pytest.raises(RecordFormatError):
        deserialize_record(bad)


def test_angles_serialized_with_17_significant_digits():
    line = serialize_record(_small_record())
    thetas = re.findall(r'"theta":([-0-9.eE+]+)', line)
    assert thetas
    digit_counts = [len(t.replace(".", "").replace("-", "").lstrip("0")) for t in thetas]
    assert max(digit_counts) >= 17
    # and every token round-trips to the exact double
    record = _small_record()
    again = deserialize_record(line)
    for la, lb in zip(record.hybrid.layers, again.hybrid.layers):
        for sa, sb in zip(la, lb):
            assert sa.theta == sb.theta and sa.phi == sb.phi


def test_record_file_roundtrip(tmp_path):
    records = [_small_record(seed=s) for s in (1, 2, 3)]
    path = tmp_path / "records.jsonl"
    assert write_records(path, records) == 3
    assert list(read_records(path)) == records


def test_record_seed_streams_are_distinct():
    seeds = {record_seed(42, i) for i in range(100)}
    assert len(seeds) == 100
    assert record_seed(42, 0) == record_seed(42, 0)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**31), p=st.sampled_from([0.0, 0.3, 0.8, 1.0]))
def test_roundtrip_property(seed, p):
    record, _ = run_generation(ChargeLabel.ZERO_PLUS, 4, p, make_rng(seed), seed=seed, scramble_steps=2)
    assert deserialize_record(serialize_record(record)) == record


def test_truncate_record_prefix():
    record = _small_record(p=0.8)
    prefix = truncate_record(record, 2, 1)
    assert len(prefix.hybrid.layers) == 3
    assert prefix.hybrid.layers[:2] == record.hybrid.layers[:2]
    assert prefix.hybrid.layers[2] == record.hybrid.layers[2][:1]


def test_format_version_constant():
    assert FORMAT_VERSION == 1
    assert _small_record().version == 1


def test_slot_kinds():
    s = Slot(bond=1, kind=GATE, theta=0.1, phi=0.2)
    assert s.params.theta == 0.1
    m = Slot(bond=2, kind=MEASURE, outcome="s")
    assert m.outcome == "s"
