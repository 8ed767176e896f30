"""Brickwork schedules, measurement records, and their JSONL wire format.

A schedule is a list of layers; each layer lists its slots in application
order: odd bonds ascending, then even bonds ascending.  A slot is either a
gate (with angles, or a dense 2x2 block for the plain-U(1) model) or a
measurement (whose outcome is filled once the record has been generated).

Records are serialized one per line as JSON with a fixed field order and
floats printed with 17 significant digits so replay is bit-faithful.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional

import numpy as np

from chargelab.symmetry import ChargeLabel, GateParams, OUTCOME_SYMBOLS, random_gate_params

FORMAT_VERSION = 1

GATE = "gate"
MEASURE = "measure"

U1XZ2 = "u1xz2"
U1 = "u1"

U1_OUTCOMES = ("0", "1")


class RecordFormatError(ValueError):
    """Malformed record line or structurally inconsistent record."""


class VersionMismatchError(RecordFormatError):
    """Record was written with an unsupported format version."""


@dataclass
class Slot:
    """One brickwork slot: a gate or a measurement at a bond.

    For the plain-U(1) model, measurement slots use `bond` as the site
    index and gate slots carry a dense 2x2 `block` instead of angles.
    """

    bond: int
    kind: str
    theta: Optional[float] = None
    phi: Optional[float] = None
    outcome: Optional[str] = None
    block: Optional[np.ndarray] = None

    @property
    def params(self) -> GateParams:
        return GateParams(self.theta, self.phi)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Slot):
            return NotImplemented
        same_block = (
            (self.block is None and other.block is None)
            or (self.block is not None and other.block is not None and np.array_equal(self.block, other.block))
        )
        return (
            self.bond == other.bond
            and self.kind == other.kind
            and self.theta == other.theta
            and self.phi == other.phi
            and self.outcome == other.outcome
            and same_block
        )


Layer = list[Slot]


@dataclass
class Schedule:
    """Brickwork layers over an open chain of L sites."""

    L: int
    layers: list[Layer] = field(default_factory=list)

    def n_measure_slots(self) -> int:
        return sum(1 for layer in self.layers for slot in layer if slot.kind == MEASURE)

    def n_gate_slots(self) -> int:
        return sum(1 for layer in self.layers for slot in layer if slot.kind == GATE)


def odd_bonds(L: int) -> list[int]:
    return list(range(1, L, 2))


def even_bonds(L: int) -> list[int]:
    return list(range(2, L, 2))


def layer_bonds(L: int) -> list[int]:
    return odd_bonds(L) + even_bonds(L)


def sample_schedule(L: int, p: float, n_steps: int, rng: np.random.Generator) -> Schedule:
    """Brickwork schedule with an independent Bernoulli(p) coin per slot:
    measurement (outcome empty) with probability p, else a gate with fresh
    uniform angles."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"measurement rate p={p} outside [0, 1]")
    _check_size(L)
    layers = []
    for _ in range(n_steps):
        layer = []
        for bond in layer_bonds(L):
            if rng.random() < p:
                layer.append(Slot(bond=bond, kind=MEASURE))
            else:
                gp = random_gate_params(rng)
                layer.append(Slot(bond=bond, kind=GATE, theta=gp.theta, phi=gp.phi))
        layers.append(layer)
    return Schedule(L=L, layers=layers)


def scramble_schedule(L: int, rng: np.random.Generator, n_steps: Optional[int] = None) -> Schedule:
    """Gate-only brickwork schedule; defaults to L^2 layers."""
    _check_size(L)
    if n_steps is None:
        n_steps = L * L
    layers = []
    for _ in range(n_steps):
        layer = []
        for bond in layer_bonds(L):
            gp = random_gate_params(rng)
            layer.append(Slot(bond=bond, kind=GATE, theta=gp.theta, phi=gp.phi))
        layers.append(layer)
    return Schedule(L=L, layers=layers)


def _check_size(L: int) -> None:
    if L < 2 or L % 2:
        raise ValueError("L must be an even integer >= 2")


@dataclass
class MeasurementRecord:
    """A full serialized trajectory: scramble circuit, hybrid schedule with
    outcomes filled, and the log Born weight accumulated while generating."""

    L: int
    p: float
    seed: int
    true_label: ChargeLabel
    scramble_steps: int
    scramble: Schedule
    hybrid: Schedule
    log_weight: float
    version: int = FORMAT_VERSION
    model: str = U1XZ2

    def validate(self) -> None:
        if self.scramble.n_measure_slots():
            raise RecordFormatError("scramble schedule contains measurement slots")
        for layer in self.hybrid.layers:
            for slot in layer:
                if slot.kind == MEASURE and slot.outcome is None:
                    raise RecordFormatError("hybrid measurement slot without outcome")
        if self.log_weight > 1e-12:
            raise RecordFormatError("log_weight must be <= 0")


# --- RNG streams ------------------------------------------------------------
#
# Every trajectory owns a counter-based Philox stream derived from the
# master seed and the record index, so parallel generation is reproducible
# and independent of worker scheduling.


def record_seed(master_seed: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(index,))
    words = ss.generate_state(2, np.uint64)
    return int(words[0]) | (int(words[1]) << 64)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def choose_outcome(rng: np.random.Generator, probs) -> int:
    """Inverse-CDF draw consuming exactly one uniform, so independent
    engines fed the same stream sample identical outcome sequences."""
    u = rng.random()
    acc = 0.0
    for idx, w in enumerate(probs):
        acc += w
        if u < acc:
            return idx
    return len(probs) - 1


# --- serialization ----------------------------------------------------------


def _fmt_float(x: float) -> str:
    if not np.isfinite(x):
        raise RecordFormatError(f"cannot serialize non-finite float {x!r}")
    text = f"{x:.17g}"
    # keep the token a JSON float even for integral values
    if "e" not in text and "E" not in text and "." not in text:
        text += ".0"
    return text


def _slot_json(slot: Slot) -> str:
    parts = [f'"bond":{slot.bond}', f'"kind":"{slot.kind}"']
    if slot.kind == GATE:
        if slot.block is not None:
            entries = ",".join(
                f"[{_fmt_float(v.real)},{_fmt_float(v.imag)}]" for v in slot.block.reshape(-1)
            )
            parts.append(f'"block":[{entries}]')
        else:
            parts.append(f'"theta":{_fmt_float(slot.theta)}')
            parts.append(f'"phi":{_fmt_float(slot.phi)}')
    elif slot.outcome is not None:
        parts.append(f'"outcome":"{slot.outcome}"')
    return "{" + ",".join(parts) + "}"


def _schedule_json(schedule: Schedule) -> str:
    layers = ",".join("[" + ",".join(_slot_json(s) for s in layer) + "]" for layer in schedule.layers)
    return "[" + layers + "]"


def serialize_record(record: MeasurementRecord) -> str:
    record.validate()
    fields = [
        f'"version":{record.version}',
        f'"L":{record.L}',
        f'"p":{_fmt_float(record.p)}',
        f'"seed":{record.seed}',
        f'"label":"{record.true_label.value if isinstance(record.true_label, ChargeLabel) else record.true_label}"',
        f'"scramble_steps":{record.scramble_steps}',
        f'"scramble":{_schedule_json(record.scramble)}',
        f'"hybrid":{_schedule_json(record.hybrid)}',
        f'"log_weight":{_fmt_float(record.log_weight)}',
    ]
    if record.model != U1XZ2:
        fields.append(f'"model":"{record.model}"')
    return "{" + ",".join(fields) + "}"


def _parse_slot(obj: dict, model: str) -> Slot:
    try:
        bond = int(obj["bond"])
        kind = obj["kind"]
    except (KeyError, TypeError, ValueError) as exc:
        raise RecordFormatError(f"bad slot object {obj!r}") from exc
    if kind == GATE:
        if "block" in obj:
            flat = obj["block"]
            if len(flat) != 4:
                raise RecordFormatError("gate block must have four entries")
            block = np.array([complex(re, im) for re, im in flat]).reshape(2, 2)
            return Slot(bond=bond, kind=GATE, block=block)
        try:
            return Slot(bond=bond, kind=GATE, theta=float(obj["theta"]), phi=float(obj["phi"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise RecordFormatError(f"gate slot without angles: {obj!r}") from exc
    if kind == MEASURE:
        outcome = obj.get("outcome")
        valid = U1_OUTCOMES if model == U1 else OUTCOME_SYMBOLS
        if outcome is not None and outcome not in valid:
            raise RecordFormatError(f"bad outcome symbol {outcome!r}")
        return Slot(bond=bond, kind=MEASURE, outcome=outcome)
    raise RecordFormatError(f"unknown slot kind {kind!r}")


def _parse_schedule(layers_obj: list, L: int, model: str) -> Schedule:
    if not isinstance(layers_obj, list):
        raise RecordFormatError("schedule must be a list of layers")
    layers = []
    for layer_obj in layers_obj:
        if not isinstance(layer_obj, list):
            raise RecordFormatError("layer must be a list of slots")
        layers.append([_parse_slot(s, model) for s in layer_obj])
    return Schedule(L=L, layers=layers)


def deserialize_record(line: str) -> MeasurementRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise RecordFormatError(f"malformed record line: {exc}") from exc
    if not isinstance(obj, dict):
        raise RecordFormatError("record line is not a JSON object")
    version = obj.get("version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"unsupported record version {version!r}")
    model = obj.get("model", U1XZ2)
    try:
        L = int(obj["L"])
        record = MeasurementRecord(
            L=L,
            p=float(obj["p"]),
            seed=int(obj["seed"]),
            true_label=_parse_label(obj["label"], model),
            scramble_steps=int(obj["scramble_steps"]),
            scramble=_parse_schedule(obj["scramble"], L, model),
            hybrid=_parse_schedule(obj["hybrid"], L, model),
            log_weight=float(obj["log_weight"]),
            version=version,
            model=model,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, RecordFormatError):
            raise
        raise RecordFormatError(f"missing or malformed record field: {exc}") from exc
    record.validate()
    return record


def _parse_label(value: str, model: str):
    if model == U1:
        if not (isinstance(value, str) and value.startswith("n:")):
            raise RecordFormatError(f"bad plain-U(1) label {value!r}")
        return value
    try:
        return ChargeLabel(value)
    except ValueError as exc:
        raise RecordFormatError(f"unknown charge label {value!r}") from exc


def write_records(path, records: Iterable[MeasurementRecord]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(serialize_record(record))
            fh.write("\n")
            count += 1
    return count


def read_records(path) -> Iterator[MeasurementRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield deserialize_record(line)


def truncate_record(record: MeasurementRecord, n_layers: int, n_slots: int | None = None) -> MeasurementRecord:
    """Record restricted to a prefix of its hybrid schedule: the first
    n_layers full layers plus, optionally, the first n_slots slots of the
    next layer.  Used for outcome-tree checks and posterior-vs-time."""
    layers = [list(layer) for layer in record.hybrid.layers[:n_layers]]
    if n_slots is not None and n_layers < len(record.hybrid.layers):
        layers.append(list(record.hybrid.layers[n_layers][:n_slots]))
    return replace(record, hybrid=Schedule(L=record.L, layers=layers), log_weight=0.0)
