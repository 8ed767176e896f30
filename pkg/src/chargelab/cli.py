"""Command-line orchestration: generation, decoding, correlator and
scaling experiments, and a self-check against the dense oracles.

Configuration lives in a JSON key/value file; every flag mirrors a config
key and flags override the file.  Progress goes to stderr as JSON lines;
data only ever goes to files.  All commands are deterministic given
(config, seed), independent of the worker count, because every record
derives its random stream from (seed, record index).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from dataclasses import dataclass, field
from multiprocessing import Pool
from pathlib import Path
from typing import Optional

import numpy as np

from chargelab import decoding, density, statevector, swssb, u1
from chargelab.circuits import U1, U1XZ2, MeasurementRecord, make_rng, read_records, record_seed, write_records
from chargelab.density import TruncationPolicy
from chargelab.symmetry import ChargeLabel

OUTDIR_ENV = "CHARGELAB_OUTDIR"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    sizes: list[int] = field(default_factory=lambda: [4])
    rates: list[float] = field(default_factory=lambda: [0.3])
    model: str = U1XZ2
    n_records: int = 100
    seed: int = 0
    cutoff: float = 1e-12
    max_chi: Optional[int] = None
    scramble_steps: Optional[int] = None
    outdir: str = ""
    workers: int = 1
    bins: int = 21

    def __post_init__(self) -> None:
        if not self.outdir:
            self.outdir = os.environ.get(OUTDIR_ENV, ".")

    def validate(self) -> None:
        if self.model not in (U1XZ2, U1):
            raise ConfigError(f"unknown model {self.model!r}")
        if not self.sizes or not self.rates:
            raise ConfigError("sizes and rates must be nonempty")
        for L in self.sizes:
            if L < 2 or L % 2:
                raise ConfigError(f"L={L} must be an even integer >= 2")
        for p in self.rates:
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"rate p={p} outside [0, 1]")
        if self.n_records < 1:
            raise ConfigError("n_records must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        TruncationPolicy(cutoff=self.cutoff, max_chi=self.max_chi)

    @property
    def policy(self) -> TruncationPolicy:
        return TruncationPolicy(cutoff=self.cutoff, max_chi=self.max_chi)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


def log_event(event: str, **fields) -> None:
    payload = {"event": event, **fields}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr, flush=True)


def record_file(config: ExperimentConfig, L: int, p: float) -> Path:
    return Path(config.outdir) / f"records_{config.model}_L{L}_p{p:g}.jsonl"


# --- generate -----------------------------------------------------------------


def _generate_one(args) -> str:
    model, master_seed, index, L, p, scramble_steps = args
    seed = record_seed(master_seed, index)
    rng = make_rng(seed)
    if model == U1:
        half = L // 2
        n_ones = half if index % 2 == 0 else half + 1
        record = u1.u1_generate(L, p, n_ones, rng, seed=seed, scramble_steps=scramble_steps)
    else:
        label = ChargeLabel.ZERO_PLUS if index % 2 == 0 else ChargeLabel.ONE
        record, _ = statevector.run_generation(label, L, p, rng, seed=seed, scramble_steps=scramble_steps)
    from chargelab.circuits import serialize_record

    return serialize_record(record)


def cmd_generate(config: ExperimentConfig) -> int:
    config.validate()
    outdir = Path(config.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    combo = 0
    for L in config.sizes:
        for p in config.rates:
            start = time.monotonic()
            base = config.seed + 1_000_003 * combo
            tasks = [(config.model, base, i, L, p, config.scramble_steps) for i in range(config.n_records)]
            lines = _pool_map(_generate_one, tasks, config.workers)
            path = record_file(config, L, p)
            with open(path, "w", encoding="utf-8") as fh:
                for line in lines:
                    fh.write(line)
                    fh.write("\n")
            log_event("generate", L=L, p=p, n=config.n_records, file=str(path), seconds=round(time.monotonic() - start, 3))
            combo += 1
    return EXIT_OK


def _pool_map(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with Pool(processes=workers) as pool:
        return list(pool.imap(fn, tasks, chunksize=max(1, len(tasks) // (8 * workers))))


# --- decode -------------------------------------------------------------------


def _decode_record_optimal(record: MeasurementRecord) -> decoding.Posterior:
    return decoding.decode_optimal(record)


_WORKER_POLICY: Optional[TruncationPolicy] = None


def _init_policy(cutoff: float, max_chi: Optional[int]) -> None:
    global _WORKER_POLICY
    _WORKER_POLICY = TruncationPolicy(cutoff=cutoff, max_chi=max_chi)


def _decode_record_noisy(record: MeasurementRecord) -> decoding.Posterior:
    return decoding.decode_noisy(record, _WORKER_POLICY or density.DEFAULT_POLICY)


def _decode_record_classical(record: MeasurementRecord) -> decoding.Posterior:
    n_true = int(record.true_label.split(":")[1])
    half = record.L // 2
    wrong = half + 1 if n_true == half else half
    return u1.u1_decode(record, (n_true, wrong), _WORKER_POLICY or density.DEFAULT_POLICY)


def cmd_decode(config: ExperimentConfig, decoder: str) -> int:
    config.validate()
    if config.model == U1 and decoder != "classical":
        raise ConfigError("plain-U(1) records decode with --decoder classical")
    if config.model == U1XZ2 and decoder == "classical":
        raise ConfigError("classical decoder applies to model u1 only")
    worker_fn = {
        decoding.OPTIMAL: _decode_record_optimal,
        decoding.NOISY: _decode_record_noisy,
        "classical": _decode_record_classical,
    }[decoder]
    summaries = []
    histogram_entries = []
    for L in config.sizes:
        for p in config.rates:
            path = record_file(config, L, p)
            if not path.exists():
                log_event("error", message=f"missing record file {path}")
                return EXIT_FAILURE
            records = list(read_records(path))
            if not records:
                log_event("error", message=f"empty record file {path}")
                return EXIT_FAILURE
            start = time.monotonic()
            if config.workers > 1 and decoder != decoding.OPTIMAL:
                with Pool(
                    processes=config.workers,
                    initializer=_init_policy,
                    initargs=(config.cutoff, config.max_chi),
                ) as pool:
                    posteriors = list(pool.imap(worker_fn, records, chunksize=4))
            else:
                _init_policy(config.cutoff, config.max_chi)
                posteriors = [worker_fn(r) for r in records]
            summary = decoding.accuracy(posteriors, make_rng(config.seed + 17), decoder=decoder, L=L, p=p)
            summaries.append(summary)
            histogram_entries.append((decoder, L, p, decoding.pcorr_histogram(posteriors, bins=config.bins)))
            log_event(
                "decode", decoder=decoder, L=L, p=p, n=len(records),
                acc=round(summary.accuracy, 6), seconds=round(time.monotonic() - start, 3),
            )
    outdir = Path(config.outdir)
    acc_path = outdir / f"accuracy_{decoder}.csv"
    hist_path = outdir / f"histogram_{decoder}.csv"
    decoding.write_accuracy_csv(acc_path, summaries)
    decoding.write_histogram_csv(hist_path, histogram_entries)
    log_event("decode_done", accuracy_csv=str(acc_path), histogram_csv=str(hist_path), rows=len(summaries))
    return EXIT_OK


# --- swssb --------------------------------------------------------------------


def cmd_swssb(config: ExperimentConfig) -> int:
    config.validate()
    outdir = Path(config.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    series_list = []
    for L in config.sizes:
        for p in config.rates:
            start = time.monotonic()
            if config.model == U1:
                series = u1.run_u1_correlator(
                    L, p, config.n_records, policy=config.policy,
                    master_seed=config.seed, workers=config.workers,
                )
            else:
                series = swssb.run_swssb_experiment(
                    L, p, config.n_records, policy=config.policy,
                    master_seed=config.seed, workers=config.workers,
                )
            series_list.append(series)
            log_event("swssb", model=config.model, L=L, p=p, n_traj=config.n_records,
                      seconds=round(time.monotonic() - start, 3))
    path = outdir / "correlator.csv"
    swssb.write_correlator_csv(path, series_list)
    log_event("swssb_done", correlator_csv=str(path), rows=sum(len(s.distances) for s in series_list))
    return EXIT_OK


# --- scaling --------------------------------------------------------------------


def cmd_scaling(config: ExperimentConfig, definitions: list[str]) -> int:
    config.validate()
    outdir = Path(config.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    all_rows = []
    for definition in definitions:
        for p in config.rates:
            start = time.monotonic()
            rows, fit = decoding.bond_scaling(
                config.sizes, p, config.n_records, policy=config.policy,
                master_seed=config.seed, definition=definition, workers=config.workers,
            )
            all_rows.extend(rows)
            log_event(
                "scaling", definition=definition, p=p,
                exponent=round(fit.exponent, 4), exponent_stderr=round(fit.exponent_stderr, 4),
                seconds=round(time.monotonic() - start, 3),
            )
    path = outdir / "scaling.csv"
    decoding.write_scaling_csv(path, all_rows)
    log_event("scaling_done", scaling_csv=str(path), rows=len(all_rows))
    return EXIT_OK


# --- validate --------------------------------------------------------------------


def cmd_validate(config: ExperimentConfig) -> int:
    """Dense-oracle self-checks at toy sizes; exit 0 iff all pass."""
    checks: list[tuple[str, bool, str]] = []

    def check(name: str, ok: bool, detail: str = "") -> None:
        checks.append((name, bool(ok), detail))
        log_event("validate", check=name, ok=bool(ok), detail=detail)

    from chargelab.symmetry import projector_set

    ps = projector_set()
    check("projector_completeness", bool(np.array_equal(ps.p1 + ps.ps + ps.pa, np.eye(4))))
    check("projector_orthogonality", float(np.abs(ps.p1 @ ps.ps).max()) == 0.0)

    for L in (4, 6):
        for label in (ChargeLabel.ZERO_PLUS, ChargeLabel.ONE):
            err = float(np.abs(density.to_dense(density.sector_mixed_mpo(label, L)) - density.dense_sector_mixed(label, L)).max())
            check(f"sector_mixed_dense_L{L}_{label.value}", err < 1e-10, f"err={err:.2e}")

    rng = make_rng(config.seed)
    worst = 0.0
    for i, p in enumerate((0.3, 0.6)):
        for label in (ChargeLabel.ZERO_PLUS, ChargeLabel.ONE):
            record, _ = statevector.run_generation(label, 4, p, rng, seed=i)
            for hyp in (ChargeLabel.ZERO_PLUS, ChargeLabel.ONE):
                ll = density.likelihood_noisy(record, hyp, config.policy)
                ref = density.dense_oracle(record, hyp)
                got = float(np.exp(ll)) if ll > float("-inf") else 0.0
                worst = max(worst, abs(got - ref))
    check("noisy_likelihood_vs_dense", worst < 1e-8, f"worst={worst:.2e}")

    dm = density.sector_mixed_mpo(ChargeLabel.ZERO_PLUS, 4)
    for bond in (1, 3, 2):
        density.apply_channel(dm, bond, config.policy)
    rho = density.to_dense(dm)
    rho /= np.trace(rho)
    err = abs(swssb.renyi2_corr(dm, 1, 2) - swssb.dense_renyi2(rho, 1, 2, 4))
    check("renyi2_vs_dense", err < 1e-8, f"err={err:.2e}")

    failures = [name for name, ok, _ in checks if not ok]
    log_event("validate_done", n_checks=len(checks), failures=failures)
    return EXIT_OK if not failures else EXIT_FAILURE


# --- entry point ------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None, help="JSON config file; flags override it")
    parser.add_argument("--model", choices=[U1XZ2, U1], default=None)
    parser.add_argument("--sizes", "-L", type=int, nargs="+", default=None)
    parser.add_argument("--rates", "-p", type=float, nargs="+", default=None)
    parser.add_argument("--n-records", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--cutoff", type=float, default=None)
    parser.add_argument("--max-chi", type=int, default=None)
    parser.add_argument("--scramble-steps", type=int, default=None)
    parser.add_argument("--outdir", type=str, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--bins", type=int, default=None)


_FLAG_KEYS = [
    "model", "sizes", "rates", "n_records", "seed", "cutoff",
    "max_chi", "scramble_steps", "outdir", "workers", "bins",
]


def _build_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config:
        config = ExperimentConfig.from_file(args.config)
    else:
        config = ExperimentConfig()
    for key in _FLAG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            setattr(config, key, value)
    config.validate()
    return config


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="chargelab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "swssb", "validate"):
        p = sub.add_parser(name)
        _add_common(p)
    p = sub.add_parser("decode")
    _add_common(p)
    p.add_argument("--decoder", choices=[decoding.OPTIMAL, decoding.NOISY, "classical"], required=True)
    p = sub.add_parser("scaling")
    _add_common(p)
    p.add_argument("--definition", choices=[decoding.DUAL_DECODE, decoding.SCRAMBLE_RUN, "both"], default="both")
    args = parser.parse_args(argv)
    try:
        config = _build_config(args)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        log_event("config_error", message=str(exc))
        return EXIT_CONFIG
    try:
        if args.command == "generate":
            return cmd_generate(config)
        if args.command == "decode":
            return cmd_decode(config, args.decoder)
        if args.command == "swssb":
            return cmd_swssb(config)
        if args.command == "scaling":
            definitions = [args.definition] if args.definition != "both" else [decoding.DUAL_DECODE, decoding.SCRAMBLE_RUN]
            return cmd_scaling(config, definitions)
        if args.command == "validate":
            return cmd_validate(config)
    except ConfigError as exc:
        log_event("config_error", message=str(exc))
        return EXIT_CONFIG
    except Exception as exc:  # surface a structured failure, nonzero exit
        log_event("error", message=f"{type(exc).__name__}: {exc}")
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
