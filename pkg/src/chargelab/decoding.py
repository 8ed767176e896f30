"""Posterior arithmetic and the decoding pipeline: accuracy curves,
posterior histograms, threshold crossings, and bond-dimension scaling.

All ensemble drivers are deterministic given (master seed, worker count):
each record owns a Philox stream keyed by its index, and reductions run
in index order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from multiprocessing import Pool
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.stats

from chargelab import density, statevector
from chargelab.circuits import MeasurementRecord, make_rng, record_seed, truncate_record
from chargelab.density import TruncationPolicy
from chargelab.symmetry import ChargeLabel

NEG_INF = float("-inf")

OPTIMAL = "optimal"
NOISY = "noisy"


@dataclass
class Posterior:
    """Charge inference result for one record, under a uniform prior
    unless stated otherwise."""

    loglik_corr: float
    loglik_wrong: float
    p_corr: float
    predicted: Optional[ChargeLabel]
    tie: bool


TIE_REL_TOL = 1e-12


def posterior(loglik_corr: float, loglik_wrong: float, prior_corr: float = 0.5) -> Posterior:
    """Numerically stable log-space posterior of the correct hypothesis;
    -inf likelihoods are handled exactly, and a doubly -inf pair is a
    degenerate input.  Log-likelihood differences below 1e-12 (relative)
    are beneath the accumulation error of either likelihood engine and
    are flagged as ties."""
    if loglik_corr == NEG_INF and loglik_wrong == NEG_INF:
        raise ValueError("degenerate likelihood pair: both hypotheses impossible")
    if not (loglik_corr <= 1e-9 and loglik_wrong <= 1e-9):
        raise ValueError("log likelihoods must lie in [-inf, 0]")
    if loglik_wrong == NEG_INF:
        return Posterior(loglik_corr, loglik_wrong, 1.0, None, False)
    if loglik_corr == NEG_INF:
        return Posterior(loglik_corr, loglik_wrong, 0.0, None, False)
    shift = loglik_wrong - loglik_corr + math.log((1.0 - prior_corr) / prior_corr)
    if abs(shift) <= TIE_REL_TOL * max(1.0, abs(loglik_corr), abs(loglik_wrong)):
        return Posterior(loglik_corr, loglik_wrong, 0.5, None, True)
    try:
        p_corr = 1.0 / (1.0 + math.exp(shift))
    except OverflowError:
        p_corr = 0.0
    return Posterior(loglik_corr, loglik_wrong, p_corr, None, False)


def _with_labels(post: Posterior, true_label: ChargeLabel) -> Posterior:
    if post.tie:
        post.predicted = None
    else:
        post.predicted = true_label if post.p_corr > 0.5 else true_label.other
    return post


def decode_optimal(record: MeasurementRecord) -> Posterior:
    """Exact-replay decoder: both hypothesis states are prepared with the
    record's own scramble circuit before forcing the outcomes."""
    llc = statevector.likelihood_exact(record, record.true_label)
    llw = statevector.likelihood_exact(record, record.true_label.other)
    return _with_labels(posterior(llc, llw), record.true_label)


def decode_noisy(record: MeasurementRecord, policy: TruncationPolicy = density.DEFAULT_POLICY) -> Posterior:
    """Dephasing-channel decoder; a single dual-evolved identity serves
    both hypotheses."""
    dual = density.dual_evolve_identity(record, policy)
    llc = density.likelihood_noisy(record, record.true_label, policy, dual_state=dual)
    llw = density.likelihood_noisy(record, record.true_label.other, policy, dual_state=dual)
    return _with_labels(posterior(llc, llw), record.true_label)


@dataclass
class AccuracySummary:
    decoder: str
    L: int
    p: float
    n_records: int
    accuracy: float
    stderr: float


def accuracy(
    posteriors: Sequence[Posterior],
    rng: np.random.Generator,
    decoder: str = OPTIMAL,
    L: int = 0,
    p: float = 0.0,
) -> AccuracySummary:
    """Mean correct-prediction indicator; exact ties are resolved by the
    supplied seeded coin so that reruns (and decoder comparisons sharing a
    seed) are reproducible."""
    if not posteriors:
        raise ValueError("empty posterior ensemble")
    hits = 0.0
    for post in posteriors:
        if post.tie:
            hits += 1.0 if rng.random() < 0.5 else 0.0
        elif post.p_corr > 0.5:
            hits += 1.0
    n = len(posteriors)
    acc = hits / n
    stderr = math.sqrt(max(acc * (1.0 - acc), 1e-300) / n)
    return AccuracySummary(decoder=decoder, L=L, p=p, n_records=n, accuracy=acc, stderr=stderr)


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    density: np.ndarray

    @property
    def n_records(self) -> int:
        return int(self.counts.sum())

    def mass_above_half(self) -> float:
        centers = 0.5 * (self.edges[:-1] + self.edges[1:])
        return float(self.counts[centers > 0.5].sum() / max(self.counts.sum(), 1))


def pcorr_histogram(posteriors: Sequence[Posterior], bins: int = 21) -> Histogram:
    if not posteriors:
        raise ValueError("empty posterior ensemble")
    values = [post.p_corr for post in posteriors]
    counts, edges = np.histogram(values, bins=bins, range=(0.0, 1.0))
    density = counts / (counts.sum() * np.diff(edges))
    return Histogram(edges=edges, counts=counts, density=density)


# --- threshold crossings -----------------------------------------------------


@dataclass
class ThresholdFit:
    """Crossing of the accuracy curves of two system sizes."""

    L_small: int
    L_large: int
    p_cross: float
    ci_low: float
    ci_high: float


def crossing_fits(
    curves: dict[int, tuple[Sequence[float], Sequence[float], Sequence[float]]]
) -> list[ThresholdFit]:
    """Pairwise accuracy-curve crossings of successive sizes by linear
    interpolation; curves maps L -> (p grid, accuracy, stderr).

    Among all sign changes of the curve difference, the dominant one is
    kept: the candidate whose left side is most consistently negative and
    right side most consistently positive, so statistical wiggles in the
    flat regions do not masquerade as the threshold."""
    fits = []
    sizes = sorted(curves)
    for L1, L2 in zip(sizes, sizes[1:]):
        p1, a1, s1 = (np.asarray(v, dtype=float) for v in curves[L1])
        p2, a2, s2 = (np.asarray(v, dtype=float) for v in curves[L2])
        if not np.array_equal(p1, p2):
            raise ValueError("curves must share a p grid")
        diff = a2 - a1
        sig = np.sqrt(s1**2 + s2**2)
        best = None
        for i in range(len(p1) - 1):
            if diff[i] < 0.0 <= diff[i + 1]:
                contrast = float(np.maximum(0.0, -diff[: i + 1]).sum() + np.maximum(0.0, diff[i + 1 :]).sum())
                if best is None or contrast > best[0]:
                    best = (contrast, i)
        if best is None:
            continue
        i = best[1]
        slope = (diff[i + 1] - diff[i]) / (p1[i + 1] - p1[i])
        p_cross = p1[i] - diff[i] / slope
        width = float(np.hypot(sig[i], sig[i + 1]) / max(abs(slope), 1e-12))
        fits.append(ThresholdFit(L1, L2, float(p_cross), float(p_cross - width), float(p_cross + width)))
    return fits


# --- bond-dimension scaling ---------------------------------------------------


@dataclass
class PowerLawFit:
    exponent: float
    exponent_stderr: float
    log_prefactor: float
    residual_rms: float


def fit_power_law(sizes: Sequence[float], values: Sequence[float]) -> PowerLawFit:
    """Least-squares slope of log(value) against log(size)."""
    if len(sizes) < 3:
        raise ValueError("power-law fit needs at least three sizes")
    x = np.log(np.asarray(sizes, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    if np.ptp(x) == 0.0:
        raise ValueError("degenerate fit: all sizes equal")
    res = scipy.stats.linregress(x, y)
    resid = y - (res.intercept + res.slope * x)
    return PowerLawFit(
        exponent=float(res.slope),
        exponent_stderr=float(res.stderr),
        log_prefactor=float(res.intercept),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
    )


DUAL_DECODE = "dual"
SCRAMBLE_RUN = "scramble"


@dataclass
class ScalingRow:
    definition: str
    L: int
    p: float
    n_records: int
    chi_median: float


def _peak_bond_worker(args) -> int:
    master_seed, index, L, p, cutoff, max_chi = args
    label = ChargeLabel.ZERO_PLUS if index % 2 == 0 else ChargeLabel.ONE
    seed = record_seed(master_seed, index)
    record, _ = statevector.run_generation(label, L, p, make_rng(seed), seed=seed)
    return density.peak_bond_of_run(record, TruncationPolicy(cutoff=cutoff, max_chi=max_chi))


def bond_scaling(
    L_list: Sequence[int],
    p: float,
    n_records: int,
    policy: TruncationPolicy = density.DEFAULT_POLICY,
    master_seed: int = 0,
    definition: str = DUAL_DECODE,
    workers: int = 1,
) -> tuple[list[ScalingRow], PowerLawFit]:
    """Median peak bond dimension versus system size, under either the
    record-by-record dual-decode evolution or the deterministic
    channel-scrambling run, with a log-log power-law fit."""
    rows = []
    for L in sorted(L_list):
        if definition == SCRAMBLE_RUN:
            peak = density.peak_bond_of_scramble(ChargeLabel.ZERO_PLUS, L, policy)
            rows.append(ScalingRow(definition, L, p, 1, float(peak)))
            continue
        tasks = [(master_seed + 7919 * L, i, L, p, policy.cutoff, policy.max_chi) for i in range(n_records)]
        peaks = _run_tasks(_peak_bond_worker, tasks, workers)
        rows.append(ScalingRow(definition, L, p, n_records, float(np.median(peaks))))
    fit = fit_power_law([r.L for r in rows], [r.chi_median for r in rows])
    return rows, fit


def _run_tasks(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with Pool(processes=workers) as pool:
        return list(pool.imap(fn, tasks, chunksize=max(1, len(tasks) // (8 * workers))))


# --- posterior against time ----------------------------------------------------


def posterior_vs_time(
    record: MeasurementRecord,
    decoder: str,
    checkpoints: Sequence[int],
    policy: TruncationPolicy = density.DEFAULT_POLICY,
) -> list[tuple[int, float]]:
    """p_corr after each requested number of hybrid layers.  Ties along
    the way are reported as 0.5; no pointwise monotonicity is implied."""
    n_layers = len(record.hybrid.layers)
    checkpoints = sorted(set(int(t) for t in checkpoints))
    if any(t < 0 or t > n_layers for t in checkpoints):
        raise ValueError("checkpoints outside record length")
    out = []
    for t in checkpoints:
        prefix = truncate_record(record, t)
        if decoder == OPTIMAL:
            llc = statevector.likelihood_exact(prefix, record.true_label)
            llw = statevector.likelihood_exact(prefix, record.true_label.other)
        else:
            dual = density.dual_evolve_identity(prefix, policy)
            llc = density.likelihood_noisy(prefix, record.true_label, policy, dual_state=dual)
            llw = density.likelihood_noisy(prefix, record.true_label.other, policy, dual_state=dual)
        try:
            out.append((t, posterior(llc, llw).p_corr))
        except ValueError:
            out.append((t, float("nan")))
    return out


def sharpening_time(series: Sequence[tuple[int, float]], threshold: float = 0.99) -> Optional[int]:
    """First checkpoint whose posterior exceeds the threshold."""
    for t, value in series:
        if value > threshold:
            return t
    return None


# --- ensemble driver -------------------------------------------------------------


@dataclass
class RecordDecodes:
    """Both decoders' posteriors for one generated record."""

    index: int
    optimal: Posterior
    noisy: Posterior
    peak_bond: int


def _decode_worker(args) -> RecordDecodes:
    master_seed, index, L, p, cutoff, max_chi, scramble_steps = args
    label = ChargeLabel.ZERO_PLUS if index % 2 == 0 else ChargeLabel.ONE
    seed = record_seed(master_seed, index)
    record, ll_true, ll_wrong = statevector.generate_with_both_hypotheses(
        label, L, p, make_rng(seed), seed=seed, scramble_steps=scramble_steps
    )
    policy = TruncationPolicy(cutoff=cutoff, max_chi=max_chi)
    dual = density.dual_evolve_identity(record, policy)
    post_noisy = _with_labels(
        posterior(
            density.likelihood_noisy(record, label, policy, dual_state=dual),
            density.likelihood_noisy(record, label.other, policy, dual_state=dual),
        ),
        label,
    )
    return RecordDecodes(
        index=index,
        optimal=_with_labels(posterior(ll_true, ll_wrong), label),
        noisy=post_noisy,
        peak_bond=dual.peak_bond,
    )


def run_accuracy_point(
    L: int,
    p: float,
    n_records: int,
    master_seed: int,
    policy: TruncationPolicy = density.DEFAULT_POLICY,
    workers: int = 1,
    scramble_steps: Optional[int] = None,
) -> list[RecordDecodes]:
    """Generate n_records Born-sampled records at (L, p), half per charge
    label, and decode each with both decoders."""
    tasks = [
        (master_seed, i, L, p, policy.cutoff, policy.max_chi, scramble_steps)
        for i in range(n_records)
    ]
    return _run_tasks(_decode_worker, tasks, workers)


# --- CSV output ------------------------------------------------------------------

ACCURACY_COLUMNS = ["decoder", "L", "p", "n", "acc", "stderr"]
HISTOGRAM_COLUMNS = ["decoder", "L", "p", "bin_lo", "bin_hi", "count", "density"]
SCALING_COLUMNS = ["definition", "L", "p", "n", "chi_median"]


def write_accuracy_csv(path, summaries: Iterable[AccuracySummary]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ACCURACY_COLUMNS)
        for s in summaries:
            writer.writerow([s.decoder, s.L, repr(s.p), s.n_records, repr(s.accuracy), repr(s.stderr)])


def write_histogram_csv(path, entries: Iterable[tuple[str, int, float, Histogram]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTOGRAM_COLUMNS)
        for decoder, L, p, hist in entries:
            for lo, hi, count, dens in zip(hist.edges[:-1], hist.edges[1:], hist.counts, hist.density):
                writer.writerow([decoder, L, repr(p), repr(float(lo)), repr(float(hi)), int(count), repr(float(dens))])


def write_scaling_csv(path, rows: Iterable[ScalingRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCALING_COLUMNS)
        for r in rows:
            writer.writerow([r.definition, r.L, repr(r.p), r.n_records, repr(r.chi_median)])
