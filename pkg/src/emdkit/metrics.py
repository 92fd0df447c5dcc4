"""Performance measures for EMD approximators, plus the timing harness.

Conventions pinned here so reported numbers are reproducible:

- Kendall tau uses the tau-b tie correction (predicted distances can tie).
- Quantiles use linear interpolation between order statistics (type 7).
- Gradient rows of zero length (coincident matched points) are excluded
  from cosine statistics; the excluded count is reported.
- Matching accuracy counts a direction correct only against the single
  returned ground-truth matching, so tie-degenerate pairs can depress it;
  pairs with non-unique optima should be avoided in evaluation sets.
"""

from __future__ import annotations

import csv
import gc
import json
import math
import statistics
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats as _scipy_stats

from .core import Matching, SoftMatching, substream

__all__ = [
    "UndefinedCorrelationError",
    "EvalRecord",
    "RelativeErrorResult",
    "CosineResult",
    "MatchingMetrics",
    "TimingSample",
    "pearson",
    "spearman",
    "kendall_tau",
    "relative_errors",
    "gradient_cosines",
    "matching_metrics",
    "summarize",
    "bench",
    "QUANTILES",
    "CDF_THRESHOLDS",
    "write_records_csv",
    "write_summary_json",
    "write_cdf_csv",
    "write_timing_csv",
]

QUANTILES = (0.1, 0.5, 0.9)
CDF_THRESHOLDS = np.linspace(-1.0, 1.0, 201)


class UndefinedCorrelationError(ValueError):
    """A correlation was requested on degenerate (constant) input."""


def _check_xy(xs, ys) -> tuple[np.ndarray, np.ndarray]:
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("inputs must be 1-d arrays of equal length")
    if xs.size < 2:
        raise ValueError("need at least two observations")
    return xs, ys


def pearson(xs, ys) -> float:
    """Linear correlation coefficient r."""
    xs, ys = _check_xy(xs, ys)
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    denom = math.sqrt(float(xc @ xc)) * math.sqrt(float(yc @ yc))
    if denom == 0.0:
        raise UndefinedCorrelationError("pearson undefined for constant input")
    return float(xc @ yc) / denom


def spearman(xs, ys) -> float:
    """Rank correlation rho: pearson on average-tied ranks."""
    xs, ys = _check_xy(xs, ys)
    return pearson(_scipy_stats.rankdata(xs), _scipy_stats.rankdata(ys))


def kendall_tau(xs, ys) -> float:
    """Kendall rank correlation with tau-b tie correction."""
    xs, ys = _check_xy(xs, ys)
    tau = _scipy_stats.kendalltau(xs, ys).statistic
    if not np.isfinite(tau):
        raise UndefinedCorrelationError("kendall tau undefined for constant input")
    return float(tau)


@dataclass(frozen=True)
class EvalRecord:
    """Everything the metrics suite needs from one evaluated pair.

    ``pred_matching``/gradients may be None for estimators that do not
    provide them (e.g. the distance-only regressor).
    """

    pair_id: int
    method: str
    d_true: float
    d_pred: float
    gt_matching: Matching | None = None
    pred_matching: SoftMatching | None = None
    true_grads: np.ndarray | None = None
    pred_grads: np.ndarray | None = None


@dataclass(frozen=True)
class RelativeErrorResult:
    values: np.ndarray  # per-record |d_pred - d_true| / d_true
    quantiles: dict[float, float]
    excluded: int  # records with d_true <= 0


def relative_errors(records: Sequence[EvalRecord]) -> RelativeErrorResult:
    """Per-record relative error and its quantiles; zero-distance pairs excluded."""
    usable = [r for r in records if r.d_true > 0]
    excluded = len(records) - len(usable)
    values = np.array([abs(r.d_pred - r.d_true) / r.d_true for r in usable])
    if values.size == 0:
        quantiles = {q: float("nan") for q in QUANTILES}
    else:
        quantiles = {q: float(np.quantile(values, q)) for q in QUANTILES}
    return RelativeErrorResult(values=values, quantiles=quantiles, excluded=excluded)


@dataclass(frozen=True)
class CosineResult:
    values: np.ndarray  # one cosine per usable target point, all records pooled
    quantiles: dict[float, float]
    cdf: np.ndarray  # fraction of values <= each CDF_THRESHOLDS entry
    skipped: int  # points whose true or predicted gradient row was zero


def gradient_cosines(records: Sequence[EvalRecord]) -> CosineResult:
    """Per-point cosine between true and predicted gradients, pooled."""
    cosines = []
    skipped = 0
    for rec in records:
        if rec.true_grads is None or rec.pred_grads is None:
            continue
        tn = np.linalg.norm(rec.true_grads, axis=1)
        pn = np.linalg.norm(rec.pred_grads, axis=1)
        ok = (tn > 0) & (pn > 0)
        skipped += int((~ok).sum())
        dots = np.einsum("ij,ij->i", rec.true_grads[ok], rec.pred_grads[ok])
        # rounding can push |cos| marginally past 1; clamp to the true range
        cosines.append(np.clip(dots / (tn[ok] * pn[ok]), -1.0, 1.0))
    values = np.concatenate(cosines) if cosines else np.empty(0)
    if values.size == 0:
        quantiles = {q: float("nan") for q in QUANTILES}
        cdf = np.full(CDF_THRESHOLDS.shape, float("nan"))
    else:
        quantiles = {q: float(np.quantile(values, q)) for q in QUANTILES}
        cdf = (values[None, :] <= CDF_THRESHOLDS[:, None]).mean(axis=1)
    return CosineResult(values=values, quantiles=quantiles, cdf=cdf, skipped=skipped)


@dataclass(frozen=True)
class MatchingMetrics:
    accuracy: float  # percent
    bipartiteness: float  # percent
    bipartiteness_correct: float  # percent
    n_points: int


def matching_metrics(records: Sequence[EvalRecord]) -> MatchingMetrics | None:
    """Accuracy / bipartiteness / correct-bipartiteness, pooled over points.

    A source point i is bipartite when backward(forward(i)) == i; it counts
    toward correctness when additionally forward(i) hits the ground truth.
    Accuracy averages the per-direction hit rates.
    """
    fwd_hits = []
    bwd_hits = []
    bipartite = []
    bip_correct = []
    for rec in records:
        if rec.pred_matching is None or rec.gt_matching is None:
            continue
        sm = rec.pred_matching
        gt = rec.gt_matching.assign
        gt_inv = rec.gt_matching.inverse().assign
        fwd_hits.append(sm.forward == gt)
        bwd_hits.append(sm.backward == gt_inv)
        bip = sm.backward[sm.forward] == np.arange(len(sm))
        bipartite.append(bip)
        bip_correct.append(bip & (sm.forward == gt))
    if not fwd_hits:
        return None
    fwd = np.concatenate(fwd_hits)
    bwd = np.concatenate(bwd_hits)
    accuracy = 50.0 * (fwd.mean() + bwd.mean())
    return MatchingMetrics(
        accuracy=float(accuracy),
        bipartiteness=float(100.0 * np.concatenate(bipartite).mean()),
        bipartiteness_correct=float(100.0 * np.concatenate(bip_correct).mean()),
        n_points=int(fwd.size),
    )


def summarize(records: Sequence[EvalRecord]) -> dict:
    """All scalar metrics for one method's record set, as a JSON-ready dict."""
    d_true = np.array([r.d_true for r in records])
    d_pred = np.array([r.d_pred for r in records])
    summary: dict = {"n_records": len(records)}
    try:
        summary["r"] = pearson(d_true, d_pred)
        summary["rho"] = spearman(d_true, d_pred)
        summary["tau"] = kendall_tau(d_true, d_pred)
    except (UndefinedCorrelationError, ValueError):
        summary.update({"r": None, "rho": None, "tau": None})
    re = relative_errors(records)
    for q in QUANTILES:
        summary[f"re_{q}"] = re.quantiles[q]
    summary["re_excluded"] = re.excluded
    cs = gradient_cosines(records)
    for q in QUANTILES:
        summary[f"cs_{q}"] = None if math.isnan(cs.quantiles[q]) else cs.quantiles[q]
    summary["cs_skipped"] = cs.skipped
    mm = matching_metrics(records)
    summary["accuracy"] = mm.accuracy if mm else None
    summary["bipartiteness"] = mm.bipartiteness if mm else None
    summary["bipartiteness_correct"] = mm.bipartiteness_correct if mm else None
    return summary


# ---------------------------------------------------------------------------
# Timing harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimingSample:
    method: str
    n: int
    seconds: float  # median over trials
    trials: int


def bench(
    methods: dict[str, Callable],
    Ns: Sequence[int],
    trials: int,
    seed: int,
    dim: int = 2,
) -> tuple[list[TimingSample], dict[str, float]]:
    """Median wall time per (method, N) plus a log-log slope per method.

    Each method is a callable taking two (N, dim) coordinate arrays. One
    untimed warmup run precedes ``trials`` timed runs per cell; inputs are
    regenerated per cell from a seeded substream.
    """
    if trials < 3:
        raise ValueError("need at least 3 trials plus warmup")
    samples = []
    gc_was_enabled = gc.isenabled()
    try:
        for name, fn in methods.items():
            for n in Ns:
                rng = substream(seed, "bench", name, int(n))
                u = rng.random((n, dim))
                v = rng.random((n, dim))
                fn(u, v)  # warmup, excluded
                gc.collect()
                gc.disable()  # no collector pauses inside timed runs
                durations = []
                for _ in range(trials):
                    t0 = time.perf_counter()
                    fn(u, v)
                    durations.append(time.perf_counter() - t0)
                gc.enable()
                samples.append(
                    TimingSample(
                        method=name,
                        n=int(n),
                        seconds=float(statistics.median(durations)),
                        trials=trials,
                    )
                )
    finally:
        if gc_was_enabled:
            gc.enable()
    slopes = {}
    for name in methods:
        pts = [(s.n, s.seconds) for s in samples if s.method == name]
        if len(pts) >= 2:
            logn = np.log([p[0] for p in pts])
            logt = np.log([p[1] for p in pts])
            slopes[name] = float(np.polyfit(logn, logt, 1)[0])
        else:
            slopes[name] = float("nan")
    return samples, slopes


# ---------------------------------------------------------------------------
# Report writers (CSV/JSON schemas consumed by the plotting component)
# ---------------------------------------------------------------------------


def write_records_csv(path: str | Path, records: Iterable[EvalRecord]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair_id", "method", "d_true", "d_pred"])
        for r in records:
            writer.writerow([r.pair_id, r.method, repr(r.d_true), repr(r.d_pred)])


def write_summary_json(path: str | Path, summaries: dict[str, dict]):
    Path(path).write_text(json.dumps(summaries, sort_keys=True, indent=2) + "\n")


def write_cdf_csv(path: str | Path, cdfs: dict[str, CosineResult]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "threshold", "cumulative_fraction"])
        for method, result in cdfs.items():
            for threshold, frac in zip(CDF_THRESHOLDS, result.cdf):
                writer.writerow([method, repr(float(threshold)), repr(float(frac))])


def write_timing_csv(
    path: str | Path, samples: Sequence[TimingSample], slopes: dict[str, float]
):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "N", "median_seconds", "trials", "slope"])
        for s in samples:
            writer.writerow(
                [s.method, s.n, repr(s.seconds), s.trials, repr(slopes[s.method])]
            )
