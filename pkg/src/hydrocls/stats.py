"""Confusion metrics, bootstrap intervals, and threshold calibration.

The decision rule is fixed everywhere: predict hydrocephalus iff the
pathology probability is >= threshold (ties count as positive), so a
threshold of 0 predicts everything positive exactly. Percentiles use linear
interpolation between order statistics, a single declared rule that an
independent implementation can reproduce bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import StatsError
from .ingest import LABEL_HYDROCEPHALUS, LABEL_NORMAL
from .seeding import derive_seed, rng_for

METRIC_NAMES = ("accuracy", "sensitivity", "specificity")

OBJECTIVES = ("max_youden", "min_sensitivity_at", "min_specificity_at")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with hydrocephalus as the positive class."""

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class BootstrapSummary:
    """Median and central 95% band of a resampled statistic."""

    metric_name: str
    median: float
    p2_5: float
    p97_5: float
    n_resamples: int
    seed: int


@dataclass
class ThresholdReport:
    """Full sweep over candidate thresholds plus the objective's choice."""

    thresholds: list[float]
    rows: list[dict]
    objective: str
    constraint: float | None = None
    chosen_threshold: float | None = None
    feasible: bool = True

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "constraint": self.constraint,
            "chosen_threshold": self.chosen_threshold,
            "feasible": self.feasible,
            "rows": self.rows,
        }


def _as_binary_labels(labels) -> np.ndarray:
    """Accept label strings or 0/1 ints; 1 means hydrocephalus."""
    out = np.empty(len(labels), dtype=np.int64)
    for i, value in enumerate(labels):
        if isinstance(value, str):
            if value == LABEL_HYDROCEPHALUS:
                out[i] = 1
            elif value == LABEL_NORMAL:
                out[i] = 0
            else:
                raise StatsError(f"unknown label {value!r}")
        else:
            iv = int(value)
            if iv not in (0, 1):
                raise StatsError(f"binary labels must be 0 or 1, got {value!r}")
            out[i] = iv
    return out


def confusion(labels, probs, threshold: float) -> ConfusionMatrix:
    """Count outcomes of thresholding pathology probabilities.

    ``probs`` are p(hydrocephalus) values in [0, 1]; prediction is positive
    iff prob >= threshold.
    """
    y = _as_binary_labels(labels)
    p = np.asarray(probs, dtype=np.float64)
    if len(y) != len(p):
        raise StatsError(f"labels ({len(y)}) and probs ({len(p)}) differ in length")
    if len(y) == 0:
        raise StatsError("need at least one prediction")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise StatsError("probabilities must lie in [0, 1]")
    pred = p >= threshold
    pos = y == 1
    return ConfusionMatrix(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def metrics(cm: ConfusionMatrix) -> dict[str, float | None]:
    """Accuracy, sensitivity, specificity; zero-denominator rates are None.

    None is the explicit undefined marker, never a silent zero.
    """
    if min(cm.tp, cm.fp, cm.tn, cm.fn) < 0:
        raise StatsError("confusion counts must be non-negative")
    if cm.total == 0:
        raise StatsError("empty confusion matrix")
    sens = cm.tp / (cm.tp + cm.fn) if (cm.tp + cm.fn) > 0 else None
    spec = cm.tn / (cm.tn + cm.fp) if (cm.tn + cm.fp) > 0 else None
    return {
        "accuracy": (cm.tp + cm.tn) / cm.total,
        "sensitivity": sens,
        "specificity": spec,
    }


def percentile_linear(sorted_values: np.ndarray, q: float) -> float:
    """Percentile by linear interpolation between order statistics.

    ``sorted_values`` must be ascending; ``q`` in [0, 100]. The rank is
    q/100 * (n - 1); fractional ranks interpolate linearly.
    """
    n = len(sorted_values)
    if n == 0:
        raise StatsError("cannot take a percentile of nothing")
    pos = (q / 100.0) * (n - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, n - 1)
    frac = pos - lo
    lo_v = float(sorted_values[lo])
    hi_v = float(sorted_values[hi])
    return lo_v + (hi_v - lo_v) * frac


def bootstrap_summary(
    values,
    n_resamples: int = 10_000,
    seed: int = 0,
    metric_name: str = "value",
) -> BootstrapSummary:
    """Resample with replacement and summarize the distribution of means.

    Each resample has the same length as ``values``; its statistic is the
    mean. The summary is the median and 2.5/97.5 percentiles of those
    statistics, deterministic in ``seed``.
    """
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim != 1 or len(vals) == 0:
        raise StatsError("values must be a non-empty 1D sequence")
    if n_resamples < 1:
        raise StatsError("n_resamples must be >= 1")
    rng = rng_for(seed)
    idx = rng.integers(0, len(vals), size=(n_resamples, len(vals)))
    stats = vals[idx].mean(axis=1)
    stats.sort()
    return BootstrapSummary(
        metric_name=metric_name,
        median=percentile_linear(stats, 50.0),
        p2_5=percentile_linear(stats, 2.5),
        p97_5=percentile_linear(stats, 97.5),
        n_resamples=n_resamples,
        seed=seed,
    )


def format_summary(summary: BootstrapSummary) -> str:
    """Render as 'median% (lo - hi)' with one decimal place, e.g. '97.5% (96.4 - 98.2)'."""
    return (
        f"{summary.median * 100:.1f}% "
        f"({summary.p2_5 * 100:.1f} - {summary.p97_5 * 100:.1f})"
    )


def fold_metric_values(fold_results, threshold: float) -> dict[str, list[float]]:
    """Per-fold metric lists at one threshold; undefined metrics are errors."""
    if not fold_results:
        raise StatsError("need at least one fold result")
    values: dict[str, list[float]] = {name: [] for name in METRIC_NAMES}
    for fr in fold_results:
        if not fr.test_ids:
            raise StatsError(f"fold (rep={fr.rep}, fold={fr.fold}) has an empty test set")
        probs = [pair[1] for pair in fr.test_probs]
        m = metrics(confusion(fr.test_labels, probs, threshold))
        for name in METRIC_NAMES:
            value = m[name]
            if value is None:
                raise StatsError(
                    f"{name} undefined in fold (rep={fr.rep}, fold={fr.fold}); "
                    "its test set lacks one class"
                )
            values[name].append(value)
    return values


def aggregate_cv(
    fold_results,
    threshold: float = 0.5,
    n_resamples: int = 10_000,
    seed: int = 0,
    pooled: bool = False,
) -> dict[str, BootstrapSummary]:
    """Bootstrap summaries of accuracy/sensitivity/specificity over folds.

    Default mode resamples the per-fold metric values (one value per fold).
    ``pooled=True`` instead resamples individual pooled predictions and
    recomputes each metric per resample. Per-metric seeds derive from
    ``seed`` and the metric's position, so each summary is independently
    reproducible.
    """
    if not pooled:
        values = fold_metric_values(fold_results, threshold)
        return {
            name: bootstrap_summary(
                values[name], n_resamples, derive_seed(seed, i), metric_name=name
            )
            for i, name in enumerate(METRIC_NAMES)
        }

    labels: list = []
    probs: list[float] = []
    for fr in fold_results:
        if not fr.test_ids:
            raise StatsError(f"fold (rep={fr.rep}, fold={fr.fold}) has an empty test set")
        labels.extend(fr.test_labels)
        probs.extend(pair[1] for pair in fr.test_probs)
    y = _as_binary_labels(labels)
    p = np.asarray(probs, dtype=np.float64)
    summaries = {}
    for i, name in enumerate(METRIC_NAMES):
        metric_seed = derive_seed(seed, i)
        rng = rng_for(metric_seed)
        idx = rng.integers(0, len(y), size=(n_resamples, len(y)))
        stats = np.empty(n_resamples)
        for r in range(n_resamples):
            m = metrics(confusion(y[idx[r]], p[idx[r]], threshold))
            value = m[name]
            if value is None:
                raise StatsError(f"{name} undefined in a pooled bootstrap resample")
            stats[r] = value
        stats.sort()
        summaries[name] = BootstrapSummary(
            metric_name=name,
            median=percentile_linear(stats, 50.0),
            p2_5=percentile_linear(stats, 2.5),
            p97_5=percentile_linear(stats, 97.5),
            n_resamples=n_resamples,
            seed=metric_seed,
        )
    return summaries


def threshold_sweep(labels, probs) -> tuple[list[float], list[dict]]:
    """Metrics at every distinct probability plus the 0 and 1 endpoints."""
    y = _as_binary_labels(labels)
    p = np.asarray(probs, dtype=np.float64)
    if len(set(y.tolist())) < 2:
        raise StatsError("both classes must be present to sweep thresholds")
    candidates = sorted(set(np.asarray(p, dtype=np.float64).tolist()) | {0.0, 1.0})
    rows = []
    for t in candidates:
        m = metrics(confusion(y, p, t))
        rows.append(
            {
                "threshold": t,
                "sensitivity": m["sensitivity"],
                "specificity": m["specificity"],
                "accuracy": m["accuracy"],
            }
        )
    return candidates, rows


def calibrate_threshold(
    labels,
    probs,
    objective: str = "max_youden",
    constraint: float | None = None,
) -> ThresholdReport:
    """Pick an operating threshold from the sweep.

    ``max_youden`` maximizes sensitivity + specificity - 1. The constrained
    objectives keep the named metric at or above ``constraint`` and maximize
    the other; an empty feasible set is reported, not raised. All ties break
    toward the larger threshold.
    """
    if objective not in OBJECTIVES:
        raise StatsError(f"unknown objective {objective!r}; expected one of {OBJECTIVES}")
    if objective != "max_youden" and constraint is None:
        raise StatsError(f"objective {objective!r} requires a constraint value")
    candidates, rows = threshold_sweep(labels, probs)

    def pick(score_fn, feasible_fn) -> tuple[float | None, bool]:
        best_t = None
        best_score = -np.inf
        for row in rows:
            if not feasible_fn(row):
                continue
            score = score_fn(row)
            if score >= best_score:
                best_score = score
                best_t = row["threshold"]
        return best_t, best_t is not None

    if objective == "max_youden":
        chosen, feasible = pick(
            lambda r: r["sensitivity"] + r["specificity"] - 1.0, lambda r: True
        )
    elif objective == "min_sensitivity_at":
        chosen, feasible = pick(
            lambda r: r["specificity"], lambda r: r["sensitivity"] >= constraint
        )
    else:  # min_specificity_at
        chosen, feasible = pick(
            lambda r: r["sensitivity"], lambda r: r["specificity"] >= constraint
        )

    return ThresholdReport(
        thresholds=candidates,
        rows=rows,
        objective=objective,
        constraint=constraint,
        chosen_threshold=chosen,
        feasible=feasible,
    )
