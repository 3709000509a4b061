"""Reject-option evaluation: thresholds, rejection curves, and fold baselines.

A curve sweeps a rate grid (default 0-40% in 1% steps), thresholds the OOD
scores at each rate, and recomputes the prediction metric on the retained
rows.  Ties at a cut reject fewer rows, never more than requested.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gbt import BoostConfig, fit_gbt, predict_proba
from .metrics import UndefinedMetricError, auroc, kendall_tau_b, prauc
from .tabular import stratified_folds

AUROC = "auroc"
PRAUC = "prauc"
METRIC_KINDS = (AUROC, PRAUC)
MAX_REJECTION_RATE = 0.4

_METRIC_FN = {AUROC: auroc, PRAUC: prauc}


def default_rate_grid(step: float = 0.01, max_rate: float = MAX_REJECTION_RATE) -> np.ndarray:
    n_steps = int(round(max_rate / step))
    return np.linspace(0.0, max_rate, n_steps + 1)


def threshold_for_rate(scores: np.ndarray, rate: float) -> float:
    """Smallest threshold t with fraction(scores > t) <= rate.

    With ties at the cut this rejects fewer rows than requested, never more.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("scores must be non-empty")
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must be in [0, 1]")
    k_max = int(np.floor(rate * s.size + 1e-12))
    if k_max >= s.size:
        return -np.inf
    # The (k_max+1)-th largest score: everything strictly above it is at most
    # k_max rows, and no smaller threshold keeps the fraction within rate.
    return float(np.partition(s, s.size - k_max - 1)[s.size - k_max - 1])


def partition(scores: np.ndarray, threshold: float) -> tuple[np.ndarray, float]:
    """(retained mask, achieved rejection rate); rows above threshold are rejected."""
    s = np.asarray(scores, dtype=np.float64)
    rejected = s > threshold
    return ~rejected, float(rejected.mean()) if s.size else 0.0


@dataclass
class RejectionCurve:
    """Metric-vs-rejection-rate points with baseline, peak, and tau-b summary."""

    rates: np.ndarray
    values: np.ndarray
    n_retained: np.ndarray
    metric_kind: str
    baseline: float
    peak_rate: float
    peak_value: float
    tau_b: float
    flags: list[str] = field(default_factory=list)

    @property
    def improvement(self) -> float:
        return self.peak_value - self.baseline


def rejection_curve(
    ood_scores: np.ndarray,
    predictor_scores: np.ndarray,
    labels: np.ndarray,
    metric_kind: str = AUROC,
    rate_grid: np.ndarray | None = None,
    threshold_scores: np.ndarray | None = None,
) -> RejectionCurve:
    """Evaluate the prediction metric on retained rows along the rate grid.

    Thresholds come from the evaluated scores' own quantiles by default;
    passing ``threshold_scores`` (e.g. training-set scores) switches to
    deployment-style fixed thresholds.  Grid points whose retained set loses
    a class are dropped with a flag.  The rate-0 point is the no-rejection
    baseline and must be defined.
    """
    if metric_kind not in _METRIC_FN:
        raise ValueError(f"unknown metric kind {metric_kind!r}")
    metric = _METRIC_FN[metric_kind]
    ood = np.asarray(ood_scores, dtype=np.float64)
    pred = np.asarray(predictor_scores, dtype=np.float64)
    y = np.asarray(labels)
    grid = default_rate_grid() if rate_grid is None else np.asarray(rate_grid, dtype=np.float64)
    if grid.size == 0 or grid[0] != 0.0:
        raise ValueError("rate grid must start at 0")
    source = ood if threshold_scores is None else np.asarray(
        threshold_scores, dtype=np.float64
    )

    flags: list[str] = []
    rates: list[float] = []
    values: list[float] = []
    retained_counts: list[int] = []
    for requested in grid:
        t = threshold_for_rate(source, float(requested))
        keep, achieved = partition(ood, t)
        try:
            value = metric(pred[keep], y[keep])
        except UndefinedMetricError:
            if requested == 0.0:
                raise
            flags.append(f"dropped_rate_{requested:.4f}_single_class")
            continue
        if rates and achieved == rates[-1]:
            continue  # tie at the cut reproduced the previous partition
        rates.append(achieved)
        values.append(value)
        retained_counts.append(int(keep.sum()))

    values_arr = np.asarray(values)
    rates_arr = np.asarray(rates)
    peak_idx = int(np.argmax(values_arr))
    if len(rates) < 2:
        tau = 0.0
        flags.append("tau_degenerate")
    else:
        tau = kendall_tau_b(rates_arr, values_arr)
        if np.all(values_arr == values_arr[0]):
            flags.append("tau_degenerate")
    return RejectionCurve(
        rates_arr, values_arr, np.asarray(retained_counts, dtype=np.int64),
        metric_kind, float(values_arr[0]), float(rates_arr[peak_idx]),
        float(values_arr[peak_idx]), float(tau), flags,
    )


@dataclass
class OdropReport:
    """Per-method, per-metric curve summaries of one evaluation run."""

    entries: list[dict]

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps({"format": "odrop-report", "version": 1,
                           "entries": self.entries}, indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def build_report(curves: dict[tuple[str, str], RejectionCurve]) -> OdropReport:
    """Summarize curves keyed by (method, metric_kind)."""
    entries = []
    for (method, metric_kind), curve in sorted(curves.items()):
        entries.append({
            "method": method,
            "metric": metric_kind,
            "baseline": curve.baseline,
            "peak_rate": curve.peak_rate,
            "peak_value": curve.peak_value,
            "improvement": curve.improvement,
            "tau_b": curve.tau_b,
            "flags": list(curve.flags),
        })
    return OdropReport(entries)


@dataclass
class CvBaseline:
    """Fold-averaged predictor quality without any rejection."""

    auroc_mean: float
    auroc_std: float
    prauc_mean: float
    prauc_std: float
    fold_auroc: np.ndarray
    fold_prauc: np.ndarray


def cv_baseline(
    features: np.ndarray,
    labels: np.ndarray,
    config: BoostConfig,
    k: int = 5,
    seed: int = 0,
) -> CvBaseline:
    """Stratified k-fold train/evaluate with the boosted-tree predictor."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    folds = stratified_folds(y, k, seed)
    aurocs = []
    praucs = []
    for fold in range(k):
        train = folds.fold_index != fold
        forest = fit_gbt(x[train], y[train], config)
        p = predict_proba(forest, x[~train])
        aurocs.append(auroc(p, y[~train]))
        praucs.append(prauc(p, y[~train]))
    fa = np.asarray(aurocs)
    fp = np.asarray(praucs)
    return CvBaseline(float(fa.mean()), float(fa.std()), float(fp.mean()),
                      float(fp.std()), fa, fp)
