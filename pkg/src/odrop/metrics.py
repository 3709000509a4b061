"""Ranking metrics: AUROC (tie-aware), average-precision PRAUC, Kendall tau-b."""
from __future__ import annotations

import numpy as np


class UndefinedMetricError(ValueError):
    """Raised when a metric is undefined, e.g. only one class present."""


def _check_binary(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-D arrays")
    pos = y == 1
    if pos.all() or not pos.any():
        raise UndefinedMetricError("both classes must be present")
    return s, pos


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """P(score+ > score-) + 0.5 P(tie), via the midrank (Mann-Whitney) formula."""
    s, pos = _check_binary(scores, labels)
    n_pos = int(pos.sum())
    n_neg = len(s) - n_pos
    ranks = _midranks(s)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def prauc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Average precision: precision held constant rightward between recall points.

    Ties are grouped, so a constant scorer scores exactly the positive
    prevalence and a perfect ranker exactly 1.
    """
    s, pos = _check_binary(scores, labels)
    n_pos = int(pos.sum())
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    pos_sorted = pos[order].astype(np.float64)
    # Group indices where a strictly lower score starts.
    boundaries = np.flatnonzero(np.diff(s_sorted) != 0)
    ends = np.append(boundaries, len(s_sorted) - 1)
    tp = np.cumsum(pos_sorted)[ends]
    total = ends + 1.0
    precision = tp / total
    recall_step = np.diff(np.concatenate(([0.0], tp))) / n_pos
    return float((recall_step * precision).sum())


def kendall_tau_b(x: np.ndarray, y: np.ndarray) -> float:
    """Tie-corrected Kendall rank correlation; 0 when either vector is all tied.

    Quadratic pair enumeration; intended for short sequences.
    """
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("inputs must be equal-length 1-D arrays with >= 2 entries")
    dx = np.sign(a[:, None] - a[None, :])
    dy = np.sign(b[:, None] - b[None, :])
    iu = np.triu_indices(len(a), k=1)
    prod = dx[iu] * dy[iu]
    concordant = float((prod > 0).sum())
    discordant = float((prod < 0).sum())
    n0 = len(a) * (len(a) - 1) / 2.0
    ties_x = float((dx[iu] == 0).sum())
    ties_y = float((dy[iu] == 0).sum())
    denom = np.sqrt((n0 - ties_x) * (n0 - ties_y))
    if denom == 0:
        return 0.0
    return float((concordant - discordant) / denom)
