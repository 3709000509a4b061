"""Figure rendering for reports.  All figures are written as SVG with fixed
hash salt and no timestamp metadata so repeated runs are byte-identical."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "odrop"

import matplotlib.pyplot as plt
import numpy as np

from .rejection import RejectionCurve
from .stats import KdeCurve


def _save(fig: plt.Figure, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def rejection_curve_plot(
    curves: dict[str, RejectionCurve], metric_kind: str, path: str | Path
) -> Path:
    """One line per OOD method; the rate-0 baseline is drawn as a dashed rule."""
    fig, ax = plt.subplots(figsize=(7, 5))
    baseline = None
    for method in sorted(curves):
        curve = curves[method]
        ax.plot(curve.rates, curve.values, marker=".", markersize=4,
                linewidth=1.5, label=f"{method} (tau={curve.tau_b:+.2f})")
        baseline = curve.baseline if baseline is None else baseline
    if baseline is not None:
        ax.axhline(baseline, color="gray", linestyle="--", linewidth=1,
                   label=f"baseline ({baseline:.3f})")
    ax.set_xlabel("rejection rate")
    ax.set_ylabel(metric_kind.upper())
    ax.set_title(f"{metric_kind.upper()} rejection curves")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def kde_plot(
    curves: dict[str, KdeCurve], column: str, path: str | Path
) -> Path:
    """Overlaid density estimates, one per dataset."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in sorted(curves):
        curve = curves[name]
        ax.plot(curve.grid, curve.density, linewidth=1.5, label=name)
        ax.fill_between(curve.grid, curve.density, alpha=0.2)
    ax.set_xlabel(column)
    ax.set_ylabel("density")
    ax.set_title(f"Kernel density estimate: {column}")
    ax.legend(fontsize=8)
    return _save(fig, path)


def shap_heatmap(
    matrix: np.ndarray,
    feature_names: list[str],
    ood_flags: np.ndarray,
    path: str | Path,
) -> Path:
    """Diverging heatmap centered at 0 with an ID/OOD flag strip on the left.

    The color range is clipped at the 99th percentile of |value| so a few
    extreme attributions do not flatten the rest.
    """
    m = np.asarray(matrix, dtype=np.float64)
    vmax = float(np.percentile(np.abs(m), 99)) if m.size else 1.0
    if vmax == 0.0:
        vmax = 1.0
    n_rows, n_cols = m.shape
    fig, (ax_flag, ax_heat) = plt.subplots(
        1, 2, figsize=(max(6, 0.35 * n_cols + 2), max(3, 0.02 * n_rows + 2)),
        width_ratios=[1, max(n_cols, 1) * 2], sharey=True,
    )
    ax_heat.imshow(m, aspect="auto", cmap="RdBu_r", vmin=-vmax, vmax=vmax,
                   interpolation="nearest")
    ax_heat.set_xticks(range(n_cols))
    ax_heat.set_xticklabels(feature_names, rotation=90, fontsize=7)
    ax_heat.set_yticks([])
    ax_heat.set_title("attribution (log-odds)", fontsize=9)

    flags = np.asarray(ood_flags, dtype=np.float64)[:, None]
    ax_flag.imshow(flags, aspect="auto", cmap="binary", vmin=0, vmax=1,
                   interpolation="nearest")
    ax_flag.set_xticks([0])
    ax_flag.set_xticklabels(["OOD"], rotation=90, fontsize=7)
    ax_flag.set_yticks([])
    fig.tight_layout()
    return _save(fig, path)
