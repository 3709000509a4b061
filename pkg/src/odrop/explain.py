"""Additive attributions for the boosted-tree predictor and Ward clustering.

Attributions are exact Shapley values of the path-dependent (cover-weighted)
conditional expectation of each tree.  The expectation factorizes per leaf
into one indicator/cover-ratio factor per path feature, so the Shapley sum
reduces to a small elementary-symmetric dynamic program per leaf, vectorized
over rows.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gbt import Forest, Tree, predict_margin


@dataclass
class ShapMatrix:
    """Per-row, per-feature attributions in log-odds units.

    Invariant: base_value + row attribution sum equals the forest margin.
    """

    values: np.ndarray
    base_value: float
    row_ids: list
    ood_flags: np.ndarray
    feature_names: list[str]


@dataclass
class Dendrogram:
    """Agglomerative merge trace: (cluster_a, cluster_b, distance, merged size).

    Original rows are clusters 0..n-1; merge step m creates cluster n+m.
    """

    merges: list[tuple[int, int, float, int]]
    leaf_order: list[int]
    n_leaves: int


def _shapley_weights(u: int) -> np.ndarray:
    fact = [math.factorial(i) for i in range(u + 1)]
    return np.array([fact[k] * fact[u - 1 - k] / fact[u] for k in range(u)])


def _leaf_phi(
    phi: np.ndarray,
    weight: float,
    feats: list[int],
    a_list: list[np.ndarray],
    b_list: list[float],
) -> None:
    u = len(feats)
    n = phi.shape[0]
    w_shap = _shapley_weights(u)
    for i in range(u):
        # Elementary-symmetric DP over the other features: poly[k] sums the
        # products of k "present" factors (a) and u-1-k "absent" factors (b).
        poly = [np.ones(n)]
        for j in range(u):
            if j == i:
                continue
            a, b = a_list[j], b_list[j]
            nxt = [poly[0] * b]
            for k in range(1, len(poly)):
                nxt.append(poly[k - 1] * a + poly[k] * b)
            nxt.append(poly[-1] * a)
            poly = nxt
        acc = w_shap[0] * poly[0]
        for k in range(1, u):
            acc = acc + w_shap[k] * poly[k]
        phi[:, feats[i]] += weight * (a_list[i] - b_list[i]) * acc


def _tree_shap_one_tree(tree: Tree, x: np.ndarray, phi: np.ndarray) -> None:
    n = x.shape[0]

    def recurse(node: int, feats: list[int], a_list: list[np.ndarray],
                b_list: list[float]) -> None:
        f = int(tree.feature[node])
        if f < 0:
            if feats:
                _leaf_phi(phi, float(tree.value[node]), feats, a_list, b_list)
            return
        col = x[:, f]
        go_left = np.where(np.isnan(col), tree.default_left[node],
                           col < tree.threshold[node])
        cover = tree.cover[node]
        try:
            pos = feats.index(f)
        except ValueError:
            pos = -1
        for child, ind in ((int(tree.left[node]), go_left),
                           (int(tree.right[node]), ~go_left)):
            ratio = float(tree.cover[child] / cover)
            if pos >= 0:
                a2 = list(a_list)
                b2 = list(b_list)
                a2[pos] = a_list[pos] * ind
                b2[pos] = b_list[pos] * ratio
                recurse(child, feats, a2, b2)
            else:
                recurse(child, feats + [f], a_list + [ind.astype(np.float64)],
                        b_list + [ratio])

    recurse(0, [], [], [])


def _tree_mean_value(tree: Tree) -> float:
    leaves = tree.feature < 0
    return float((tree.value[leaves] * tree.cover[leaves]).sum() / tree.cover[0])


def tree_shap(forest: Forest, x: np.ndarray) -> tuple[np.ndarray, float]:
    """Attributions and base value for one row or an (n, d) matrix of rows.

    base_value is the cover-weighted mean margin of the forest; attributions
    sum to margin - base_value per row.
    """
    for tree in forest.trees:
        if tree.cover.size == 0 or tree.cover[0] <= 0:
            raise ValueError(
                "forest lacks training cover counts; re-fit before attribution"
            )
    xm = np.asarray(x, dtype=np.float64)
    single = xm.ndim == 1
    if single:
        xm = xm[None, :]
    if xm.shape[1] != forest.n_features:
        raise ValueError(f"expected {forest.n_features} features, got {xm.shape[1]}")
    phi = np.zeros_like(xm)
    base = forest.base_score
    for tree in forest.trees:
        base += forest.config.eta * _tree_mean_value(tree)
        _tree_shap_one_tree(tree, xm, phi)
    phi *= forest.config.eta
    return (phi[0], float(base)) if single else (phi, float(base))


def shap_matrix(
    forest: Forest,
    features: np.ndarray,
    ood_scores: np.ndarray,
    threshold: float,
    row_ids: list | None = None,
) -> ShapMatrix:
    """Attribution matrix with OOD flags from the given score threshold."""
    x = np.asarray(features, dtype=np.float64)
    phi, base = tree_shap(forest, x)
    margin = predict_margin(forest, x)
    err = np.abs(base + phi.sum(axis=1) - margin)
    if err.max() > 1e-6:
        raise AssertionError(
            f"local accuracy violated: max residual {err.max():.3g}"
        )
    names = forest.feature_names or [f"f{j}" for j in range(x.shape[1])]
    ids = list(row_ids) if row_ids is not None else list(range(x.shape[0]))
    flags = np.asarray(ood_scores, dtype=np.float64) > threshold
    return ShapMatrix(phi, base, ids, flags, list(names))


def ward_cluster(matrix: np.ndarray) -> Dendrogram:
    """Agglomerative Ward clustering via Lance-Williams updates on squared
    Euclidean distances; merge ties break on the smallest (i, j) id pair."""
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("ward_cluster needs a 2-D matrix with >= 2 rows")
    if not np.isfinite(x).all():
        raise ValueError("ward_cluster requires finite entries")
    n = x.shape[0]
    total = 2 * n - 1
    d2 = np.full((total, total), np.inf)
    # Explicit differences (chunked): exact zeros for identical rows, which
    # the Gram-matrix shortcut cannot guarantee.
    for start in range(0, n, 128):
        block = x[start : start + 128]
        d2[start : start + len(block), :n] = (
            (block[:, None, :] - x[None, :, :]) ** 2
        ).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    size = np.zeros(total)
    size[:n] = 1.0
    active = np.zeros(total, dtype=bool)
    active[:n] = True

    merges: list[tuple[int, int, float, int]] = []
    children: dict[int, tuple[int, int]] = {}
    for step in range(n - 1):
        sub = d2[np.ix_(active, active)]
        ids = np.flatnonzero(active)
        flat = int(np.argmin(sub))  # row-major scan = smallest (i, j) on ties
        i = int(ids[flat // len(ids)])
        j = int(ids[flat % len(ids)])
        if i > j:
            i, j = j, i
        dist = math.sqrt(max(d2[i, j], 0.0))
        new = n + step
        merges.append((i, j, dist, int(size[i] + size[j])))
        children[new] = (i, j)
        s_i, s_j = size[i], size[j]
        others = np.flatnonzero(active)
        others = others[(others != i) & (others != j)]
        if others.size:
            upd = (
                (s_i + size[others]) * d2[i, others]
                + (s_j + size[others]) * d2[j, others]
                - size[others] * d2[i, j]
            ) / (s_i + s_j + size[others])
            d2[new, others] = upd
            d2[others, new] = upd
        size[new] = s_i + s_j
        active[i] = active[j] = False
        active[new] = True

    def order(node: int) -> list[int]:
        if node < n:
            return [node]
        a, b = children[node]
        return order(a) + order(b)

    return Dendrogram(merges, order(total - 1), n)


def cluster_rows(shap: ShapMatrix, use_abs: bool = False) -> Dendrogram:
    m = np.abs(shap.values) if use_abs else shap.values
    return ward_cluster(m)


def cluster_columns(shap: ShapMatrix, use_abs: bool = True) -> Dendrogram:
    """Cluster features on their per-row attribution profiles (|SHAP| by default)."""
    m = np.abs(shap.values) if use_abs else shap.values
    return ward_cluster(m.T)


def dendrogram_to_json(dendrogram: Dendrogram, path: str | Path | None = None) -> str:
    doc = {
        "format": "odrop-dendrogram",
        "version": 1,
        "n_leaves": dendrogram.n_leaves,
        "merges": [
            {"a": a, "b": b, "distance": dist, "size": size}
            for a, b, dist, size in dendrogram.merges
        ],
        "leaf_order": dendrogram.leaf_order,
    }
    text = json.dumps(doc, sort_keys=True)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def heatmap_export(
    shap: ShapMatrix,
    row_dendrogram: Dendrogram,
    col_dendrogram: Dendrogram,
    path: str | Path,
) -> tuple[Path, Path]:
    """SVG heatmap in dendrogram leaf order plus a CSV of the reordered matrix.

    Returns (svg_path, csv_path).
    """
    if row_dendrogram.n_leaves != shap.values.shape[0]:
        raise ValueError("row dendrogram does not match the matrix height")
    if col_dendrogram.n_leaves != shap.values.shape[1]:
        raise ValueError("column dendrogram does not match the matrix width")
    svg_path = Path(path)
    row_order = row_dendrogram.leaf_order
    col_order = col_dendrogram.leaf_order
    reordered = shap.values[np.ix_(row_order, col_order)]
    names = [shap.feature_names[j] for j in col_order]
    flags = shap.ood_flags[row_order]
    ids = [shap.row_ids[i] for i in row_order]

    csv_path = svg_path.with_suffix(".csv")
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row_id", "ood_flag", *names])
        for rid, flag, row in zip(ids, flags, reordered):
            writer.writerow([rid, int(flag), *[repr(float(v)) for v in row]])

    from .plots import shap_heatmap  # deferred: matplotlib import is slow

    shap_heatmap(reordered, names, flags, svg_path)
    return svg_path, csv_path
