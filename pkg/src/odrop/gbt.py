"""Gradient-boosted decision trees for binary classification.

Second-order boosting on the logistic loss with exact greedy splits over
sorted unique values, sparsity-aware default directions for missing values,
per-node cover counts (needed by the attribution module), recursive feature
elimination, and grid search.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import auroc
from .tabular import stratified_folds

LEAF_CLIP = 30.0  # keeps sigmoid(margin) away from exact 0/1
_PROB_FLOOR = 1e-6


@dataclass
class BoostConfig:
    n_estimators: int
    max_depth: int
    min_child_weight: float = 1.0
    lam: float = 1.0
    eta: float = 0.3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_estimators < 1 or self.max_depth < 1:
            raise ValueError("n_estimators and max_depth must be at least 1")
        if self.lam < 0 or not 0.0 < self.eta <= 1.0:
            raise ValueError("lam must be >= 0 and eta in (0, 1]")


@dataclass
class GridSpec:
    n_estimators: tuple[int, ...] = (50, 100, 200)
    max_depth: tuple[int, ...] = (2, 4, 6)
    min_child_weight: tuple[float, ...] = (1.0, 2.0, 3.0)

    def __post_init__(self) -> None:
        if not (self.n_estimators and self.max_depth and self.min_child_weight):
            raise ValueError("grid candidate lists must be non-empty")


@dataclass
class Tree:
    """Flat node arrays; feature == -1 marks a leaf.

    ``cover`` is the training row count reaching each node and ``gain`` the
    split gain at internal nodes (0 at leaves).
    """

    feature: np.ndarray
    threshold: np.ndarray
    default_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    gain: np.ndarray


@dataclass
class Forest:
    trees: list[Tree]
    base_score: float
    config: BoostConfig
    feature_names: list[str] | None = None
    n_features: int = 0


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def route_left(value: float, threshold: float, default_left: bool) -> bool:
    """Single routing rule shared by prediction and attribution."""
    if np.isnan(value):
        return bool(default_left)
    return bool(value < threshold)


def _best_split(
    x: np.ndarray, g: np.ndarray, h: np.ndarray, lam: float, min_child_weight: float
) -> tuple[float, int, float, bool] | None:
    """Maximize the second-order gain over features, cut points, and the
    default direction for missing values.  Ties keep the first candidate in
    (feature, default-left-first, ascending threshold) order."""
    total_g = g.sum()
    total_h = h.sum()
    parent = total_g**2 / (total_h + lam)
    best: tuple[float, int, float, bool] | None = None
    for j in range(x.shape[1]):
        col = x[:, j]
        missing = np.isnan(col)
        if (~missing).sum() < 2:
            continue
        vals = col[~missing]
        order = np.argsort(vals, kind="stable")
        vs = vals[order]
        gs = g[~missing][order].cumsum()
        hs = h[~missing][order].cumsum()
        cut = np.flatnonzero(vs[:-1] < vs[1:])
        if cut.size == 0:
            continue
        # Summed directly so both default directions tie bit-exactly when the
        # node has no missing rows.
        miss_g = g[missing].sum()
        miss_h = h[missing].sum()
        thresholds = 0.5 * (vs[cut] + vs[cut + 1])
        for default_left in (True, False):
            gl = gs[cut] + (miss_g if default_left else 0.0)
            hl = hs[cut] + (miss_h if default_left else 0.0)
            gr = total_g - gl
            hr = total_h - hl
            gain = 0.5 * (gl**2 / (hl + lam) + gr**2 / (hr + lam) - parent)
            gain[(hl < min_child_weight) | (hr < min_child_weight)] = -np.inf
            k = int(np.argmax(gain))
            if np.isfinite(gain[k]) and (best is None or gain[k] > best[0]):
                best = (float(gain[k]), j, float(thresholds[k]), default_left)
    return best


class _TreeBuilder:
    def __init__(self, x: np.ndarray, g: np.ndarray, h: np.ndarray,
                 config: BoostConfig) -> None:
        self.x = x
        self.g = g
        self.h = h
        self.config = config
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.default_left: list[bool] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.cover: list[float] = []
        self.gain: list[float] = []

    def _new_node(self) -> int:
        for lst, fill in (
            (self.feature, -1), (self.threshold, 0.0), (self.default_left, False),
            (self.left, -1), (self.right, -1), (self.value, 0.0),
            (self.cover, 0.0), (self.gain, 0.0),
        ):
            lst.append(fill)
        return len(self.feature) - 1

    def build(self, rows: np.ndarray, depth: int) -> int:
        idx = self._new_node()
        self.cover[idx] = float(len(rows))
        g_sum = self.g[rows].sum()
        h_sum = self.h[rows].sum()
        split = None
        if depth < self.config.max_depth and len(rows) >= 2:
            split = _best_split(
                self.x[rows], self.g[rows], self.h[rows],
                self.config.lam, self.config.min_child_weight,
            )
        if split is None or split[0] <= 0.0:
            w = -g_sum / (h_sum + self.config.lam)
            self.value[idx] = float(np.clip(w, -LEAF_CLIP, LEAF_CLIP))
            return idx
        gain, feat, thr, default_left = split
        col = self.x[rows, feat]
        go_left = np.where(np.isnan(col), default_left, col < thr)
        self.feature[idx] = feat
        self.threshold[idx] = thr
        self.default_left[idx] = default_left
        self.gain[idx] = gain
        self.left[idx] = self.build(rows[go_left], depth + 1)
        self.right[idx] = self.build(rows[~go_left], depth + 1)
        return idx

    def tree(self) -> Tree:
        return Tree(
            np.asarray(self.feature, dtype=np.int32),
            np.asarray(self.threshold, dtype=np.float64),
            np.asarray(self.default_left, dtype=bool),
            np.asarray(self.left, dtype=np.int32),
            np.asarray(self.right, dtype=np.int32),
            np.asarray(self.value, dtype=np.float64),
            np.asarray(self.cover, dtype=np.float64),
            np.asarray(self.gain, dtype=np.float64),
        )


def tree_predict(tree: Tree, x: np.ndarray) -> np.ndarray:
    """Leaf values reached by each row (unscaled by the learning rate)."""
    n = x.shape[0]
    idx = np.zeros(n, dtype=np.int64)
    active = tree.feature[idx] >= 0
    while active.any():
        rows = np.flatnonzero(active)
        node = idx[rows]
        col = x[rows, tree.feature[node]]
        go_left = np.where(np.isnan(col), tree.default_left[node],
                           col < tree.threshold[node])
        idx[rows] = np.where(go_left, tree.left[node], tree.right[node])
        active = tree.feature[idx] >= 0
    return tree.value[idx]


def fit_gbt(
    features: np.ndarray,
    labels: np.ndarray,
    config: BoostConfig,
    feature_names: list[str] | None = None,
) -> Forest:
    """Boost on the logistic loss; NaN cells follow learned default directions."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    y = np.asarray(labels, dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise ValueError("labels must contain both classes")
    p0 = float(np.clip(y.mean(), _PROB_FLOOR, 1.0 - _PROB_FLOOR))
    base = float(np.log(p0 / (1.0 - p0)))
    margin = np.full(x.shape[0], base)
    trees: list[Tree] = []
    all_rows = np.arange(x.shape[0])
    for _ in range(config.n_estimators):
        p = _sigmoid(margin)
        g = p - y
        h = p * (1.0 - p)
        builder = _TreeBuilder(x, g, h, config)
        builder.build(all_rows, 0)
        tree = builder.tree()
        trees.append(tree)
        margin += config.eta * tree_predict(tree, x)
    return Forest(trees, base, config, feature_names, x.shape[1])


def predict_margin(forest: Forest, features: np.ndarray) -> np.ndarray:
    """Raw log-odds: base_score + eta * sum of tree outputs."""
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != forest.n_features:
        raise ValueError(
            f"expected {forest.n_features} features, got {x.shape[1]}"
        )
    margin = np.full(x.shape[0], forest.base_score)
    for tree in forest.trees:
        margin += forest.config.eta * tree_predict(tree, x)
    return margin[0] if single else margin


def predict_proba(forest: Forest, features: np.ndarray) -> np.ndarray:
    return _sigmoid(predict_margin(forest, features))


def feature_gains(forest: Forest) -> np.ndarray:
    """Total split gain per feature, the RFE importance measure."""
    imp = np.zeros(forest.n_features)
    for tree in forest.trees:
        internal = tree.feature >= 0
        np.add.at(imp, tree.feature[internal], tree.gain[internal])
    return imp


def grid_search(
    features: np.ndarray,
    labels: np.ndarray,
    grid: GridSpec,
    k: int = 5,
    seed: int = 0,
) -> tuple[BoostConfig, list[tuple[BoostConfig, float]]]:
    """Pick the grid point with the best k-fold mean validation AUROC.

    Ties prefer fewer trees, then shallower depth, then larger
    min_child_weight.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    folds = stratified_folds(y, k, seed)
    results: list[tuple[BoostConfig, float]] = []
    best: tuple[BoostConfig, float] | None = None
    for ne, md, mcw in itertools.product(
        grid.n_estimators, grid.max_depth, grid.min_child_weight
    ):
        config = BoostConfig(ne, md, mcw, seed=seed)
        scores = []
        for fold in range(k):
            train = folds.fold_index != fold
            forest = fit_gbt(x[train], y[train], config)
            scores.append(auroc(predict_proba(forest, x[~train]), y[~train]))
        mean_score = float(np.mean(scores))
        results.append((config, mean_score))
        if best is None or mean_score > best[1] or (
            mean_score == best[1]
            and (ne, md, -mcw)
            < (best[0].n_estimators, best[0].max_depth, -best[0].min_child_weight)
        ):
            best = (config, mean_score)
    assert best is not None
    return best[0], results


def rfe(
    features: np.ndarray,
    labels: np.ndarray,
    target_k: int,
    config: BoostConfig,
    step: int | None = None,
) -> np.ndarray:
    """Recursive feature elimination by total split gain.

    Each round drops the ``step`` lowest-gain features (default 10% of the
    remaining set, minimum 1), clamped so exactly ``target_k`` survive.
    Returns the surviving original indices in ascending order.
    """
    x = np.asarray(features, dtype=np.float64)
    d = x.shape[1]
    if target_k <= 0:
        raise ValueError("target_k must be positive")
    if target_k > d:
        raise ValueError(f"target_k={target_k} exceeds feature count {d}")
    remaining = np.arange(d)
    while len(remaining) > target_k:
        forest = fit_gbt(x[:, remaining], labels, config)
        imp = feature_gains(forest)
        r = step if step is not None else max(1, round(0.1 * len(remaining)))
        r = min(r, len(remaining) - target_k)
        # Ascending gain; equal gains drop the larger original index first.
        order = np.lexsort((-remaining, imp))
        keep = np.ones(len(remaining), dtype=bool)
        keep[order[:r]] = False
        remaining = remaining[keep]
    return np.sort(remaining)


def forest_to_json(forest: Forest, path: str | Path | None = None) -> str:
    doc = {
        "format": "odrop-forest",
        "version": 1,
        "base_score": forest.base_score,
        "n_features": forest.n_features,
        "feature_names": forest.feature_names,
        "config": {
            "n_estimators": forest.config.n_estimators,
            "max_depth": forest.config.max_depth,
            "min_child_weight": forest.config.min_child_weight,
            "lambda": forest.config.lam,
            "eta": forest.config.eta,
            "seed": forest.config.seed,
        },
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "default_left": t.default_left.astype(int).tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": t.value.tolist(),
                "cover": t.cover.tolist(),
                "gain": t.gain.tolist(),
            }
            for t in forest.trees
        ],
    }
    text = json.dumps(doc, sort_keys=True)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def forest_from_json(source: str | Path) -> Forest:
    if isinstance(source, Path):
        text = source.read_text(encoding="utf-8")
    elif str(source).lstrip().startswith("{"):
        text = str(source)
    else:
        text = Path(source).read_text(encoding="utf-8")
    doc = json.loads(text)
    if doc.get("format") != "odrop-forest":
        raise ValueError("expected an odrop-forest document")
    cfg = doc["config"]
    config = BoostConfig(
        cfg["n_estimators"], cfg["max_depth"], cfg["min_child_weight"],
        cfg["lambda"], cfg["eta"], cfg["seed"],
    )
    trees = [
        Tree(
            np.asarray(t["feature"], dtype=np.int32),
            np.asarray(t["threshold"], dtype=np.float64),
            np.asarray(t["default_left"], dtype=bool),
            np.asarray(t["left"], dtype=np.int32),
            np.asarray(t["right"], dtype=np.int32),
            np.asarray(t["value"], dtype=np.float64),
            np.asarray(t["cover"], dtype=np.float64),
            np.asarray(t["gain"], dtype=np.float64),
        )
        for t in doc["trees"]
    ]
    return Forest(trees, doc["base_score"], config, doc.get("feature_names"),
                  doc["n_features"])
