"""Paired training-site / shifted-site dataset generator with known OOD rows.

The shifted site mixes records drawn from the training distribution with a
translated, rescaled subpopulation whose labels are noisy, so rejection curves
have room to rise when that subpopulation is filtered out.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .tabular import CONTINUOUS, Table

# Generator geometry.  Per-dimension scales are heterogeneous (log-uniform)
# the way measured clinical items are, so a fixed-norm mean shift placed on
# naturally tight dimensions is a severe, localized subpopulation change.
# The labeling logit is rescaled to a fixed spread so label separability
# stays comparable across scenarios.
_SIGMA_RANGE = (0.3, 1.0)
_MIXTURE_CENTER_SCALE = 0.4
_RULE_LOGIT_STD = 2.2
_BIAS_REFERENCE_N = 16384


@dataclass
class ShiftScenario:
    """Replayable recipe for one train/test pair."""

    n_train: int
    n_test: int
    d: int
    ood_fraction: float
    mean_shift: np.ndarray
    cov_scale: float = 1.0
    label_noise_ood: float = 0.0
    positive_rate: float = 0.3
    seed: int = 0
    exact_count: bool = True
    rule_logit_std: float = _RULE_LOGIT_STD

    def __post_init__(self) -> None:
        self.mean_shift = np.asarray(self.mean_shift, dtype=np.float64)
        if self.n_train < 1 or self.n_test < 1 or self.d < 1:
            raise ValueError("n_train, n_test, and d must be positive")
        if self.mean_shift.shape != (self.d,):
            raise ValueError("mean_shift must be a d-vector")
        if not 0.0 <= self.ood_fraction <= 1.0:
            raise ValueError("ood_fraction must be in [0, 1]")
        if self.cov_scale <= 0.0:
            raise ValueError("cov_scale must be positive")
        if not 0.0 <= self.label_noise_ood <= 1.0:
            raise ValueError("label_noise_ood must be in [0, 1]")
        if not 0.0 < self.positive_rate < 1.0:
            raise ValueError("positive_rate must be in (0, 1)")
        if self.rule_logit_std <= 0.0:
            raise ValueError("rule_logit_std must be positive")

    def to_json(self, path: str | Path | None = None) -> str:
        doc = asdict(self)
        doc["mean_shift"] = [float(v) for v in self.mean_shift]
        text = json.dumps(doc, indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_json(cls, source: str | Path) -> ShiftScenario:
        if isinstance(source, Path):
            text = source.read_text(encoding="utf-8")
        elif str(source).lstrip().startswith("{"):
            text = str(source)
        else:
            text = Path(source).read_text(encoding="utf-8")
        return cls(**json.loads(text))


@dataclass
class SynthData:
    """Generated train/test pair; ood_mask marks the shifted test rows."""

    train: Table
    train_labels: np.ndarray
    test: Table
    test_labels: np.ndarray
    ood_mask: np.ndarray
    rule_weights: np.ndarray = field(repr=False)
    rule_bias: float = 0.0


def random_shift(d: int, norm: float, seed: int) -> np.ndarray:
    """Random direction scaled to the requested norm (seed-fixed)."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=d)
    return v / np.linalg.norm(v) * norm


def _base_params(seed: int, d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, list]:
    """Per-dim scales, component centers, and labeling direction for a seed."""
    seeds = np.random.SeedSequence(seed).spawn(5)
    rng_params = np.random.default_rng(seeds[0])
    lo, hi = _SIGMA_RANGE
    sigma = np.exp(rng_params.uniform(np.log(lo), np.log(hi), size=d))
    centers = rng_params.normal(size=(2, d)) * _MIXTURE_CENTER_SCALE * sigma
    w_dir = rng_params.normal(size=d)
    w_dir /= np.linalg.norm(w_dir)
    return sigma, centers, w_dir, seeds


def covariate_shift(d: int, norm: float, scenario_seed: int,
                    direction_seed: int) -> np.ndarray:
    """Shift orthogonal to the labeling direction of scenarios using
    ``scenario_seed``: the feature distribution moves, the label rule's
    logit distribution does not."""
    _, _, w, _ = _base_params(scenario_seed, d)
    v = np.random.default_rng(direction_seed).normal(size=d)
    v = v - (v @ w) / (w @ w) * w
    return v / np.linalg.norm(v) * norm


def sparse_shift(d: int, norm: float, scenario_seed: int, n_dims: int = 2) -> np.ndarray:
    """Shift concentrated on a few naturally tight, label-light coordinates.

    Among the 5 tightest (smallest per-dim scale) dimensions of the scenario
    seed's base distribution, the ``n_dims`` least label-aligned ones carry
    the whole norm: a few measured items move many sigma, the rest stay put.
    """
    if not 1 <= n_dims <= d:
        raise ValueError("n_dims must be in [1, d]")
    sigma, _, w, _ = _base_params(scenario_seed, d)
    tight = np.argsort(sigma)[: max(n_dims, min(5, d))]
    dims = tight[np.argsort(np.abs(w[tight]))][:n_dims]
    v = np.zeros(d)
    v[dims] = norm / np.sqrt(n_dims)
    return v


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _draw_base(rng: np.random.Generator, n: int, centers: np.ndarray,
               sigma: np.ndarray) -> np.ndarray:
    comp = rng.integers(0, 2, size=n)
    return centers[comp] + sigma * rng.normal(size=(n, centers.shape[1]))


def _tune_bias(w: np.ndarray, x_ref: np.ndarray, positive_rate: float) -> float:
    """Bisect the intercept so the mean rule probability hits positive_rate."""
    z = x_ref @ w
    lo, hi = -60.0, 60.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _sigmoid(z + mid).mean() < positive_rate:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def rule_probability(data: SynthData, x: np.ndarray) -> np.ndarray:
    """Positive-class probability under the generating labeling rule."""
    return _sigmoid(np.atleast_2d(x) @ data.rule_weights + data.rule_bias)


def generate(scenario: ShiftScenario) -> SynthData:
    """Deterministically generate the train/test pair for a scenario."""
    d = scenario.d
    sigma, centers, w_dir, seeds = _base_params(scenario.seed, d)
    _, rng_ref, rng_train, rng_test, rng_labels = (
        np.random.default_rng(s) for s in seeds
    )
    x_ref = _draw_base(rng_ref, _BIAS_REFERENCE_N, centers, sigma)
    w = w_dir * (scenario.rule_logit_std / (x_ref @ w_dir).std())
    bias = _tune_bias(w, x_ref, scenario.positive_rate)

    x_train = _draw_base(rng_train, scenario.n_train, centers, sigma)
    y_train = (rng_labels.random(scenario.n_train)
               < _sigmoid(x_train @ w + bias)).astype(np.int64)

    n_test = scenario.n_test
    if scenario.exact_count:
        n_ood = int(round(scenario.ood_fraction * n_test))
    else:
        n_ood = int(rng_test.binomial(n_test, scenario.ood_fraction))
    ood_mask = np.zeros(n_test, dtype=bool)
    ood_mask[rng_test.permutation(n_test)[:n_ood]] = True

    # Shifted rows: same mixture translated by mean_shift, within-component
    # spread rescaled by cov_scale.
    comp = rng_test.integers(0, 2, size=n_test)
    noise = sigma * rng_test.normal(size=(n_test, d))
    scale = np.where(ood_mask, np.sqrt(scenario.cov_scale), 1.0)[:, None]
    offset = np.where(ood_mask[:, None], scenario.mean_shift, 0.0)
    x_test = centers[comp] + offset + scale * noise

    y_test = (rng_labels.random(n_test) < _sigmoid(x_test @ w + bias)).astype(np.int64)
    if n_ood and scenario.label_noise_ood > 0:
        flip = rng_labels.random(n_test) < scenario.label_noise_ood
        flip &= ood_mask
        y_test[flip] = 1 - y_test[flip]

    names = [f"x{j:02d}" for j in range(d)]
    kinds = [CONTINUOUS] * d
    empty = np.zeros_like(x_train, dtype=bool)
    train = Table(names, kinds, x_train, empty)
    test = Table(list(names), list(kinds), x_test, np.zeros_like(x_test, dtype=bool))
    return SynthData(train, y_train, test, y_test, ood_mask, w, bias)
