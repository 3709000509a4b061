"""The five out-of-distribution scores, all oriented higher = more OOD.

Generative route: squared-error reconstruction loss of a VAE.  Classifier
routes: ensemble probability spread, ensemble mutual information (epistemic),
free energy of the logits, and a Gaussian-mixture energy over last-hidden
features (GEM, the one raw formula that is higher for in-distribution data,
so its sign is flipped).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn

VAE_RECONSTRUCTION = "vae_reconstruction"
ENSEMBLE_STD = "ensemble_std"
ENSEMBLE_EPISTEMIC = "ensemble_epistemic"
ENERGY = "energy"
GEM = "gem"
METHODS = (VAE_RECONSTRUCTION, ENSEMBLE_STD, ENSEMBLE_EPISTEMIC, ENERGY, GEM)

_GEM_EPS_SCALE = 1e-6
_GEM_EPS_CEILING = 1e-2


@dataclass
class GemParams:
    """Class-conditional feature means with one pooled, regularized covariance."""

    means: np.ndarray
    cov: np.ndarray
    cov_inv: np.ndarray
    eps: float

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]


def score_vae_reconstruction(vae: nn.Vae, x: np.ndarray) -> np.ndarray:
    """Sum over features of (x - xhat)^2 with the deterministic mean pass."""
    single = np.asarray(x).ndim == 1
    xm = np.atleast_2d(np.asarray(x, dtype=np.float64))
    xhat = nn.vae_reconstruct(vae, xm)
    score = ((xm - xhat) ** 2).sum(axis=1)
    return float(score[0]) if single else score


def _member_probs(ensemble: list[nn.Mlp], x: np.ndarray) -> np.ndarray:
    """(M, n) positive-class probabilities."""
    if len(ensemble) < 2:
        raise ValueError("ensemble scores need at least 2 members")
    xm = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return np.stack([nn.mlp_positive_proba(m, xm) for m in ensemble])


def score_ensemble_std(ensemble: list[nn.Mlp], x: np.ndarray) -> np.ndarray:
    """Population standard deviation of member probabilities."""
    single = np.asarray(x).ndim == 1
    probs = _member_probs(ensemble, x)
    score = np.sqrt(((probs - probs.mean(axis=0)) ** 2).mean(axis=0))
    return float(score[0]) if single else score


def _entropy_bits(p: np.ndarray) -> np.ndarray:
    """Binary Shannon entropy in bits, with 0 log 0 = 0."""
    q = 1.0 - p
    out = np.zeros_like(p)
    m = p > 0
    out[m] -= p[m] * np.log2(p[m])
    m = q > 0
    out[m] -= q[m] * np.log2(q[m])
    return out


def score_ensemble_epistemic(ensemble: list[nn.Mlp], x: np.ndarray) -> np.ndarray:
    """Mutual information: entropy of the mean prediction minus mean entropy."""
    single = np.asarray(x).ndim == 1
    probs = _member_probs(ensemble, x)
    total = _entropy_bits(probs.mean(axis=0))
    aleatoric = _entropy_bits(probs).mean(axis=0)
    score = total - aleatoric
    return float(score[0]) if single else score


def logsumexp(z: np.ndarray, axis: int = -1) -> np.ndarray:
    zmax = z.max(axis=axis, keepdims=True)
    return (zmax + np.log(np.exp(z - zmax).sum(axis=axis, keepdims=True))).squeeze(axis)


def score_energy(mlp: nn.Mlp, x: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """-T log sum_j exp(f_j(x) / T); OOD inputs with small logits score higher."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    single = np.asarray(x).ndim == 1
    logits = nn.mlp_forward(mlp, np.atleast_2d(np.asarray(x, dtype=np.float64)))
    if not np.isfinite(logits).all():
        raise ValueError("non-finite logits")
    score = -temperature * logsumexp(logits / temperature, axis=1)
    return float(score[0]) if single else score


def gaussian_mixture_params(features: np.ndarray, labels: np.ndarray) -> GemParams:
    """Class-conditional means and one pooled covariance over all samples.

    The covariance is normalized by the total sample count and regularized
    by eps * I with eps escalated tenfold until inversion succeeds.
    """
    h = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("both classes must be present")
    dim = h.shape[1]
    means = np.stack([h[y == c].mean(axis=0) for c in classes])
    centered = h - means[np.searchsorted(classes, y)]
    cov = centered.T @ centered / h.shape[0]

    scale = max(np.trace(cov) / dim, 1.0e-300)
    eps = _GEM_EPS_SCALE * scale
    while True:
        try:
            reg = cov + eps * np.eye(dim)
            np.linalg.cholesky(reg)
            cov_inv = np.linalg.inv(reg)
            return GemParams(means, reg, cov_inv, float(eps))
        except np.linalg.LinAlgError:
            eps *= 10.0
            if eps > _GEM_EPS_CEILING * scale:
                raise np.linalg.LinAlgError(
                    "covariance not invertible even after regularization"
                ) from None


def fit_gem(mlp: nn.Mlp, features: np.ndarray, labels: np.ndarray) -> GemParams:
    """Gaussian mixture parameters over the classifier's last-hidden features."""
    h = nn.mlp_hidden(mlp, np.asarray(features, dtype=np.float64))
    return gaussian_mixture_params(h, labels)


def gem_raw(params: GemParams, mlp: nn.Mlp, x: np.ndarray) -> np.ndarray:
    """log sum_j exp(-1/2 Mahalanobis^2 to class j); higher for ID data."""
    xm = np.atleast_2d(np.asarray(x, dtype=np.float64))
    h = nn.mlp_hidden(mlp, xm)
    f = np.empty((h.shape[0], params.n_classes))
    for j in range(params.n_classes):
        delta = h - params.means[j]
        f[:, j] = -0.5 * np.einsum("ij,jk,ik->i", delta, params.cov_inv, delta)
    return logsumexp(f, axis=1)


def score_gem(params: GemParams, mlp: nn.Mlp, x: np.ndarray) -> np.ndarray:
    """Orientation-flipped GEM: the returned score rises with distance."""
    single = np.asarray(x).ndim == 1
    score = -gem_raw(params, mlp, x)
    return float(score[0]) if single else score


@dataclass
class OodScorer:
    """One trained scoring function with a fixed higher-is-more-OOD orientation."""

    method: str
    vae: nn.Vae | None = None
    ensemble: list[nn.Mlp] | None = None
    mlp: nn.Mlp | None = None
    gem_params: GemParams | None = None
    temperature: float = 1.0

    @property
    def orientation_flip(self) -> bool:
        return self.method == GEM

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown OOD method {self.method!r}")
        needed = {
            VAE_RECONSTRUCTION: self.vae is not None,
            ENSEMBLE_STD: self.ensemble is not None,
            ENSEMBLE_EPISTEMIC: self.ensemble is not None,
            ENERGY: self.mlp is not None,
            GEM: self.mlp is not None and self.gem_params is not None,
        }
        if not needed[self.method]:
            raise ValueError(f"scorer artifacts inconsistent with {self.method!r}")

    def score(self, x: np.ndarray) -> np.ndarray:
        if self.method == VAE_RECONSTRUCTION:
            return score_vae_reconstruction(self.vae, x)
        if self.method == ENSEMBLE_STD:
            return score_ensemble_std(self.ensemble, x)
        if self.method == ENSEMBLE_EPISTEMIC:
            return score_ensemble_epistemic(self.ensemble, x)
        if self.method == ENERGY:
            return score_energy(self.mlp, x, self.temperature)
        return score_gem(self.gem_params, self.mlp, x)


def fit_all_scorers(
    features: np.ndarray,
    labels: np.ndarray,
    vae_config: nn.TrainConfig,
    classifier_config: nn.TrainConfig,
    n_members: int = nn.ENSEMBLE_SIZE,
    hidden: tuple[int, int] = nn.CLASSIFIER_HIDDEN,
    vae_hidden: int = nn.VAE_HIDDEN,
    vae_latent: int = nn.VAE_LATENT,
    methods: list[str] | None = None,
) -> dict[str, OodScorer]:
    """Train the requested detectors on one standardized training matrix.

    The energy and GEM scorers reuse the first ensemble member, whose seed
    (classifier_config.seed) does not depend on how many members train.
    """
    wanted = list(METHODS) if methods is None else list(methods)
    for m in wanted:
        if m not in METHODS:
            raise ValueError(f"unknown OOD method {m!r}")
    scorers: dict[str, OodScorer] = {}
    if VAE_RECONSTRUCTION in wanted:
        vae = nn.train_vae(features, vae_config, vae_hidden, vae_latent)
        scorers[VAE_RECONSTRUCTION] = OodScorer(VAE_RECONSTRUCTION, vae=vae)
    classifier_methods = {ENSEMBLE_STD, ENSEMBLE_EPISTEMIC, ENERGY, GEM}
    if classifier_methods & set(wanted):
        needs_ensemble = {ENSEMBLE_STD, ENSEMBLE_EPISTEMIC} & set(wanted)
        count = n_members if needs_ensemble else 1
        ensemble = nn.train_ensemble(features, labels, classifier_config,
                                     count, hidden)
        if ENSEMBLE_STD in wanted:
            scorers[ENSEMBLE_STD] = OodScorer(ENSEMBLE_STD, ensemble=ensemble)
        if ENSEMBLE_EPISTEMIC in wanted:
            scorers[ENSEMBLE_EPISTEMIC] = OodScorer(ENSEMBLE_EPISTEMIC,
                                                    ensemble=ensemble)
        if ENERGY in wanted:
            scorers[ENERGY] = OodScorer(ENERGY, mlp=ensemble[0])
        if GEM in wanted:
            gem_params = fit_gem(ensemble[0], features, labels)
            scorers[GEM] = OodScorer(GEM, mlp=ensemble[0],
                                     gem_params=gem_params)
    return scorers


def scorer_to_json(scorer: OodScorer, path: str | Path | None = None) -> str:
    doc: dict = {
        "format": "odrop-scorer",
        "version": 1,
        "method": scorer.method,
        "orientation_flip": scorer.orientation_flip,
        "temperature": scorer.temperature,
    }
    if scorer.vae is not None:
        doc["vae"] = json.loads(nn.vae_to_json(scorer.vae))
    if scorer.ensemble is not None:
        doc["ensemble"] = [json.loads(nn.mlp_to_json(m)) for m in scorer.ensemble]
    if scorer.mlp is not None:
        doc["mlp"] = json.loads(nn.mlp_to_json(scorer.mlp))
    if scorer.gem_params is not None:
        doc["gem"] = {
            "means": scorer.gem_params.means.tolist(),
            "cov": scorer.gem_params.cov.tolist(),
            "cov_inv": scorer.gem_params.cov_inv.tolist(),
            "eps": scorer.gem_params.eps,
        }
    text = json.dumps(doc, sort_keys=True)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def scorer_from_json(source: str | Path) -> OodScorer:
    if isinstance(source, Path):
        text = source.read_text(encoding="utf-8")
    elif str(source).lstrip().startswith("{"):
        text = str(source)
    else:
        text = Path(source).read_text(encoding="utf-8")
    doc = json.loads(text)
    if doc.get("format") != "odrop-scorer":
        raise ValueError("expected an odrop-scorer document")
    vae = nn.vae_from_json(json.dumps(doc["vae"])) if "vae" in doc else None
    ensemble = (
        [nn.mlp_from_json(json.dumps(m)) for m in doc["ensemble"]]
        if "ensemble" in doc else None
    )
    mlp = nn.mlp_from_json(json.dumps(doc["mlp"])) if "mlp" in doc else None
    gem_params = None
    if "gem" in doc:
        g = doc["gem"]
        gem_params = GemParams(
            np.asarray(g["means"], dtype=np.float64),
            np.asarray(g["cov"], dtype=np.float64),
            np.asarray(g["cov_inv"], dtype=np.float64),
            g["eps"],
        )
    return OodScorer(doc["method"], vae=vae, ensemble=ensemble, mlp=mlp,
                     gem_params=gem_params, temperature=doc.get("temperature", 1.0))
