"""Minimal feedforward neural core with analytic gradients.

Two architectures: a two-hidden-layer ReLU classifier with a 2-logit softmax
head, and a Gaussian VAE whose reconstruction term is a plain sum of squared
errors (unit-variance decoder).  Training is Adam on shuffled minibatches,
fully deterministic per seed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CLASSIFIER_HIDDEN = (200, 50)
VAE_HIDDEN = 200
VAE_LATENT = 75
ENSEMBLE_SIZE = 5


@dataclass
class TrainConfig:
    max_epochs: int
    seed: int
    learning_rate: float = 1e-3
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.max_epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs, batch size, and learning rate must be positive")

    @classmethod
    def classifier(cls, seed: int, max_epochs: int = 100) -> TrainConfig:
        return cls(max_epochs=max_epochs, seed=seed)

    @classmethod
    def vae(cls, seed: int, max_epochs: int = 400) -> TrainConfig:
        return cls(max_epochs=max_epochs, seed=seed)


@dataclass
class Mlp:
    """input m -> hidden -> hidden -> 2 logits, ReLU activations."""

    params: dict[str, np.ndarray]
    input_dim: int
    hidden: tuple[int, int] = CLASSIFIER_HIDDEN


@dataclass
class Vae:
    """Encoder m -> hidden -> (mean, log-variance); decoder latent -> hidden -> m."""

    params: dict[str, np.ndarray]
    input_dim: int
    hidden: int = VAE_HIDDEN
    latent: int = VAE_LATENT


class TrainingDiverged(FloatingPointError):
    """Raised when the training loss stops being finite."""


def _he_uniform(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def init_mlp(input_dim: int, seed: int, hidden: tuple[int, int] = CLASSIFIER_HIDDEN) -> Mlp:
    rng = np.random.default_rng(seed)
    h1, h2 = hidden
    params = {
        "w1": _he_uniform(rng, input_dim, (input_dim, h1)),
        "b1": np.zeros(h1),
        "w2": _he_uniform(rng, h1, (h1, h2)),
        "b2": np.zeros(h2),
        "w3": _he_uniform(rng, h2, (h2, 2)),
        "b3": np.zeros(2),
    }
    return Mlp(params, input_dim, hidden)


def init_vae(input_dim: int, seed: int, hidden: int = VAE_HIDDEN,
             latent: int = VAE_LATENT) -> Vae:
    rng = np.random.default_rng(seed)
    params = {
        "we": _he_uniform(rng, input_dim, (input_dim, hidden)),
        "be": np.zeros(hidden),
        "wmu": _he_uniform(rng, hidden, (hidden, latent)),
        "bmu": np.zeros(latent),
        "wlv": _he_uniform(rng, hidden, (hidden, latent)),
        "blv": np.zeros(latent),
        "wd": _he_uniform(rng, latent, (latent, hidden)),
        "bd": np.zeros(hidden),
        "wo": _he_uniform(rng, hidden, (hidden, input_dim)),
        "bo": np.zeros(input_dim),
    }
    return Vae(params, input_dim, hidden, latent)


def _as_matrix(x: np.ndarray, width: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise ValueError(f"{what}: expected width {width}, got shape {x.shape}")
    return x


def mlp_forward(model: Mlp, x: np.ndarray) -> np.ndarray:
    """Logits for a single m-vector or an (n, m) batch."""
    single = np.asarray(x).ndim == 1
    x = _as_matrix(x, model.input_dim, "mlp_forward")
    p = model.params
    a1 = np.maximum(x @ p["w1"] + p["b1"], 0.0)
    a2 = np.maximum(a1 @ p["w2"] + p["b2"], 0.0)
    logits = a2 @ p["w3"] + p["b3"]
    return logits[0] if single else logits


def mlp_hidden(model: Mlp, x: np.ndarray) -> np.ndarray:
    """Last hidden-layer activations (the feature space used by GEM)."""
    single = np.asarray(x).ndim == 1
    x = _as_matrix(x, model.input_dim, "mlp_hidden")
    p = model.params
    a1 = np.maximum(x @ p["w1"] + p["b1"], 0.0)
    a2 = np.maximum(a1 @ p["w2"] + p["b2"], 0.0)
    return a2[0] if single else a2


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def mlp_positive_proba(model: Mlp, x: np.ndarray) -> np.ndarray:
    return softmax(mlp_forward(model, x))[..., 1]


def classifier_loss_and_grads(
    model: Mlp, x: np.ndarray, y: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean softmax cross-entropy and its gradient for a batch."""
    p = model.params
    n = x.shape[0]
    a1_pre = x @ p["w1"] + p["b1"]
    a1 = np.maximum(a1_pre, 0.0)
    a2_pre = a1 @ p["w2"] + p["b2"]
    a2 = np.maximum(a2_pre, 0.0)
    logits = a2 @ p["w3"] + p["b3"]
    probs = softmax(logits)
    eps = 1e-12
    loss = -np.log(probs[np.arange(n), y] + eps).mean()

    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    grads = {
        "w3": a2.T @ dlogits,
        "b3": dlogits.sum(axis=0),
    }
    da2 = (dlogits @ p["w3"].T) * (a2_pre > 0)
    grads["w2"] = a1.T @ da2
    grads["b2"] = da2.sum(axis=0)
    da1 = (da2 @ p["w2"].T) * (a1_pre > 0)
    grads["w1"] = x.T @ da1
    grads["b1"] = da1.sum(axis=0)
    return float(loss), grads


def vae_loss_and_grads(
    model: Vae, x: np.ndarray, noise: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean negative ELBO and gradients, with the reparameterization noise
    passed in explicitly so gradient checks can freeze it.

    Per-example loss = sum_l (x_l - xhat_l)^2 + KL(q(z|x) || N(0, I)).
    """
    p = model.params
    n = x.shape[0]
    he_pre = x @ p["we"] + p["be"]
    he = np.maximum(he_pre, 0.0)
    mu = he @ p["wmu"] + p["bmu"]
    logvar = he @ p["wlv"] + p["blv"]
    std = np.exp(0.5 * logvar)
    z = mu + std * noise
    hd_pre = z @ p["wd"] + p["bd"]
    hd = np.maximum(hd_pre, 0.0)
    xhat = hd @ p["wo"] + p["bo"]

    diff = xhat - x
    recon = (diff**2).sum(axis=1)
    kl = 0.5 * (np.exp(logvar) + mu**2 - 1.0 - logvar).sum(axis=1)
    loss = (recon + kl).mean()

    dxhat = 2.0 * diff / n
    grads = {
        "wo": hd.T @ dxhat,
        "bo": dxhat.sum(axis=0),
    }
    dhd = (dxhat @ p["wo"].T) * (hd_pre > 0)
    grads["wd"] = z.T @ dhd
    grads["bd"] = dhd.sum(axis=0)
    dz = dhd @ p["wd"].T
    dmu = dz + mu / n
    dlogvar = dz * noise * 0.5 * std + 0.5 * (np.exp(logvar) - 1.0) / n
    grads["wmu"] = he.T @ dmu
    grads["bmu"] = dmu.sum(axis=0)
    grads["wlv"] = he.T @ dlogvar
    grads["blv"] = dlogvar.sum(axis=0)
    dhe = (dmu @ p["wmu"].T + dlogvar @ p["wlv"].T) * (he_pre > 0)
    grads["we"] = x.T @ dhe
    grads["be"] = dhe.sum(axis=0)
    return float(loss), grads


def vae_elbo_terms(model: Vae, x: np.ndarray,
                   noise: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-example (reconstruction SSE, KL) for a batch and a fixed noise draw."""
    p = model.params
    he = np.maximum(x @ p["we"] + p["be"], 0.0)
    mu = he @ p["wmu"] + p["bmu"]
    logvar = he @ p["wlv"] + p["blv"]
    z = mu + np.exp(0.5 * logvar) * noise
    hd = np.maximum(z @ p["wd"] + p["bd"], 0.0)
    xhat = hd @ p["wo"] + p["bo"]
    recon = ((xhat - x) ** 2).sum(axis=1)
    kl = 0.5 * (np.exp(logvar) + mu**2 - 1.0 - logvar).sum(axis=1)
    return recon, kl


class Adam:
    """Adam with bias correction; a zero gradient leaves parameters unchanged."""

    def __init__(self, params: dict[str, np.ndarray], config: TrainConfig) -> None:
        self.config = config
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        c = self.config
        self.t += 1
        correct1 = 1.0 - c.beta1**self.t
        correct2 = 1.0 - c.beta2**self.t
        for k, g in grads.items():
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g**2
            m_hat = self.m[k] / correct1
            v_hat = self.v[k] / correct2
            params[k] -= c.learning_rate * m_hat / (np.sqrt(v_hat) + c.eps)


def _minibatches(rng: np.random.Generator, n: int, batch_size: int):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_classifier(
    features: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    hidden: tuple[int, int] = CLASSIFIER_HIDDEN,
) -> Mlp:
    """Train the softmax classifier; aborts if the loss stops being finite."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if set(np.unique(y)) - {0, 1} or len(np.unique(y)) < 2:
        raise ValueError("labels must contain both classes, coded 0/1")
    model = init_mlp(x.shape[1], config.seed, hidden)
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.params, config)
    for epoch in range(config.max_epochs):
        for batch in _minibatches(rng, x.shape[0], config.batch_size):
            loss, grads = classifier_loss_and_grads(model, x[batch], y[batch])
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"classifier loss not finite at epoch {epoch} (loss={loss})"
                )
            opt.step(model.params, grads)
    for arr in model.params.values():
        arr.flags.writeable = False
    return model


def train_ensemble(
    features: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    n_members: int = ENSEMBLE_SIZE,
    hidden: tuple[int, int] = CLASSIFIER_HIDDEN,
) -> list[Mlp]:
    """Independent trainings with seeds config.seed + 0 .. n_members - 1."""
    if n_members < 1:
        raise ValueError("n_members must be positive")
    return [
        train_classifier(
            features, labels,
            TrainConfig(config.max_epochs, config.seed + i, config.learning_rate,
                        config.batch_size, config.beta1, config.beta2, config.eps),
            hidden,
        )
        for i in range(n_members)
    ]


def train_vae(
    features: np.ndarray,
    config: TrainConfig,
    hidden: int = VAE_HIDDEN,
    latent: int = VAE_LATENT,
) -> Vae:
    x = np.asarray(features, dtype=np.float64)
    model = init_vae(x.shape[1], config.seed, hidden, latent)
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.params, config)
    for epoch in range(config.max_epochs):
        for batch in _minibatches(rng, x.shape[0], config.batch_size):
            noise = rng.standard_normal((len(batch), latent))
            loss, grads = vae_loss_and_grads(model, x[batch], noise)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"VAE loss not finite at epoch {epoch} (loss={loss})"
                )
            opt.step(model.params, grads)
    for arr in model.params.values():
        arr.flags.writeable = False
    return model


def vae_reconstruct(model: Vae, x: np.ndarray) -> np.ndarray:
    """Deterministic scoring pass: decode the encoder mean, no sampling."""
    single = np.asarray(x).ndim == 1
    x = _as_matrix(x, model.input_dim, "vae_reconstruct")
    p = model.params
    he = np.maximum(x @ p["we"] + p["be"], 0.0)
    mu = he @ p["wmu"] + p["bmu"]
    hd = np.maximum(mu @ p["wd"] + p["bd"], 0.0)
    xhat = hd @ p["wo"] + p["bo"]
    return xhat[0] if single else xhat


def _params_to_doc(params: dict[str, np.ndarray]) -> dict:
    return {
        k: {"shape": list(v.shape), "data": v.ravel().tolist()}
        for k, v in params.items()
    }


def _params_from_doc(doc: dict) -> dict[str, np.ndarray]:
    return {
        k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
        for k, v in doc.items()
    }


def mlp_to_json(model: Mlp, path: str | Path | None = None) -> str:
    doc = {
        "format": "odrop-mlp",
        "version": 1,
        "input_dim": model.input_dim,
        "hidden": list(model.hidden),
        "params": _params_to_doc(model.params),
    }
    text = json.dumps(doc, sort_keys=True)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def mlp_from_json(source: str | Path) -> Mlp:
    doc = _load_doc(source, "odrop-mlp")
    return Mlp(_params_from_doc(doc["params"]), doc["input_dim"],
               tuple(doc["hidden"]))


def vae_to_json(model: Vae, path: str | Path | None = None) -> str:
    doc = {
        "format": "odrop-vae",
        "version": 1,
        "input_dim": model.input_dim,
        "hidden": model.hidden,
        "latent": model.latent,
        "params": _params_to_doc(model.params),
    }
    text = json.dumps(doc, sort_keys=True)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def vae_from_json(source: str | Path) -> Vae:
    doc = _load_doc(source, "odrop-vae")
    return Vae(_params_from_doc(doc["params"]), doc["input_dim"], doc["hidden"],
               doc["latent"])


def _load_doc(source: str | Path, expected_format: str) -> dict:
    if isinstance(source, Path):
        text = source.read_text(encoding="utf-8")
    elif str(source).lstrip().startswith("{"):
        text = str(source)
    else:
        text = Path(source).read_text(encoding="utf-8")
    doc = json.loads(text)
    if doc.get("format") != expected_format:
        raise ValueError(f"expected a {expected_format} document")
    return doc
