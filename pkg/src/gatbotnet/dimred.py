"""Dimension reducers: autoencoder encoder, VAE encoder and PCA.

Each reducer is available two ways: as plain functions over model dataclasses
(``train_autoencoder``, ``train_vae``, ``fit_pca``, ``reduce``) and as
scikit-learn transformers (``AutoencoderReducer``, ``VAEReducer``,
``PCAReducer``) that wrap them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from .autodiff import DenseLayer, Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .exceptions import ConfigError, DataError, DimensionError, NumericError
from .validation import check_features

logger = logging.getLogger(__name__)

LOGVAR_CLAMP = 10.0


class ReducerKind(str, Enum):
    AE_ENCODER = "ae"
    VAE_ENCODER = "vae"
    PCA = "pca"

    @classmethod
    def parse(cls, value) -> "ReducerKind":
        if isinstance(value, cls):
            return value
        aliases = {"ae_encoder": "ae", "vae_encoder": "vae"}
        try:
            return cls(aliases.get(str(value).lower(), str(value).lower()))
        except ValueError:
            raise ConfigError(f"unknown reducer {value!r}; choose from ae, vae, pca") from None


@dataclass
class TrainConfig:
    latent_dim: int = 8
    hidden_dim: int = 32
    epochs: int = 20
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0


@dataclass
class AeModel:
    encoder: list[DenseLayer]
    decoder: list[DenseLayer]
    training_loss_history: list[float] = field(default_factory=list)

    @property
    def input_dim(self) -> int:
        return self.encoder[0].d_in

    @property
    def latent_dim(self) -> int:
        return self.encoder[-1].d_out

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.encoder + self.decoder for p in layer.parameters()]

    def encode(self, x) -> Tensor:
        return ad.mlp_forward(x, self.encoder)

    def decode(self, z) -> Tensor:
        return ad.mlp_forward(z, self.decoder)


@dataclass
class VaeModel:
    encoder_trunk: list[DenseLayer]
    mu_head: DenseLayer
    logvar_head: DenseLayer
    decoder: list[DenseLayer]
    elbo_history: list[float] = field(default_factory=list)
    reconstruction_history: list[float] = field(default_factory=list)
    kl_history: list[float] = field(default_factory=list)

    @property
    def input_dim(self) -> int:
        return self.encoder_trunk[0].d_in

    @property
    def latent_dim(self) -> int:
        return self.mu_head.d_out

    def parameters(self) -> list[Tensor]:
        layers = self.encoder_trunk + [self.mu_head, self.logvar_head] + self.decoder
        return [p for layer in layers for p in layer.parameters()]

    def encode(self, x) -> tuple[Tensor, Tensor]:
        h = Tensor(x) if not isinstance(x, Tensor) else x
        for layer in self.encoder_trunk:
            h = ad.relu(ad.dense_forward(h, layer))
        mu = ad.dense_forward(h, self.mu_head)
        logvar = ad.clip(ad.dense_forward(h, self.logvar_head), -LOGVAR_CLAMP, LOGVAR_CLAMP)
        return mu, logvar

    def decode(self, z) -> Tensor:
        return ad.mlp_forward(z, self.decoder)


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance_ratio: np.ndarray
    explained_variance: np.ndarray | None = None

    @property
    def input_dim(self) -> int:
        return self.mean.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.components.shape[0]

    def inverse_transform(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) @ self.components + self.mean

    def variance_report(self) -> str:
        parts = ", ".join(f"{100 * r:.2f}%" for r in self.explained_variance_ratio)
        total = 100 * float(np.sum(self.explained_variance_ratio))
        return f"{self.latent_dim} components account for {total:.2f}% variance ({parts})"


# objectives -----------------------------------------------------------------

def kl_standard_normal(mu, logvar):
    """KL( N(mu, diag(exp(logvar))) || N(0, I) ), summed over the last axis."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    # expm1 avoids cancellation in exp(lv) - 1 - lv for tiny logvar
    kl = 0.5 * np.sum(mu * mu + (np.expm1(logvar) - logvar), axis=-1)
    return float(kl) if np.ndim(kl) == 0 else kl


def kl_term(mu: Tensor, logvar: Tensor) -> Tensor:
    """Differentiable batch mean of :func:`kl_standard_normal`."""
    per_elem = ad.sub(ad.sub(ad.add(ad.square(mu), ad.exp(logvar)), 1.0), logvar)
    return ad.mul(ad.tsum(per_elem), 0.5 / mu.shape[0])


def vae_loss(model: VaeModel, x, rng: np.random.Generator | None = None,
             zero_noise: bool = False) -> tuple[Tensor, Tensor, Tensor]:
    """Negative ELBO for a batch: ``(total, reconstruction, kl)``.

    The latent sample is ``mu + exp(logvar / 2) * eps``; ``zero_noise`` pins
    ``eps`` to zero.
    """
    mu, logvar = model.encode(x)
    if zero_noise:
        eps = np.zeros(mu.shape)
    else:
        eps = rng.standard_normal(mu.shape)
    z = ad.add(mu, ad.mul(ad.exp(ad.mul(logvar, 0.5)), eps))
    recon = ad.sum_squared_error(model.decode(z), x)
    kl = kl_term(mu, logvar)
    return ad.add(recon, kl), recon, kl


# training -------------------------------------------------------------------

def _check_training_input(X, config: TrainConfig) -> np.ndarray:
    X = check_features(X)
    n, d = X.shape
    if config.latent_dim < 1:
        raise ConfigError(f"latent_dim must be positive, got {config.latent_dim}")
    if d < config.latent_dim:
        raise ConfigError(f"latent dimension {config.latent_dim} is wider than the {d} input features")
    if config.batch_size < 1 or n < config.batch_size:
        raise ConfigError(f"need at least batch_size={config.batch_size} rows, got {n}")
    if config.epochs < 1:
        raise ConfigError(f"epochs must be positive, got {config.epochs}")
    return X


def _rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    init, shuffle, noise = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(shuffle), np.random.default_rng(noise)


def _stack(dims: list[int], rng: np.random.Generator, prefix: str) -> list[DenseLayer]:
    return [DenseLayer.init(a, b, rng, name=f"{prefix}{i}") for i, (a, b) in enumerate(zip(dims, dims[1:]))]


def init_autoencoder(input_dim: int, config: TrainConfig, rng: np.random.Generator) -> AeModel:
    return AeModel(
        encoder=_stack([input_dim, config.hidden_dim, config.latent_dim], rng, "encoder"),
        decoder=_stack([config.latent_dim, config.hidden_dim, input_dim], rng, "decoder"),
    )


def init_vae(input_dim: int, config: TrainConfig, rng: np.random.Generator) -> VaeModel:
    return VaeModel(
        encoder_trunk=_stack([input_dim, config.hidden_dim], rng, "trunk"),
        mu_head=DenseLayer.init(config.hidden_dim, config.latent_dim, rng, name="mu_head"),
        logvar_head=DenseLayer.init(config.hidden_dim, config.latent_dim, rng, name="logvar_head"),
        decoder=_stack([config.latent_dim, config.hidden_dim, input_dim], rng, "decoder"),
    )


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_autoencoder(X, config: TrainConfig | None = None) -> AeModel:
    """Fit a D -> hidden -> latent -> hidden -> D autoencoder by minimising squared error."""
    config = config or TrainConfig()
    X = _check_training_input(X, config)
    init_rng, shuffle_rng, _ = _rngs(config.seed)
    model = init_autoencoder(X.shape[1], config, init_rng)
    opt = ad.Adam(model.parameters(), lr=config.lr)
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for idx in _batches(X.shape[0], config.batch_size, shuffle_rng):
            xb = X[idx]
            opt.zero_grad()
            with ad.Tape() as tape:
                loss = ad.sum_squared_error(model.decode(model.encode(xb)), xb)
            if not np.isfinite(loss.item()):
                raise NumericError(f"autoencoder loss became non-finite in epoch {epoch}")
            tape.backward(loss)
            opt.step()
            total += loss.item() * len(idx)
        model.training_loss_history.append(total / X.shape[0])
        logger.debug("ae epoch %d loss %.6f", epoch, model.training_loss_history[-1])
    return model


def train_vae(X, config: TrainConfig | None = None, zero_noise: bool = False) -> VaeModel:
    """Fit a Gaussian VAE by minimising reconstruction error plus KL to N(0, I)."""
    config = config or TrainConfig()
    X = _check_training_input(X, config)
    init_rng, shuffle_rng, noise_rng = _rngs(config.seed)
    model = init_vae(X.shape[1], config, init_rng)
    opt = ad.Adam(model.parameters(), lr=config.lr)
    for epoch in range(1, config.epochs + 1):
        sums = np.zeros(3)
        for idx in _batches(X.shape[0], config.batch_size, shuffle_rng):
            xb = X[idx]
            opt.zero_grad()
            with ad.Tape() as tape:
                total, recon, kl = vae_loss(model, xb, noise_rng, zero_noise=zero_noise)
            if not np.isfinite(total.item()):
                raise NumericError(f"VAE loss became non-finite in epoch {epoch}")
            tape.backward(total)
            opt.step()
            sums += len(idx) * np.array([total.item(), recon.item(), kl.item()])
        sums /= X.shape[0]
        model.elbo_history.append(float(sums[0]))
        model.reconstruction_history.append(float(sums[1]))
        model.kl_history.append(float(sums[2]))
        logger.debug("vae epoch %d loss %.6f (recon %.6f, kl %.6f)", epoch, *sums)
    return model


def fit_pca(X, n_components: int = 8) -> PcaModel:
    """Principal components of ``X`` from a thin SVD of the centred matrix."""
    X = check_features(X)
    n, d = X.shape
    if n_components < 1 or n_components > min(n - 1, d):
        raise ConfigError(
            f"n_components={n_components} must lie in [1, min(N-1, D)] = [1, {min(n - 1, d)}]"
        )
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    # deterministic sign: largest-magnitude loading of each component is positive
    signs = np.sign(vt[np.arange(vt.shape[0]), np.argmax(np.abs(vt), axis=1)])
    signs[signs == 0] = 1.0
    vt = vt * signs[:, None]
    var = s**2 / (n - 1)
    total = var.sum()
    ratio = var / total if total > 0 else np.zeros_like(var)
    return PcaModel(
        mean=mean,
        components=vt[:n_components].copy(),
        explained_variance_ratio=ratio[:n_components].copy(),
        explained_variance=var[:n_components].copy(),
    )


# inference ------------------------------------------------------------------

def reduce(model, X) -> np.ndarray:
    """Map rows to the latent space; the VAE returns its posterior mean."""
    X = check_features(X)
    if X.shape[1] != model.input_dim:
        raise DimensionError(f"model expects {model.input_dim} columns, got {X.shape[1]}")
    if isinstance(model, PcaModel):
        return (X - model.mean) @ model.components.T
    if isinstance(model, AeModel):
        return np.array(model.encode(X).data)
    if isinstance(model, VaeModel):
        mu, _ = model.encode(X)
        return np.array(mu.data)
    raise TypeError(f"unsupported reducer model {type(model).__name__}")


def reconstruction_mse(model, X) -> float:
    """Elementwise mean squared reconstruction error (VAE decodes its mean)."""
    X = check_features(X)
    z = reduce(model, X)
    if isinstance(model, PcaModel):
        recon = model.inverse_transform(z)
    else:
        recon = model.decode(z).data
    return float(np.mean((recon - X) ** 2))


# persistence ----------------------------------------------------------------

def _layer_params(layers: list[DenseLayer]) -> dict[str, np.ndarray]:
    out = {}
    for layer in layers:
        out[f"{layer.name}.weight"] = layer.weight.data
        out[f"{layer.name}.bias"] = layer.bias.data
    return out


def _layers_from(params: dict, names: list[str]) -> list[DenseLayer]:
    return [DenseLayer(params[f"{n}.weight"], params[f"{n}.bias"], name=n) for n in names]


def save_reducer(model, path) -> None:
    if isinstance(model, PcaModel):
        params = {
            "mean": model.mean,
            "components": model.components,
            "explained_variance_ratio": model.explained_variance_ratio,
        }
        save_checkpoint(path, params, {"kind": "pca"})
    elif isinstance(model, AeModel):
        meta = {
            "kind": "ae",
            "encoder": [l.name for l in model.encoder],
            "decoder": [l.name for l in model.decoder],
            "loss_history": model.training_loss_history,
        }
        save_checkpoint(path, _layer_params(model.encoder + model.decoder), meta)
    elif isinstance(model, VaeModel):
        layers = model.encoder_trunk + [model.mu_head, model.logvar_head] + model.decoder
        meta = {
            "kind": "vae",
            "trunk": [l.name for l in model.encoder_trunk],
            "decoder": [l.name for l in model.decoder],
            "elbo_history": model.elbo_history,
        }
        save_checkpoint(path, _layer_params(layers), meta)
    else:
        raise TypeError(f"unsupported reducer model {type(model).__name__}")


def load_reducer(path):
    params, meta = load_checkpoint(path)
    kind = meta.get("kind")
    if kind == "pca":
        return PcaModel(params["mean"], params["components"], params["explained_variance_ratio"])
    if kind == "ae":
        return AeModel(
            _layers_from(params, meta["encoder"]),
            _layers_from(params, meta["decoder"]),
            list(meta.get("loss_history", [])),
        )
    if kind == "vae":
        return VaeModel(
            _layers_from(params, meta["trunk"]),
            _layers_from(params, ["mu_head"])[0],
            _layers_from(params, ["logvar_head"])[0],
            _layers_from(params, meta["decoder"]),
            list(meta.get("elbo_history", [])),
        )
    raise DataError(f"{path} does not hold a reducer checkpoint (kind={kind!r})")


# scikit-learn wrappers ------------------------------------------------------

class _NeuralReducer(TransformerMixin, BaseEstimator):
    def __init__(self, latent_dim=8, hidden_dim=32, epochs=20, batch_size=128, lr=1e-3, seed=0):
        self.latent_dim = latent_dim
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(self.latent_dim, self.hidden_dim, self.epochs, self.batch_size, self.lr, self.seed)

    def transform(self, X):
        check_is_fitted(self, "model_")
        return reduce(self.model_, X)


class AutoencoderReducer(_NeuralReducer):
    """Encoder half of a trained autoencoder, as a transformer."""

    def fit(self, X, y=None):
        self.model_ = train_autoencoder(X, self._config())
        self.n_features_in_ = self.model_.input_dim
        return self


class VAEReducer(_NeuralReducer):
    """Posterior-mean encoder of a trained VAE, as a transformer."""

    def fit(self, X, y=None):
        self.model_ = train_vae(X, self._config())
        self.n_features_in_ = self.model_.input_dim
        return self


class PCAReducer(TransformerMixin, BaseEstimator):
    def __init__(self, n_components=8):
        self.n_components = n_components

    def fit(self, X, y=None):
        self.model_ = fit_pca(X, self.n_components)
        self.n_features_in_ = self.model_.input_dim
        self.explained_variance_ratio_ = self.model_.explained_variance_ratio
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return reduce(self.model_, X)

    def inverse_transform(self, Z):
        check_is_fitted(self, "model_")
        return self.model_.inverse_transform(Z)


def make_reducer(kind, latent_dim: int = 8, epochs: int = 20, batch_size: int = 128,
                 lr: float = 1e-3, seed: int = 0):
    kind = ReducerKind.parse(kind)
    if kind is ReducerKind.PCA:
        return PCAReducer(n_components=latent_dim)
    cls = AutoencoderReducer if kind is ReducerKind.AE_ENCODER else VAEReducer
    return cls(latent_dim=latent_dim, epochs=epochs, batch_size=batch_size, lr=lr, seed=seed)
