"""Exact Gaussian-process regression with an ARD squared-exponential kernel.

Hyperparameters live in log space and are fitted by running Adam on the exact
marginal log-likelihood. A trained model caches the Cholesky factor of the
noisy kernel matrix and exposes two prediction surfaces: the normalized
posterior (mean/variance) and the physical-scale median predictor, which
pushes the normalized mean through the inverse output transform (legal
because that map is monotone and the normalized predictive is Gaussian, so
its median equals its mean).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.linalg.lapack import dpotri

from .data import ChannelSchema, ChannelSpec, WindowedInputs
from .errors import ArtifactError, DimensionMismatch, FactorizationFailed
from .transform import TransformSet

MODEL_FORMAT = "xcal-gp-model/1"

# Diagonal boosts tried in order when the noisy kernel is not numerically PD.
JITTER_LADDER = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class RbfHyperparams:
    """Kernel parameters stored as unconstrained logs for optimization."""

    log_lengthscales: np.ndarray
    log_signal_variance: float
    log_noise_variance: float

    def __post_init__(self):
        ell = np.asarray(self.log_lengthscales, dtype=float).ravel()
        if ell.size < 1 or not np.all(np.isfinite(ell)):
            raise ValueError("log-lengthscales must be a non-empty finite vector")
        if not np.isfinite(self.log_signal_variance) or not np.isfinite(self.log_noise_variance):
            raise ValueError("log-variances must be finite")
        ell.setflags(write=False)
        object.__setattr__(self, "log_lengthscales", ell)

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.log_lengthscales)

    @property
    def signal_variance(self) -> float:
        return float(np.exp(self.log_signal_variance))

    @property
    def noise_variance(self) -> float:
        return float(np.exp(self.log_noise_variance))

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.log_lengthscales, [self.log_signal_variance, self.log_noise_variance]]
        )

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "RbfHyperparams":
        vec = np.asarray(vec, dtype=float)
        return cls(vec[:-2].copy(), float(vec[-2]), float(vec[-1]))


def kernel(X1, X2, hyper: RbfHyperparams) -> np.ndarray:
    """Squared-exponential covariance with per-dimension lengthscales.

    A single lengthscale broadcasts across all columns (isotropic kernel).
    """
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    ell = hyper.lengthscales
    if X1.shape[1] != X2.shape[1]:
        raise DimensionMismatch(f"query widths disagree: {X1.shape[1]} vs {X2.shape[1]}")
    if ell.size not in (1, X1.shape[1]):
        raise DimensionMismatch(
            f"lengthscale count {ell.size} incompatible with input width {X1.shape[1]}"
        )
    a = X1 / ell
    b = X2 / ell
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return hyper.signal_variance * np.exp(-0.5 * sq)


def _factorize(K: np.ndarray, noise_variance: float) -> tuple[np.ndarray, float]:
    """Cholesky of K + noise*I, escalating the jitter ladder on failure."""
    n = K.shape[0]
    eye = np.eye(n)
    base = K + noise_variance * eye
    for jitter in JITTER_LADDER:
        try:
            return np.linalg.cholesky(base + jitter * eye), jitter
        except np.linalg.LinAlgError:
            continue
    raise FactorizationFailed(
        f"kernel matrix not positive definite after max jitter {JITTER_LADDER[-1]:g}"
    )


def _lml_core(X, y, hyper, with_gradient):
    K = kernel(X, X, hyper)
    L, _ = _factorize(K, hyper.noise_variance)
    alpha = cho_solve((L, True), y)
    n = y.size
    lml = float(-0.5 * (y @ alpha) - np.sum(np.log(np.diag(L))) - 0.5 * n * _LOG_2PI)
    if not with_gradient:
        return lml, None
    k_inv, info = dpotri(L, lower=1)
    if info != 0:
        raise FactorizationFailed(f"triangular inversion failed (info={info})")
    k_inv = k_inv + np.tril(k_inv, -1).T
    # d lml / d theta = 0.5 tr((alpha alpha^T - K^-1) dK/d theta)
    a_mat = np.outer(alpha, alpha) - k_inv
    ak = a_mat * K
    # sum_ab ak_ab (x_a - x_b)^2 per column, via the quadratic-form identity
    # (ak is symmetric, so row and column sums coincide)
    row = ak.sum(axis=1)
    akx = ak @ X
    per_dim = 2.0 * (row @ (X * X)) - 2.0 * np.einsum("ij,ij->j", X, akx)
    ell = hyper.lengthscales
    if ell.size == 1:
        grad_ell = np.array([0.5 * per_dim.sum() / ell[0] ** 2])
    else:
        grad_ell = 0.5 * per_dim / ell**2
    grad_signal = 0.5 * np.sum(ak)
    grad_noise = 0.5 * hyper.noise_variance * np.trace(a_mat)
    grad = np.concatenate([grad_ell, [grad_signal, grad_noise]])
    return lml, grad


@dataclass(frozen=True)
class TrainConfig:
    """Adam settings for hyperparameter optimization."""

    steps: int = 500
    learning_rate: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    ard: bool = True
    n_max: int = 2000

    def __post_init__(self):
        if self.steps < 0 or self.n_max < 2:
            raise ValueError("steps must be >= 0 and n_max >= 2")


# Hyperparameter initialization: noise variance in normalized target units;
# lengthscales start at one standard deviation of each input column, which
# reduces to 1.0 when the inputs are normalized.
_INIT_NOISE_VARIANCE = 0.1
_MIN_INIT_LENGTHSCALE = 1e-3


@dataclass
class GpModel:
    """Trained exact GP over windowed, normalized inputs.

    Treat instances as immutable after construction and share freely; the
    only mutated field is ``variance_clamp_count`` (not thread-safe, purely
    diagnostic).
    """

    hyper: RbfHyperparams
    train_inputs: np.ndarray
    train_targets: np.ndarray
    chol: np.ndarray
    alpha_weights: np.ndarray
    jitter: float
    transforms: Optional[TransformSet] = None
    window: int = 1
    schema: Optional[ChannelSchema] = None
    seed: int = 0
    config_hash: str = ""
    variance_clamp_count: int = field(default=0, compare=False)

    @property
    def n_train(self) -> int:
        return int(self.train_targets.size)

    @property
    def input_width(self) -> int:
        return int(self.train_inputs.shape[1])


def _build_model(hyper, X, y, **extra) -> GpModel:
    K = kernel(X, X, hyper)
    L, jitter = _factorize(K, hyper.noise_variance)
    alpha = cho_solve((L, True), y)
    return GpModel(hyper, X, y, L, alpha, jitter, **extra)


def log_marginal_likelihood(model: GpModel, with_gradient: bool = False):
    """Exact marginal log-likelihood of the training data; optionally also
    its gradient with respect to the log-hyperparameters."""
    lml, grad = _lml_core(
        model.train_inputs, model.train_targets, model.hyper, with_gradient
    )
    return (lml, grad) if with_gradient else lml


def _subsample(rows: np.ndarray, targets: np.ndarray, n_max: int):
    n = targets.size
    if n <= n_max:
        return rows, targets
    idx = np.round(np.linspace(0, n - 1, n_max)).astype(int)
    return rows[idx], targets[idx]


def train(
    data: WindowedInputs,
    config: TrainConfig = TrainConfig(),
    seed: int = 0,
    transforms: Optional[TransformSet] = None,
    schema: Optional[ChannelSchema] = None,
    config_hash: str = "",
) -> GpModel:
    """Fit kernel hyperparameters by Adam on the negative marginal likelihood.

    Returns the model at the best iterate seen (not necessarily the last),
    so a late divergent step cannot ruin the fit. Deterministic given the
    data and configuration.
    """
    X = np.asarray(data.rows, dtype=float)
    y = np.asarray(data.targets, dtype=float)
    if y.size < 2:
        raise ValueError(f"need at least 2 training rows, got {y.size}")
    X, y = _subsample(X, y, config.n_max)

    scales = np.maximum(X.std(axis=0), _MIN_INIT_LENGTHSCALE)
    init_ell = np.log(scales) if config.ard else np.array([float(np.mean(np.log(scales)))])
    theta = RbfHyperparams(
        init_ell, 0.0, float(np.log(_INIT_NOISE_VARIANCE))
    ).to_vector()

    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    best_theta = theta.copy()
    best_lml = -np.inf

    for step in range(config.steps):
        lml, grad = _lml_core(X, y, RbfHyperparams.from_vector(theta), True)
        if lml > best_lml:
            best_lml, best_theta = lml, theta.copy()
        # Adam on the negative LML
        g = -grad
        t = step + 1
        m = config.beta1 * m + (1.0 - config.beta1) * g
        v = config.beta2 * v + (1.0 - config.beta2) * g * g
        m_hat = m / (1.0 - config.beta1**t)
        v_hat = v / (1.0 - config.beta2**t)
        theta = theta - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)

    if config.steps > 0:
        lml, _ = _lml_core(X, y, RbfHyperparams.from_vector(theta), False)
        if lml > best_lml:
            best_lml, best_theta = lml, theta.copy()

    return _build_model(
        RbfHyperparams.from_vector(best_theta),
        X,
        y,
        transforms=transforms,
        window=data.window,
        schema=schema,
        seed=seed,
        config_hash=config_hash,
    )


def predict_normalized(
    model: GpModel, Xq, with_variance: bool = True
) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Posterior mean (and predictive variance, noise included) at normalized
    query rows, using the cached factorization."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    if Xq.shape[1] != model.input_width:
        raise DimensionMismatch(
            f"query width {Xq.shape[1]} != training width {model.input_width}"
        )
    k_star = kernel(Xq, model.train_inputs, model.hyper)
    mean = k_star @ model.alpha_weights
    if not with_variance:
        return mean, None
    v = solve_triangular(model.chol, k_star.T, lower=True)
    var = (
        model.hyper.signal_variance
        + model.hyper.noise_variance
        - np.sum(v * v, axis=0)
    )
    negative = var < 0.0
    if np.any(negative):
        model.variance_clamp_count += int(np.count_nonzero(negative))
        var = np.where(negative, 0.0, var)
    return mean, var


def predict_median(model: GpModel, x):
    """Physical-scale median prediction for windowed physical input rows.

    Normalizes the rows with the stored per-channel transforms, takes the
    normalized posterior mean, and maps it back through the inverse output
    transform. With identity transforms this is exactly the posterior mean.
    """
    x = np.asarray(x, dtype=float)
    rows = np.atleast_2d(x)
    if model.transforms is not None:
        rows = model.transforms.forward_windowed(rows)
        mu, _ = predict_normalized(model, rows, with_variance=False)
        out = model.transforms.inverse_nox(mu)
    else:
        out, _ = predict_normalized(model, rows, with_variance=False)
    return float(out[0]) if x.ndim == 1 else np.asarray(out)


# --- persistence ----------------------------------------------------------------


def _schema_payload(schema: Optional[ChannelSchema]):
    if schema is None:
        return None
    return {
        "sample_rate_hz": schema.sample_rate_hz,
        "channels": [
            {"name": c.name, "role": c.role, "units": c.units} for c in schema.channels
        ],
    }


def _schema_from_payload(payload) -> Optional[ChannelSchema]:
    if payload is None:
        return None
    return ChannelSchema(
        tuple(ChannelSpec(c["name"], c["role"], c.get("units", "")) for c in payload["channels"]),
        payload.get("sample_rate_hz", 1.0),
    )


def save_model(model: GpModel, path) -> None:
    """Persist a self-describing JSON artifact (format-version tagged)."""
    payload = {
        "format": MODEL_FORMAT,
        "config_hash": model.config_hash,
        "seed": model.seed,
        "window": model.window,
        "schema": _schema_payload(model.schema),
        "hyperparams": {
            "log_lengthscales": model.hyper.log_lengthscales.tolist(),
            "log_signal_variance": model.hyper.log_signal_variance,
            "log_noise_variance": model.hyper.log_noise_variance,
        },
        "train_inputs": model.train_inputs.tolist(),
        "train_targets": model.train_targets.tolist(),
        "transforms": model.transforms.to_payload() if model.transforms else None,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_model(path) -> GpModel:
    """Load a model artifact, re-derive the factorization, and verify that it
    reconstructs the noisy kernel matrix."""
    path = Path(path)
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"cannot read model artifact {path}: {exc}") from exc
    if payload.get("format") != MODEL_FORMAT:
        raise ArtifactError(f"{path} is not a {MODEL_FORMAT} artifact")

    hp = payload["hyperparams"]
    hyper = RbfHyperparams(
        np.asarray(hp["log_lengthscales"], dtype=float),
        float(hp["log_signal_variance"]),
        float(hp["log_noise_variance"]),
    )
    X = np.asarray(payload["train_inputs"], dtype=float)
    y = np.asarray(payload["train_targets"], dtype=float)
    transforms = (
        TransformSet.from_payload(payload["transforms"]) if payload["transforms"] else None
    )
    model = _build_model(
        hyper,
        X,
        y,
        transforms=transforms,
        window=int(payload["window"]),
        schema=_schema_from_payload(payload.get("schema")),
        seed=int(payload.get("seed", 0)),
        config_hash=payload.get("config_hash", ""),
    )
    ky = kernel(X, X, hyper) + (hyper.noise_variance + model.jitter) * np.eye(y.size)
    recon = model.chol @ model.chol.T
    rel = np.linalg.norm(recon - ky) / np.linalg.norm(ky)
    if rel > 1e-8:
        raise ArtifactError(
            f"factorization reconstruction off by {rel:.3e} (limit 1e-8); artifact corrupt?"
        )
    return model


# --- end-to-end fit ---------------------------------------------------------------


def fit_surrogate(
    datasets,
    schema: ChannelSchema,
    window_s: float,
    train_config: TrainConfig = TrainConfig(),
    transform_inputs: bool = True,
    n_quantiles: Optional[int] = None,
    seed: int = 0,
    config_hash: str = "",
) -> GpModel:
    """Full training pipeline on one or more nominal-engine datasets:
    fit transforms, normalize, window each dataset separately (windows never
    cross file boundaries), stack, and train."""
    from .data import window_inputs  # local import keeps module deps one-way
    from .transform import fit_transform_set

    if not isinstance(datasets, (list, tuple)):
        datasets = [datasets]
    transforms = fit_transform_set(
        datasets, transform_inputs=transform_inputs, n_quantiles=n_quantiles
    )
    all_rows, all_targets, window = [], [], None
    for ds in datasets:
        windowed = window_inputs(ds, window_s)
        window = windowed.window
        rows = transforms.forward_windowed(windowed.rows)
        targets = transforms.forward_nox(windowed.targets)
        all_rows.append(rows)
        all_targets.append(targets)
    stacked = WindowedInputs(
        np.concatenate(all_rows, axis=0), np.concatenate(all_targets), window
    )
    return train(
        stacked,
        config=train_config,
        seed=seed,
        transforms=transforms,
        schema=schema,
        config_hash=config_hash,
    )
