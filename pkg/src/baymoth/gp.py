"""Exact Gaussian-process regression with an isotropic RBF kernel.

Hyperparameters are fixed; nothing here optimizes a marginal likelihood.
The functional API (``fit_gp`` / ``predict`` / ``sample_posterior``) works on
raw values with a zero prior mean.  Callers that want a data-driven prior
standardize first with :func:`standardize`; :class:`ExactGPRegressor` does
that for you when ``normalize_y=True``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

JITTER_LADDER = (1e-10, 1e-8, 1e-6)
_SAMPLE_JITTER_LADDER = (1e-14, 1e-12, 1e-10, 1e-8, 1e-6)


class GPFitError(ValueError):
    """Raised when a Gram matrix cannot be factorized."""


@dataclass(frozen=True)
class Domain:
    """Box domain.  Optimization always happens on the unit cube of ``dim``."""

    bounds: np.ndarray

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        if b.ndim != 2 or b.shape[1] != 2 or b.shape[0] < 1:
            raise ValueError("bounds must have shape (dim, 2)")
        if not np.all(np.isfinite(b)) or np.any(b[:, 0] >= b[:, 1]):
            raise ValueError("each bound needs lower < upper")
        object.__setattr__(self, "bounds", b)

    @classmethod
    def unit(cls, dim: int) -> "Domain":
        if dim < 1:
            raise ValueError("dim must be >= 1")
        return cls(np.tile([0.0, 1.0], (dim, 1)))

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    def to_unit(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x - self.bounds[:, 0]) / (self.bounds[:, 1] - self.bounds[:, 0])

    def from_unit(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return self.bounds[:, 0] + u * (self.bounds[:, 1] - self.bounds[:, 0])


@dataclass(frozen=True)
class KernelConfig:
    length_scale: float = 0.2
    signal_variance: float = 1.0
    kind: str = "rbf"

    def __post_init__(self):
        if self.kind != "rbf":
            raise ValueError(f"unsupported kernel kind {self.kind!r}")
        if not self.length_scale > 0:
            raise ValueError("length_scale must be positive")
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be positive")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "length_scale": self.length_scale,
                "signal_variance": self.signal_variance}


@dataclass(frozen=True)
class Dataset:
    """Ordered (point, value) pairs.  Points are rows of an (n, dim) array."""

    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        points = np.asarray(self.points, dtype=float)
        if points.ndim == 1:
            points = points.reshape(len(values), -1) if len(values) else points.reshape(0, 1)
        if points.ndim != 2 or points.shape[0] != values.shape[0]:
            raise ValueError(
                f"points/values length mismatch: {points.shape[0]} vs {values.shape[0]}")
        if not (np.all(np.isfinite(points)) and np.all(np.isfinite(values))):
            raise ValueError("dataset contains NaN or Inf")
        points.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "values", values)

    @classmethod
    def empty(cls, dim: int) -> "Dataset":
        return cls(np.zeros((0, dim)), np.zeros(0))

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def append(self, x, y: float) -> "Dataset":
        x = np.asarray(x, dtype=float).reshape(1, -1)
        if x.shape[1] != self.dim:
            raise ValueError(f"point has dim {x.shape[1]}, dataset has dim {self.dim}")
        return Dataset(np.vstack([self.points, x]), np.append(self.values, float(y)))

    def with_values(self, values) -> "Dataset":
        return Dataset(self.points, values)


@dataclass(frozen=True)
class GPModel:
    kernel: KernelConfig
    noise: float
    data: Dataset
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    jitter: float = 0.0

    @property
    def dim(self) -> int:
        return self.data.dim


def standardize(values) -> Tuple[np.ndarray, float, float]:
    """Return ``(z, mean, std)``; a constant or single value gets std 1."""
    v = np.asarray(values, dtype=float)
    mean = float(v.mean()) if v.size else 0.0
    std = float(v.std()) if v.size > 1 else 0.0
    if not std > 1e-12:
        std = 1.0
    return (v - mean) / std, mean, std


def sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (np.sum(a * a, axis=-1)[..., :, None] + np.sum(b * b, axis=-1)[..., None, :]
          - 2.0 * a @ np.swapaxes(b, -1, -2))
    return np.maximum(d2, 0.0)


def gram(a, b, cfg: KernelConfig) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    return cfg.signal_variance * np.exp(-0.5 * sq_dists(a, b) / cfg.length_scale ** 2)


def rbf_kernel(a, b, cfg: KernelConfig) -> float:
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    r2 = float(np.sum((a - b) ** 2))
    return cfg.signal_variance * float(np.exp(-r2 / (2.0 * cfg.length_scale ** 2)))


def _has_duplicates(points: np.ndarray) -> bool:
    return np.unique(points, axis=0).shape[0] < points.shape[0]


def cholesky_with_jitter(K: np.ndarray, ladder=JITTER_LADDER) -> Tuple[np.ndarray, float]:
    """Cholesky of ``K``, escalating diagonal jitter along ``ladder`` on failure."""
    eye = np.eye(K.shape[0])
    for jitter in (0.0,) + tuple(ladder):
        try:
            return np.linalg.cholesky(K + jitter * eye if jitter else K), jitter
        except np.linalg.LinAlgError:
            continue
    cond = np.linalg.cond(K)
    raise GPFitError(
        f"matrix not positive definite after jitter {ladder[-1]:g} (condition number {cond:.3g})")


def fit_gp(data: Dataset, kernel: KernelConfig, noise: float) -> GPModel:
    if len(data) == 0:
        raise GPFitError("cannot fit a GP to an empty dataset")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    if noise == 0 and _has_duplicates(data.points):
        raise GPFitError("duplicate points with zero noise give a singular Gram matrix")
    K = gram(data.points, data.points, kernel)
    K[np.diag_indices_from(K)] += noise
    L, jitter = cholesky_with_jitter(K)
    alpha = cho_solve((L, True), data.values)
    return GPModel(kernel=kernel, noise=float(noise), data=data, chol=L, alpha=alpha,
                   jitter=jitter)


def _check_query(model: GPModel, query) -> np.ndarray:
    q = np.asarray(query, dtype=float)
    if q.ndim == 1:
        q = q.reshape(1, -1)
    if q.shape[1] != model.dim:
        raise ValueError(f"query has dim {q.shape[1]}, model has dim {model.dim}")
    return q


def predict(model: GPModel, query, *, clamp: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior means and variances at ``query`` (an (m, dim) array)."""
    q = _check_query(model, query)
    Ks = gram(q, model.data.points, model.kernel)
    mean = Ks @ model.alpha
    v = solve_triangular(model.chol, Ks.T, lower=True, check_finite=False)
    var = model.kernel.signal_variance - np.sum(v * v, axis=0)
    if clamp:
        var = np.maximum(var, 0.0)
    return mean, var


def predict_cov(model: GPModel, query) -> Tuple[np.ndarray, np.ndarray]:
    q = _check_query(model, query)
    Ks = gram(q, model.data.points, model.kernel)
    v = solve_triangular(model.chol, Ks.T, lower=True, check_finite=False)
    cov = gram(q, q, model.kernel) - v.T @ v
    return Ks @ model.alpha, 0.5 * (cov + cov.T)


def sample_posterior(model: GPModel, query, count: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Joint posterior draws; returns shape (count, m)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    mean, cov = predict_cov(model, query)
    L, _ = cholesky_with_jitter(cov, ladder=_SAMPLE_JITTER_LADDER)
    z = rng.standard_normal((count, mean.shape[0]))
    return mean[None, :] + z @ L.T


class ExactGPRegressor(RegressorMixin, BaseEstimator):
    """Scikit-learn style wrapper around :func:`fit_gp` with fixed hyperparameters.

    Parameters
    ----------
    length_scale : float
        Isotropic RBF length-scale on the normalized input box.
    signal_variance : float
        Prior variance of the latent function.
    noise : float
        Observation noise variance added to the Gram diagonal.
    normalize_y : bool
        Standardize targets before fitting and undo it at prediction time.
    """

    def __init__(self, length_scale: float = 0.2, signal_variance: float = 1.0,
                 noise: float = 1e-6, normalize_y: bool = True):
        self.length_scale = length_scale
        self.signal_variance = signal_variance
        self.noise = noise
        self.normalize_y = normalize_y

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if self.normalize_y:
            z, self.y_mean_, self.y_std_ = standardize(y)
        else:
            z, self.y_mean_, self.y_std_ = y, 0.0, 1.0
        kernel = KernelConfig(self.length_scale, self.signal_variance)
        self.model_ = fit_gp(Dataset(X, z), kernel, self.noise)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, return_std: bool = False):
        check_is_fitted(self, "model_")
        X = check_array(X)
        mean, var = predict(self.model_, X)
        mean = mean * self.y_std_ + self.y_mean_
        if return_std:
            return mean, np.sqrt(var) * self.y_std_
        return mean

    def sample_y(self, X, n_samples: int = 1, random_state: Optional[int] = None):
        check_is_fitted(self, "model_")
        X = check_array(X)
        rng = np.random.default_rng(random_state)
        draws = sample_posterior(self.model_, X, n_samples, rng)
        return (draws * self.y_std_ + self.y_mean_).T
