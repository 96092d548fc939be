"""Brute-force reference computations for the test suite.

Nothing in here imports from the production modules: the kernel, the
posterior formulas, the EI integral and the grid search are written out again
the slow, obvious way so that they can serve as independent checks.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate


@dataclass(frozen=True)
class DiscreteSampler:
    outcomes: tuple
    probabilities: tuple

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if len(self.outcomes) != len(p):
            raise ValueError("outcomes and probabilities differ in length")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must be non-negative and sum to 1")

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = rng.choice(len(self.outcomes), size=size, p=np.asarray(self.probabilities))
        return np.asarray(self.outcomes, dtype=float)[idx]


def _rbf(a, b, length_scale, signal_variance):
    s = 0.0
    for ai, bi in zip(a, b):
        s += (ai - bi) ** 2
    return signal_variance * math.exp(-s / (2.0 * length_scale * length_scale))


def dense_gp_predict(points, values, length_scale: float, signal_variance: float,
                     noise: float, query):
    """Textbook posterior with an explicit matrix inverse (n <= 50)."""
    X = [list(map(float, p)) for p in np.atleast_2d(points)]
    y = np.asarray(values, dtype=float)
    n = len(X)
    if n > 50:
        raise ValueError("dense oracle is limited to n <= 50")
    K = np.array([[_rbf(X[i], X[j], length_scale, signal_variance) for j in range(n)]
                  for i in range(n)])
    K = K + noise * np.eye(n)
    if np.linalg.matrix_rank(K) < n:
        raise np.linalg.LinAlgError("singular Gram matrix")
    Kinv = np.linalg.inv(K)
    means, variances = [], []
    for q in np.atleast_2d(query):
        k = np.array([_rbf(q, X[i], length_scale, signal_variance) for i in range(n)])
        means.append(float(k @ Kinv @ y))
        variances.append(float(signal_variance - k @ Kinv @ k))
    return np.array(means), np.array(variances)


def ei_quadrature(mean: float, std: float, incumbent: float) -> float:
    """E[max(v - incumbent, 0)] for v ~ N(mean, std^2) by adaptive quadrature."""
    if std <= 0:
        raise ValueError("std must be positive")
    lo = max(incumbent, mean - 12.0 * std)
    hi = mean + 12.0 * std
    if hi <= lo:
        return 0.0

    def integrand(v):
        return (v - incumbent) * math.exp(-0.5 * ((v - mean) / std) ** 2) / (
            std * math.sqrt(2.0 * math.pi))

    val, _ = integrate.quad(integrand, lo, hi, epsabs=1e-12, epsrel=1e-12, limit=200,
                            points=[mean] if lo < mean < hi else None)
    return val


def enumerate_expectation(sampler: DiscreteSampler, payoff: Callable[[float], float]):
    """Exact mean and variance of ``payoff(draw)`` by direct summation."""
    vals = [payoff(o) for o in sampler.outcomes]
    mean = sum(p * v for p, v in zip(sampler.probabilities, vals))
    var = sum(p * (v - mean) ** 2 for p, v in zip(sampler.probabilities, vals))
    return mean, var


def grid_argmax(fn: Callable[[Sequence[float]], float], dim: int, resolution: int,
                lower=0.0, upper=1.0):
    """Exhaustive search on a regular grid; ties go to the first point in
    lexicographic order."""
    if resolution ** dim > 10 ** 7:
        raise ValueError("grid budget exceeded")
    axis = [lower + (upper - lower) * i / (resolution - 1) for i in range(resolution)]
    best_point, best_value = None, -math.inf
    for p in itertools.product(axis, repeat=dim):
        v = fn(p)
        if v > best_value:
            best_point, best_value = p, v
    return np.array(best_point), best_value
