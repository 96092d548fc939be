"""Acquisition functions and their optimizer.

Everything is evaluated in batches: value functions take an ``(n, dim)`` array
of candidates and return ``n`` values.  Inside one proposal the Monte Carlo
base draws and the inner candidate pool are fixed by the context seed, so the
acquisition surface the optimizer climbs is a deterministic function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtr
from scipy.stats import qmc

from .gp import Domain, GPModel, KernelConfig, fit_gp, gram, predict
from .profiling import CURRENT_EI, FUTURE_EI, HORIZON, NULL_TIMER

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class OptimizerConfig:
    restarts: int = 3
    max_iters: int = 100
    candidate_pool: int = 64
    step_tolerance: float = 1e-3
    initial_step: float = 0.1

    def __post_init__(self):
        if self.restarts < 1 or self.max_iters < 1 or self.candidate_pool < 1:
            raise ValueError("restarts, max_iters and candidate_pool must be >= 1")
        if self.restarts > self.candidate_pool:
            raise ValueError("restarts cannot exceed candidate_pool")
        if not (0 < self.step_tolerance <= self.initial_step):
            raise ValueError("need 0 < step_tolerance <= initial_step")


INNER_OPTIMIZER = OptimizerConfig(restarts=2, max_iters=50, candidate_pool=32)


def expected_improvement(mean, std, incumbent):
    """Closed-form EI of a Gaussian over ``incumbent``.  Broadcasts; never negative."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    imp = mean - incumbent
    pos = std > 0
    safe = np.where(pos, std, 1.0)
    z = np.clip(imp / safe, -40.0, 40.0)
    ei = imp * ndtr(z) + safe * _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    out = np.maximum(np.where(pos, ei, imp), 0.0)
    return float(out) if out.ndim == 0 else out


def greedy_improvement(fantasy_value, incumbent):
    out = np.maximum(np.asarray(fantasy_value, dtype=float) - incumbent, 0.0)
    return float(out) if out.ndim == 0 else out


def sobol_points(n: int, dim: int, seed) -> np.ndarray:
    m = max(int(math.ceil(math.log2(max(n, 1)))), 0)
    return qmc.Sobol(dim, scramble=True, seed=seed).random_base2(m)[:n]


def mc_estimate(sampler: Callable, payoff: Callable, M: int, rng) -> Tuple[float, float]:
    """Plain Monte Carlo mean of ``payoff`` over ``M`` i.i.d. draws.

    ``sampler(rng, M)`` returns M draws; ``payoff`` maps an array of draws to
    an array of payoffs.  Returns the estimate and the sample standard
    deviation of the payoffs (0 when M == 1).
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    z = np.asarray(payoff(np.asarray(sampler(rng, M))), dtype=float).reshape(M)
    return float(z.mean()), float(z.std(ddof=1)) if M > 1 else 0.0


@dataclass
class AcqContext:
    """Per-proposal state shared by every acquisition evaluation.

    ``target_model`` is the Lambda0 GP on standardized values, ``incumbent``
    the best standardized observation, and ``y_mean``/``y_std`` the
    standardization, which is used to put source-environment draws on the
    same scale.
    """

    target_model: GPModel
    incumbent: float
    lambda1_kernel: KernelConfig
    noise: float
    domain: Optional[Domain] = None
    inner_optimizer: OptimizerConfig = INNER_OPTIMIZER
    mc_samples: int = 5
    seed: object = 0
    y_mean: float = 0.0
    y_std: float = 1.0
    timer: object = NULL_TIMER
    base_normals: np.ndarray = field(init=False, repr=False)
    inner_pool: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if self.domain is None:
            self.domain = Domain.unit(self.target_model.dim)
        observed = float(np.max(self.target_model.data.values))
        if abs(observed - self.incumbent) > 1e-9 * max(1.0, abs(observed)):
            raise ValueError("incumbent must equal the best observed value of the target model")
        rng = np.random.default_rng(self.seed)
        self.base_normals = rng.standard_normal(self.mc_samples)
        self.inner_pool = sobol_points(self.inner_optimizer.candidate_pool,
                                       self.target_model.dim, rng)
        base = fit_gp(self.target_model.data, self.lambda1_kernel, self.noise)
        self._base1 = base
        kp = gram(self.inner_pool, base.data.points, base.kernel)
        self._pool_w = solve_triangular(base.chol, kp.T, lower=True, check_finite=False)
        self._pool_mu = kp @ base.alpha
        self._pool_var = base.kernel.signal_variance - np.sum(self._pool_w ** 2, axis=0)


def _lookahead_values(ctx: AcqContext, X: np.ndarray, W: np.ndarray,
                      return_argmax: bool = False):
    """Inner maxima of EI_1 for every (candidate, fantasy) pair.

    ``X`` is (P, d) and ``W`` (P, M) holds fantasy values at those candidates.
    GP_1 is the Lambda1 GP on the history plus (x, w); it is obtained from the
    Lambda1 GP on the history by a rank-one conditioning update, which equals
    a full refit on the augmented data.  With ``return_argmax`` the maximizing
    x_{t+2} of each problem is returned as well, shape (P, M, d).
    """
    base = ctx._base1
    kern = base.kernel
    sv = kern.signal_variance
    Xd = base.data.points
    L = base.chol
    P, M = W.shape
    n = Xd.shape[0]

    kx = gram(X, Xd, kern)
    vx = solve_triangular(L, kx.T, lower=True, check_finite=False)  # (n, P)
    mu_x = kx @ base.alpha
    cxx = np.maximum(sv - np.sum(vx * vx, axis=0), 0.0)
    denom = cxx + ctx.noise
    gain = (W - mu_x[:, None]) / denom[:, None]
    inc1 = np.maximum(ctx.incumbent, W)

    timer = ctx.timer
    # pool stage: every problem sees the same inner candidate pool
    czx = gram(X, ctx.inner_pool, kern) - vx.T @ ctx._pool_w  # (P, Q)
    mu1 = ctx._pool_mu[None, None, :] + czx[:, None, :] * gain[:, :, None]
    var1 = np.maximum(ctx._pool_var[None, :] - czx * czx / denom[:, None], 0.0)
    with timer.stage(FUTURE_EI):
        pool_vals = expected_improvement(mu1, np.sqrt(var1)[:, None, :], inc1[:, :, None])

    cfg = ctx.inner_optimizer
    r = cfg.restarts
    top = np.argsort(-pool_vals, axis=2, kind="stable")[:, :, :r]  # (P, M, r)
    starts = ctx.inner_pool[top].reshape(-1, X.shape[1])
    start_vals = np.take_along_axis(pool_vals, top, axis=2).reshape(-1)
    pid = np.repeat(np.arange(P), M * r)
    mid = np.tile(np.repeat(np.arange(M), r), P)

    def values(Z, ids):
        N, k, d = Z.shape
        p, m = pid[ids], mid[ids]
        kz = gram(Z, Xd, kern)  # (N, k, n)
        flat = kz.reshape(N * k, n)
        wz = solve_triangular(L, flat.T, lower=True, check_finite=False)  # (n, N*k)
        mub = (flat @ base.alpha).reshape(N, k)
        varb = sv - np.sum(wz * wz, axis=0).reshape(N, k)
        kzx = sv * np.exp(-0.5 * np.sum((Z - X[p][:, None, :]) ** 2, axis=2) / kern.length_scale ** 2)
        czx_ = kzx - np.einsum("nik,ni->ik", wz.reshape(n, N, k), vx[:, p]).reshape(N, k)
        mu = mub + czx_ * gain[p, m][:, None]
        var = np.maximum(varb - czx_ * czx_ / denom[p][:, None], 0.0)
        with timer.stage(FUTURE_EI):
            return expected_improvement(mu, np.sqrt(var), inc1[p, m][:, None])

    xbest, best = pattern_search(values, starts, start_vals, cfg)
    best = best.reshape(P, M, r)
    out = np.maximum(best.max(axis=2), pool_vals.max(axis=2))
    if not return_argmax:
        return out
    d = X.shape[1]
    local = np.take_along_axis(xbest.reshape(P, M, r, d),
                               best.argmax(axis=2)[:, :, None, None], axis=2)[:, :, 0]
    pooled = ctx.inner_pool[pool_vals.argmax(axis=2)]
    use_local = (best.max(axis=2) >= pool_vals.max(axis=2))[:, :, None]
    return out, np.where(use_local, local, pooled)


def _as_batch(X, dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != dim:
        raise ValueError(f"candidate has dim {X.shape[1]}, expected {dim}")
    return X


def current_ei(ctx: AcqContext, X) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    X = _as_batch(X, ctx.target_model.dim)
    with ctx.timer.stage(CURRENT_EI):
        mu, var = predict(ctx.target_model, X)
        sd = np.sqrt(var)
        ei = expected_improvement(mu, sd, ctx.incumbent)
    return np.atleast_1d(ei), mu, sd


def two_opt_values(ctx: AcqContext, X) -> np.ndarray:
    """EI_0(x) plus the MC average of the best EI_1 after a GP_t fantasy at x."""
    X = _as_batch(X, ctx.target_model.dim)
    ei0, mu, sd = current_ei(ctx, X)
    with ctx.timer.stage(HORIZON):
        Y = mu[:, None] + sd[:, None] * ctx.base_normals[None, :]
        inner = _lookahead_values(ctx, X, Y)
    return ei0 + inner.mean(axis=1)


def env_affine(ctx: AcqContext, env) -> Tuple[float, float]:
    """Scale and shift that map an environment's standardized values onto the
    target's standardized scale (identity when both share a standardization)."""
    return env.y_std / ctx.y_std, (env.y_mean - ctx.y_mean) / ctx.y_std


def _baymoth_terms(ctx: AcqContext, env, alpha: float, X) -> Tuple[np.ndarray, np.ndarray]:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    X = _as_batch(X, ctx.target_model.dim)
    ei0, _, _ = current_ei(ctx, X)
    with ctx.timer.stage(HORIZON):
        mu_e, var_e = predict(env.model, X)
        scale, shift = env_affine(ctx, env)
        W = (mu_e[:, None] + np.sqrt(var_e)[:, None] * ctx.base_normals[None, :]) * scale + shift
        inner = _lookahead_values(ctx, X, W)
        Z = (1.0 - alpha) * inner + alpha * greedy_improvement(W, ctx.incumbent)
    return ei0, Z


def baymoth_values(ctx: AcqContext, env, alpha: float, X) -> np.ndarray:
    """EI_0(x) plus the MC estimate of the meta-informed lookahead term.

    Each draw from the environment posterior at x feeds both the Lambda1
    fantasy and the greedy improvement term.
    """
    ei0, Z = _baymoth_terms(ctx, env, alpha, X)
    return ei0 + Z.mean(axis=1)


def lookahead_inner_value(ctx: AcqContext, x_next, fantasy_value: float,
                          return_argmax: bool = False):
    """max over x_{t+2} of EI under GP_1 = Lambda1 GP on history + (x_next, fantasy)."""
    X = _as_batch(x_next, ctx.target_model.dim)
    W = np.array([[float(fantasy_value)]])
    if return_argmax:
        v, xs = _lookahead_values(ctx, X, W, return_argmax=True)
        return float(v[0, 0]), xs[0, 0].copy()
    return float(_lookahead_values(ctx, X, W)[0, 0])


def two_opt_value(ctx: AcqContext, x) -> float:
    return float(two_opt_values(ctx, x)[0])


def baymoth_value(ctx: AcqContext, env, alpha: float, x, return_std: bool = False):
    ei0, Z = _baymoth_terms(ctx, env, alpha, x)
    value = float(ei0[0] + Z[0].mean())
    if return_std:
        return value, float(Z[0].std(ddof=1)) if Z.shape[1] > 1 else 0.0
    return value


def pattern_search(fn, x0: np.ndarray, f0: np.ndarray, cfg: OptimizerConfig):
    """Compass search on [0, 1]^d for a batch of independent problems.

    ``fn(points, ids)`` evaluates ``points`` of shape (N, k, d) for the
    problems ``ids`` and returns (N, k) values.  A problem moves to its best
    compass neighbour when that improves on the current value, otherwise its
    step halves; it stops once the step drops below ``cfg.step_tolerance``.
    """
    x = np.array(x0, dtype=float)
    fx = np.array(f0, dtype=float)
    B, d = x.shape
    step = np.full(B, cfg.initial_step)
    dirs = np.vstack([np.eye(d), -np.eye(d)])
    for _ in range(cfg.max_iters):
        ids = np.flatnonzero(step >= cfg.step_tolerance)
        if ids.size == 0:
            break
        trial = np.clip(x[ids, None, :] + step[ids, None, None] * dirs[None], 0.0, 1.0)
        ft = np.asarray(fn(trial, ids), dtype=float)
        j = np.argmax(ft, axis=1)
        fbest = ft[np.arange(ids.size), j]
        up = fbest > fx[ids]
        moved = ids[up]
        x[moved] = trial[up, j[up]]
        fx[moved] = fbest[up]
        step[ids[~up]] *= 0.5
    return x, fx


def _lexi_best(points: np.ndarray, values: np.ndarray) -> int:
    top = np.flatnonzero(values == values.max())
    if top.size == 1:
        return int(top[0])
    sub = points[top]
    order = np.lexsort(sub.T[::-1])
    return int(top[order[0]])


def maximize_acquisition(value_fn, domain: Domain, cfg: OptimizerConfig,
                         rng) -> Tuple[np.ndarray, float]:
    """Multi-restart compass search over the unit box of ``domain``.

    A scrambled Sobol pool is scored first; the best ``cfg.restarts`` pool
    points seed local searches.  Ties in the final value are broken towards
    the lexicographically smallest point.
    """
    dim = domain.dim
    pool = sobol_points(cfg.candidate_pool, dim, rng)
    pool_vals = np.asarray(value_fn(pool), dtype=float).reshape(-1)
    order = np.argsort(-pool_vals, kind="stable")[: cfg.restarts]

    def batched(P, ids):
        return np.asarray(value_fn(P.reshape(-1, dim)), dtype=float).reshape(P.shape[0], -1)

    xs, fs = pattern_search(batched, pool[order], pool_vals[order], cfg)
    pts = np.vstack([pool, xs])
    vals = np.concatenate([pool_vals, fs])
    i = _lexi_best(pts, vals)
    return pts[i].copy(), float(vals[i])
