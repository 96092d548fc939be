"""Sequential decision loop: BayMOTH, its 2-OPT fallback and the baselines.

Randomness is split into named substreams keyed by ``(seed, stream, step)``.
Two policies that share a seed therefore draw the same initial point, and
BayMOTH's fallback branch sees exactly the Monte Carlo draws and optimizer
seeds that plain 2-OPT would, which makes the two bitwise identical whenever
no source clears the threshold.
"""
from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from .acquisition import (
    INNER_OPTIMIZER,
    AcqContext,
    OptimizerConfig,
    baymoth_values,
    expected_improvement,
    maximize_acquisition,
    two_opt_values,
)
from .gp import Dataset, Domain, KernelConfig, fit_gp, predict, standardize
from .meta import (
    VirtualEnvironment,
    env_by_id,
    make_reference_set,
    score_environments,
    select_environment,
)
from .profiling import ACQ_EVAL, NULL_TIMER, PROPOSAL

POLICIES = ("baymoth", "two_opt", "gpbo_ei", "random", "oracle_gated")
_STREAMS = {"init": 1, "scoring": 2, "mc": 3, "optimizer": 4, "random": 5}


def substream(seed: int, name: str, step: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), _STREAMS[name], int(step)]))


@dataclass(frozen=True)
class PolicyConfig:
    alpha: float = 0.5
    gamma: float = 0.7
    mc_samples: int = 5
    budget: int = 10
    noise: float = 1e-6
    lambda0: KernelConfig = KernelConfig(0.2)
    lambda1: KernelConfig = KernelConfig(0.05)
    source: KernelConfig = KernelConfig(0.05)
    comparison: KernelConfig = KernelConfig(0.2)
    optimizer: OptimizerConfig = OptimizerConfig()
    inner_optimizer: OptimizerConfig = INNER_OPTIMIZER
    reference_size: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def replace(self, **changes) -> "PolicyConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha, "gamma": self.gamma, "mc_samples": self.mc_samples,
            "budget": self.budget, "noise": self.noise, "seed": self.seed,
            "reference_size": self.reference_size,
            "kernels": {name: getattr(self, name).to_dict()
                        for name in ("lambda0", "lambda1", "source", "comparison")},
            "optimizer": dataclasses.asdict(self.optimizer),
            "inner_optimizer": dataclasses.asdict(self.inner_optimizer),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        d = dict(d)
        kernels = d.pop("kernels", {}) or {}
        kw = {k: KernelConfig(**v) for k, v in kernels.items()}
        if "optimizer" in d:
            kw["optimizer"] = OptimizerConfig(**d.pop("optimizer"))
        if "inner_optimizer" in d:
            kw["inner_optimizer"] = OptimizerConfig(**d.pop("inner_optimizer"))
        return cls(**d, **kw)


@dataclass
class StepRecord:
    step: int
    x: np.ndarray
    y: float = math.nan
    branch: str = "init"
    selected_env: Optional[int] = None
    ncc_scores: np.ndarray = field(default_factory=lambda: np.zeros(0))
    proposal_wall_time: float = 0.0
    off_policy: bool = False

    @property
    def ncc_max(self) -> float:
        return float(self.ncc_scores.max()) if self.ncc_scores.size else math.nan


@dataclass
class RunTrajectory:
    policy_name: str
    seed: int
    f_star: float
    steps: List[StepRecord] = field(default_factory=list)
    regret_curve: List[float] = field(default_factory=list)
    task_label: str = ""
    failed: bool = False
    error: str = ""


@dataclass(frozen=True)
class OracleLabels:
    """Ground-truth routing for the oracle-gated comparator."""

    true_branch: str
    true_source: Optional[int] = None

    def __post_init__(self):
        if self.true_branch not in ("meta", "fallback"):
            raise ValueError("true_branch must be 'meta' or 'fallback'")
        if (self.true_branch == "meta") != (self.true_source is not None):
            raise ValueError("true_source is required exactly when true_branch is 'meta'")


@dataclass(frozen=True)
class Objective:
    """A black-box task on the unit box with a known optimum value."""

    fn: Callable[[np.ndarray], float]
    dim: int
    f_star: float
    name: str = "task"
    labels: Optional[OracleLabels] = None

    def __call__(self, x) -> float:
        return float(self.fn(np.asarray(x, dtype=float)))


def observe(history: Dataset, x, y: float) -> Dataset:
    if not np.isfinite(y):
        raise ValueError(f"observation must be finite, got {y!r}")
    x = np.asarray(x, dtype=float).reshape(-1)
    if len(history) == 0 and history.dim != x.size:
        history = Dataset.empty(x.size)
    return history.append(x, y)


def _fit_target(history: Dataset, cfg: PolicyConfig):
    z, mean, std = standardize(history.values)
    return fit_gp(history.with_values(z), cfg.lambda0, cfg.noise), mean, std


def _context(history: Dataset, cfg: PolicyConfig, step: int, timer) -> AcqContext:
    model, mean, std = _fit_target(history, cfg)
    return AcqContext(
        target_model=model,
        incumbent=float(model.data.values.max()),
        lambda1_kernel=cfg.lambda1,
        noise=cfg.noise,
        inner_optimizer=cfg.inner_optimizer,
        mc_samples=cfg.mc_samples,
        seed=substream(cfg.seed, "mc", step),
        y_mean=mean,
        y_std=std,
        timer=timer,
    )


def _maximize(fn, dim: int, cfg: PolicyConfig, step: int, timer) -> np.ndarray:
    def timed(X):
        with timer.stage(ACQ_EVAL):
            return fn(X)

    x, _ = maximize_acquisition(timed, Domain.unit(dim), cfg.optimizer,
                                substream(cfg.seed, "optimizer", step))
    return x


def reference_seed(cfg: PolicyConfig) -> int:
    return int(np.random.SeedSequence([cfg.seed, _STREAMS["scoring"]]).generate_state(1)[0])


def propose_two_opt(history: Dataset, cfg: PolicyConfig, step: int, timer=NULL_TIMER):
    t0 = time.perf_counter()
    with timer.stage(PROPOSAL):
        ctx = _context(history, cfg, step, timer)
        x = _maximize(lambda X: two_opt_values(ctx, X), history.dim, cfg, step, timer)
    return x, StepRecord(step, x, branch="fallback",
                         proposal_wall_time=time.perf_counter() - t0)


def propose_baymoth(history: Dataset, envs: Sequence[VirtualEnvironment], cfg: PolicyConfig,
                    step: int, timer=NULL_TIMER, forced_source: Optional[int] = None,
                    use_oracle: bool = False):
    """One BayMOTH proposal for step ``step`` (1-based index of the next sample).

    Scores every environment against the current target GP and optimizes the
    meta-informed acquisition for the best one when its score strictly
    exceeds ``cfg.gamma``; otherwise optimizes the 2-OPT fallback.  With
    ``use_oracle`` the gate is replaced by ``forced_source`` (None means
    fallback).
    """
    if len(history) < 1:
        raise ValueError("propose_baymoth needs at least one observation")
    t0 = time.perf_counter()
    dim = history.dim
    with timer.stage(PROPOSAL):
        ctx = _context(history, cfg, step, timer)
        if use_oracle:
            scores = np.zeros(0)
            selected = forced_source
        else:
            try:
                ref = make_reference_set(dim, reference_seed(cfg), cfg.reference_size)
                scores = score_environments(ctx.target_model, envs, ref, history.points,
                                            cfg.comparison, cfg.noise, timer=timer)
                selected = select_environment(scores, envs, cfg.gamma).selected
            except Exception:  # scoring must never abort a run
                scores, selected = np.zeros(len(envs)), None
        if selected is not None:
            env = env_by_id(envs, selected)
            x = _maximize(lambda X: baymoth_values(ctx, env, cfg.alpha, X), dim, cfg, step, timer)
        else:
            x = _maximize(lambda X: two_opt_values(ctx, X), dim, cfg, step, timer)
    rec = StepRecord(step, x, branch="meta" if selected is not None else "fallback",
                     selected_env=selected, ncc_scores=np.asarray(scores, dtype=float),
                     proposal_wall_time=time.perf_counter() - t0)
    return x, rec


def propose_gpbo_ei(history: Dataset, cfg: PolicyConfig, step: int, timer=NULL_TIMER):
    t0 = time.perf_counter()
    with timer.stage(PROPOSAL):
        model, _, _ = _fit_target(history, cfg)
        inc = float(model.data.values.max())

        def ei(X):
            mu, var = predict(model, X)
            return expected_improvement(mu, np.sqrt(var), inc)

        x = _maximize(ei, history.dim, cfg, step, timer)
    return x, StepRecord(step, x, branch="baseline",
                         proposal_wall_time=time.perf_counter() - t0)


def initial_point(cfg: PolicyConfig, dim: int) -> np.ndarray:
    return substream(cfg.seed, "init").uniform(size=dim)


def propose(policy: str, history: Dataset, envs, cfg: PolicyConfig, step: int,
            labels: Optional[OracleLabels] = None, timer=NULL_TIMER):
    if policy == "baymoth":
        return propose_baymoth(history, envs, cfg, step, timer)
    if policy == "two_opt":
        return propose_two_opt(history, cfg, step, timer)
    if policy == "gpbo_ei":
        return propose_gpbo_ei(history, cfg, step, timer)
    if policy == "random":
        x = substream(cfg.seed, "random", step).uniform(size=history.dim)
        return x, StepRecord(step, x, branch="baseline")
    if policy == "oracle_gated":
        if labels is None:
            raise ValueError("oracle_gated needs oracle labels for the task")
        return propose_baymoth(history, envs, cfg, step, timer,
                               forced_source=labels.true_source, use_oracle=True)
    raise ValueError(f"unknown policy {policy!r}; choose from {POLICIES}")


def simple_regret(f_star: float, best: float) -> float:
    r = f_star - best
    return 0.0 if r <= 1e-9 else float(r)


def run_policy(task: Objective, envs: Sequence[VirtualEnvironment], cfg: PolicyConfig,
               policy: str = "baymoth", timer=NULL_TIMER) -> RunTrajectory:
    """Run ``cfg.budget`` evaluations of ``task`` starting from one uniform random point."""
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; choose from {POLICIES}")
    traj = RunTrajectory(policy, cfg.seed, task.f_star, task_label=task.name)
    history = Dataset.empty(task.dim)
    best = -math.inf
    for t in range(1, cfg.budget + 1):
        try:
            if t == 1:
                x = initial_point(cfg, task.dim)
                rec = StepRecord(1, x)
            else:
                x, rec = propose(policy, history, envs, cfg, t, task.labels, timer)
            y = task(x)
            history = observe(history, x, y)
        except Exception as exc:
            traj.failed = True
            traj.error = f"step {t}: {type(exc).__name__}: {exc}"
            break
        rec.y = y
        best = max(best, y)
        traj.steps.append(rec)
        traj.regret_curve.append(simple_regret(task.f_star, best))
    return traj


SESSION_FORMAT = "baymoth-session"
SESSION_VERSION = 1


class SessionError(RuntimeError):
    pass


@dataclass
class SessionState:
    """Persistent ask/tell state.  Points are stored on the unit box."""

    config: PolicyConfig
    domain: Domain
    history: Dataset
    pending: Optional[np.ndarray] = None
    records: List[dict] = field(default_factory=list)

    @classmethod
    def new(cls, config: PolicyConfig, domain: Domain) -> "SessionState":
        return cls(config, domain, Dataset.empty(domain.dim))

    @property
    def step(self) -> int:
        return len(self.history)

    def save(self, path) -> None:
        payload = {
            "format": SESSION_FORMAT,
            "version": SESSION_VERSION,
            "config": self.config.to_dict(),
            "bounds": self.domain.bounds.tolist(),
            "history": {"points": self.history.points.tolist(),
                        "values": self.history.values.tolist()},
            "pending": None if self.pending is None else self.pending.tolist(),
            "records": self.records,
        }
        Path(path).write_text(json.dumps(payload, indent=1))

    @classmethod
    def load(cls, path) -> "SessionState":
        payload = json.loads(Path(path).read_text())
        if payload.get("format") != SESSION_FORMAT:
            raise SessionError(f"{path}: not a session file")
        if payload.get("version") != SESSION_VERSION:
            raise SessionError(f"{path}: unsupported session version {payload.get('version')}")
        domain = Domain(np.array(payload["bounds"], dtype=float))
        hist = payload["history"]
        history = Dataset(np.array(hist["points"], dtype=float).reshape(-1, domain.dim),
                          hist["values"])
        pending = payload["pending"]
        return cls(PolicyConfig.from_dict(payload["config"]), domain, history,
                   None if pending is None else np.array(pending, dtype=float),
                   list(payload["records"]))


def ask(state: SessionState, envs: Sequence[VirtualEnvironment], timer=NULL_TIMER):
    """Return the next proposal in domain units (repeated asks return the pending one)."""
    if state.pending is not None:
        return state.domain.from_unit(state.pending), state.records[-1]
    step = state.step + 1
    if state.step == 0:
        x = initial_point(state.config, state.domain.dim)
        info = {"step": step, "branch": "init", "selected_env": None, "ncc_scores": []}
    else:
        x, rec = propose_baymoth(state.history, envs, state.config, step, timer)
        info = {"step": step, "branch": rec.branch, "selected_env": rec.selected_env,
                "ncc_scores": rec.ncc_scores.tolist()}
    state.pending = np.asarray(x, dtype=float)
    state.records.append(info)
    return state.domain.from_unit(state.pending), info


def tell(state: SessionState, x, y: float) -> SessionState:
    """Record an observation.  Returns the state; an ``x`` that differs from the
    pending proposal is accepted and flagged as off-policy."""
    if state.pending is None:
        raise SessionError("tell called without a pending ask")
    y = float(y)
    if not np.isfinite(y):
        raise SessionError(f"observation must be finite, got {y!r}")
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != state.domain.dim:
        raise SessionError(f"expected {state.domain.dim} coordinates, got {x.size}")
    u = state.domain.to_unit(x)
    off = not np.allclose(u, state.pending, rtol=0.0, atol=1e-9)
    state.history = observe(state.history, u, y)
    state.records[-1].update({"y": y, "off_policy": bool(off), "x": u.tolist()})
    state.pending = None
    return state
