"""JSON run configuration: policy settings, experiment plan and an optional domain.

Every key is optional; omitted keys take the defaults printed by
``baymoth defaults``.  Unknown keys are rejected by name.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .acquisition import OptimizerConfig
from .benchmark import Ablation, ExperimentPlan, TaskSpec
from .gp import Domain, KernelConfig
from .policy import PolicyConfig

CONFIG_VERSION = 1

_TOP = {"version", "policy", "plan", "domain"}
_POLICY = {"alpha", "gamma", "mc_samples", "budget", "noise", "seed", "reference_size",
           "kernels", "optimizer", "inner_optimizer"}
_KERNELS = {"lambda0", "lambda1", "source", "comparison"}
_KERNEL = {f.name for f in dataclasses.fields(KernelConfig)}
_OPTIMIZER = {f.name for f in dataclasses.fields(OptimizerConfig)}
_PLAN = {"task_sets", "policies", "seeds", "seed_offset", "budget", "ablation", "workers"}
_TASK = {f.name for f in dataclasses.fields(TaskSpec)}
_ABLATION = {"axis", "values"}
_DOMAIN = {"bounds"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    policy: PolicyConfig
    plan: ExperimentPlan
    domain: Optional[Domain] = None


def _check(d, allowed, where: str) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    return d


def _policy(d: dict) -> PolicyConfig:
    _check(d, _POLICY, "policy")
    for name, kd in _check(d.get("kernels", {}), _KERNELS, "policy.kernels").items():
        _check(kd, _KERNEL, f"policy.kernels.{name}")
    for key in ("optimizer", "inner_optimizer"):
        if key in d:
            _check(d[key], _OPTIMIZER, f"policy.{key}")
    return PolicyConfig.from_dict(d)


def _plan(d: dict, policy: PolicyConfig, base_dir: Path) -> ExperimentPlan:
    _check(d, _PLAN, "plan")
    kw = {k: d[k] for k in ("seeds", "seed_offset", "workers") if k in d}
    kw["budget"] = d.get("budget", policy.budget)
    if "policies" in d:
        kw["policies"] = tuple(d["policies"])
    if "task_sets" in d:
        specs = []
        for i, td in enumerate(d["task_sets"]):
            td = dict(_check(td, _TASK, f"plan.task_sets[{i}]"))
            for key in ("objective", "sources"):
                if td.get(key) is not None:
                    td[key] = str(base_dir / td[key])
            specs.append(TaskSpec(**td))
        kw["task_sets"] = tuple(specs)
    if d.get("ablation") is not None:
        ad = _check(d["ablation"], _ABLATION, "plan.ablation")
        if "axis" not in ad or "values" not in ad:
            raise ConfigError("plan.ablation needs 'axis' and 'values'")
        kw["ablation"] = Ablation(ad["axis"], tuple(ad["values"]))
    return ExperimentPlan(policy=policy.replace(budget=kw["budget"]), **kw)


def parse_config(doc, base_dir=".") -> RunConfig:
    """Validate a parsed JSON document and fill in defaults."""
    _check(doc, _TOP, "config")
    version = doc.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r} (expected {CONFIG_VERSION})")
    try:
        policy = _policy(doc.get("policy", {}))
        plan = _plan(doc.get("plan", {}), policy, Path(base_dir))
        domain = None
        if doc.get("domain") is not None:
            dd = _check(doc["domain"], _DOMAIN, "domain")
            domain = Domain(np.array(dd["bounds"], dtype=float))
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    return RunConfig(plan.policy, plan, domain)


def load_config(path=None) -> RunConfig:
    if path is None:
        return parse_config({})
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return parse_config(doc, path.parent)


def default_config() -> dict:
    """The full default document, every key spelled out."""
    policy = PolicyConfig()
    plan = ExperimentPlan()
    return {
        "version": CONFIG_VERSION,
        "policy": policy.to_dict(),
        "plan": {
            "task_sets": [dataclasses.asdict(t) for t in plan.task_sets],
            "policies": list(plan.policies),
            "seeds": plan.seeds,
            "seed_offset": plan.seed_offset,
            "budget": plan.budget,
            "ablation": None,
            "workers": plan.workers,
        },
        "domain": None,
    }
