"""Source-task environments and NCC-based source selection."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .acquisition import sobol_points
from .gp import Dataset, GPFitError, GPModel, KernelConfig, fit_gp, predict, standardize
from .profiling import COMPARISON_UPDATE, NULL_TIMER

SNAPSHOT_FORMAT = "baymoth-environments"
SNAPSHOT_VERSION = 1
TIE_TOL = 1e-12


@dataclass(frozen=True)
class VirtualEnvironment:
    id: int
    model: GPModel
    y_mean: float
    y_std: float
    raw: Dataset

    @property
    def dim(self) -> int:
        return self.model.dim


@dataclass(frozen=True)
class ReferenceSet:
    points: np.ndarray
    seed: int

    def __post_init__(self):
        if self.points.shape[0] < 2:
            raise ValueError("reference set needs at least 2 points")


@dataclass(frozen=True)
class SelectionResult:
    scores: np.ndarray
    selected: Optional[int]
    threshold: float


def make_reference_set(dim: int, seed: int, size: Optional[int] = None) -> ReferenceSet:
    size = 128 * dim if size is None else size
    return ReferenceSet(sobol_points(size, dim, np.random.default_rng(seed)), seed)


def build_environments(meta_datasets: Sequence[Dataset], kernel: KernelConfig, noise: float,
                       ids: Optional[Sequence[int]] = None) -> List[VirtualEnvironment]:
    """Fit one standardized GP per source dataset."""
    ids = list(range(len(meta_datasets))) if ids is None else list(ids)
    if len(set(ids)) != len(ids):
        raise ValueError("environment ids must be unique")
    dims = {ds.dim for ds in meta_datasets}
    if len(dims) > 1:
        raise ValueError(f"source datasets disagree on dimension: {sorted(dims)}")
    envs = []
    for chi, ds in zip(ids, meta_datasets):
        if len(ds) == 0:
            raise GPFitError(f"source {chi}: empty dataset")
        z, mean, std = standardize(ds.values)
        try:
            model = fit_gp(ds.with_values(z), kernel, noise)
        except GPFitError as exc:
            raise GPFitError(f"source {chi}: {exc}") from exc
        envs.append(VirtualEnvironment(chi, model, mean, std, ds))
    return envs


def virtual_history(env: VirtualEnvironment, history_points) -> Dataset:
    """Re-evaluate the history locations through the environment's posterior mean."""
    pts = np.atleast_2d(np.asarray(history_points, dtype=float))
    if pts.shape[0] == 0:
        raise ValueError("history must be non-empty")
    mean, _ = predict(env.model, pts)
    return Dataset(pts, mean)


def ncc(a, b) -> float:
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("ncc needs at least 2 values")
    ac = a - a.mean()
    bc = b - b.mean()
    na = np.linalg.norm(ac)
    nb = np.linalg.norm(bc)
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return float(np.clip(np.dot(ac, bc) / (na * nb), -1.0, 1.0))


def score_environments(target: GPModel, envs: Sequence[VirtualEnvironment], ref: ReferenceSet,
                       history_points, comparison_kernel: KernelConfig, noise: float,
                       timer=NULL_TIMER) -> np.ndarray:
    """NCC between the target mean and each environment's comparison-GP mean on ``ref``."""
    if not envs:
        return np.zeros(0)
    mu_t, _ = predict(target, ref.points)
    scores = np.zeros(len(envs))
    for i, env in enumerate(envs):
        try:
            vh = virtual_history(env, history_points)
            z, _, _ = standardize(vh.values)
            with timer.stage(COMPARISON_UPDATE):
                comp = fit_gp(vh.with_values(z), comparison_kernel, noise)
            mu_c, _ = predict(comp, ref.points)
            scores[i] = ncc(mu_t, mu_c)
        except (GPFitError, ValueError, np.linalg.LinAlgError) as exc:
            warnings.warn(f"scoring source {env.id} failed ({exc}); score set to 0",
                          RuntimeWarning, stacklevel=2)
            scores[i] = 0.0
    return scores


def select_environment(scores, envs: Sequence[VirtualEnvironment],
                       gamma: float) -> SelectionResult:
    scores = np.asarray(scores, dtype=float)
    if len(scores) != len(envs):
        raise ValueError("one score per environment is required")
    selected = None
    if scores.size and scores.max() > gamma:
        # scores within TIE_TOL of the max are ties; with two observations many
        # sources reach NCC = 1 up to rounding
        best = np.flatnonzero(scores >= scores.max() - TIE_TOL)
        selected = min(envs[i].id for i in best)
    return SelectionResult(scores=scores, selected=selected, threshold=float(gamma))


def env_by_id(envs: Sequence[VirtualEnvironment], chi: int) -> VirtualEnvironment:
    for env in envs:
        if env.id == chi:
            return env
    raise KeyError(f"no environment with id {chi}")


def save_environments(envs: Sequence[VirtualEnvironment], path, bounds=None) -> None:
    """Write a versioned JSON snapshot.  ``bounds`` records the native box the
    unit-scaled source points came from, if any."""
    payload = {
        "format": SNAPSHOT_FORMAT,
        "version": SNAPSHOT_VERSION,
        "bounds": None if bounds is None else np.asarray(bounds, dtype=float).tolist(),
        "environments": [
            {
                "id": env.id,
                "kernel": env.model.kernel.to_dict(),
                "noise": env.model.noise,
                "standardization": {"mean": env.y_mean, "std": env.y_std},
                "points": env.raw.points.tolist(),
                "values": env.raw.values.tolist(),
            }
            for env in envs
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1))


def _read_snapshot(path) -> dict:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: cannot read snapshot ({exc})") from exc
    if not isinstance(payload, dict) or payload.get("format") != SNAPSHOT_FORMAT:
        raise ValueError(f"{path}: not an environment snapshot")
    if payload.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {payload.get('version')}")
    return payload


def snapshot_bounds(path) -> Optional[np.ndarray]:
    bounds = _read_snapshot(path).get("bounds")
    return None if bounds is None else np.array(bounds, dtype=float)


def load_environments(path) -> List[VirtualEnvironment]:
    payload = _read_snapshot(path)
    envs = []
    for item in payload["environments"]:
        kernel = KernelConfig(**item["kernel"])
        ds = Dataset(np.array(item["points"], dtype=float).reshape(len(item["values"]), -1),
                     item["values"])
        (env,) = build_environments([ds], kernel, item["noise"], ids=[item["id"]])
        envs.append(env)
    return envs
