"""Synthetic relatedness-controlled tasks and the multi-seed experiment driver.

Source and test functions are random-feature approximations of draws from an
RBF Gaussian process.  The test function mixes one planted source with an
independent draw, ``rho * source + sqrt(1 - rho^2) * other``, and ``rho`` is
bisected until the grid NCC between test and planted source hits the band
for the requested relatedness label.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .gp import Dataset, Domain
from .meta import VirtualEnvironment, build_environments, ncc
from .policy import POLICIES, Objective, OracleLabels, PolicyConfig, RunTrajectory, run_policy

LABELS = ("high", "medium", "moderate", "low")
# (lower, upper, bisection target) on the largest realized NCC
BANDS = {
    "high": (0.80, 0.90, 0.85),
    "medium": (0.50, 0.70, 0.60),
    "moderate": (0.75, 0.85, 0.82),
    "low": (-1.0, 0.20, 0.10),
}
GENERATOR_LENGTH_SCALE = 0.2
ORACLE_NCC = 0.7
TASK_FORMAT = "baymoth-taskset"
TASK_VERSION = 1


class GeneratorError(RuntimeError):
    pass


@dataclass(frozen=True)
class RandomFeatureFunction:
    """sqrt(2/D) * sum_i a_i cos(w_i . x + b_i): an approximate RBF-GP sample."""

    weights: np.ndarray
    phases: np.ndarray
    amplitudes: np.ndarray

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        D = self.amplitudes.shape[0]
        return math.sqrt(2.0 / D) * np.cos(X @ self.weights.T + self.phases) @ self.amplitudes


def draw_gp_function(rng: np.random.Generator, dim: int,
                     length_scale: float = GENERATOR_LENGTH_SCALE,
                     n_features: int = 1024) -> RandomFeatureFunction:
    W = rng.standard_normal((n_features, dim)) / length_scale
    b = rng.uniform(0.0, 2.0 * math.pi, n_features)
    a = rng.standard_normal(n_features)
    return RandomFeatureFunction(W, b, a)


@dataclass(frozen=True)
class SyntheticFunction:
    """Value ``clip((sum_j c_j (f_j(x) - m_j) / s_j - lo) / (hi - lo), 0) ** power``."""

    components: Tuple[RandomFeatureFunction, ...]
    coefs: Tuple[float, ...]
    centers: Tuple[float, ...]
    scales: Tuple[float, ...]
    lo: float = 0.0
    hi: float = 1.0
    power: float = 1.0

    def raw(self, X) -> np.ndarray:
        out = 0.0
        for f, c, m, s in zip(self.components, self.coefs, self.centers, self.scales):
            out = out + c * (f(X) - m) / s
        return out

    def values(self, X) -> np.ndarray:
        return self._finish(self.raw(X))

    def _finish(self, raw: np.ndarray) -> np.ndarray:
        v = np.maximum((raw - self.lo) / (self.hi - self.lo), 0.0)
        return v if self.power == 1.0 else v ** self.power

    def __call__(self, x) -> float:
        return float(self.values(np.asarray(x, dtype=float).reshape(1, -1))[0])


def scan_points(dim: int, dense: bool = False) -> np.ndarray:
    """Evaluation grid: regular for dim <= 2, scrambled Sobol otherwise."""
    if dim == 1:
        return np.linspace(0.0, 1.0, 2001)[:, None]
    if dim == 2:
        g = np.linspace(0.0, 1.0, 201 if dense else 101)
        return np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    return qmc.Sobol(dim, scramble=True, seed=12345).random_base2(17 if dense else 14)


def _refine_max(fn, scan: np.ndarray, vals: np.ndarray, starts: int = 5):
    dim = scan.shape[1]
    best_x, best_v = scan[int(np.argmax(vals))], float(vals.max())
    for i in np.argsort(-vals)[:starts]:
        res = minimize(lambda x: -float(fn(x.reshape(1, -1))[0]), scan[i], method="L-BFGS-B",
                       bounds=[(0.0, 1.0)] * dim)
        if -res.fun > best_v:
            best_x, best_v = np.clip(res.x, 0.0, 1.0), float(-res.fun)
    return best_x, best_v


def _normalize(fn: SyntheticFunction, raw_scan: np.ndarray, scan: np.ndarray,
               power_quantile: Optional[float] = None, refine: bool = False):
    """Rescale ``fn`` to [0, 1] over the scan; returns (fn, argmax, values on scan).

    With ``refine`` the maximum is polished off-grid so that f_star is exactly 1.
    A power transform can widen the near-optimal region: the ``power_quantile``
    quantile of values is mapped to 0.9.
    """
    if refine:
        argmax, hi = _refine_max(fn.raw, scan, raw_scan)
    else:
        argmax, hi = scan[int(np.argmax(raw_scan))], float(raw_scan.max())
    fn = dataclasses.replace(fn, lo=float(raw_scan.min()), hi=hi)
    vals = fn._finish(raw_scan)
    if power_quantile is not None:
        q = float(np.quantile(vals, power_quantile))
        if 0.0 < q < 0.9:
            fn = dataclasses.replace(fn, power=min(1.0, math.log(0.9) / math.log(q)))
            vals = vals ** fn.power
    return fn, argmax, vals


@dataclass
class TaskSet:
    dim: int
    label: str
    seed: int
    sources: List[Tuple[Dataset, SyntheticFunction]]
    test: SyntheticFunction
    f_star: float
    argmax: np.ndarray
    realized_ncc: np.ndarray
    rho: float
    planted: int

    @property
    def name(self) -> str:
        return f"{self.label}-d{self.dim}-s{self.seed}"

    def labels(self) -> OracleLabels:
        if self.realized_ncc[self.planted] >= ORACLE_NCC:
            return OracleLabels("meta", self.planted)
        return OracleLabels("fallback")

    def objective(self) -> Objective:
        return Objective(self.test, self.dim, self.f_star, self.name, self.labels())

    def source_datasets(self) -> List[Dataset]:
        return [ds for ds, _ in self.sources]

    def to_dict(self) -> dict:
        return {
            "format": TASK_FORMAT, "version": TASK_VERSION, "label": self.label,
            "dim": self.dim, "n_sources": len(self.sources), "seed": self.seed,
            "rho": self.rho, "planted": self.planted, "f_star": self.f_star,
            "argmax": self.argmax.tolist(), "realized_ncc": self.realized_ncc.tolist(),
            "sources": [{"points": ds.points.tolist(), "values": ds.values.tolist()}
                        for ds, _ in self.sources],
        }



def generate_task_set(dim: int, n_sources: int, label: str, seed: int,
                      rho: Optional[float] = None, points_per_dim: int = 50,
                      max_attempts: int = 20) -> TaskSet:
    """Sources plus one test function whose largest source NCC lands in ``label``'s band.

    The independent part of the test function is residualized against every
    source on the scan, so its only correlation with source j is
    ``rho * ncc(source_planted, source_j)``.
    """
    if not 1 <= dim <= 10:
        raise ValueError("dim must be in 1..10")
    if n_sources < 1:
        raise ValueError("n_sources must be >= 1")
    if label not in BANDS:
        raise ValueError(f"label must be one of {LABELS}")
    if rho is not None and not -1.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [-1, 1]")
    lo_band, hi_band, target = BANDS[label]
    ss = np.random.SeedSequence(seed)
    src_seq, pick_seq, mix_seq, pts_seq = ss.spawn(4)
    scan = scan_points(dim)
    src_fns = [draw_gp_function(np.random.default_rng(s), dim) for s in src_seq.spawn(n_sources)]
    src_scan = [f(scan) for f in src_fns]
    centers = [float(v.mean()) for v in src_scan]
    scales = [float(v.std()) for v in src_scan]
    Z = np.column_stack([(v - m) / s for v, m, s in zip(src_scan, centers, scales)])
    sources_norm, src_vals = [], []
    for j, f in enumerate(src_fns):
        fn, _, vals = _normalize(SyntheticFunction((f,), (1.0,), (centers[j],), (scales[j],)),
                                 Z[:, j], scan)
        sources_norm.append(fn)
        src_vals.append(vals)
    planted = int(np.random.default_rng(pick_seq).integers(n_sources))
    power_q = 0.72 if label == "moderate" else None

    diagnostics = []
    chosen = None
    for attempt, mseq in enumerate(mix_seq.spawn(max_attempts)):
        other = draw_gp_function(np.random.default_rng(mseq), dim)
        ov = other(scan)
        g_mean, g_std = float(ov.mean()), float(ov.std())
        g = (ov - g_mean) / g_std
        beta = np.linalg.lstsq(Z, g, rcond=None)[0]
        resid_std = float((g - Z @ beta).std())
        if resid_std < 1e-6:
            diagnostics.append(f"attempt {attempt}: independent draw lies in the source span")
            continue
        comps = (other, *src_fns)
        base = SyntheticFunction(comps, (), (g_mean, *centers), (g_std, *scales))
        basis = np.column_stack([g, Z])

        def build(r, refine=False, base=base, basis=basis, beta=beta, resid_std=resid_std):
            w = math.sqrt(max(1.0 - r * r, 0.0)) / resid_std
            coefs = np.concatenate([[w], -w * beta])
            coefs[1 + planted] += r
            fn = dataclasses.replace(base, coefs=tuple(float(c) for c in coefs))
            return _normalize(fn, basis @ coefs, scan, power_q, refine)

        if rho is not None:
            chosen = build(float(rho), refine=True) + (float(rho),)
            break
        a, b = -1.0, 1.0
        found = None
        for _ in range(50):
            mid = 0.5 * (a + b)
            c = ncc(build(mid)[2], src_vals[planted])
            if abs(c - target) < 0.005:
                found = mid
                break
            if c < target:
                a = mid
            else:
                b = mid
        if found is None:
            diagnostics.append(f"attempt {attempt}: bisection did not converge (last ncc {c:.3f})")
            continue
        candidate = build(found, refine=True) + (found,)
        realized = _test_ncc(candidate[2], src_vals)
        if lo_band <= realized.max() <= hi_band:
            chosen = candidate
            break
        diagnostics.append(f"attempt {attempt}: max ncc {realized.max():.3f} outside band")
    if chosen is None:
        raise GeneratorError(f"could not generate a '{label}' task set (seed {seed}): "
                             + "; ".join(diagnostics))
    test, argmax, test_vals, r = chosen
    realized = _test_ncc(test_vals, src_vals)
    sources = []
    for fn, s in zip(sources_norm, pts_seq.spawn(n_sources)):
        pts = _sobol(points_per_dim * dim, dim, s)
        sources.append((Dataset(pts, fn.values(pts)), fn))
    return TaskSet(dim, label, seed, sources, test, test(argmax), argmax, realized, float(r),
                   planted)


def _test_ncc(test_vals: np.ndarray, src_vals: Sequence[np.ndarray]) -> np.ndarray:
    return np.array([ncc(test_vals, sv) for sv in src_vals])


def _sobol(n: int, dim: int, seq) -> np.ndarray:
    m = int(math.ceil(math.log2(n)))
    return qmc.Sobol(dim, scramble=True, seed=np.random.default_rng(seq)).random_base2(m)[:n]


def save_task_set(ts: TaskSet, path) -> None:
    Path(path).write_text(json.dumps(ts.to_dict(), indent=1))


def load_task_set(path) -> TaskSet:
    """Regenerate a task set from its snapshot and check it matches bit for bit."""
    d = json.loads(Path(path).read_text())
    if d.get("format") != TASK_FORMAT or d.get("version") != TASK_VERSION:
        raise ValueError(f"{path}: not a task-set snapshot of version {TASK_VERSION}")
    ts = generate_task_set(d["dim"], d["n_sources"], d["label"], d["seed"])
    if ts.to_dict() != d:
        raise ValueError(f"{path}: regenerated task set differs from the snapshot")
    return ts


class TabularFunction:
    """Nearest-neighbour lookup over normalized configurations (ties: lowest row)."""

    def __init__(self, configs: np.ndarray, values: np.ndarray):
        self.configs = configs
        self.values = values

    def __call__(self, u) -> float:
        d2 = np.sum((self.configs - np.asarray(u, dtype=float).reshape(1, -1)) ** 2, axis=1)
        return float(self.values[int(np.argmin(d2))])


def read_table(path, min_rows: int = 10) -> Tuple[List[str], np.ndarray, np.ndarray]:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ValueError(f"{path}: {exc}") from exc
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[-1] != "value":
        raise ValueError(f"{path}: header needs >= 1 config column and a final 'value' column")
    data = []
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise ValueError(f"{path}: line {i} has {len(r)} cells, expected {len(header)}")
        try:
            vals = [float(c) for c in r]
        except ValueError:
            raise ValueError(f"{path}: line {i} has a non-numeric cell") from None
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"{path}: line {i} has a non-finite cell")
        data.append(vals)
    if len(data) < min_rows:
        raise ValueError(f"{path}: need at least {min_rows} data rows, found {len(data)}")
    arr = np.array(data)
    return header[:-1], arr[:, :-1], arr[:, -1]


def bounds_of(*tables: np.ndarray) -> Domain:
    allc = np.vstack(tables)
    lo, hi = allc.min(axis=0), allc.max(axis=0)
    flat = hi <= lo
    lo, hi = np.where(flat, lo - 0.5, lo), np.where(flat, hi + 0.5, hi)
    return Domain(np.stack([lo, hi], axis=1))


def tabular_objective(csv_path, domain: Optional[Domain] = None, min_rows: int = 10,
                      name: Optional[str] = None) -> Objective:
    _, configs, values = read_table(csv_path, min_rows=min_rows)
    domain = domain or bounds_of(configs)
    fn = TabularFunction(domain.to_unit(configs), values)
    return Objective(fn, configs.shape[1], float(values.max()), name or Path(csv_path).stem)


def read_source_dir(directory, domain: Optional[Domain] = None, min_rows: int = 1):
    """Load every ``*.csv`` in ``directory``; returns (names, datasets on the unit box, domain)."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ValueError(f"{directory}: not a directory")
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise ValueError(f"{directory}: no CSV files")
    tables = [read_table(f, min_rows=min_rows) for f in files]
    dims = {c.shape[1] for _, c, _ in tables}
    if len(dims) != 1:
        raise ValueError(f"{directory}: source files disagree on dimension {sorted(dims)}")
    domain = domain or bounds_of(*[c for _, c, _ in tables])
    datasets = [Dataset(domain.to_unit(c), v) for _, c, v in tables]
    return [f.name for f in files], datasets, domain


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "synthetic"
    label: str = "high"
    dim: int = 2
    n_sources: int = 4
    seed: int = 0
    objective: Optional[str] = None
    sources: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("synthetic", "tabular"):
            raise ValueError("task kind must be 'synthetic' or 'tabular'")
        if self.kind == "tabular" and not (self.objective and self.sources):
            raise ValueError("tabular task sets need 'objective' and 'sources'")
        if self.kind == "synthetic" and self.label not in BANDS:
            raise ValueError(f"label must be one of {LABELS}")


@dataclass(frozen=True)
class Ablation:
    axis: str
    values: Tuple[float, ...]

    def __post_init__(self):
        if self.axis not in ("gamma", "alpha", "m"):
            raise ValueError("ablation axis must be gamma, alpha or m")
        if not self.values:
            raise ValueError("ablation needs at least one value")

    def apply(self, cfg: PolicyConfig, value) -> PolicyConfig:
        if self.axis == "m":
            return cfg.replace(mc_samples=int(value))
        return cfg.replace(**{self.axis: float(value)})


@dataclass(frozen=True)
class ExperimentPlan:
    task_sets: Tuple[TaskSpec, ...] = (TaskSpec(),)
    policies: Tuple[str, ...] = ("baymoth", "two_opt", "gpbo_ei", "random")
    seeds: int = 100
    seed_offset: int = 0
    budget: int = 10
    ablation: Optional[Ablation] = None
    workers: int = 1
    policy: PolicyConfig = PolicyConfig()

    def __post_init__(self):
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")
        for p in self.policies:
            if p not in POLICIES:
                raise ValueError(f"unknown policy {p!r}")


@dataclass
class MaterializedTask:
    name: str
    objective: Objective
    envs: List[VirtualEnvironment]
    dim: int
    task_set: Optional[TaskSet] = None
    build_seconds: float = 0.0


def materialize(spec: TaskSpec, cfg: PolicyConfig) -> MaterializedTask:
    import time

    if spec.kind == "synthetic":
        ts = generate_task_set(spec.dim, spec.n_sources, spec.label, spec.seed)
        t0 = time.perf_counter()
        envs = build_environments(ts.source_datasets(), cfg.source, cfg.noise)
        return MaterializedTask(ts.name, ts.objective(), envs, spec.dim, ts,
                                time.perf_counter() - t0)
    _, configs, _ = read_table(spec.objective)
    names, _, _ = read_source_dir(spec.sources)
    src_tables = [read_table(Path(spec.sources) / n, min_rows=1)[1] for n in names]
    domain = bounds_of(configs, *src_tables)
    obj = tabular_objective(spec.objective, domain)
    _, datasets, _ = read_source_dir(spec.sources, domain)
    t0 = time.perf_counter()
    envs = build_environments(datasets, cfg.source, cfg.noise)
    return MaterializedTask(obj.name, obj, envs, obj.dim, None, time.perf_counter() - t0)


@dataclass
class AggregateCurve:
    policy: str
    task_set: str
    mean: np.ndarray
    std: np.ndarray
    n_runs: int
    ablation_value: Optional[float] = None
    n_failed: int = 0


@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    tasks: List[MaterializedTask]
    runs: List[Tuple[str, Optional[float], RunTrajectory]] = field(default_factory=list)
    curves: List[AggregateCurve] = field(default_factory=list)

    @property
    def failures(self) -> List[Tuple[str, Optional[float], RunTrajectory]]:
        return [r for r in self.runs if r[2].failed]

    def select(self, task_set: Optional[str] = None, policy: Optional[str] = None,
               ablation_value=None) -> List[RunTrajectory]:
        return [t for name, val, t in self.runs
                if (task_set is None or name == task_set)
                and (policy is None or t.policy_name == policy)
                and (ablation_value is None or val == ablation_value)]


def aggregate(trajectories: Sequence[RunTrajectory], budget: int) -> Tuple[np.ndarray, np.ndarray, int]:
    """Per-step mean and sample std of regret over the completed runs."""
    done = [t.regret_curve for t in trajectories if not t.failed and len(t.regret_curve) == budget]
    if not done:
        return np.full(budget, np.nan), np.full(budget, np.nan), 0
    R = np.array(done)
    std = R.std(axis=0, ddof=1) if len(done) > 1 else np.zeros(budget)
    return R.mean(axis=0), std, len(done)


def _run_cell(args):
    task, cfg, policy = args
    return run_policy(task.objective, task.envs, cfg, policy)


def run_experiment(plan: ExperimentPlan, tasks: Optional[List[MaterializedTask]] = None) -> ExperimentResult:
    base = plan.policy.replace(budget=plan.budget)
    if tasks is None:
        tasks = [materialize(spec, base) for spec in plan.task_sets]
    values = plan.ablation.values if plan.ablation else (None,)
    cells = []
    for task in tasks:
        for value in values:
            cfg_v = plan.ablation.apply(base, value) if plan.ablation else base
            for policy in plan.policies:
                for s in range(plan.seed_offset, plan.seed_offset + plan.seeds):
                    cells.append((task, value, cfg_v.replace(seed=s), policy))
    args = [(task, cfg, policy) for task, _, cfg, policy in cells]
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            trajs = list(pool.map(_run_cell, args, chunksize=1))
    else:
        trajs = [_run_cell(a) for a in args]
    result = ExperimentResult(plan, tasks)
    for (task, value, _, _), traj in zip(cells, trajs):
        result.runs.append((task.name, value, traj))
    for task in tasks:
        for value in values:
            for policy in plan.policies:
                group = result.select(task.name, policy, value)
                mean, std, n = aggregate(group, plan.budget)
                result.curves.append(AggregateCurve(policy, task.name, mean, std, n, value,
                                                    len(group) - n))
    return result


def ablate(axis: str, values: Sequence[float], base: ExperimentPlan) -> Dict[float, List[AggregateCurve]]:
    """Run ``base`` once per value of ``axis`` with shared task and run seeds."""
    plan = dataclasses.replace(base, ablation=Ablation(axis, tuple(values)))
    result = run_experiment(plan)
    grouped: Dict[float, List[AggregateCurve]] = {v: [] for v in values}
    for curve in result.curves:
        grouped[curve.ablation_value].append(curve)
    return grouped


def source_usage(trajectories: Sequence[RunTrajectory]) -> Dict[object, float]:
    """Percentage of all steps that used each source ("none" covers fallback and init)."""
    counts: Dict[object, int] = {}
    for traj in trajectories:
        for rec in traj.steps:
            key = "none" if rec.selected_env is None else rec.selected_env
            counts[key] = counts.get(key, 0) + 1
    total = sum(counts.values())
    if total == 0:
        raise ValueError("no proposal steps to summarize")
    keys = ["none"] + sorted(k for k in counts if k != "none")
    return {k: 100.0 * counts.get(k, 0) / total for k in keys}


def area_under_regret(curve: Sequence[float]) -> float:
    return float(np.sum(curve))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


TRAJECTORY_COLUMNS = ("task_set", "ablation", "policy", "seed", "t")


def write_trajectories(result: ExperimentResult, path, include_timing: bool = False) -> None:
    dim = max(task.dim for task in result.tasks)
    header = list(TRAJECTORY_COLUMNS) + [f"x{i}" for i in range(dim)] + [
        "y", "regret", "branch", "selected_env", "ncc_max", "wall_ms"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for name, value, traj in result.runs:
            for rec, reg in zip(traj.steps, traj.regret_curve):
                xs = [_fmt(float(v)) for v in rec.x] + [""] * (dim - len(rec.x))
                wall = _fmt(1000.0 * rec.proposal_wall_time) if include_timing else ""
                w.writerow([name, _fmt(value), traj.policy_name, traj.seed, rec.step, *xs,
                            _fmt(rec.y), _fmt(reg), rec.branch, _fmt(rec.selected_env),
                            _fmt(rec.ncc_max), wall])


def write_aggregates(result: ExperimentResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "task_set", "ablation", "t", "mean", "std", "n"])
        for c in result.curves:
            for t in range(len(c.mean)):
                w.writerow([c.policy, c.task_set, _fmt(c.ablation_value), t + 1,
                            _fmt(c.mean[t]), _fmt(c.std[t]), c.n_runs])


def write_usage(result: ExperimentResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "task_set", "ablation", "gamma", "source_id", "pct"])
        values = result.plan.ablation.values if result.plan.ablation else (None,)
        for task in result.tasks:
            for value in values:
                for policy in result.plan.policies:
                    group = [t for t in result.select(task.name, policy, value) if t.steps]
                    if policy not in ("baymoth", "oracle_gated") or not group:
                        continue
                    try:
                        usage = source_usage(group)
                    except ValueError:
                        continue
                    gamma = value if (result.plan.ablation and result.plan.ablation.axis == "gamma") \
                        else result.plan.policy.gamma
                    for k, pct in usage.items():
                        w.writerow([policy, task.name, _fmt(value), _fmt(float(gamma)), k, _fmt(pct)])
