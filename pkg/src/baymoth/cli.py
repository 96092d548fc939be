"""``baymoth`` command line: build-envs, bench, session, profile, defaults.

Exit status is 0 on success, 2 on usage or input errors and 1 on internal
errors.  Data goes to stdout, diagnostics to stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import benchmark as bm
from .config import ConfigError, default_config, load_config
from .gp import Domain, GPFitError
from .meta import build_environments, load_environments, save_environments, snapshot_bounds
from .plotting import regret_svg, usage_svg
from .policy import SessionError, SessionState, ask, run_policy, tell
from .profiling import SOURCE_TRAINING, StageTimer, breakdown


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_build_envs(args) -> int:
    cfg = load_config(args.config)
    t0 = time.perf_counter()
    names, datasets, domain = bm.read_source_dir(args.sources, cfg.domain)
    envs = []
    print("source\tpoints\tmean\tstd\tfit_s")
    for i, (name, ds) in enumerate(zip(names, datasets)):
        t = time.perf_counter()
        try:
            (env,) = build_environments([ds], cfg.policy.source, cfg.policy.noise, ids=[i])
        except GPFitError as exc:
            raise UsageError(f"{name}: {exc}") from exc
        envs.append(env)
        print(f"{i}:{name}\t{len(ds)}\t{env.y_mean:.6g}\t{env.y_std:.6g}\t"
              f"{time.perf_counter() - t:.3f}")
    try:
        save_environments(envs, args.out, bounds=domain.bounds)
    except OSError as exc:
        raise UsageError(f"cannot write {args.out}: {exc}") from exc
    print(f"wrote {len(envs)} environments to {args.out} in {time.perf_counter() - t0:.2f} s")
    return 0


def _prepare_out(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory {out} is not writable: {exc}") from exc
    return out


def cmd_bench(args) -> int:
    cfg = load_config(args.plan)
    plan = cfg.plan
    if args.workers is not None:
        import dataclasses
        plan = dataclasses.replace(plan, workers=args.workers)
    out = _prepare_out(args.out)
    t0 = time.perf_counter()
    result = bm.run_experiment(plan)
    bm.write_trajectories(result, out / "trajectories.csv", include_timing=args.timing)
    bm.write_aggregates(result, out / "aggregate.csv")
    bm.write_usage(result, out / "usage.csv")
    for task in result.tasks:
        curves = [c for c in result.curves if c.task_set == task.name]
        (out / f"regret_{task.name}.svg").write_text(regret_svg(curves, f"Simple regret: {task.name}"))
        groups = {}
        for value in (plan.ablation.values if plan.ablation else (None,)):
            for policy in plan.policies:
                runs = [t for t in result.select(task.name, policy, value) if t.steps]
                if policy in ("baymoth", "oracle_gated") and runs:
                    label = policy if value is None else f"{policy} {plan.ablation.axis}={value:g}"
                    groups[label] = bm.source_usage(runs)
        if groups:
            (out / f"usage_{task.name}.svg").write_text(usage_svg(groups, f"Source usage: {task.name}"))
    failures = [{"task_set": name, "ablation": value, "policy": t.policy_name, "seed": t.seed,
                 "error": t.error} for name, value, t in result.failures]
    manifest = {
        "task_sets": [t.name for t in result.tasks],
        "policies": list(plan.policies),
        "seeds": [plan.seed_offset, plan.seed_offset + plan.seeds - 1],
        "budget": plan.budget,
        "ablation": None if plan.ablation is None else
        {"axis": plan.ablation.axis, "values": list(plan.ablation.values)},
        "runs": len(result.runs),
        "failures": failures,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    for c in result.curves:
        tag = "" if c.ablation_value is None else f" [{plan.ablation.axis}={c.ablation_value:g}]"
        print(f"{c.task_set}\t{c.policy}{tag}\tfinal mean regret {c.mean[-1]:.4f} "
              f"+- {c.std[-1]:.4f} (n={c.n_runs})")
    if failures:
        _err(f"{len(failures)} run(s) failed; see manifest.json")
    _err(f"bench finished in {time.perf_counter() - t0:.1f} s")
    return 0


def _session_domain(args, cfg, envs) -> Domain:
    if cfg.domain is not None:
        return cfg.domain
    bounds = snapshot_bounds(args.envs)
    if bounds is not None:
        return Domain(bounds)
    if not envs:
        raise UsageError("empty environment snapshot and no domain in the config")
    return Domain.unit(envs[0].dim)


def cmd_session(args) -> int:
    state_path = Path(args.state)
    cfg = load_config(args.config)
    if args.action == "status":
        if not state_path.exists():
            print("0 observations")
            return 0
        state = SessionState.load(state_path)
        n = len(state.history)
        print(f"{n} observations")
        for i, (u, y) in enumerate(zip(state.history.points, state.history.values), start=1):
            x = state.domain.from_unit(u)
            print(f"{i}\t{' '.join(f'{v:.6g}' for v in x)}\t{y:.6g}\t"
                  f"{state.records[i - 1].get('branch', '')}")
        if n:
            best = float(state.history.values.max())
            print(f"incumbent {best:.6g}")
            if args.f_star is not None:
                print(f"regret {args.f_star - best:.6g}")
        if state.pending is not None:
            x = state.domain.from_unit(state.pending)
            print(f"pending {' '.join(f'{v:.6g}' for v in x)}")
        return 0
    envs = load_environments(args.envs)
    if args.action == "ask":
        if state_path.exists():
            state = SessionState.load(state_path)
        else:
            state = SessionState.new(cfg.policy, _session_domain(args, cfg, envs))
        if envs and envs[0].dim != state.domain.dim:
            raise UsageError(f"environments are {envs[0].dim}-D but the session is "
                             f"{state.domain.dim}-D")
        x, info = ask(state, envs)
        state.save(state_path)
        print("x " + " ".join(repr(float(v)) for v in x))
        sel = info["selected_env"]
        print(f"branch {info['branch']}" + ("" if sel is None else f" source {sel}"))
        if info["ncc_scores"]:
            print("ncc " + " ".join(f"{s:.4f}" for s in info["ncc_scores"]))
        return 0
    # tell
    if not state_path.exists():
        raise UsageError("tell without a pending ask (no session state yet)")
    state = SessionState.load(state_path)
    values = args.values
    if len(values) != state.domain.dim + 1:
        raise UsageError(f"tell expects {state.domain.dim} coordinates and one value, "
                         f"got {len(values)} numbers")
    try:
        nums = [float(v) for v in values]
    except ValueError:
        raise UsageError(f"non-numeric input in {' '.join(values)}") from None
    try:
        tell(state, nums[:-1], nums[-1])
    except SessionError as exc:
        raise UsageError(str(exc)) from exc
    if state.records[-1].get("off_policy"):
        _err("warning: told point differs from the pending proposal (recorded as off-policy)")
    state.save(state_path)
    print(f"{len(state.history)} observations; incumbent {state.history.values.max():.6g}")
    return 0


def cmd_profile(args) -> int:
    cfg = load_config(args.plan)
    plan = cfg.plan
    spec = plan.task_sets[0]
    task = bm.materialize(spec, plan.policy)
    timer = StageTimer()
    timer.add(SOURCE_TRAINING, task.build_seconds, max(len(task.envs), 1))
    run_cfg = plan.policy.replace(seed=plan.seed_offset, budget=plan.budget)
    traj = run_policy(task.objective, task.envs, run_cfg, "baymoth", timer)
    if traj.failed:
        raise RuntimeError(f"profiling run failed: {traj.error}")
    rows = breakdown(timer)
    print(f"task {task.name}, dim {task.dim}, T={plan.budget}, seed {plan.seed_offset}")
    print(f"{'stage':45s}{'calls':>8s}{'share':>10s}{'avg/call':>12s}")
    for name, calls, share, avg in rows:
        share_s = "N/A" if share is None else f"{share:.2f}%"
        print(f"{name:45s}{calls:8d}{share_s:>10s}{avg * 1000:10.3f}ms")
    return 0


def cmd_defaults(args) -> int:
    print(json.dumps(default_config(), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="baymoth", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-envs", help="fit source-task environments from CSV files")
    b.add_argument("--sources", required=True, help="directory of source CSV files")
    b.add_argument("--out", required=True, help="environment snapshot to write")
    b.add_argument("--config", help="JSON run configuration")
    b.set_defaults(func=cmd_build_envs)

    r = sub.add_parser("bench", help="run an experiment plan")
    r.add_argument("--plan", required=True, help="JSON run configuration")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--workers", type=int, help="override plan.workers")
    r.add_argument("--timing", action="store_true",
                   help="fill the wall_ms column (makes output non-reproducible)")
    r.set_defaults(func=cmd_bench)

    s = sub.add_parser("session", help="ask/tell optimization session")
    s.add_argument("--envs", required=True, help="environment snapshot")
    s.add_argument("--state", required=True, help="session state file")
    s.add_argument("--config", help="JSON run configuration")
    s.add_argument("--f-star", type=float, help="known optimum for status regret")
    s.add_argument("action", choices=("ask", "tell", "status"))
    s.add_argument("values", nargs="*", help="for tell: x coordinates then y")
    s.set_defaults(func=cmd_session)

    f = sub.add_parser("profile", help="stage timing of one BayMOTH run")
    f.add_argument("--plan", required=True, help="JSON run configuration")
    f.set_defaults(func=cmd_profile)

    d = sub.add_parser("defaults", help="print the default configuration")
    d.set_defaults(func=cmd_defaults)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "session" and args.action != "tell" and args.values:
        parser.error(f"{args.action} takes no positional values")
    try:
        return args.func(args)
    except (UsageError, ConfigError, SessionError, bm.GeneratorError) as exc:
        _err(f"error: {exc}")
        return 2
    except ValueError as exc:
        _err(f"error: {exc}")
        return 2
    except Exception as exc:  # noqa: BLE001
        _err(f"internal error: {type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
