import math
from collections import Counter

import numpy as np
import pytest

import shared_runs as S
from baymoth.benchmark import draw_gp_function
from baymoth.gp import Dataset, Domain, KernelConfig
from baymoth.meta import build_environments
from baymoth.policy import (
    POLICIES,
    Objective,
    OracleLabels,
    PolicyConfig,
    SessionError,
    SessionState,
    ask,
    observe,
    propose_baymoth,
    run_policy,
    simple_regret,
    tell,
)


def quad_task(dim=2):
    c = np.full(dim, 0.3)
    return Objective(lambda x: 1.0 - float(np.sum((x - c) ** 2)), dim, 1.0, "quad")


def small_cfg(**kw):
    return PolicyConfig(budget=4, **kw)


def test_observe():
    h = observe(Dataset.empty(2), [0.1, 0.2], 1.0)
    assert len(h) == 1
    h = observe(observe(h, [0.1, 0.2], 1.5), [0.1, 0.2], 1.2)
    assert len(h) == 3
    with pytest.raises(ValueError):
        observe(h, [0.5, 0.5], math.nan)
    with pytest.raises(ValueError):
        observe(h, [0.5, 0.5], math.inf)


def test_config_validation_and_round_trip():
    cfg = PolicyConfig(alpha=0.25, gamma=0.9, mc_samples=7, seed=3,
                       lambda1=KernelConfig(0.07, 1.5))
    assert PolicyConfig.from_dict(cfg.to_dict()) == cfg
    for bad in (dict(alpha=1.5), dict(budget=0), dict(mc_samples=0), dict(noise=-1.0),
                dict(seed=-1)):
        with pytest.raises(ValueError):
            PolicyConfig(**bad)


def test_oracle_labels_validation():
    OracleLabels("meta", 2)
    OracleLabels("fallback")
    with pytest.raises(ValueError):
        OracleLabels("meta")
    with pytest.raises(ValueError):
        OracleLabels("fallback", 1)
    with pytest.raises(ValueError):
        OracleLabels("other")


def test_simple_regret():
    assert simple_regret(1.0, 0.25) == 0.75
    assert simple_regret(1.0, 1.0 - 1e-10) == 0.0
    assert simple_regret(1.0, 1.2) == 0.0


def test_budget_one_is_single_random_point():
    task = quad_task()
    for policy in POLICIES[:4]:
        traj = run_policy(task, [], PolicyConfig(budget=1, seed=5), policy)
        assert len(traj.steps) == 1 and traj.steps[0].branch == "init"
        assert traj.regret_curve == [simple_regret(1.0, task(traj.steps[0].x))]


def test_shared_initial_point_across_policies():
    firsts = {p: run_policy(quad_task(), [], small_cfg(seed=9), p).steps[0].x.tolist()
              for p in ("baymoth", "two_opt", "gpbo_ei", "random")}
    assert len({tuple(v) for v in firsts.values()}) == 1


def test_empty_pool_always_falls_back():
    traj = run_policy(quad_task(), [], small_cfg(seed=1), "baymoth")
    assert [r.branch for r in traj.steps] == ["init"] + ["fallback"] * 3
    assert all(r.ncc_scores.size == 0 for r in traj.steps)


def _pool(task, seeds):
    dss = []
    for s in seeds:
        X = np.random.default_rng(s).uniform(size=(60, 2))
        dss.append(Dataset(X, np.array([task(x) for x in X]) + 0.1 * draw_gp_function(
            np.random.default_rng(s), 2)(X)))
    return build_environments(dss, KernelConfig(0.05), 1e-6)


def test_fallback_equivalence_small():
    task = quad_task()
    envs = _pool(task, [1, 2])
    for seed in range(2):
        a = run_policy(task, envs, small_cfg(seed=seed, gamma=1.01), "baymoth")
        b = run_policy(task, envs, small_cfg(seed=seed), "two_opt")
        assert all(np.array_equal(p.x, q.x) for p, q in zip(a.steps, b.steps))
        assert all(r.branch in ("init", "fallback") for r in a.steps)


def test_branch_consistency_and_regret_shape():
    task = quad_task()
    envs = _pool(task, [3, 4])
    traj = run_policy(task, envs, small_cfg(seed=2, gamma=-1.0), "baymoth")
    for r in traj.steps[1:]:
        assert (r.branch == "meta") == (r.selected_env is not None)
        assert r.ncc_scores.size == 2
    assert any(r.branch == "meta" for r in traj.steps)
    assert all(a >= b for a, b in zip(traj.regret_curve, traj.regret_curve[1:]))


def test_determinism():
    task = quad_task()
    envs = _pool(task, [5])
    a = run_policy(task, envs, small_cfg(seed=4), "baymoth")
    b = run_policy(task, envs, small_cfg(seed=4), "baymoth")
    assert [r.x.tolist() for r in a.steps] == [r.x.tolist() for r in b.steps]
    assert a.regret_curve == b.regret_curve


def test_oracle_gated_follows_labels():
    task = quad_task()
    envs = _pool(task, [6, 7])
    meta = Objective(task.fn, 2, 1.0, "q", OracleLabels("meta", 1))
    traj = run_policy(meta, envs, small_cfg(seed=0), "oracle_gated")
    assert [r.selected_env for r in traj.steps[1:]] == [1, 1, 1]
    fb = Objective(task.fn, 2, 1.0, "q", OracleLabels("fallback"))
    traj = run_policy(fb, envs, small_cfg(seed=0), "oracle_gated")
    assert all(r.branch == "fallback" for r in traj.steps[1:])
    bad = run_policy(task, envs, small_cfg(seed=0), "oracle_gated")
    assert bad.failed and "oracle labels" in bad.error


def test_unknown_policy_and_failure_capture():
    with pytest.raises(ValueError):
        run_policy(quad_task(), [], small_cfg(), "nope")
    broken = Objective(lambda x: math.nan, 2, 1.0)
    traj = run_policy(broken, [], small_cfg(), "random")
    assert traj.failed and traj.error.startswith("step 1")
    with pytest.raises(ValueError):
        propose_baymoth(Dataset.empty(2), [], small_cfg(), 1)


def test_random_policy_mean_regret_strictly_decreasing():
    rng = np.random.default_rng(0)
    f = draw_gp_function(rng, 2)
    g = np.stack(np.meshgrid(np.linspace(0, 1, 201), np.linspace(0, 1, 201)), -1).reshape(-1, 2)
    task = Objective(lambda x: float(f(x[None])[0]), 2, float(f(g).max()) + 1e-3)
    curves = np.array([run_policy(task, [], PolicyConfig(budget=10, seed=s), "random").regret_curve
                       for s in range(100)])
    assert np.all(np.diff(curves.mean(axis=0)) < 0)


def test_session_flow(tmp_path):
    dom = Domain(np.array([[0.0, 10.0], [-1.0, 1.0]]))
    state = SessionState.new(small_cfg(seed=3), dom)
    x, info = ask(state, [])
    assert info["branch"] == "init"
    assert np.all((x >= dom.bounds[:, 0]) & (x <= dom.bounds[:, 1]))
    again, _ = ask(state, [])
    assert np.array_equal(x, again)
    tell(state, x, 1.0)
    assert state.step == 1 and state.records[-1]["off_policy"] is False
    x2, info = ask(state, [])
    assert info["branch"] == "fallback"
    tell(state, [5.0, 0.0], 2.0)
    assert state.step == 2 and state.records[-1]["off_policy"] is True
    with pytest.raises(SessionError):
        tell(state, [1.0, 0.0], 0.0)


def test_session_tell_errors():
    state = SessionState.new(small_cfg(), Domain.unit(2))
    with pytest.raises(SessionError):
        tell(state, [0.1, 0.1], 1.0)
    ask(state, [])
    with pytest.raises(SessionError):
        tell(state, [0.1, 0.1], math.nan)
    with pytest.raises(SessionError):
        tell(state, [0.1], 1.0)


def test_session_restart_matches_uninterrupted(tmp_path):
    task = quad_task()
    envs = _pool(task, [8])
    cfg = small_cfg(seed=6)

    def drive(state, n):
        for _ in range(n):
            x, _ = ask(state, envs)
            tell(state, x, task(x))

    a = SessionState.new(cfg, Domain.unit(2))
    drive(a, 3)
    b = SessionState.new(cfg, Domain.unit(2))
    drive(b, 2)
    b.save(tmp_path / "s.json")
    b = SessionState.load(tmp_path / "s.json")
    drive(b, 1)
    assert np.array_equal(a.history.points, b.history.points)
    xa, _ = ask(a, envs)
    xb, _ = ask(b, envs)
    assert np.array_equal(xa, xb)
    # the session loop reproduces the batch run
    traj = run_policy(task, envs, cfg.replace(budget=4), "baymoth")
    assert np.array_equal(traj.steps[3].x, xa)


def test_session_load_rejects_other_files(tmp_path):
    p = tmp_path / "s.json"
    p.write_text('{"format": "x"}')
    with pytest.raises(SessionError):
        SessionState.load(p)


def _planted_counts(min_step):
    counts = Counter()
    for ts in S.TASK_SEEDS:
        planted = S.task("high", ts).task_set.planted
        for s in S.PAIRED_SEEDS:
            for r in S.run("high", ts, "baymoth", s).steps:
                if r.step >= min_step:
                    key = "fallback" if r.selected_env is None else r.selected_env == planted
                    counts[key] += 1
    return counts


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="measured 134/240 = 56% of steps t>=3; at t=3 two "
                   "observations give NCC=+-1 for most sources and the smallest id wins")
def test_planted_source_selected_in_most_steps():
    c = _planted_counts(3)
    assert c[True] / sum(c.values()) >= 0.8


@pytest.mark.slow
def test_planted_source_is_the_dominant_choice_once_scores_settle():
    c = _planted_counts(5)
    assert c[True] > c[False] and c[True] > c["fallback"]
