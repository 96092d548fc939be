import pytest

from baymoth.profiling import (
    ACQ_EVAL,
    COMPARISON_UPDATE,
    HORIZON,
    ORCHESTRATION,
    PROPOSAL,
    SOURCE_TRAINING,
    STAGES,
    StageTimer,
    breakdown,
)


def rows_by_name(timer):
    return {name: (calls, share, avg) for name, calls, share, avg in breakdown(timer)}


def test_breakdown_partitions_proposal_time():
    t = StageTimer()
    t.add(SOURCE_TRAINING, 4.0, 2)
    t.add(PROPOSAL, 10.0, 5)
    t.add(COMPARISON_UPDATE, 2.0, 20)
    t.add(ACQ_EVAL, 6.0, 100)
    t.add(HORIZON, 5.0, 100)
    rows = rows_by_name(t)
    assert list(rows) == list(STAGES)
    assert rows[PROPOSAL][1] == pytest.approx(100.0)
    assert rows[ACQ_EVAL][1] == pytest.approx(75.0)
    assert rows[ORCHESTRATION][1] == pytest.approx(25.0)
    assert rows[HORIZON][1] == pytest.approx(62.5)
    assert rows[SOURCE_TRAINING] == (2, None, 2.0)
    assert rows[COMPARISON_UPDATE][1] is None
    assert rows[ACQ_EVAL][2] == pytest.approx(0.06)


def test_empty_timer():
    rows = rows_by_name(StageTimer())
    assert all(share in (None, 0.0) for _, share, _ in rows.values())


def test_stage_context_counts():
    t = StageTimer()
    for _ in range(3):
        with t.stage(HORIZON):
            pass
    assert t.counts[HORIZON] == 3 and t.totals[HORIZON] >= 0
