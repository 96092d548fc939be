from __future__ import annotations

import time
from collections import defaultdict
from contextlib import contextmanager, nullcontext

SOURCE_TRAINING = "Source-task GP training"
COMPARISON_UPDATE = "Comparison GP update"
PROPOSAL = "Proposal optimization"
ACQ_EVAL = "BayMOTH acquisition evaluation"
HORIZON = "Horizon-step simulation"
FUTURE_EI = "Future EI (inside horizon)"
CURRENT_EI = "Current EI (outside horizon)"
ORCHESTRATION = "Selection + NCC + optimizer orchestration"

STAGES = (SOURCE_TRAINING, COMPARISON_UPDATE, PROPOSAL, ACQ_EVAL, HORIZON, FUTURE_EI,
          CURRENT_EI, ORCHESTRATION)


class StageTimer:
    """Accumulates wall time and call counts per named stage."""

    def __init__(self):
        self.totals = defaultdict(float)
        self.counts = defaultdict(int)

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.totals[name] += time.perf_counter() - t0
            self.counts[name] += 1

    def add(self, name: str, seconds: float, calls: int = 1) -> None:
        self.totals[name] += seconds
        self.counts[name] += calls


class _NullTimer:
    _ctx = nullcontext()

    def stage(self, name):
        return self._ctx

    def add(self, name, seconds, calls=1):
        pass


NULL_TIMER = _NullTimer()


def breakdown(timer: StageTimer) -> list:
    """Rows of (stage, calls, share-of-proposal-time or None, avg seconds per call).

    Comparison GP updates run inside the proposer here but are reported as
    online overhead outside it, so they are subtracted from the proposal time.
    The orchestration row is whatever remains after acquisition evaluation, so
    those two rows partition the proposal time.
    """
    totals = dict(timer.totals)
    counts = dict(timer.counts)
    proposal = max(totals.get(PROPOSAL, 0.0) - totals.get(COMPARISON_UPDATE, 0.0), 0.0)
    acq = totals.get(ACQ_EVAL, 0.0)
    totals[PROPOSAL] = proposal
    totals[ORCHESTRATION] = max(proposal - acq, 0.0)
    counts[ORCHESTRATION] = counts.get(PROPOSAL, 0)
    rows = []
    for name in STAGES:
        total = totals.get(name, 0.0)
        n = counts.get(name, 0)
        if name in (SOURCE_TRAINING, COMPARISON_UPDATE):
            share = None
        else:
            share = 100.0 * total / proposal if proposal > 0 else 0.0
        rows.append((name, n, share, total / n if n else 0.0))
    return rows
