"""Resource-managed scheduling for tests the sensitivity signal cannot rank.

During office hours a small selection is run over and over: a blend of the
change-sensitivity slice with the failure-recency score. Tests that never
flipped ("stable") carry no such signal and are scheduled after hours
instead, either by making every test run within a time window (round
robin) or by greedily minimising the staleness cost sum(s_i^2), where s_i
counts the days since test i last ran.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

from .baselines import dissimilarity_order
from .history import BuildRecord, FlipLedger
from .sensitivity import (
    PendingChanges,
    ScoreVector,
    SensitivityMatrix,
    make_scores,
    new_pending,
    select_top_n,
    slice_scores,
)

STRATEGIES = ("cost_min", "round_robin")


@dataclass
class ScheduleState:
    staleness: dict[str, int] = field(default_factory=dict)  # test -> days since last run
    stable: dict[str, bool] = field(default_factory=dict)    # test -> never flipped
    pending: PendingChanges = field(default_factory=new_pending)

    def stable_tests(self) -> list[str]:
        return sorted(t for t, s in self.stable.items() if s)


def stable_tests(
    records: Sequence[BuildRecord], ledger: FlipLedger, always_passed_only: bool = False
) -> frozenset[str]:
    """Tests that never flipped; optionally restricted to ones that also
    never failed."""
    never_flipped = ledger.universe - ledger.ever_flipped()
    if not always_passed_only:
        return never_flipped
    failed_once = {
        t
        for record in records
        for t, verdict in record.verdicts.items()
        if verdict == "fail"
    }
    return never_flipped - frozenset(failed_once)


def state_from_history(
    records: Sequence[BuildRecord], ledger: FlipLedger, always_passed_only: bool = False
) -> ScheduleState:
    stable = stable_tests(records, ledger, always_passed_only)
    tests = sorted(ledger.universe)
    return ScheduleState(
        staleness={t: 0 for t in tests},
        stable={t: t in stable for t in tests},
        pending=new_pending(tests),
    )


def cost(state: ScheduleState) -> int:
    """Quadratic staleness cost: sum of s_i^2 over all tracked tests."""
    return sum(s * s for s in state.staleness.values())


def day_tick(state: ScheduleState, executed: Iterable[str]) -> ScheduleState:
    """Advance one day: executed tests reset to 0, everything else ages."""
    executed_set = set(executed)
    staleness = {
        t: 0 if t in executed_set else s + 1 for t, s in state.staleness.items()
    }
    for t in executed_set - staleness.keys():
        staleness[t] = 0
    return ScheduleState(staleness=staleness, stable=dict(state.stable), pending=state.pending)


def _by_staleness(state: ScheduleState, tests: Iterable[str]) -> list[str]:
    return sorted(tests, key=lambda t: (-state.staleness.get(t, 0), t))


def select_stable(
    state: ScheduleState,
    budget: int,
    strategy: str = "cost_min",
    window_days: int = 7,
) -> list[str]:
    """Pick up to `budget` stable tests for the after-hours pass.

    cost_min executes the stalest tests, which greedily minimises the
    post-execution cost over all budget-sized subsets. round_robin puts
    overdue tests (s_i >= window_days) first by staleness and fills the
    remainder staleness-major, ordering equal-staleness tiers by
    dissimilarity; overflow beyond the budget carries to the next day.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    candidates = state.stable_tests()
    if budget >= len(candidates):
        return _by_staleness(state, candidates)

    if strategy == "cost_min":
        return _by_staleness(state, candidates)[:budget]

    overdue = _by_staleness(state, [t for t in candidates if state.staleness[t] >= window_days])
    picked = overdue[:budget]
    if len(picked) < budget:
        remaining = [t for t in candidates if t not in set(picked)]
        tiers: dict[int, list[str]] = {}
        for t in remaining:
            tiers.setdefault(state.staleness[t], []).append(t)
        for s in sorted(tiers, reverse=True):
            tier = dissimilarity_order(tiers[s], already_chosen=picked)
            picked.extend(tier[: budget - len(picked)])
            if len(picked) == budget:
                break
    return picked


def _normalise(scores: Mapping[str, float]) -> dict[str, float]:
    top = max(scores.values(), default=0.0)
    if top <= 0.0:
        return dict(scores)
    return {t: v / top for t, v in scores.items()}


def office_hours_tick(
    matrix: SensitivityMatrix,
    pending: PendingChanges,
    changed_files: Iterable[str],
    hbtp: ScoreVector,
    k: int,
    w: float = 0.5,
    score_mode: str = "sum",
) -> list[str]:
    """One office-hours selection: blend sensitivity with failure recency.

    combined = w * sensitivity / max(sensitivity) + (1-w) * hbtp / max(hbtp)
    (each divisor skipped when its vector is all zero), then the top k under
    the usual (score desc, id asc) rule. Read-only: pending only widens the
    candidate pool, bookkeeping stays with incremental_observe/apply.
    """
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"blend weight must be in [0, 1], got {w}")
    if k < 1:
        raise ValueError(f"selection size must be >= 1, got {k}")
    sens = _normalise(slice_scores(matrix, changed_files, score_mode).scores)
    recency = _normalise(hbtp.scores)
    universe = set(sens) | set(recency) | set(pending.tests())
    combined = {
        t: w * sens.get(t, 0.0) + (1.0 - w) * recency.get(t, 0.0) for t in universe
    }
    return select_top_n(make_scores(combined), k, universe)


def save_state(state: ScheduleState, fp: IO[str]) -> None:
    tests = sorted(state.staleness.keys() | state.stable.keys() | state.pending.tests())
    doc = {
        "kind": "schedule-state",
        "tests": {
            t: {
                "staleness": state.staleness.get(t, 0),
                "stable": state.stable.get(t, False),
                "accumulated": sorted(state.pending.accumulated.get(t, set())),
                "last_verdict": state.pending.last_verdict.get(t),
            }
            for t in tests
        },
    }
    json.dump(doc, fp, sort_keys=True, separators=(",", ":"))
    fp.write("\n")


def load_state(fp: IO[str]) -> ScheduleState:
    doc = json.load(fp)
    staleness: dict[str, int] = {}
    stable: dict[str, bool] = {}
    accumulated: dict[str, set[str]] = {}
    last_verdict: dict[str, str] = {}
    for t, info in doc["tests"].items():
        staleness[t] = int(info["staleness"])
        stable[t] = bool(info["stable"])
        accumulated[t] = set(info["accumulated"])
        if info.get("last_verdict") is not None:
            last_verdict[t] = info["last_verdict"]
    return ScheduleState(
        staleness=staleness,
        stable=stable,
        pending=PendingChanges(accumulated=accumulated, last_verdict=last_verdict),
    )
