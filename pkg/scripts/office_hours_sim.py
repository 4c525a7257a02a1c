#!/usr/bin/env python3
"""Simulate the resource-managed day loop on a synthetic project.

Each simulated day brings one build's change set. During office hours a
small selection (sensitivity blended with failure recency) runs several
times and feeds the matrix test-case-wise; after hours a budgeted stable
pass keeps the staleness cost down. Prints the office hit rate and the
cost trajectory.

    python scripts/office_hours_sim.py --seed 3 --days 30
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from flipsense.baselines import hbtp_scores
from flipsense.history import extract_flips
from flipsense.schedule import cost, day_tick, office_hours_tick, select_stable, state_from_history
from flipsense.sensitivity import empty_matrix, incremental_apply, incremental_observe
from flipsense.synth import SynthConfig, generate


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=3)
    parser.add_argument("--days", type=int, default=30, help="builds replayed as days")
    parser.add_argument("--office-size", type=int, default=10)
    parser.add_argument("--blend", type=float, default=0.7, help="sensitivity weight w")
    parser.add_argument("--stable-budget", type=int, default=15)
    parser.add_argument("--window", type=int, default=7)
    parser.add_argument("--alpha", type=float, default=0.8)
    args = parser.parse_args()

    config = SynthConfig(seed=args.seed, n_builds=args.days + 1)
    records, _ = generate(config)
    ledger = extract_flips(records)

    state = state_from_history(records[:1], extract_flips(records[:1]))
    matrix = empty_matrix(alpha=args.alpha)
    pending = state.pending
    # seed the verdict baseline from day zero without matrix updates
    matrix, pending = incremental_apply(
        matrix, pending, sorted(records[0].verdicts), records[0].verdicts
    )

    hits = misses = 0
    print("day  office-hit  flips  cost-after")
    for day, record in enumerate(records[1:], start=1):
        pending = incremental_observe(pending, record.changed_files)
        recency = hbtp_scores(records[:record.seq], extract_flips(records[:record.seq]), record.seq)
        office = office_hours_tick(
            matrix, pending, record.changed_files, recency, args.office_size, w=args.blend
        )
        flipped_today = ledger.flipped(record.seq)
        hit = bool(set(office) & flipped_today)
        hits += bool(flipped_today) and hit
        misses += bool(flipped_today) and not hit

        # office selection runs; verdicts come back from this build
        office_verdicts = {t: record.verdicts[t] for t in office}
        matrix, pending = incremental_apply(matrix, pending, office, office_verdicts)

        # after hours: budgeted stable pass
        state.pending = pending
        stable_run = select_stable(state, args.stable_budget, "round_robin", args.window)
        stable_verdicts = {t: record.verdicts[t] for t in stable_run}
        matrix, pending = incremental_apply(matrix, pending, stable_run, stable_verdicts)

        state.pending = pending
        state = day_tick(state, set(office) | set(stable_run))
        pending = state.pending
        marker = "hit " if hit else ("miss" if flipped_today else "  - ")
        print(f"{day:3d}  {marker:>10}  {len(flipped_today):5d}  {cost(state):10d}")

    total = hits + misses
    if total:
        print(f"\noffice selection hit a flipping test on {hits}/{total} flip days "
              f"({hits / total:.0%})")
    print(f"final staleness cost: {cost(state)} over {len(state.staleness)} tests")
    return 0


if __name__ == "__main__":
    sys.exit(main())
