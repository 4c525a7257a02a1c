"""Shared helpers and hypothesis strategies for the test suite."""

from __future__ import annotations

import json

import hypothesis.strategies as st

from flipsense.history import BuildRecord


def rec(seq: int, changes=(), results=None, build_id=None) -> BuildRecord:
    return BuildRecord(
        build_id=build_id or f"b{seq}",
        seq=seq,
        changed_files=frozenset(changes),
        verdicts=dict(results or {}),
    )


def history_lines(builds) -> list[str]:
    """builds: list of (build_id, changes, results) triples."""
    return [
        json.dumps({"build": b, "changes": list(c), "results": dict(r)})
        for b, c, r in builds
    ]


_ids = st.text(alphabet="abcdefgh", min_size=1, max_size=4)

verdicts = st.sampled_from(["pass", "fail"])


@st.composite
def histories(draw, max_builds=8, max_files=6, max_tests=5):
    """Small random histories with optional missing verdicts."""
    files = sorted(draw(st.sets(_ids.map(lambda s: "f_" + s), min_size=1, max_size=max_files)))
    tests = sorted(draw(st.sets(_ids.map(lambda s: "t_" + s), min_size=1, max_size=max_tests)))
    n_builds = draw(st.integers(min_value=1, max_value=max_builds))
    records = []
    for seq in range(n_builds):
        changed = draw(st.sets(st.sampled_from(files), max_size=len(files)))
        ran = draw(st.sets(st.sampled_from(tests), max_size=len(tests)))
        results = {t: draw(verdicts) for t in sorted(ran)}
        records.append(rec(seq, changed, results, build_id=f"b{seq:03d}"))
    return records
