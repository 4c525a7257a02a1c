"""Matrix deltas, EMA/cumulative folding, slicing, selection, and exports."""

import io
import random

import hypothesis.strategies as st
import pytest
from hypothesis import given, settings

from flipsense.errors import ConfigError
from flipsense.sensitivity import (
    PendingChanges,
    SensitivityMatrix,
    advance,
    build_delta,
    empty_matrix,
    export_heatmap,
    flakiness_index,
    incremental_apply,
    incremental_observe,
    load_matrix,
    make_scores,
    new_pending,
    save_matrix,
    select_top_n,
    slice_scores,
    top_files_for_test,
)


def random_delta_sequence(rng, n_builds, file_pool, test_pool, d_mode="linear"):
    """Random per-build (changed, flipped) pairs, possibly empty."""
    deltas = []
    for _ in range(n_builds):
        changed = frozenset(rng.sample(file_pool, rng.randint(0, min(10, len(file_pool)))))
        flipped = frozenset(rng.sample(test_pool, rng.randint(0, min(8, len(test_pool)))))
        deltas.append((changed, flipped))
    return deltas


def closed_form_entry(deltas, alpha, f, t, d_mode="linear"):
    """Independent oracle: alpha * sum_j (1-alpha)^(k-j) * delta_j[f, t]."""
    k = len(deltas)
    total = 0.0
    for j, (changed, flipped) in enumerate(deltas, start=1):
        if f in changed and t in flipped:
            d = len(changed) if d_mode == "linear" else 1
            total += alpha * (1.0 - alpha) ** (k - j) * (1.0 / d)
    return total


class TestBuildDelta:
    def test_linear_split(self):
        delta = build_delta({"f1", "f2"}, {"t3"}, "linear")
        assert delta.entry("f1", "t3") == 0.5
        assert delta.entry("f2", "t3") == 0.5
        assert delta.nnz() == 2

    def test_empty_sets_give_empty_delta(self):
        assert build_delta(set(), {"t1"}, "linear").nnz() == 0
        assert build_delta({"f1"}, set(), "linear").nnz() == 0

    def test_constant_mode_all_ones(self):
        delta = build_delta({"f1", "f2", "f3"}, {"t1", "t2"}, "constant")
        assert delta.nnz() == 6
        assert all(v == 1.0 for col in delta.cols.values() for v in col.values())

    def test_registers_files_and_tests(self):
        delta = build_delta({"f1"}, set(), "linear")
        assert delta.files == {"f1"} and delta.tests == frozenset()


class TestAdvance:
    def test_alpha_one_equals_delta(self):
        m = empty_matrix(alpha=1.0)
        m = advance(m, build_delta({"f1"}, {"t1"}, "linear"))
        m = advance(m, build_delta({"f2", "f3"}, {"t1"}, "linear"))
        assert m.entry("f1", "t1") == 0.0
        assert m.entry("f2", "t1") == 0.5
        assert m.entry("f3", "t1") == 0.5

    def test_alpha_zero_stays_zero(self):
        m = empty_matrix(alpha=0.0)
        for _ in range(4):
            m = advance(m, build_delta({"f1"}, {"t1"}, "linear"))
        assert m.nnz() == 0

    def test_single_blend_value(self):
        # old entry 0.5, delta entry 0.25, alpha 0.8 -> 0.8*0.25 + 0.2*0.5 = 0.3
        m = SensitivityMatrix(
            cols={"t1": {"f1": 0.5}}, files=frozenset({"f1"}), tests=frozenset({"t1"}),
            d_mode="linear", update_mode="ema", alpha=0.8, last_seq=3,
        )
        delta = build_delta({"f1", "x1", "x2", "x3"}, {"t1"}, "linear")  # entry 0.25
        out = advance(m, delta)
        assert out.entry("f1", "t1") == pytest.approx(0.3, abs=1e-15)
        assert out.last_seq == 4

    def test_d_mode_mismatch(self):
        m = empty_matrix(alpha=0.5, d_mode="linear")
        with pytest.raises(ConfigError, match="d_mode"):
            advance(m, build_delta({"f1"}, {"t1"}, "constant"))

    def test_closed_form_small(self):
        rng = random.Random(5)
        files = [f"f{i}" for i in range(12)]
        tests = [f"t{i}" for i in range(6)]
        deltas = random_delta_sequence(rng, 8, files, tests)
        for alpha in (0.2, 0.5, 0.8):
            m = empty_matrix(alpha=alpha, drop_threshold=0.0)
            for changed, flipped in deltas:
                m = advance(m, build_delta(changed, flipped, "linear"))
            for f in files:
                for t in tests:
                    expected = closed_form_entry(deltas, alpha, f, t)
                    assert m.entry(f, t) == pytest.approx(expected, abs=1e-12)

    def test_decay_law(self):
        # no flips for t after step j: column scales by (1-alpha)^(k-j)
        alpha = 0.7
        m = empty_matrix(alpha=alpha, drop_threshold=0.0)
        m = advance(m, build_delta({"f1", "f2"}, {"t1"}, "linear"))
        at_j = {f: m.entry(f, "t1") for f in ("f1", "f2")}
        steps = 5
        for _ in range(steps):
            m = advance(m, build_delta({"f3"}, {"t2"}, "linear"))
        for f, v in at_j.items():
            assert m.entry(f, "t1") == pytest.approx(v * (1 - alpha) ** steps, abs=1e-12)

    def test_cumulative_counts_cooccurrences(self):
        rng = random.Random(11)
        files = [f"f{i}" for i in range(8)]
        tests = [f"t{i}" for i in range(5)]
        deltas = random_delta_sequence(rng, 12, files, tests)
        m = empty_matrix(d_mode="constant", update_mode="cumulative")
        for changed, flipped in deltas:
            m = advance(m, build_delta(changed, flipped, "constant"))
        for f in files:
            for t in tests:
                count = sum(1 for c, fl in deltas if f in c and t in fl)
                assert m.entry(f, t) == count

    def test_prunes_below_threshold(self):
        m = empty_matrix(alpha=0.5, drop_threshold=1e-3)
        m = advance(m, build_delta({"f1"}, {"t1"}, "linear"))  # 0.5
        for _ in range(12):  # 0.5^13 ~ 1.2e-4 < 1e-3
            m = advance(m, build_delta(set(), set(), "linear"))
        assert m.nnz() == 0
        assert "t1" in m.tests  # registry survives pruning

    def test_no_negative_and_bounded_entries(self):
        rng = random.Random(3)
        files = [f"f{i}" for i in range(10)]
        tests = [f"t{i}" for i in range(5)]
        m = empty_matrix(alpha=0.6)
        for changed, flipped in random_delta_sequence(rng, 30, files, tests):
            m = advance(m, build_delta(changed, flipped, "linear"))
            for col in m.cols.values():
                for v in col.values():
                    assert 0.0 < v <= 1.0


class TestSliceScores:
    def matrix(self):
        return SensitivityMatrix(
            cols={"t1": {"f1": 0.4, "f2": 0.1}, "t2": {"f2": 0.3}},
            files=frozenset({"f1", "f2"}),
            tests=frozenset({"t1", "t2"}),
            d_mode="linear",
            update_mode="ema",
            alpha=0.8,
        )

    def test_sum_mode(self):
        scores = slice_scores(self.matrix(), {"f1", "f2"}, "sum")
        assert scores.scores == {"t1": 0.5, "t2": 0.3}
        assert scores.order == ("t1", "t2")

    def test_max_mode(self):
        scores = slice_scores(self.matrix(), {"f1", "f2"}, "max")
        assert scores.scores == {"t1": 0.4, "t2": 0.3}

    def test_unknown_files_score_zero(self):
        scores = slice_scores(self.matrix(), {"nope"}, "sum")
        assert scores.scores == {"t1": 0.0, "t2": 0.0}

    def test_sum_is_additive_over_disjoint_change_sets(self):
        m = self.matrix()
        both = slice_scores(m, {"f1", "f2"}, "sum").scores
        left = slice_scores(m, {"f1"}, "sum").scores
        right = slice_scores(m, {"f2"}, "sum").scores
        for t in m.tests:
            assert both[t] == pytest.approx(left[t] + right[t], abs=1e-15)


class TestSelectTopN:
    def test_argmax(self):
        assert select_top_n(make_scores({"a": 0.5, "b": 0.3}), 1, {"a", "b"}) == ["a"]

    def test_lexicographic_tie(self):
        assert select_top_n(make_scores({"a": 0.5, "b": 0.5}), 1, {"a", "b"}) == ["a"]

    def test_zero_score_padding(self):
        # oracle: positive scores first, then remaining universe by id
        assert select_top_n(make_scores({"a": 0.5}), 3, {"a", "b", "c"}) == ["a", "b", "c"]

    def test_quota_capped_by_universe(self):
        assert select_top_n(make_scores({"a": 1.0}), 10, {"a", "b"}) == ["a", "b"]

    def test_zero_n_rejected(self):
        with pytest.raises(ValueError):
            select_top_n(make_scores({"a": 1.0}), 0, {"a"})

    @given(st.dictionaries(st.sampled_from("abcdef"), st.floats(0, 10), min_size=1),
           st.floats(min_value=0.1, max_value=100))
    @settings(max_examples=50)
    def test_invariant_under_positive_rescaling(self, scores, factor):
        universe = set(scores) | {"zz"}
        base = select_top_n(make_scores(scores), 3, universe)
        scaled = select_top_n(make_scores({t: v * factor for t, v in scores.items()}), 3, universe)
        assert base == scaled


class TestIncremental:
    def test_observe_unions(self):
        pending = new_pending(["t1"])
        pending = incremental_observe(pending, {"f1"})
        assert pending.accumulated == {"t1": {"f1"}}
        pending = incremental_observe(pending, {"f1", "f2"})
        assert pending.accumulated == {"t1": {"f1", "f2"}}
        pending = incremental_observe(pending, set())
        assert pending.accumulated == {"t1": {"f1", "f2"}}

    def test_apply_flip_blends_column(self):
        # flipped with two accumulated files: entries 0.8 * 0.5 = 0.4
        m = empty_matrix(alpha=0.8)
        pending = new_pending(["t"])
        pending.last_verdict["t"] = "pass"
        pending = incremental_observe(pending, {"f1", "f2"})
        m2, pending2 = incremental_apply(m, pending, {"t"}, {"t": "fail"})
        assert m2.entry("f1", "t") == pytest.approx(0.4, abs=1e-15)
        assert m2.entry("f2", "t") == pytest.approx(0.4, abs=1e-15)
        assert pending2.accumulated["t"] == set()
        assert pending2.last_verdict["t"] == "fail"

    def test_apply_no_flip_decays(self):
        m = SensitivityMatrix(
            cols={"t": {"f1": 0.4}}, files=frozenset({"f1"}), tests=frozenset({"t"}),
            d_mode="linear", update_mode="ema", alpha=0.8,
        )
        pending = new_pending(["t"])
        pending.last_verdict["t"] = "fail"
        m2, _ = incremental_apply(m, pending, {"t"}, {"t": "fail"})
        assert m2.entry("f1", "t") == pytest.approx(0.08, abs=1e-15)

    def test_untouched_when_not_executed(self):
        m = SensitivityMatrix(
            cols={"t": {"f1": 0.4}, "u": {"f1": 0.2}}, files=frozenset({"f1"}),
            tests=frozenset({"t", "u"}), d_mode="linear", update_mode="ema", alpha=0.8,
        )
        pending = new_pending(["t", "u"])
        pending.last_verdict.update({"t": "fail", "u": "pass"})
        m2, _ = incremental_apply(m, pending, {"t"}, {"t": "fail"})
        assert m2.cols["u"] == {"f1": 0.2}

    def test_executed_without_verdict_rejected(self):
        m = empty_matrix(alpha=0.8)
        with pytest.raises(ValueError, match="no verdict"):
            incremental_apply(m, new_pending(["t"]), {"t"}, {})

    def test_first_execution_is_not_a_flip(self):
        m = empty_matrix(alpha=0.8)
        pending = incremental_observe(new_pending(["t"]), {"f1"})
        m2, pending2 = incremental_apply(m, pending, {"t"}, {"t": "fail"})
        assert m2.nnz() == 0
        assert pending2.last_verdict["t"] == "fail"


class TestExports:
    def test_flakiness_fraction_and_mean(self):
        m = SensitivityMatrix(
            cols={"t1": {"f1": 0.3}}, files=frozenset({"f1", "f2"}),
            tests=frozenset({"t1"}), d_mode="linear", update_mode="ema", alpha=0.8,
        )
        assert flakiness_index(m) == [("t1", 0.5, pytest.approx(0.3))]

    def test_wide_shallow_test_ranks_first(self):
        # oracle on a 10-file matrix: coverage 0.9 at magnitude 0.05 beats
        # coverage 0.1 at magnitude 0.9
        files = frozenset(f"f{i}" for i in range(10))
        cols = {
            "t_wide": {f"f{i}": 0.05 for i in range(9)},
            "t_deep": {"f0": 0.9},
        }
        m = SensitivityMatrix(cols=cols, files=files, tests=frozenset(cols),
                              d_mode="linear", update_mode="ema", alpha=0.8)
        index = flakiness_index(m)
        assert index[0][0] == "t_wide"
        assert index[0][1] == pytest.approx(0.9)
        assert index[0][2] == pytest.approx(0.05)

    def test_heatmap_layout(self):
        m = SensitivityMatrix(
            cols={"t1": {"f1": 0.3}}, files=frozenset({"f1", "f2"}),
            tests=frozenset({"t1", "t2"}), d_mode="linear", update_mode="ema", alpha=0.8,
        )
        hm, fl = io.StringIO(), io.StringIO()
        export_heatmap(m, hm, fl)
        lines = hm.getvalue().splitlines()
        assert lines[0] == "file,t1,t2"
        assert lines[1] == "f1,0.3,0"
        assert lines[2] == "f2,0,0"

    def test_empty_matrix_headers_only(self):
        hm, fl = io.StringIO(), io.StringIO()
        export_heatmap(empty_matrix(alpha=0.5), hm, fl)
        assert hm.getvalue() == "file\n"
        assert fl.getvalue() == "test_id,fraction,mean_magnitude\n"

    def test_top_files(self):
        m = SensitivityMatrix(
            cols={"t1": {"f1": 0.4, "f2": 0.1}}, files=frozenset({"f1", "f2"}),
            tests=frozenset({"t1"}), d_mode="linear", update_mode="ema", alpha=0.8,
        )
        assert top_files_for_test(m, "t1", 1) == [("f1", 0.4)]
        assert top_files_for_test(m, "zz", 3) == []

    def test_top_files_tie_is_lexicographic(self):
        m = SensitivityMatrix(
            cols={"t1": {"fb": 0.2, "fa": 0.2}}, files=frozenset({"fa", "fb"}),
            tests=frozenset({"t1"}), d_mode="linear", update_mode="ema", alpha=0.8,
        )
        assert top_files_for_test(m, "t1", 2) == [("fa", 0.2), ("fb", 0.2)]

    def test_snapshot_round_trip(self):
        m = SensitivityMatrix(
            cols={"t1": {"f1": 0.25}, "t2": {"f1": 0.5, "f2": 0.125}},
            files=frozenset({"f1", "f2", "f3"}), tests=frozenset({"t1", "t2"}),
            d_mode="linear", update_mode="ema", alpha=0.8, last_seq=9,
        )
        buf = io.StringIO()
        save_matrix(m, buf)
        loaded = load_matrix(io.StringIO(buf.getvalue()))
        assert loaded == m
