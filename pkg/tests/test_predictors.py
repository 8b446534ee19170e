from __future__ import annotations

import pytest
from conftest import small_trace, tr
from hypothesis import given
from hypothesis import strategies as st

from racescan import oracle
from racescan.predictors import (
    ct_predictor,
    ctt_predictor,
    evaluate_predictor,
    indexed_intersection,
    predict_races,
    predict_races_indexed,
    std_predictor,
)
from racescan.trace_io import load_fixture


class TestIndexedIntersection:
    @pytest.mark.parametrize(
        "m, n, expect",
        [
            ({("x", "t1")}, {("x", "t2")}, {"x"}),
            ({("x", "t1")}, {("x", "t1")}, set()),
            ({("x", "t1"), ("x", "t2")}, {("x", "t1")}, {"x"}),
            ({("x", "t1")}, {("y", "t2")}, set()),
            (set(), {("x", "t1")}, set()),
            ({("x", "t1"), ("y", "t2")}, {("y", "t3"), ("x", "t1")}, {"y"}),
        ],
    )
    def test_examples(self, m, n, expect):
        assert indexed_intersection(m, n) == expect

    @given(
        st.sets(st.tuples(st.sampled_from("xyz"), st.sampled_from(["t1", "t2", "t3"]))),
        st.sets(st.tuples(st.sampled_from("xyz"), st.sampled_from(["t1", "t2", "t3"]))),
    )
    def test_symmetric_and_below_plain_intersection(self, m, n):
        got = indexed_intersection(m, n)
        assert got == indexed_intersection(n, m)
        assert got <= {x for x, _ in m} & {x for x, _ in n}

    @given(
        st.sets(st.tuples(st.sampled_from("xy"), st.sampled_from(["t1", "t2"]))),
        st.sets(st.tuples(st.sampled_from("xy"), st.sampled_from(["t1", "t2"]))),
        st.sets(st.tuples(st.sampled_from("xy"), st.sampled_from(["t1", "t2"]))),
    )
    def test_monotone(self, m, n, extra):
        assert indexed_intersection(m, n) <= indexed_intersection(m | extra, n)


class TestFixtures:
    def test_lockset_fixture(self):
        t = load_fixture("data-race-prediction-using-lock-sets")
        assert std_predictor(t) == {(2, 6)}
        assert evaluate_predictor(t, std_predictor(t)).exact

    def test_cross_thread_fixture(self):
        t = load_fixture("cross-thread-critical-sections")
        assert std_predictor(t) == {(4, 8)}
        ev = evaluate_predictor(t, std_predictor(t))
        assert ev.false_positives == {(4, 8)} and not ev.false_negatives
        assert ct_predictor(t) == ctt_predictor(t) == set()

    def test_plain_cross_thread_locksets_miss_a_race(self):
        t = load_fixture("cross-thread-lockset-false-negative")
        assert ct_predictor(t) == set()
        assert evaluate_predictor(t, ct_predictor(t)).false_negatives == {(3, 4)}
        assert ctt_predictor(t) == {(3, 4)}

    def test_missing_lockset_is_reported(self):
        t = tr("t1 fork t2\nt1 w a\nt2 w a")
        with pytest.raises(KeyError, match="e3"):
            predict_races(t, {1: set(), 2: set()})
        with pytest.raises(KeyError):
            predict_races_indexed(t, {1: set(), 2: set()})


class TestSweep:
    @given(st.integers(0, 100_000))
    def test_chain_and_completeness(self, seed):
        t = small_trace(seed)
        truth = oracle.true_race_pairs(t)
        std, ct, ctt = std_predictor(t), ct_predictor(t), ctt_predictor(t)
        assert ct <= ctt <= std
        assert truth <= std
        assert truth <= ctt

    @given(st.integers(0, 100_000))
    def test_evaluation_partitions(self, seed):
        t = small_trace(seed)
        pred = std_predictor(t)
        ev = evaluate_predictor(t, pred)
        truth = oracle.true_race_pairs(t)
        assert ev.false_positives == pred - truth
        assert ev.false_negatives == truth - pred
        assert ev.predicted - ev.false_positives == pred & truth
