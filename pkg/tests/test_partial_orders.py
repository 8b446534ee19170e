from __future__ import annotations

import numpy as np
import pytest
from conftest import small_trace, tr
from hypothesis import given
from hypothesis import strategies as st

from racescan import oracle
from racescan.partial_orders import (
    OrderName,
    OrderSpec,
    hb_cs,
    hb_races,
    po_races,
    pwr_closure,
    pwr_locksets,
    pwr_races,
    pwre_closure,
    sdp,
    sdp_races,
    thread_order,
    wcp,
    wcp_races,
)
from racescan.relation import RelationMatrix, transitive_closure
from racescan.trace import matching_pairs, standard_locksets
from racescan.trace_io import load_fixture


class TestRelationMatrix:
    def test_closure_of_chain(self):
        bits = np.zeros((4, 4), dtype=bool)
        bits[0, 1] = bits[1, 2] = bits[2, 3] = True
        c = transitive_closure(bits)
        assert c[0, 3] and not c[3, 0]

    def test_from_pairs_and_queries(self):
        t = tr("t1 w a\nt1 w b\nt1 w c")
        m = RelationMatrix.from_pairs(t, [(1, 2), (2, 3)])
        assert m.ordered(1, 2) and not m.ordered(1, 3)
        assert not m.is_transitive()
        assert m.closure().is_strict_partial_order()
        assert m <= m.closure() and not m.closure() <= m
        assert (m | RelationMatrix.from_pairs(t, [(1, 3)])) == m.closure()

    def test_unknown_id(self):
        m = RelationMatrix.empty(tr("t1 w a"))
        with pytest.raises(KeyError):
            m.ordered(1, 9)


class TestThreadOrderAndHB:
    def test_thread_order(self):
        t = load_fixture("comparison-between-hb-and-wcp")
        to = thread_order(t)
        assert to.ordered(2, 3) and not to.comparable(3, 7)

    def test_hb_orders_through_critical_sections(self):
        t = load_fixture("comparison-between-hb-and-wcp")
        hb = hb_cs(t)
        assert hb.ordered(4, 5) and hb.ordered(3, 7)
        assert hb_races(t) == set()

    def test_forkjoin_toggle(self):
        t = load_fixture("cross-thread-critical-sections")
        assert not hb_cs(t).ordered(3, 4)
        assert hb_cs(t, forkjoin=True).ordered(3, 4)
        assert hb_races(t, forkjoin=True) == set()

    @given(st.integers(0, 100_000))
    def test_hb_is_partial_order(self, seed):
        t = small_trace(seed, events=30)
        assert hb_cs(t).is_strict_partial_order()
        assert hb_cs(t, forkjoin=True).is_strict_partial_order()


class TestWCP:
    def test_hb_wcp_fixture(self):
        t = load_fixture("comparison-between-hb-and-wcp")
        assert not wcp(t).comparable(3, 7)
        assert wcp_races(t) == {(3, 7)}

    def test_sdp_fixture(self):
        t = load_fixture("wcp-no-race-false-negative-sdp-race")
        assert wcp(t).ordered(2, 9)
        assert wcp_races(t) == set()
        assert not sdp(t).comparable(2, 9)
        assert sdp_races(t, "std") == {(2, 9)}
        # The writes to b stay unordered but share y.
        assert (4, 7) in sdp_races(t, "none")

    def test_no_race_nor_deadlock_fixture(self):
        t = load_fixture("trace-with-no-predictable-race-nor-a-predictable-deadlock")
        assert wcp(t).ordered(7, 12)
        assert wcp_races(t) == set()

    def test_read_read_sections_add_no_sdp_edges(self):
        t = tr("""
            t1 fork t2
            t1 acq x
            t1 r a
            t1 rel x
            t2 acq x
            t2 r a
            t2 rel x
        """)
        assert not sdp(t).pairs() - wcp(t).pairs()
        assert not sdp(t).ordered(4, 6)

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            wcp(tr("t1 w a"), "WCP9")

    @given(st.integers(0, 100_000))
    def test_formulations_agree(self, seed):
        t = small_trace(seed, events=16)
        assert wcp(t, "WCP2") == wcp(t, "WCP2_PRIME")

    @pytest.mark.parametrize("name", ["comparison-between-hb-and-wcp", "wcp-no-race-false-negative-sdp-race",
                                      "trace-with-no-predictable-race-nor-a-predictable-deadlock",
                                      "lock-order-inversion-deadlock", "enhancement-e1-by-example"])
    def test_acyclic_with_thread_order(self, name):
        t = load_fixture(name)
        assert (wcp(t) | thread_order(t)).closure().is_irreflexive()


class TestPWR:
    def test_incompleteness_fixture(self):
        t = load_fixture("incompleteness-due-to-tracking-most-recent-reads-writes-only")
        assert not pwr_closure(t).comparable(2, 7)
        assert pwr_races(t) == {(2, 7)}

    def test_cross_thread_fixture(self):
        t = load_fixture("cross-thread-critical-sections")
        assert not pwr_closure(t).comparable(4, 8)
        assert po_races(t, pwr_closure(t), "std") == {(4, 8)}
        assert po_races(t, pwre_closure(t), "ctt") == set()
        assert po_races(t, pwr_closure(t), "pwr") == set()

    def test_program_order_included(self):
        t = load_fixture("enhancement-e1-by-example")
        assert thread_order(t) <= pwr_closure(t)

    def test_last_write_edge(self):
        t = tr("t1 fork t2\nt1 w a\nt2 r a")
        assert pwr_closure(t).ordered(2, 3)

    def test_release_rule(self):
        t = tr("""
            t1 fork t2
            t1 acq x
            t1 w a
            t1 rel x
            t2 acq x
            t2 r a
            t2 rel x
        """)
        assert pwr_closure(t).ordered(4, 6)
        assert not pwr_closure(t).ordered(4, 5)

    def test_e1_fixture(self):
        t = load_fixture("enhancement-e1-by-example")
        assert pwre_closure(t).ordered(5, 13)
        assert not pwr_closure(t).ordered(5, 13)
        assert pwr_closure(t) <= pwre_closure(t)
        assert pwr_races(t) == {(5, 13)}
        assert po_races(t, pwre_closure(t), "std") == set()

    def test_pwre_single_thread(self):
        t = tr("t1 acq x\nt1 w a\nt1 rel x\nt1 r a")
        assert pwre_closure(t) == thread_order(t)

    def test_total_order_reports_nothing(self):
        t = load_fixture("data-race-prediction-using-lock-sets")
        total = RelationMatrix(t.ids, np.triu(np.ones((len(t), len(t)), dtype=bool), k=1))
        assert po_races(t, total, "none") == set()

    def test_unknown_lockset_kind(self):
        t = tr("t1 w a")
        with pytest.raises(ValueError):
            po_races(t, thread_order(t), "fancy")

    def test_pwr_locksets_contain_std(self):
        t = load_fixture("cross-thread-critical-sections")
        ls = pwr_locksets(t)
        assert ls[4] == {("x", "t1")}
        std = standard_locksets(t)
        for e in t:
            assert {x for x, s in ls[e.id] if s == e.thread} >= std[e.id]

    @given(st.integers(0, 100_000))
    def test_pwr_is_partial_order_below_mhb(self, seed):
        t = small_trace(seed)
        m = oracle.mhb(t)
        p = pwr_closure(t)
        pe = pwre_closure(t)
        assert p.is_strict_partial_order() and pe.is_strict_partial_order()
        assert p <= m and pe <= m
        assert p <= pe

    @given(st.integers(0, 100_000))
    def test_pwre_equals_pwr_without_cross_thread_sections(self, seed):
        t = small_trace(seed)
        if all(
            oracle.ct_cs_members(t, p.acquire, p.release) == oracle.std_cs_members(t, p.acquire, p.release)
            for p in matching_pairs(t)
        ):
            assert pwre_closure(t) == pwr_closure(t)


class TestOrderSpec:
    @pytest.mark.parametrize("name", list(OrderName))
    def test_build(self, name):
        t = load_fixture("comparison-between-hb-and-wcp")
        assert OrderSpec(name).build(t).is_irreflexive()

    def test_hb_toggle(self):
        t = load_fixture("cross-thread-critical-sections")
        assert OrderSpec(OrderName.HB).build(t) == hb_cs(t, forkjoin=True)
        assert OrderSpec(OrderName.HB, hb_forkjoin=False).build(t) == hb_cs(t)
