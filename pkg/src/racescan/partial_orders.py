"""Declarative partial orders over a whole trace.

Every relation is a :class:`RelationMatrix` built by saturating its rules
over an n x n boolean matrix. These are the reference semantics that the
streaming engine is checked against, so clarity wins over speed here.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping

import numpy as np

from . import oracle
from .predictors import indexed_intersection
from .relation import RelationMatrix, compose, transitive_closure
from .trace import (
    LockPair,
    Op,
    RacePair,
    Trace,
    conflicting,
    conflicting_pairs,
    last_writes,
    matching_pairs,
    require_well_formed,
    standard_locksets,
)


class OrderName(str, Enum):
    TO = "TO"
    HB = "HB"
    WCP = "WCP"
    WCP_PRIME = "WCP_PRIME"
    SDP = "SDP"
    PWR = "PWR"
    PWRE = "PWRE"


@dataclass(frozen=True)
class OrderSpec:
    """Which relation to build and with which rule toggles."""

    name: OrderName
    hb_forkjoin: bool = True  # only for HB used on its own
    max_events: int | None = None  # only for PWRE, which needs the oracle

    def build(self, trace: Trace) -> RelationMatrix:
        n = self.name
        if n is OrderName.TO:
            return thread_order(trace)
        if n is OrderName.HB:
            return hb_cs(trace, forkjoin=self.hb_forkjoin)
        if n is OrderName.WCP:
            return wcp(trace, "WCP2")
        if n is OrderName.WCP_PRIME:
            return wcp(trace, "WCP2_PRIME")
        if n is OrderName.SDP:
            return sdp(trace)
        if n is OrderName.PWR:
            return pwr_closure(trace)
        return pwre_closure(trace, self.max_events)


# --- shared helpers -----------------------------------------------------------


class _Layout:
    """Positions and critical sections of a trace, in matrix coordinates."""

    def __init__(self, trace: Trace):
        require_well_formed(trace)
        self.trace = trace
        self.n = len(trace)
        self.pairs: list[LockPair] = matching_pairs(trace)
        self.members: list[list[int]] = []
        for p in self.pairs:
            lo = trace.pos(p.acquire)
            hi = self.n if p.release is None else trace.pos(p.release)
            self.members.append(
                [q for q in range(lo + 1, hi) if trace[q].thread == p.thread]
            )
        self.by_lock: dict[str, list[int]] = {}
        for i, p in enumerate(self.pairs):
            self.by_lock.setdefault(p.lock, []).append(i)

    def a(self, i: int) -> int:
        return self.trace.pos(self.pairs[i].acquire)

    def r(self, i: int) -> int | None:
        rel = self.pairs[i].release
        return None if rel is None else self.trace.pos(rel)

    def empty(self) -> np.ndarray:
        return np.zeros((self.n, self.n), dtype=bool)

    def relation(self, bits: np.ndarray) -> RelationMatrix:
        return RelationMatrix(self.trace.ids, bits)


def _thread_order_bits(trace: Trace) -> np.ndarray:
    n = len(trace)
    bits = np.zeros((n, n), dtype=bool)
    by_thread: dict[str, list[int]] = {}
    for q, e in enumerate(trace):
        by_thread.setdefault(e.thread, []).append(q)
    for qs in by_thread.values():
        idx = np.array(qs)
        bits[np.ix_(idx, idx)] = np.triu(np.ones((len(qs), len(qs)), dtype=bool), k=1)
    return bits


def _fork_join_edges(trace: Trace, bits: np.ndarray, every_event: bool) -> None:
    """fork(s) before events of s, events of s before join(s).

    With ``every_event`` off only the first/last event gets an edge, which is
    enough once program order and transitivity are in place.
    """
    by_thread: dict[str, list[int]] = {}
    for q, e in enumerate(trace):
        by_thread.setdefault(e.thread, []).append(q)
    for q, e in enumerate(trace):
        if e.op is Op.FORK:
            child = [c for c in by_thread.get(e.target, []) if c > q]
            for c in child if every_event else child[:1]:
                bits[q, c] = True
        elif e.op is Op.JOIN:
            child = [c for c in by_thread.get(e.target, []) if c < q]
            for c in child if every_event else child[-1:]:
                bits[c, q] = True


# --- thread order and happens-before ---------------------------------------


def thread_order(trace: Trace) -> RelationMatrix:
    require_well_formed(trace)
    return RelationMatrix(trace.ids, _thread_order_bits(trace))


def hb_cs(trace: Trace, forkjoin: bool = False) -> RelationMatrix:
    """Thread order plus release-before-later-acquire of the same lock, closed.

    ``forkjoin`` also adds fork and join edges; WCP composes with the relation
    without them.
    """
    lay = _Layout(trace)
    bits = _thread_order_bits(trace)
    last_rel: dict[str, list[int]] = {}
    for q, e in enumerate(trace):
        if e.is_release:
            last_rel.setdefault(e.target, []).append(q)
        elif e.is_acquire:
            for r in last_rel.get(e.target, []):
                bits[r, q] = True
    if forkjoin:
        _fork_join_edges(trace, bits, every_event=False)
    return lay.relation(transitive_closure(bits))


# --- WCP and SDP -------------------------------------------------------------


def _wcp_fixpoint(trace: Trace, variant: str, reads_only: bool) -> np.ndarray:
    if variant not in ("WCP2", "WCP2_PRIME"):
        raise ValueError(f"unknown WCP variant {variant!r}")
    lay = _Layout(trace)
    n = lay.n
    hb = hb_cs(trace).bits
    hb_refl = hb | np.eye(n, dtype=bool)
    w = lay.empty()

    # Rule (a): conflicting accesses in two critical sections of one lock.
    for idxs in lay.by_lock.values():
        for k, i in enumerate(idxs):
            r1 = lay.r(i)
            if r1 is None:
                continue
            for j in idxs[k + 1 :]:
                for e in lay.members[i]:
                    for f in lay.members[j]:
                        ev, fv = trace[e], trace[f]
                        if conflicting(ev, fv) and (not reads_only or ev.is_read or fv.is_read):
                            w[r1, f] = True
    _fork_join_edges(trace, w, every_event=True)

    lock_pairs = [
        (i, j)
        for idxs in lay.by_lock.values()
        for i in idxs
        for j in idxs
        if i != j and lay.r(i) is not None and lay.r(j) is not None
    ]
    while True:
        new = compose(compose(hb_refl, w), hb_refl)
        for i, j in lock_pairs:
            r1, r2 = lay.r(i), lay.r(j)
            if new[r1, r2]:
                continue
            if variant == "WCP2":
                hit = new[lay.a(i), r2]
            else:
                src = lay.members[i] + [lay.a(i)]
                dst = lay.members[j] + [r2]
                hit = new[np.ix_(src, dst)].any()
            if hit:
                new[r1, r2] = True
        if np.array_equal(new, w):
            return w
        w = new


def wcp(trace: Trace, variant: str = "WCP2") -> RelationMatrix:
    """Weak-causally-precedes, with either formulation of the release rule.

    The result is not closed under transitivity; races are checked against
    this relation together with thread order.
    """
    return RelationMatrix(trace.ids, _wcp_fixpoint(trace, variant, reads_only=False))


def sdp(trace: Trace) -> RelationMatrix:
    """WCP where write-write conflicts in critical sections add no edges."""
    return RelationMatrix(trace.ids, _wcp_fixpoint(trace, "WCP2", reads_only=True))


def _with_thread_order(trace: Trace, order: RelationMatrix) -> RelationMatrix:
    return order | thread_order(trace)


def wcp_races(trace: Trace, variant: str = "WCP2", lockset_kind: str = "none") -> set[RacePair]:
    return po_races(trace, _with_thread_order(trace, wcp(trace, variant)), lockset_kind)


def sdp_races(trace: Trace, lockset_kind: str = "none") -> set[RacePair]:
    return po_races(trace, _with_thread_order(trace, sdp(trace)), lockset_kind)


# --- PWR and PWR-E -----------------------------------------------------------


def _pwr_bits(trace: Trace, members: list[list[int]], lay: _Layout) -> np.ndarray:
    """PO, last-write, release-order, fork and join edges, closed.

    The release-order rule: if a read f sits in a critical section on x and
    its last write sits in an earlier critical section on x, the earlier
    release comes before f.
    """
    bits = lay.empty()
    n = lay.n
    prev: dict[str, int] = {}
    for q, e in enumerate(trace):
        if e.thread in prev:
            bits[prev[e.thread], q] = True
        prev[e.thread] = q
    _fork_join_edges(trace, bits, every_event=False)
    lw = last_writes(trace)
    for rid, wid in lw.items():
        if wid is not None:
            bits[trace.pos(wid), trace.pos(rid)] = True

    cs_of: list[list[int]] = [[] for _ in range(n)]
    for i, ms in enumerate(members):
        for q in ms:
            cs_of[q].append(i)
    for rid, wid in lw.items():
        if wid is None:
            continue
        f, e = trace.pos(rid), trace.pos(wid)
        for j in cs_of[f]:
            for i in cs_of[e]:
                pi, pj = lay.pairs[i], lay.pairs[j]
                if pi.lock == pj.lock and lay.a(i) < lay.a(j) and pi.release is not None:
                    bits[lay.r(i), f] = True
    return transitive_closure(bits)


def pwr_closure(trace: Trace) -> RelationMatrix:
    lay = _Layout(trace)
    return lay.relation(_pwr_bits(trace, lay.members, lay))


def pwre_closure(trace: Trace, max_events: int | None = None) -> RelationMatrix:
    """PWR with the release-order rule over cross-thread critical sections.

    Cross-thread membership comes from the oracle, so the trace must be small
    enough for exhaustive search and have every lock released.
    """
    lay = _Layout(trace)
    members = [
        sorted(trace.pos(q) for q in oracle.ct_cs_members(trace, p.acquire, p.release, max_events))
        for p in lay.pairs
    ]
    return lay.relation(_pwr_bits(trace, members, lay))


def pwr_locksets(trace: Trace, order: RelationMatrix | None = None) -> dict[int, frozenset[tuple[str, str]]]:
    """Thread-indexed lock sets approximated through an order.

    (x, t) is in the set of e when some critical section of t on x has
    a < e < r under ``order`` (PWR by default), or e is a same-thread member.
    """
    lay = _Layout(trace)
    if order is None:
        order = lay.relation(_pwr_bits(trace, lay.members, lay))
    bits = order.bits
    out: dict[int, set[tuple[str, str]]] = {e.id: set() for e in trace}
    for i, p in enumerate(lay.pairs):
        a = lay.a(i)
        r = lay.r(i)
        inside = set(lay.members[i])
        if r is not None:
            inside |= set(np.nonzero(bits[a] & bits[:, r])[0].tolist())
        for q in inside:
            out[trace[q].id].add((p.lock, p.thread))
    return {k: frozenset(v) for k, v in out.items()}


# --- race checks ---------------------------------------------------------------


def po_races(
    trace: Trace,
    order: RelationMatrix,
    lockset_kind: str = "std",
    *,
    max_events: int | None = None,
    locksets: Mapping[int, frozenset] | None = None,
) -> set[RacePair]:
    """Conflicting pairs unordered by ``order`` whose lock sets do not overlap.

    ``lockset_kind`` is ``none``, ``std``, ``ct``, ``ctt`` (thread-indexed,
    from the oracle) or ``pwr`` (thread-indexed, approximated via PWR).
    """
    if lockset_kind not in ("none", "std", "ct", "ctt", "pwr"):
        raise ValueError(f"unknown lock set kind {lockset_kind!r}")
    indexed = lockset_kind in ("ctt", "pwr")
    if locksets is None:
        if lockset_kind == "std":
            locksets = standard_locksets(trace)
        elif lockset_kind == "ct":
            locksets = oracle.ct_locksets(trace, max_events)
        elif lockset_kind == "ctt":
            locksets = oracle.ctt_locksets(trace, max_events)
        elif lockset_kind == "pwr":
            locksets = pwr_locksets(trace)
    out = set()
    for e, f in conflicting_pairs(trace):
        if order.ordered(e, f) or order.ordered(f, e):
            continue
        if locksets is not None:
            if indexed:
                if indexed_intersection(locksets[e], locksets[f]):
                    continue
            elif set(locksets[e]) & set(locksets[f]):
                continue
        out.add((e, f))
    return out


def pwr_races(trace: Trace) -> set[RacePair]:
    return po_races(trace, pwr_closure(trace), "std")


def hb_races(trace: Trace, forkjoin: bool = True) -> set[RacePair]:
    return po_races(trace, hb_cs(trace, forkjoin=forkjoin), "none")
