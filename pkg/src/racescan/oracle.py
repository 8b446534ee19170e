"""Ground truth by exhaustive exploration of correctly reordered prefixes.

A correctly reordered prefix keeps every thread's events in program order,
is itself well-formed, and lets every read observe the same write as in the
original trace. Prefixes that agree on how far each thread got and on the
current last writer of every variable behave identically from then on, so the
search runs over those states rather than over event sequences.

The search is exponential. Traces longer than ``max_events`` (default 14, or
the ``RACESCAN_ORACLE_MAX`` environment variable) are refused.
"""

from __future__ import annotations

import itertools
import os
from collections import defaultdict
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

from .relation import RelationMatrix
from .trace import (
    Event,
    LockPair,
    Op,
    RacePair,
    Trace,
    TraceError,
    check_well_formed,
    matching_pairs,
    require_well_formed,
    standard_locksets,
)

DEFAULT_MAX_EVENTS = 14


class OracleLimitError(ValueError):
    """The trace is too long for exhaustive search."""


def default_max_events() -> int:
    raw = os.environ.get("RACESCAN_ORACLE_MAX")
    return int(raw) if raw else DEFAULT_MAX_EVENTS


@dataclass(frozen=True)
class RaceWitness:
    """A predictable race and a correctly reordered prefix ending in the two events."""

    pair: RacePair
    schedule: tuple[int, ...]


@dataclass(frozen=True)
class DeadlockWitness:
    """A correctly reordered prefix after which each listed thread waits for its lock."""

    prefix: tuple[int, ...]
    blocked: tuple[tuple[str, str], ...]  # (thread, lock it is about to acquire)


State = tuple[tuple[int, ...], tuple[int, ...]]


class ReorderingSpace:
    """All states reachable by correctly reordered prefixes of a trace."""

    def __init__(self, trace: Trace, max_events: int | None = None):
        limit = default_max_events() if max_events is None else max_events
        if len(trace) > limit:
            raise OracleLimitError(
                f"trace has {len(trace)} events; exhaustive search is limited to {limit}"
            )
        require_well_formed(trace)
        self.trace = trace
        n = self.n = len(trace)
        threads = list(dict.fromkeys(e.thread for e in trace))
        self.threads = threads
        tix = {t: i for i, t in enumerate(threads)}
        self.tid = [tix[e.thread] for e in trace]
        self.thread_pos: list[list[int]] = [[] for _ in threads]
        for p, e in enumerate(trace):
            self.thread_pos[self.tid[p]].append(p)
        self.prefix_mask = []
        for ps in self.thread_pos:
            masks = [0]
            for p in ps:
                masks.append(masks[-1] | (1 << p))
            self.prefix_mask.append(masks)

        self.fork_bit = [0] * len(threads)
        self.join_mask = [0] * len(threads)
        acq_mask: dict[str, int] = defaultdict(int)
        rel_mask: dict[str, int] = defaultdict(int)
        variables = list(dict.fromkeys(e.target for e in trace if e.is_access))
        vix = {v: i for i, v in enumerate(variables)}
        self.nvars = len(variables)
        self.vid = [-1] * n
        self.orig_lw = [-1] * n
        cur: dict[str, int] = {}
        for p, e in enumerate(trace):
            if e.op is Op.FORK and e.target in tix:
                self.fork_bit[tix[e.target]] = 1 << p
            elif e.op is Op.JOIN and e.target in tix:
                self.join_mask[tix[e.target]] |= 1 << p
            elif e.is_acquire:
                acq_mask[e.target] |= 1 << p
            elif e.is_release:
                rel_mask[e.target] |= 1 << p
            elif e.is_access:
                self.vid[p] = vix[e.target]
                if e.is_read:
                    self.orig_lw[p] = cur.get(e.target, -1)
                else:
                    cur[e.target] = p
        self.join_target = [
            tix[e.target] if e.op is Op.JOIN and e.target in tix else -1 for e in trace
        ]
        self.acq_mask = [acq_mask.get(e.target, 0) for e in trace]
        self.rel_mask = [rel_mask.get(e.target, 0) for e in trace]

        self.parent: dict[State, tuple[State, int] | None] = {}
        self.states: list[State] = []
        self.can_before = [0] * n
        self._race_states: dict[tuple[int, int], State] = {}
        self._explore()

    # -- state helpers --

    def mask_of(self, state: State) -> int:
        lengths = state[0]
        m = 0
        for t, k in enumerate(lengths):
            m |= self.prefix_mask[t][k]
        return m

    def enabled(self, state: State, mask: int | None = None) -> list[int]:
        """Positions that can extend the prefix described by ``state``."""
        lengths, lw = state
        if mask is None:
            mask = self.mask_of(state)
        out = []
        for t, k in enumerate(lengths):
            ps = self.thread_pos[t]
            if k == len(ps) or mask & self.join_mask[t]:
                continue
            if t != 0 and not mask & self.fork_bit[t]:
                continue
            p = ps[k]
            e = self.trace[p]
            if e.is_acquire:
                if (mask & self.acq_mask[p]).bit_count() > (mask & self.rel_mask[p]).bit_count():
                    continue
            elif e.is_read:
                if lw[self.vid[p]] != self.orig_lw[p]:
                    continue
            elif self.join_target[p] >= 0:
                s = self.join_target[p]
                if lengths[s] != len(self.thread_pos[s]):
                    continue
            out.append(p)
        return out

    def step(self, state: State, p: int) -> State:
        lengths, lw = state
        t = self.tid[p]
        nl = lengths[:t] + (lengths[t] + 1,) + lengths[t + 1 :]
        if self.trace[p].is_write:
            v = self.vid[p]
            lw = lw[:v] + (p,) + lw[v + 1 :]
        return nl, lw

    def _explore(self) -> None:
        start: State = ((0,) * len(self.threads), (-1,) * self.nvars)
        self.parent[start] = None
        stack = [start]
        trace = self.trace
        while stack:
            st = stack.pop()
            self.states.append(st)
            mask = self.mask_of(st)
            en = self.enabled(st, mask)
            for p in en:
                self.can_before[p] |= mask
            accs = [p for p in en if self.vid[p] >= 0]
            for i, p in enumerate(accs):
                for q in accs[i + 1 :]:
                    e, f = trace[p], trace[q]
                    if e.target == f.target and (e.is_write or f.is_write):
                        key = (min(p, q), max(p, q))
                        self._race_states.setdefault(key, st)
            for p in en:
                nxt = self.step(st, p)
                if nxt not in self.parent:
                    self.parent[nxt] = (st, p)
                    stack.append(nxt)

    def path_to(self, state: State) -> list[int]:
        """A schedule reaching ``state``: its events in trace order when that is valid."""
        mask = self.mask_of(state)
        canon = [p for p in range(self.n) if (mask >> p) & 1]
        if self.is_valid_sequence(canon, target=state):
            return canon
        out = []
        cur = self.parent[state]
        while cur is not None:
            st, p = cur
            out.append(p)
            cur = self.parent[st]
        out.reverse()
        return out

    def is_valid_sequence(self, positions: Sequence[int], target: State | None = None) -> bool:
        # Same executed set is not enough: the last writers must match too.
        st: State = ((0,) * len(self.threads), (-1,) * self.nvars)
        for p in positions:
            if p not in self.enabled(st):
                return False
            st = self.step(st, p)
        return target is None or st == target

    # -- results --

    def race_witnesses(self) -> dict[tuple[int, int], list[int]]:
        out = {}
        for (p, q), st in self._race_states.items():
            base = self.path_to(st)
            after = self.step(st, p)
            tail = [p, q] if q in self.enabled(after) else [q, p]
            out[(p, q)] = base + tail
        return out

    def mhb_bits(self) -> np.ndarray:
        n = self.n
        bits = np.zeros((n, n), dtype=bool)
        for p in range(n):
            cb = self.can_before[p]
            for q in range(n):
                if q != p and not (cb >> q) & 1:
                    bits[p, q] = True
        return bits


@lru_cache(maxsize=64)
def _space(trace: Trace, max_events: int | None) -> ReorderingSpace:
    return ReorderingSpace(trace, max_events)


def space(trace: Trace, max_events: int | None = None) -> ReorderingSpace:
    limit = default_max_events() if max_events is None else max_events
    return _space(trace, limit)


# --- correct reorderings ----------------------------------------------------


def is_correct_reordering(trace: Trace, candidate: Sequence[Event] | Sequence[int]) -> bool:
    """Whether ``candidate`` (events or ids of ``trace``) is a correctly reordered prefix.

    Checked directly against the definition, without the state search.
    """
    ids = [c.id if isinstance(c, Event) else c for c in candidate]
    if len(set(ids)) != len(ids):
        return False
    try:
        sub = Trace(trace.event(i) for i in ids)
    except KeyError:
        return False
    if sub and check_well_formed(sub, main=trace.main_thread).violations:
        return False
    for t in trace.threads:
        orig = [e.id for e in trace if e.thread == t]
        mine = [e.id for e in sub if e.thread == t]
        if orig[: len(mine)] != mine:
            return False
    # A join waits for the whole joined thread, not only its events so far.
    done: set[int] = set()
    for e in sub:
        if e.op is Op.JOIN and any(f.thread == e.target and f.id not in done for f in trace):
            return False
        done.add(e.id)
    cur: dict[str, int] = {}
    orig_lw = {}
    for e in trace:
        if e.is_read:
            orig_lw[e.id] = cur.get(e.target)
        elif e.is_write:
            cur[e.target] = e.id
    cur = {}
    for e in sub:
        if e.is_read:
            if orig_lw[e.id] is not None and cur.get(e.target) != orig_lw[e.id]:
                return False
            if orig_lw[e.id] is None and e.target in cur:
                return False
        elif e.is_write:
            cur[e.target] = e.id
    return True


def enumerate_reorderings(trace: Trace, max_events: int | None = None) -> Iterator[tuple[int, ...]]:
    """Every correctly reordered prefix, as a tuple of event ids, depth first."""
    sp = space(trace, max_events)
    ids = trace.ids
    start: State = ((0,) * len(sp.threads), (-1,) * sp.nvars)
    stack: list[tuple[State, tuple[int, ...]]] = [(start, ())]
    while stack:
        st, seq = stack.pop()
        yield tuple(ids[p] for p in seq)
        for p in reversed(sp.enabled(st)):
            stack.append((sp.step(st, p), seq + (p,)))


# --- must-happen-before and races -----------------------------------------


def mhb(trace: Trace, max_events: int | None = None) -> RelationMatrix:
    return RelationMatrix(trace.ids, space(trace, max_events).mhb_bits())


def can_precede(trace: Trace, f: int, e: int, max_events: int | None = None) -> bool:
    """Some correctly reordered prefix contains f and then e."""
    sp = space(trace, max_events)
    return bool((sp.can_before[trace.pos(e)] >> trace.pos(f)) & 1)


def true_races(trace: Trace, max_events: int | None = None) -> set[RaceWitness]:
    """Conflicting pairs that some correctly reordered prefix has side by side at its end."""
    sp = space(trace, max_events)
    ids = trace.ids
    out = set()
    for (p, q), seq in sp.race_witnesses().items():
        out.add(RaceWitness((ids[p], ids[q]), tuple(ids[i] for i in seq)))
    return out


def true_race_pairs(trace: Trace, max_events: int | None = None) -> set[RacePair]:
    return {w.pair for w in true_races(trace, max_events)}


# --- critical sections and lock sets ---------------------------------------


def _closed_pairs(trace: Trace) -> list[LockPair]:
    pairs = matching_pairs(trace)
    open_ = [p for p in pairs if p.release is None]
    if open_:
        raise TraceError(
            f"lock {open_[0].lock} acquired at e{open_[0].acquire} is never released; "
            "close the trace first"
        )
    return pairs


def find_pair(trace: Trace, acq: Event | int, rel: Event | int | None) -> LockPair:
    """The matching pair with this acquire and release; ``ValueError`` if they do not match."""
    a = acq.id if isinstance(acq, Event) else acq
    r = rel.id if isinstance(rel, Event) else rel
    for p in matching_pairs(trace):
        if p.acquire == a:
            if p.release != r:
                break
            return p
    raise ValueError(f"e{a} and e{r} are not a matching acquire/release pair")


def std_cs_members(trace: Trace, acq: Event | int, rel: Event | int | None) -> set[int]:
    """Same-thread events strictly between acquire and release."""
    pair = find_pair(trace, acq, rel)
    lo = trace.pos(pair.acquire)
    hi = len(trace) if pair.release is None else trace.pos(pair.release)
    return {e.id for e in trace.events[lo + 1 : hi] if e.thread == pair.thread}


def _ct_members(trace: Trace, sp: ReorderingSpace, pair: LockPair, later_releases: list[int]) -> set[int]:
    pa = trace.pos(pair.acquire)
    pr = trace.pos(pair.release)
    out = set()
    for q, e in enumerate(trace):
        if q in (pa, pr):
            continue
        if e.thread == pair.thread:
            if pa < q < pr:
                out.add(e.id)
            continue
        # CS-CROSS-1: a before e before r in every correct reordering.
        if (sp.can_before[pa] >> q) & 1 or (sp.can_before[q] >> pr) & 1:
            continue
        # CS-CROSS-2: no later release of the lock by the same thread can come first.
        if any((sp.can_before[q] >> r) & 1 for r in later_releases):
            continue
        out.add(e.id)
    return out


def ct_cs_members(
    trace: Trace, acq: Event | int, rel: Event | int, max_events: int | None = None
) -> set[int]:
    """Events inside the critical section in every correct reordering, from any thread."""
    _closed_pairs(trace)
    pair = find_pair(trace, acq, rel)
    sp = space(trace, max_events)
    return _ct_members(trace, sp, pair, _later_releases(trace, pair))


def _later_releases(trace: Trace, pair: LockPair) -> list[int]:
    pr = trace.pos(pair.release)
    return [
        q
        for q, e in enumerate(trace)
        if q > pr and e.is_release and e.target == pair.lock and e.thread == pair.thread
    ]


@lru_cache(maxsize=64)
def _ct_table(trace: Trace, limit: int) -> dict[int, frozenset[tuple[str, str]]]:
    pairs = _closed_pairs(trace)
    sp = _space(trace, limit)
    acc: dict[int, set[tuple[str, str]]] = {e.id: set() for e in trace}
    for pair in pairs:
        for eid in _ct_members(trace, sp, pair, _later_releases(trace, pair)):
            acc[eid].add((pair.lock, pair.thread))
    return {k: frozenset(v) for k, v in acc.items()}


def ctt_locksets(trace: Trace, max_events: int | None = None) -> dict[int, frozenset[tuple[str, str]]]:
    """Cross-thread lock sets tagged with the thread that acquired each lock."""
    limit = default_max_events() if max_events is None else max_events
    return _ct_table(trace, limit)


def ct_locksets(trace: Trace, max_events: int | None = None) -> dict[int, frozenset[str]]:
    return {k: frozenset(x for x, _ in v) for k, v in ctt_locksets(trace, max_events).items()}


def ctt_lockset(trace: Trace, e: int, max_events: int | None = None) -> frozenset[tuple[str, str]]:
    return ctt_locksets(trace, max_events)[e]


def ct_lockset(trace: Trace, e: int, max_events: int | None = None) -> frozenset[str]:
    return ct_locksets(trace, max_events)[e]


def std_lockset(trace: Trace, e: int) -> frozenset[str]:
    return standard_locksets(trace)[e]


# --- predictable deadlocks --------------------------------------------------


def predictable_deadlock(trace: Trace, max_events: int | None = None) -> DeadlockWitness | None:
    """A reachable prefix where n > 1 threads each wait for a lock another one holds.

    Each waiting thread has stopped right before an acquire of a distinct lock,
    and every such lock is in the standard lock set of another waiting thread's
    last executed event.
    """
    sp = space(trace, max_events)
    std = standard_locksets(trace)
    ids = trace.ids
    for st in sorted(sp.states, key=lambda s: sum(s[0])):
        lengths = st[0]
        cands = []
        for t, k in enumerate(lengths):
            ps = sp.thread_pos[t]
            if 0 < k < len(ps) and trace[ps[k]].is_acquire:
                last = trace[ps[k - 1]]
                cands.append((t, trace[ps[k]].target, std[last.id]))
        if len(cands) < 2:
            continue
        for size in range(2, len(cands) + 1):
            for combo in itertools.combinations(cands, size):
                locks = [c[1] for c in combo]
                if len(set(locks)) != size:
                    continue
                if all(
                    any(x in combo[j][2] for j in range(size) if j != i)
                    for i, x in enumerate(locks)
                ):
                    prefix = tuple(ids[p] for p in sp.path_to(st))
                    blocked = tuple((sp.threads[c[0]], c[1]) for c in combo)
                    return DeadlockWitness(prefix, blocked)
    return None


def clear_caches() -> None:
    """Forget memoized search spaces, for timing or memory."""
    _space.cache_clear()
    _ct_table.cache_clear()
