"""Events, traces, well-formedness checks and the small helpers shared by every analysis.

A trace is an immutable sequence of events. Event ids are the 1-based
positions of the events unless explicitly numbered otherwise, and every
analysis in the package refers to events by id.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Sequence


class Op(str, Enum):
    READ = "r"
    WRITE = "w"
    ACQUIRE = "acq"
    RELEASE = "rel"
    FORK = "fork"
    JOIN = "join"

    @property
    def is_access(self) -> bool:
        return self is Op.READ or self is Op.WRITE

    @property
    def is_lock(self) -> bool:
        return self is Op.ACQUIRE or self is Op.RELEASE

    @property
    def is_thread(self) -> bool:
        return self is Op.FORK or self is Op.JOIN


@dataclass(frozen=True, slots=True)
class Event:
    """One operation. ``target`` is a variable, a lock or a thread depending on ``op``."""

    id: int
    thread: str
    op: Op
    target: str
    loc: str | None = None

    @property
    def is_access(self) -> bool:
        return self.op is Op.READ or self.op is Op.WRITE

    @property
    def is_read(self) -> bool:
        return self.op is Op.READ

    @property
    def is_write(self) -> bool:
        return self.op is Op.WRITE

    @property
    def is_acquire(self) -> bool:
        return self.op is Op.ACQUIRE

    @property
    def is_release(self) -> bool:
        return self.op is Op.RELEASE

    def __str__(self) -> str:
        return f"e{self.id}:{self.thread}|{self.op.value}({self.target})"


def conflicting(e: Event, f: Event) -> bool:
    """Two accesses to the same variable from different threads, at least one a write."""
    return (
        e.is_access
        and f.is_access
        and e.target == f.target
        and e.thread != f.thread
        and (e.is_write or f.is_write)
    )


class Trace(Sequence[Event]):
    """Immutable event sequence with id lookup.

    Indexing is by 0-based position; use :meth:`event` and :meth:`pos` for ids.
    """

    __slots__ = ("_events", "_pos", "_hash", "_threads")

    def __init__(self, events: Iterable[Event]):
        evs = tuple(events)
        pos: dict[int, int] = {}
        for i, e in enumerate(evs):
            if e.id in pos:
                raise ValueError(f"duplicate event id {e.id}")
            pos[e.id] = i
        self._events = evs
        self._pos = pos
        self._hash: int | None = None
        self._threads: tuple[str, ...] | None = None

    @classmethod
    def from_tuples(cls, rows: Iterable[tuple]) -> "Trace":
        """Build from ``(thread, op, target)`` or ``(thread, op, target, loc)`` rows."""
        events = []
        for i, row in enumerate(rows, start=1):
            thread, op, target, *rest = row
            events.append(Event(i, thread, Op(op), target, rest[0] if rest else None))
        return cls(events)

    def __len__(self) -> int:
        return len(self._events)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Trace(self._events[i])
        return self._events[i]

    def __iter__(self) -> Iterator[Event]:
        return iter(self._events)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Trace) and self._events == other._events

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(self._events)
        return self._hash

    def __repr__(self) -> str:
        return f"Trace({len(self)} events)"

    @property
    def events(self) -> tuple[Event, ...]:
        return self._events

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(e.id for e in self._events)

    def event(self, eid: int) -> Event:
        return self._events[self._pos[eid]]

    def pos(self, eid: int) -> int:
        """0-based position of the event with id ``eid``."""
        return self._pos[eid]

    def __contains__(self, item: object) -> bool:
        if isinstance(item, Event):
            i = self._pos.get(item.id)
            return i is not None and self._events[i] == item
        return False

    @property
    def main_thread(self) -> str | None:
        return self._events[0].thread if self._events else None

    @property
    def threads(self) -> tuple[str, ...]:
        """Threads in order of first appearance, as actor or as fork/join target."""
        if self._threads is None:
            seen: dict[str, None] = {}
            for e in self._events:
                seen.setdefault(e.thread)
                if e.op.is_thread:
                    seen.setdefault(e.target)
            self._threads = tuple(seen)
        return self._threads

    @property
    def locks(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(e.target for e in self._events if e.op.is_lock))

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(e.target for e in self._events if e.op.is_access))

    def project(self, thread: str) -> list[Event]:
        return [e for e in self._events if e.thread == thread]

    def by_thread(self) -> dict[str, list[Event]]:
        out: dict[str, list[Event]] = defaultdict(list)
        for e in self._events:
            out[e.thread].append(e)
        return dict(out)

    def renumbered(self) -> "Trace":
        """Same events with ids reset to 1..n."""
        return Trace(
            Event(i, e.thread, e.op, e.target, e.loc) for i, e in enumerate(self._events, start=1)
        )


def project(trace: Trace, thread: str) -> list[Event]:
    return trace.project(thread)


# --- well-formedness -------------------------------------------------------


class Rule(str, Enum):
    LOCK_1 = "Lock-1"
    LOCK_2 = "Lock-2"
    FORK_1 = "Fork-1"
    FORK_2 = "Fork-2"
    JOIN = "Join"


@dataclass(frozen=True)
class Violation:
    rule: Rule
    events: tuple[int, ...]
    message: str

    def __str__(self) -> str:
        where = ",".join(f"e{i}" for i in self.events)
        return f"{self.rule.value} [{where}]: {self.message}"


@dataclass(frozen=True)
class WellFormedReport:
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def by_rule(self, rule: Rule) -> list[Violation]:
        return [v for v in self.violations if v.rule is rule]

    def rules(self) -> set[Rule]:
        return {v.rule for v in self.violations}


class TraceError(ValueError):
    """Raised when an operation needs a well-formed trace and did not get one."""

    def __init__(self, message: str, report: WellFormedReport | None = None):
        super().__init__(message)
        self.report = report


def check_well_formed(trace: Trace, main: str | None = None) -> WellFormedReport:
    """Check every well-formedness rule and collect all violations.

    ``main`` defaults to the thread of the first event.
    """
    if main is None:
        main = trace.main_thread
    out: list[Violation] = []

    # Lock-1: a second acquire while some acquire of the same lock is still open.
    open_acq: dict[str, list[Event]] = defaultdict(list)
    for e in trace:
        if e.is_acquire:
            for a in open_acq[e.target]:
                msg = f"lock {e.target} acquired by {e.thread} while held by {a.thread}"
                if a.thread == e.thread:
                    msg += " (reentrant acquire)"
                out.append(Violation(Rule.LOCK_1, (a.id, e.id), msg))
            open_acq[e.target].append(e)
        elif e.is_release:
            held = open_acq[e.target]
            open_acq[e.target] = [a for a in held if a.thread != e.thread]

    # Lock-2: a release needs a matching earlier acquire in the same thread.
    last_acq: dict[tuple[str, str], Event] = {}
    last_rel: dict[tuple[str, str], Event] = {}
    for e in trace:
        key = (e.thread, e.target)
        if e.is_acquire:
            last_acq[key] = e
        elif e.is_release:
            a = last_acq.get(key)
            r = last_rel.get(key)
            if a is None or (r is not None and trace.pos(r.id) > trace.pos(a.id)):
                out.append(
                    Violation(
                        Rule.LOCK_2,
                        (e.id,),
                        f"release of {e.target} by {e.thread} without a matching acquire",
                    )
                )
            last_rel[key] = e

    # Fork-1, Fork-2 and Join.
    forks: dict[str, Event] = {}
    joined: dict[str, Event] = {}
    last_event: dict[str, Event] = {}
    for e in trace:
        if e.op is Op.FORK:
            t = e.target
            if t == main:
                out.append(Violation(Rule.FORK_1, (e.id,), f"fork of the main thread {t}"))
            elif t in forks:
                out.append(
                    Violation(Rule.FORK_1, (forks[t].id, e.id), f"thread {t} forked twice")
                )
            else:
                forks[t] = e
            if t in joined:
                out.append(
                    Violation(Rule.JOIN, (joined[t].id, e.id), f"thread {t} forked after being joined")
                )
        if e.thread != main and e.thread not in forks and e.thread not in last_event:
            out.append(
                Violation(Rule.FORK_2, (e.id,), f"thread {e.thread} has no preceding fork")
            )
        if e.thread in joined:
            out.append(
                Violation(
                    Rule.JOIN,
                    (joined[e.thread].id, e.id),
                    f"thread {e.thread} runs after being joined",
                )
            )
        if e.op is Op.JOIN:
            if e.target == e.thread:
                out.append(Violation(Rule.JOIN, (e.id,), f"thread {e.thread} joins itself"))
            joined.setdefault(e.target, e)
        last_event[e.thread] = e

    return WellFormedReport(tuple(out))


def require_well_formed(trace: Trace) -> None:
    report = check_well_formed(trace)
    if not report.ok:
        first = report.violations[0]
        raise TraceError(f"trace is not well-formed: {first}", report)


# --- lock structure ---------------------------------------------------------


@dataclass(frozen=True, slots=True)
class LockPair:
    """An acquire and its matching release (``None`` while the lock is still held)."""

    lock: str
    thread: str
    acquire: int
    release: int | None


def matching_pairs(trace: Trace) -> list[LockPair]:
    """All acquires with their matching releases, in acquire order."""
    pairs: list[LockPair] = []
    open_: dict[tuple[str, str], int] = {}
    for e in trace:
        key = (e.thread, e.target)
        if e.is_acquire:
            open_[key] = len(pairs)
            pairs.append(LockPair(e.target, e.thread, e.id, None))
        elif e.is_release and key in open_:
            i = open_.pop(key)
            p = pairs[i]
            pairs[i] = LockPair(p.lock, p.thread, p.acquire, e.id)
    return pairs


def standard_cs_members(trace: Trace, pair: LockPair) -> list[int]:
    """Same-thread events strictly between the acquire and its release."""
    lo = trace.pos(pair.acquire)
    hi = len(trace) if pair.release is None else trace.pos(pair.release)
    return [e.id for e in trace.events[lo + 1 : hi] if e.thread == pair.thread]


def standard_locksets(trace: Trace) -> dict[int, frozenset[str]]:
    """Locks held by the event's thread at each event.

    A release does not hold the lock it releases; an acquire does not hold the
    lock it acquires. Acquires without a release count as held to the end.
    """
    held: dict[str, list[str]] = defaultdict(list)
    out: dict[int, frozenset[str]] = {}
    for e in trace:
        h = held[e.thread]
        if e.is_release:
            if e.target in h:
                h.remove(e.target)
            out[e.id] = frozenset(h)
        else:
            out[e.id] = frozenset(h)
            if e.is_acquire:
                h.append(e.target)
    return out


def close_locks(trace: Trace) -> Trace:
    """Append releases for every lock still held at the end of the trace.

    Threads are closed in the order of their oldest open acquire; within a
    thread locks are released innermost first.
    """
    report = check_well_formed(trace)
    lock_viol = [v for v in report.violations if v.rule in (Rule.LOCK_1, Rule.LOCK_2)]
    if lock_viol:
        raise TraceError(f"cannot close locks: {lock_viol[0]}", report)
    open_pairs = [p for p in matching_pairs(trace) if p.release is None]
    if not open_pairs:
        return trace
    joined = {e.target for e in trace if e.op is Op.JOIN}
    by_thread: dict[str, list[LockPair]] = {}
    for p in open_pairs:
        if p.thread in joined:
            raise TraceError(f"thread {p.thread} holds {p.lock} but was already joined")
        by_thread.setdefault(p.thread, []).append(p)
    next_id = max(trace.ids) + 1
    extra: list[Event] = []
    for thread, ps in by_thread.items():
        for p in reversed(ps):
            extra.append(Event(next_id, thread, Op.RELEASE, p.lock))
            next_id += 1
    return Trace(trace.events + tuple(extra))


def check_well_nested(trace: Trace) -> bool:
    """True when no two critical sections of a thread cross (a1 < a2 < r1 < r2)."""
    require_well_formed(trace)
    stacks: dict[str, list[str]] = defaultdict(list)
    for e in trace:
        st = stacks[e.thread]
        if e.is_acquire:
            st.append(e.target)
        elif e.is_release:
            if not st or st[-1] != e.target:
                return False
            st.pop()
    return True


# --- data flow --------------------------------------------------------------


def last_writes(trace: Trace) -> dict[int, int | None]:
    """For every read, the id of the most recent earlier write to its variable."""
    cur: dict[str, int] = {}
    out: dict[int, int | None] = {}
    for e in trace:
        if e.is_read:
            out[e.id] = cur.get(e.target)
        elif e.is_write:
            cur[e.target] = e.id
    return out


def last_write(trace: Trace, read: Event | int) -> Event | None:
    rid = read if isinstance(read, int) else read.id
    r = trace.event(rid)
    if not r.is_read:
        raise ValueError(f"e{rid} is not a read")
    for e in reversed(trace.events[: trace.pos(rid)]):
        if e.is_write and e.target == r.target:
            return e
    return None


def conflicting_pairs(trace: Trace) -> list[tuple[int, int]]:
    """All conflicting pairs, earlier event first, sorted by (second, first) position."""
    by_var: dict[str, list[Event]] = defaultdict(list)
    for e in trace:
        if e.is_access:
            by_var[e.target].append(e)
    out: list[tuple[int, int]] = []
    for accs in by_var.values():
        for j, f in enumerate(accs):
            for e in accs[:j]:
                if conflicting(e, f):
                    out.append((e.id, f.id))
    out.sort(key=lambda p: (trace.pos(p[1]), trace.pos(p[0])))
    return out


RacePair = tuple[int, int]


def normalize_pair(trace: Trace, e: int, f: int) -> RacePair:
    return (e, f) if trace.pos(e) < trace.pos(f) else (f, e)


def sorted_pairs(trace: Trace, pairs: Iterable[RacePair]) -> list[RacePair]:
    """Pairs in report order: ascending position of the later event, then the earlier."""
    norm = {normalize_pair(trace, *p) for p in pairs}
    return sorted(norm, key=lambda p: (trace.pos(p[1]), trace.pos(p[0])))
