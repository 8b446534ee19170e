"""Single-pass vector-clock race prediction.

The ``pwr`` engine orders events by program order, last writes, fork/join and
the release-order rule (a read inside a critical section whose value was
written inside an earlier critical section of the same lock comes after that
earlier release). Conflicting accesses that stay unordered and share no
standard lock are reported.

The ``pwrcs`` engine additionally tracks guard locks. An access records every
lock held by *another* thread whose acquire it already happens after, as a
pending marker. When that lock is released the marker is confirmed if the
access happens before the release and dropped otherwise. Confirmed guards act
like held locks in the race check, which removes reports on accesses protected
through cross-thread critical sections (fork/join inside a critical section).
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

from .trace import Event, Op, Trace, TraceError, check_well_formed

ENGINES = ("pwr", "pwrcs")
DEFAULT_CS_HISTORY = 64
MACHINE_FORMAT_VERSION = 1


class VectorClock:
    """Map from thread to logical time; missing threads are 0."""

    __slots__ = ("_c",)

    def __init__(self, components: Mapping[str, int] | None = None):
        self._c: dict[str, int] = {t: v for t, v in (components or {}).items() if v}

    def __getitem__(self, t: str) -> int:
        return self._c.get(t, 0)

    def items(self):
        return self._c.items()

    def tick(self, t: str) -> None:
        self._c[t] = self._c.get(t, 0) + 1

    def join(self, other: "VectorClock") -> None:
        c = self._c
        for t, v in other._c.items():
            if v > c.get(t, 0):
                c[t] = v

    def copy(self) -> "VectorClock":
        vc = VectorClock.__new__(VectorClock)
        vc._c = self._c.copy()
        return vc

    def __le__(self, other: "VectorClock") -> bool:
        o = other._c
        return all(v <= o.get(t, 0) for t, v in self._c.items())

    def __lt__(self, other: "VectorClock") -> bool:
        return self <= other and self != other

    def __eq__(self, other: object) -> bool:
        return isinstance(other, VectorClock) and self._c == other._c

    def __hash__(self) -> int:
        return hash(frozenset(self._c.items()))

    def concurrent(self, other: "VectorClock") -> bool:
        return not self <= other and not other <= self

    def __repr__(self) -> str:
        inner = ", ".join(f"{t}:{v}" for t, v in sorted(self._c.items()))
        return f"<{inner}>"


class RaceCandidate:
    """An access remembered for later race checks."""

    __slots__ = ("event", "pos", "clock", "epoch", "ls", "guards", "pending", "evicted")

    def __init__(self, event: Event, pos: int, clock: VectorClock, ls: frozenset[str]):
        self.event = event
        self.pos = pos
        self.clock = clock
        self.epoch = clock[event.thread]
        self.ls = ls
        self.guards: dict[str, str] = {}  # confirmed lock -> acquiring thread
        self.pending: dict[str, str] = {}  # marker z? -> acquiring thread
        self.evicted = False

    @property
    def resolved(self) -> bool:
        return not self.pending

    def before(self, clock: VectorClock) -> bool:
        """This access is ordered before any event whose clock is ``clock``."""
        return clock[self.event.thread] >= self.epoch

    def indexed_locks(self) -> set[tuple[str, str]]:
        t = self.event.thread
        return {(x, t) for x in self.ls} | set(self.guards.items())

    def __repr__(self) -> str:
        g = ",".join(sorted(self.guards)) + "".join(f",{z}?" for z in sorted(self.pending))
        return f"Candidate({self.event}, ls={sorted(self.ls)}, gs={{{g.strip(',')}}})"


@dataclass(frozen=True)
class Race:
    first: Event
    second: Event
    engine: str
    guards: tuple[str, ...] = ()  # locks that suppressed it, for suppressed entries
    positions: tuple[int, int] = (0, 0)

    @property
    def pair(self) -> tuple[int, int]:
        return (self.first.id, self.second.id)

    @property
    def variable(self) -> str:
        return self.first.target

    @property
    def locations(self) -> tuple[str | None, str | None]:
        return (self.first.loc, self.second.loc)


@dataclass
class RaceReport:
    engine: str
    races: list[Race] = field(default_factory=list)
    suppressed: list[Race] = field(default_factory=list)
    events: int = 0
    guard_confirmations: int = 0

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return [r.pair for r in self.races]

    @property
    def guarded_locations(self) -> int:
        """Distinct location pairs whose only reports were suppressed by guard locks."""
        raced = {_loc_key(r) for r in self.races}
        return len({_loc_key(r) for r in self.suppressed} - raced)

    @property
    def counters(self) -> dict[str, int]:
        return {
            "events": self.events,
            "guard_confirmations": self.guard_confirmations,
            "guarded_locations": self.guarded_locations,
            "races": len(self.races),
        }

    def by_location(self) -> dict[tuple[str, str], list[Race]]:
        """Races grouped by their pair of source locations (event ids stand in when absent)."""
        out: dict[tuple[str, str], list[Race]] = {}
        for r in self.races:
            out.setdefault(_loc_key(r), []).append(r)
        return out

    def to_text(self, by_location: bool = False) -> str:
        lines = []
        if by_location:
            for (la, lb), rs in self.by_location().items():
                ids = ", ".join(f"(e{r.first.id},e{r.second.id})" for r in rs)
                lines.append(f"race {rs[0].variable} at {la} / {lb}: {len(rs)} pair(s) {ids}")
        else:
            for r in self.races:
                lines.append(
                    f"race {r.variable}: e{r.first.id} [{r.first.thread} {r.first.op.value}"
                    f"{_at(r.first)}] / e{r.second.id} [{r.second.thread} {r.second.op.value}"
                    f"{_at(r.second)}]"
                )
        c = self.counters
        lines.append(
            f"{self.engine}: {c['races']} race(s), {c['events']} events, "
            f"{c['guard_confirmations']} guard confirmation(s), "
            f"{c['guarded_locations']} guarded location(s)"
        )
        return "\n".join(lines) + "\n"

    def to_records(self, source: str | None = None, by_location: bool = False) -> Iterator[dict]:
        yield {"record": "header", "format": "racescan", "version": MACHINE_FORMAT_VERSION,
               "engine": self.engine, "source": source}
        if by_location:
            for (la, lb), rs in self.by_location().items():
                yield {"record": "location", "variable": rs[0].variable, "locations": [la, lb],
                       "pairs": [list(r.pair) for r in rs]}
        else:
            for r in self.races:
                yield _race_record("race", r)
        for r in self.suppressed:
            yield _race_record("suppressed", r)
        yield {"record": "counters", **self.counters}

    def to_machine(self, source: str | None = None, by_location: bool = False) -> str:
        return "".join(
            json.dumps(rec, sort_keys=True) + "\n" for rec in self.to_records(source, by_location)
        )


def _at(e: Event) -> str:
    return f" @{e.loc}" if e.loc else ""


def _loc_key(r: Race) -> tuple[str, str]:
    return (r.first.loc or f"e{r.first.id}", r.second.loc or f"e{r.second.id}")


def _race_record(kind: str, r: Race) -> dict:
    return {
        "record": kind,
        "engine": r.engine,
        "events": [r.first.id, r.second.id],
        "threads": [r.first.thread, r.second.thread],
        "ops": [r.first.op.value, r.second.op.value],
        "variable": r.variable,
        "locations": list(r.locations),
        "guards": list(r.guards),
    }


class PWREngine:
    """Streaming state: one instance analyzes one trace.

    ``guards`` turns the pwr engine into pwrcs. ``evict`` keeps only the most
    recent read and most recent write per (variable, thread); without it every
    access stays a candidate. ``cs_history`` bounds how many released critical
    sections are remembered per lock (``None`` for no bound).
    ``thread_indexed`` makes the guard check ignore locks that both sides hold
    through the same acquiring thread; turning it off compares plain lock
    names. ``release_order`` also orders a release after every earlier
    critical section of the same lock whose acquire it already follows.
    """

    def __init__(
        self,
        guards: bool = True,
        evict: bool = True,
        cs_history: int | None = DEFAULT_CS_HISTORY,
        thread_indexed: bool = True,
        release_order: bool = False,
        keep_clocks: bool = False,
    ):
        if cs_history is not None and cs_history < 1:
            raise ValueError("cs_history must be positive or None")
        self.guards = guards
        self.evict = evict
        self.cs_history = cs_history
        self.thread_indexed = thread_indexed
        self.release_order = release_order
        self.report = RaceReport("pwrcs" if guards else "pwr")
        self.clocks: dict[str, VectorClock] = {}
        self.held: dict[str, list[str]] = {}  # L_s(t), in acquisition order
        self.holder: dict[str, str] = {}  # L_all: lock -> holding thread
        self.acq: dict[str, tuple[str, int]] = {}  # lock -> (thread, epoch) of its acquire
        self.cur_cs: dict[str, int] = {}
        self.cs_release: dict[int, VectorClock] = {}
        self.cs_acquire: dict[int, tuple[str, int]] = {}
        self.history: dict[str, deque[int]] = {}
        self.last_write: dict[str, tuple[VectorClock, tuple[tuple[str, int], ...]]] = {}
        self.rw: dict[str, dict] = {}
        self.pending: dict[str, list[RaceCandidate]] = {}
        self.event_clocks: dict[int, VectorClock] | None = {} if keep_clocks else None
        self._cs_counter = 0
        self._pos = 0
        self._last_id = 0
        self._seen_pairs: set[tuple[int, int]] = set()

    # -- per-event procedures --

    def _clock(self, t: str) -> VectorClock:
        vc = self.clocks.get(t)
        if vc is None:
            vc = self.clocks[t] = VectorClock()
        return vc

    def process(self, e: Event) -> None:
        op = e.op
        if op is Op.READ:
            self.on_read(e)
        elif op is Op.WRITE:
            self.on_write(e)
        elif op is Op.ACQUIRE:
            self.on_acquire(e)
        elif op is Op.RELEASE:
            self.on_release(e)
        elif op is Op.FORK:
            self.on_fork(e)
        else:
            self.on_join(e)
        if self.event_clocks is not None:
            self.event_clocks[e.id] = self.clocks[e.thread].copy()
        self._pos += 1
        self._last_id = max(self._last_id, e.id)
        self.report.events += 1

    def on_acquire(self, e: Event) -> None:
        t, x = e.thread, e.target
        if x in self.holder:
            raise TraceError(f"e{e.id}: lock {x} acquired by {t} while held by {self.holder[x]}")
        vc = self._clock(t)
        vc.tick(t)
        self.held.setdefault(t, []).append(x)
        self.holder[x] = t
        self.acq[x] = (t, vc[t])
        self._cs_counter += 1
        self.cur_cs[x] = self._cs_counter
        self.cs_acquire[self._cs_counter] = (t, vc[t])

    def on_release(self, e: Event) -> None:
        t, x = e.thread, e.target
        if self.holder.get(x) != t:
            raise TraceError(f"e{e.id}: {t} releases {x} without holding it")
        vc = self._clock(t)
        vc.tick(t)
        if self.release_order:
            self._order_after_earlier_sections(x, vc)
        cs = self.cur_cs.pop(x)
        snap = vc.copy()
        self.cs_release[cs] = snap
        hist = self.history.setdefault(x, deque())
        hist.append(cs)
        if self.cs_history is not None and len(hist) > self.cs_history:
            old = hist.popleft()
            self.cs_release.pop(old, None)
            self.cs_acquire.pop(old, None)
        self.held[t].remove(x)
        del self.holder[x]
        del self.acq[x]
        waiting = self.pending.pop(x, None)
        if waiting:
            self._resolve(x, t, vc, waiting)

    def _order_after_earlier_sections(self, x: str, vc: VectorClock) -> None:
        hist = self.history.get(x, ())
        changed = True
        while changed:
            changed = False
            for cs in hist:
                u, k = self.cs_acquire[cs]
                rel = self.cs_release[cs]
                if vc[u] >= k and not rel <= vc:
                    vc.join(rel)
                    changed = True

    def _resolve(self, z: str, t: str, vc: VectorClock, waiting: list[RaceCandidate]) -> None:
        done = []
        for c in waiting:
            if c.evicted or z not in c.pending:
                continue
            owner = c.pending.pop(z)
            if c.before(vc):
                c.guards[z] = owner
                self.report.guard_confirmations += 1
            if not c.pending:
                done.append(c)
        for c in done:
            self._check_against_store(c)

    def on_fork(self, e: Event) -> None:
        vc = self._clock(e.thread)
        vc.tick(e.thread)
        child = vc.copy()
        prev = self.clocks.get(e.target)
        if prev is not None:
            child.join(prev)
        self.clocks[e.target] = child

    def on_join(self, e: Event) -> None:
        vc = self._clock(e.thread)
        vc.tick(e.thread)
        other = self.clocks.get(e.target)
        if other is not None:
            vc.join(other)

    def on_write(self, e: Event) -> None:
        t = e.thread
        vc = self._clock(t)
        vc.tick(t)
        snap = vc.copy()
        held = self.held.get(t)
        cs = tuple((x, self.cur_cs[x]) for x in held) if held else ()
        self.last_write[e.target] = (snap, cs)
        self._access(e, snap)

    def on_read(self, e: Event) -> None:
        t = e.thread
        vc = self._clock(t)
        vc.tick(t)
        lw = self.last_write.get(e.target)
        if lw is not None:
            wclock, wcs = lw
            vc.join(wclock)
            held = self.held.get(t)
            if held and wcs:
                for x, cs in wcs:
                    if x in held and self.cur_cs[x] != cs:
                        rel = self.cs_release.get(cs)
                        if rel is not None:
                            vc.join(rel)
        self._access(e, vc.copy())

    # -- candidates and race checks --

    def _access(self, e: Event, snap: VectorClock) -> None:
        t = e.thread
        held = self.held.get(t)
        c = RaceCandidate(e, self._pos, snap, frozenset(held) if held else frozenset())
        if self.guards and self.holder:
            for z, u in self.holder.items():
                if u != t:
                    at, k = self.acq[z]
                    if snap[at] >= k:
                        c.pending[z] = at
        store = self.rw.get(e.target)
        if store is None:
            store = self.rw[e.target] = {} if self.evict else []
        if self.evict:
            key = (t, e.is_write)
            old = store.get(key)
            if old is not None:
                old.evicted = True
            store[key] = c
        else:
            store.append(c)
        if c.pending:
            for z in c.pending:
                self.pending.setdefault(z, []).append(c)
        else:
            self._check_against_store(c)

    def _check_against_store(self, c: RaceCandidate) -> None:
        store = self.rw[c.event.target]
        others = store.values() if self.evict else store
        for d in others:
            if d is c or d.evicted or d.pending:
                continue
            self.racecheck(c, d)

    def racecheck(self, c: RaceCandidate, d: RaceCandidate) -> Race | None:
        ce, de = c.event, d.event
        if ce.thread == de.thread or not (ce.is_write or de.is_write):
            return None
        first, second = (d, c) if d.pos < c.pos else (c, d)
        if first.before(second.clock):
            return None
        if c.ls & d.ls:
            return None
        key = (first.event.id, second.event.id)
        if key in self._seen_pairs:
            return None
        self._seen_pairs.add(key)
        shared = self._guard_overlap(c, d) if self.guards else set()
        race = Race(
            first.event, second.event, self.report.engine, tuple(sorted(shared)), (first.pos, second.pos)
        )
        if shared:
            self.report.suppressed.append(race)
            return None
        self.report.races.append(race)
        return race

    def _guard_overlap(self, c: RaceCandidate, d: RaceCandidate) -> set[str]:
        if self.thread_indexed:
            m, n = c.indexed_locks(), d.indexed_locks()
            owners: dict[str, set[str]] = {}
            for x, s in m:
                owners.setdefault(x, set()).add(s)
            return {x for x, s in n if x in owners and (len(owners[x]) > 1 or s not in owners[x])}
        return (set(c.ls) | set(c.guards)) & (set(d.ls) | set(d.guards))

    # -- end of stream --

    def finish(self) -> RaceReport:
        """Release every lock still held, settle pending markers and sort the report."""
        for t in list(self.held):
            for x in reversed(list(self.held[t])):
                self._last_id += 1
                self.on_release(Event(self._last_id, t, Op.RELEASE, x))
        for waiting in self.pending.values():
            for c in waiting:
                c.pending.clear()
        self.pending.clear()
        for rs in (self.report.races, self.report.suppressed):
            rs.sort(key=lambda r: (r.positions[1], r.positions[0]))
        return self.report


def analyze_stream(
    trace: Trace | Iterable[Event],
    engine: str = "pwrcs",
    *,
    evict: bool = True,
    cs_history: int | None = DEFAULT_CS_HISTORY,
    thread_indexed: bool = True,
    release_order: bool = False,
    check: bool = True,
) -> RaceReport:
    """Run one engine over a trace in a single pass.

    With ``check`` the trace is validated first and ill-formed input raises
    :class:`TraceError` carrying the violations.
    """
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}; expected one of {', '.join(ENGINES)}")
    if check:
        if not isinstance(trace, Trace):
            trace = Trace(trace)
        report = check_well_formed(trace)
        if not report.ok:
            raise TraceError(f"trace is not well-formed: {report.violations[0]}", report)
    eng = PWREngine(
        guards=engine == "pwrcs",
        evict=evict,
        cs_history=cs_history,
        thread_indexed=thread_indexed,
        release_order=release_order,
    )
    for e in trace:
        eng.process(e)
    return eng.finish()


def pwr_clocks(
    trace: Trace, cs_history: int | None = None, release_order: bool = False
) -> dict[int, VectorClock]:
    """The engine's clock for every event (after the event), keyed by id."""
    eng = PWREngine(guards=False, cs_history=cs_history, release_order=release_order, keep_clocks=True)
    for e in trace:
        eng.process(e)
    return eng.event_clocks
