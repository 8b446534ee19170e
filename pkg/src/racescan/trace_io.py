"""Text trace format, fixtures and the seeded random trace generator.

One event per line::

    [id:] thread|op(arg)[|loc]
    [id:] thread|op|arg[|loc]

``op`` is one of ``r w acq rel fork join``. ``#`` starts a comment and blank
lines are ignored. Without explicit ids events are numbered 1..n.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable

from .trace import Event, Op, Trace

__all__ = [
    "TraceSyntaxError",
    "parse_trace",
    "serialize_trace",
    "load_trace",
    "dump_trace",
    "GenConfig",
    "gen_random_trace",
    "fixture_names",
    "load_fixture",
    "fixture_expectations",
]


class TraceSyntaxError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


_OPS = {op.value: op for op in Op}
_NAME = re.compile(r"^[A-Za-z_][\w.$:-]*$")
_CALL = re.compile(r"^(\w+)\((.*)\)$")
_ID = re.compile(r"^\s*(\d+)\s*:\s*(.*)$")


def _parse_line(text: str, lineno: int) -> tuple[int | None, str, Op, str, str | None]:
    eid = None
    m = _ID.match(text)
    if m:
        eid = int(m.group(1))
        text = m.group(2)
    fields = [f.strip() for f in text.split("|")]
    if len(fields) < 2:
        raise TraceSyntaxError(lineno, f"expected 'thread|op(arg)', got {text!r}")
    thread = fields[0]
    if not _NAME.match(thread):
        raise TraceSyntaxError(lineno, f"bad thread name {thread!r}")
    call = _CALL.match(fields[1])
    if call:
        opname, arg = call.group(1), call.group(2).strip()
        rest = fields[2:]
    else:
        if len(fields) < 3:
            raise TraceSyntaxError(lineno, f"cannot parse operation {fields[1]!r}")
        opname, arg = fields[1], fields[2]
        rest = fields[3:]
    op = _OPS.get(opname)
    if op is None:
        raise TraceSyntaxError(lineno, f"unknown operation {opname!r}")
    if not _NAME.match(arg):
        raise TraceSyntaxError(lineno, f"bad operand {arg!r} for {opname}")
    if len(rest) > 1:
        raise TraceSyntaxError(lineno, f"too many fields in {text!r}")
    loc = rest[0] if rest and rest[0] else None
    return eid, thread, op, arg, loc


def parse_trace(text: str) -> Trace:
    """Parse trace text. Raises :class:`TraceSyntaxError` with the line number on bad input."""
    events: list[Event] = []
    explicit: bool | None = None
    seen: dict[int, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        eid, thread, op, arg, loc = _parse_line(line, lineno)
        has_id = eid is not None
        if explicit is None:
            explicit = has_id
        elif explicit != has_id:
            raise TraceSyntaxError(lineno, "mix of numbered and unnumbered events")
        if eid is None:
            eid = len(events) + 1
        if eid in seen:
            raise TraceSyntaxError(lineno, f"duplicate event id {eid} (first on line {seen[eid]})")
        seen[eid] = lineno
        events.append(Event(eid, thread, op, arg, loc))
    return Trace(events)


def serialize_trace(trace: Trace) -> str:
    """Canonical text form. Ids are written only when they are not 1..n."""
    numbered = trace.ids != tuple(range(1, len(trace) + 1))
    lines = []
    for e in trace:
        line = f"{e.thread}|{e.op.value}({e.target})|{e.loc or ''}"
        lines.append(f"{e.id}:{line}" if numbered else line)
    return "\n".join(lines) + ("\n" if lines else "")


def load_trace(path: str | Path) -> Trace:
    return parse_trace(Path(path).read_text())


def dump_trace(trace: Trace, path: str | Path) -> None:
    Path(path).write_text(serialize_trace(trace))


# --- fixtures ---------------------------------------------------------------


def _fixture_dir():
    return resources.files("racescan") / "fixtures"


def fixture_names() -> list[str]:
    return sorted(p.name[:-6] for p in _fixture_dir().iterdir() if p.name.endswith(".trace"))


def fixture_text(name: str) -> str:
    return (_fixture_dir() / f"{name}.trace").read_text()


def load_fixture(name: str) -> Trace:
    return parse_trace(fixture_text(name))


_EXPECT = re.compile(r"^#\s*expect\s+(\w+)\s*=\s*(.+?)\s*$")


def fixture_expectations(name: str) -> dict[str, str]:
    """``# expect key=value`` header lines of a fixture."""
    out = {}
    for line in fixture_text(name).splitlines():
        m = _EXPECT.match(line.strip())
        if m:
            out[m.group(1)] = m.group(2)
    return out


# --- generator --------------------------------------------------------------


@dataclass(frozen=True)
class GenConfig:
    """Knobs of the random trace generator.

    ``cross_thread`` is the probability that a thread forked inside a critical
    section is joined before that critical section ends.
    """

    events: int = 12
    threads: int = 3
    locks: int = 2
    variables: int = 2
    seed: int = 0
    fork_join_density: float = 0.3
    nesting: int = 2
    cross_thread: float = 0.3
    read_ratio: float = 0.5

    def validate(self) -> None:
        if self.events < 1:
            raise ValueError("events must be positive")
        if self.threads < 1:
            raise ValueError("threads must be positive")
        if self.locks < 0 or self.variables < 0:
            raise ValueError("locks and variables must be non-negative")
        if self.variables == 0 and self.locks == 0 and self.threads == 1:
            raise ValueError("nothing to generate without variables, locks or threads")
        if self.nesting < 1:
            raise ValueError("nesting must be at least 1")
        for name in ("fork_join_density", "cross_thread", "read_ratio"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")


def _names(prefix: str, letters: str, n: int) -> list[str]:
    if n <= len(letters):
        return list(letters[:n])
    return [f"{prefix}{i}" for i in range(1, n + 1)]


_NEW, _RUN, _DONE, _JOINED = range(4)


def gen_random_trace(config: GenConfig | None = None, **overrides) -> Trace:
    """Seeded random well-formed trace of at most ``config.events`` events.

    Locks are used in a well-nested way and every lock is released by the end.
    """
    cfg = config or GenConfig()
    if overrides:
        cfg = GenConfig(**{**cfg.__dict__, **overrides})
    cfg.validate()
    rng = random.Random(cfg.seed)
    threads = [f"t{i}" for i in range(1, cfg.threads + 1)]
    locks = _names("l", "xyzuvw", cfg.locks)
    variables = _names("v", "abcdefgh", cfg.variables)
    main = threads[0]

    status = {t: _NEW for t in threads}
    status[main] = _RUN
    count = {t: 0 for t in threads}
    held: dict[str, list[str]] = {t: [] for t in threads}
    # lock -> children that must be joined before the lock's release
    owed: dict[str, list[str]] = {t: [] for t in threads}
    owed_for: dict[tuple[str, str], list[str]] = {}
    bound_to: dict[str, str] = {}
    free = set(locks)
    rows: list[tuple[str, Op, str]] = []

    def emit(t: str, op: Op, target: str) -> None:
        rows.append((t, op, target))
        count[t] += 1

    def cost() -> int:
        return sum(len(h) for h in held.values()) + sum(len(o) for o in owed.values())

    def release(t: str) -> None:
        x = held[t].pop()
        emit(t, Op.RELEASE, x)
        free.add(x)

    def join(t: str, c: str) -> None:
        emit(t, Op.JOIN, c)
        status[c] = _JOINED
        if bound_to.pop(c, None) is not None:
            owed[t].remove(c)
            for k in owed_for:
                if c in owed_for[k]:
                    owed_for[k].remove(c)

    def close(t: str) -> None:
        while held[t]:
            x = held[t][-1]
            for c in list(owed_for.get((t, x), [])):
                close(c)
                status[c] = _DONE
                join(t, c)
            release(t)

    fj = cfg.fork_join_density
    while len(rows) + cost() + 2 <= cfg.events:
        running = [t for t in threads if status[t] == _RUN]
        t = rng.choice(running)
        actions: list[tuple[float, str, str | None]] = []
        if variables:
            actions.append((1.0, "access", None))
        if free and len(held[t]) < cfg.nesting:
            actions.append((0.5, "acquire", None))
        if held[t]:
            waiting = owed_for.get((t, held[t][-1]), [])
            if not waiting:
                actions.append((0.6, "release", None))
            for c in waiting:
                if status[c] == _DONE:
                    actions.append((1.0, "join", c))
        unforked = [c for c in threads if status[c] == _NEW]
        if unforked and fj > 0:
            actions.append((fj, "fork", unforked[0]))
        for c in threads:
            if status[c] == _DONE and c not in bound_to and fj > 0:
                actions.append((fj, "join", c))
        if t != main and not held[t] and not owed[t] and count[t] > 0:
            actions.append((0.1 + 0.2 * fj, "finish", None))
        if not actions:
            break
        _, kind, arg = rng.choices(actions, weights=[a[0] for a in actions])[0]
        if kind == "access":
            op = Op.READ if rng.random() < cfg.read_ratio else Op.WRITE
            emit(t, op, rng.choice(variables))
        elif kind == "acquire":
            x = rng.choice(sorted(free))
            free.discard(x)
            held[t].append(x)
            emit(t, Op.ACQUIRE, x)
        elif kind == "release":
            release(t)
        elif kind == "fork":
            emit(t, Op.FORK, arg)
            status[arg] = _RUN
            if held[t] and rng.random() < cfg.cross_thread:
                x = held[t][-1]
                owed_for.setdefault((t, x), []).append(arg)
                owed[t].append(arg)
                bound_to[arg] = t
        elif kind == "join":
            join(t, arg)
        elif kind == "finish":
            status[t] = _DONE

    for t in threads:
        if status[t] == _RUN:
            close(t)
    if not rows and variables:
        emit(main, Op.WRITE, variables[0])
    return Trace.from_tuples(rows)


def iter_random_traces(n: int, base_seed: int = 0, **config) -> Iterable[Trace]:
    for i in range(n):
        yield gen_random_trace(GenConfig(seed=base_seed + i, **config))
