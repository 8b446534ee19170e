"""Command-line front end: ``racescan {check,analyze,oracle,compare,gen}``.

Exit status is 0 when nothing was found, 1 when races (or, for ``check``,
well-formedness violations) were found and 2 on input or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from . import oracle, partial_orders, predictors
from .pwr_engine import DEFAULT_CS_HISTORY, MACHINE_FORMAT_VERSION, Race, RaceReport, analyze_stream
from .trace import RacePair, Trace, TraceError, check_well_formed, close_locks, sorted_pairs, standard_locksets
from .trace_io import GenConfig, TraceSyntaxError, gen_random_trace, load_trace, serialize_trace

EXIT_CLEAN, EXIT_FOUND, EXIT_ERROR = 0, 1, 2

STREAM_ENGINES = ("pwr", "pwrcs")
ORDER_ENGINES = ("hb", "wcp", "sdp", "pwre")
LOCKSET_ENGINES = ("lockset-std", "lockset-ctt")
ALL_ENGINES = STREAM_ENGINES + ORDER_ENGINES + LOCKSET_ENGINES


class UsageError(Exception):
    pass


@dataclass
class Outcome:
    text: str
    status: int


def _header(command: str, source: str, **extra) -> str:
    rec = {"record": "header", "format": "racescan", "version": MACHINE_FORMAT_VERSION,
           "command": command, "source": source, **extra}
    return json.dumps(rec, sort_keys=True) + "\n"


def _rec(**fields) -> str:
    return json.dumps(fields, sort_keys=True) + "\n"


def _pairs_report(trace: Trace, pairs: set[RacePair], engine: str) -> RaceReport:
    rep = RaceReport(engine, events=len(trace))
    for e, f in sorted_pairs(trace, pairs):
        rep.races.append(Race(trace.event(e), trace.event(f), engine, (), (trace.pos(e), trace.pos(f))))
    return rep


def _cs_history(flag: int | None) -> int | None:
    if flag is None:
        return DEFAULT_CS_HISTORY
    return None if flag == 0 else flag


def predicted_pairs(trace: Trace, args: argparse.Namespace) -> tuple[set[RacePair], RaceReport | None]:
    """Race pairs of the selected engine, plus the streaming report when there is one."""
    engine = args.engine
    limit = args.max_events
    if engine in STREAM_ENGINES:
        rep = analyze_stream(
            trace,
            engine,
            evict=not args.no_evict,
            cs_history=_cs_history(args.cs_history),
            thread_indexed=not args.plain_guards,
            release_order=args.release_order,
        )
        return set(rep.pairs), rep
    if engine == "hb":
        return partial_orders.hb_races(trace, forkjoin=args.hb_forkjoin), None
    if engine == "wcp":
        return partial_orders.wcp_races(trace, args.wcp_variant), None
    if engine == "sdp":
        return partial_orders.sdp_races(trace, lockset_kind="std"), None
    if engine == "pwre":
        closed = close_locks(trace)
        order = partial_orders.pwre_closure(closed, limit)
        pairs = partial_orders.po_races(closed, order, "ctt", max_events=limit)
        return {p for p in pairs if p[0] in trace.ids and p[1] in trace.ids}, None
    if engine == "lockset-std":
        return predictors.predict_races(trace, standard_locksets(trace)), None
    closed = close_locks(trace)
    return predictors.predict_races_indexed(closed, oracle.ctt_locksets(closed, limit)), None


def cmd_check(trace: Trace, args, source: str) -> Outcome:
    rep = check_well_formed(trace)
    status = EXIT_CLEAN if rep.ok else EXIT_FOUND
    if args.format == "machine":
        out = _header("check", source)
        for v in rep.violations:
            out += _rec(record="violation", rule=v.rule.value, events=list(v.events), message=v.message)
        out += _rec(record="summary", ok=rep.ok, events=len(trace), violations=len(rep.violations))
        return Outcome(out, status)
    lines = [f"{source}: {'well-formed' if rep.ok else 'NOT well-formed'} ({len(trace)} events)"]
    lines += [f"  {v}" for v in rep.violations]
    return Outcome("\n".join(lines) + "\n", status)


def cmd_analyze(trace: Trace, args, source: str) -> Outcome:
    pairs, rep = predicted_pairs(trace, args)
    if rep is None:
        rep = _pairs_report(trace, pairs, args.engine)
    status = EXIT_FOUND if rep.races else EXIT_CLEAN
    if args.format == "machine":
        return Outcome(rep.to_machine(source, args.by_location), status)
    return Outcome(f"== {source}\n" + rep.to_text(args.by_location), status)


def cmd_oracle(trace: Trace, args, source: str) -> Outcome:
    limit = args.max_events
    witnesses = sorted(oracle.true_races(trace, limit), key=lambda w: (trace.pos(w.pair[1]), trace.pos(w.pair[0])))
    dl = oracle.predictable_deadlock(trace, limit)
    mhb_pairs = sorted(oracle.mhb(trace, limit).pairs(), key=lambda p: (trace.pos(p[0]), trace.pos(p[1])))
    status = EXIT_FOUND if witnesses else EXIT_CLEAN
    if args.format == "machine":
        out = _header("oracle", source)
        for w in witnesses:
            out += _rec(record="true_race", events=list(w.pair), schedule=list(w.schedule))
        if dl is not None:
            out += _rec(record="deadlock", prefix=list(dl.prefix), blocked=[list(b) for b in dl.blocked])
        if args.mhb:
            for e, f in mhb_pairs:
                out += _rec(record="mhb", events=[e, f])
        out += _rec(record="summary", true_races=len(witnesses), deadlock=dl is not None)
        return Outcome(out, status)
    lines = [f"== {source}", f"predictable races: {len(witnesses)}"]
    for w in witnesses:
        sched = " ".join(f"e{i}" for i in w.schedule)
        lines.append(f"  (e{w.pair[0]},e{w.pair[1]}) witness: {sched}")
    if dl is None:
        lines.append("predictable deadlock: none")
    else:
        blocked = ", ".join(f"{t} waits for {x}" for t, x in dl.blocked)
        lines.append(f"predictable deadlock after {' '.join(f'e{i}' for i in dl.prefix)}: {blocked}")
    if args.mhb:
        lines.append("must-happen-before: " + " ".join(f"e{e}<e{f}" for e, f in mhb_pairs))
    return Outcome("\n".join(lines) + "\n", status)


def cmd_compare(trace: Trace, args, source: str) -> Outcome:
    pairs, _ = predicted_pairs(trace, args)
    ev = predictors.evaluate_predictor(trace, pairs, args.max_events)
    fp = sorted_pairs(trace, ev.false_positives)
    fn = sorted_pairs(trace, ev.false_negatives)
    status = EXIT_FOUND if ev.predicted else EXIT_CLEAN
    if args.format == "machine":
        out = _header("compare", source, engine=args.engine)
        for p in sorted_pairs(trace, ev.predicted):
            out += _rec(record="predicted", events=list(p))
        for p in fp:
            out += _rec(record="false_positive", events=list(p))
        for p in fn:
            out += _rec(record="false_negative", events=list(p))
        out += _rec(record="summary", predicted=len(ev.predicted), false_positives=len(fp), false_negatives=len(fn))
        return Outcome(out, status)

    def fmt(ps):
        return " ".join(f"(e{a},e{b})" for a, b in ps) or "-"

    lines = [
        f"== {source} [{args.engine}]",
        f"predicted:       {fmt(sorted_pairs(trace, ev.predicted))}",
        f"false positives: {fmt(fp)}",
        f"false negatives: {fmt(fn)}",
    ]
    return Outcome("\n".join(lines) + "\n", status)


COMMANDS: dict[str, Callable[[Trace, argparse.Namespace, str], Outcome]] = {
    "check": cmd_check,
    "analyze": cmd_analyze,
    "oracle": cmd_oracle,
    "compare": cmd_compare,
}


def run_file(command: str, path: str, args: argparse.Namespace) -> Outcome:
    """Run one subcommand on one file, turning expected failures into exit status 2."""
    try:
        trace = load_trace(path)
        return COMMANDS[command](trace, args, path)
    except (OSError, TraceSyntaxError, TraceError, oracle.OracleLimitError, ValueError) as exc:
        if args.format == "machine":
            return Outcome(_header(command, path) + _rec(record="error", message=str(exc)), EXIT_ERROR)
        return Outcome(f"{path}: error: {exc}\n", EXIT_ERROR)


def cmd_gen(args: argparse.Namespace) -> int:
    cfg = GenConfig(
        events=args.events,
        threads=args.threads,
        locks=args.locks,
        variables=args.vars,
        seed=args.seed,
        fork_join_density=args.fork_join_density,
        nesting=args.nesting,
        cross_thread=args.cross_thread,
        read_ratio=args.read_ratio,
    )
    try:
        text = serialize_trace(gen_random_trace(cfg))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_CLEAN


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="racescan", description="Predict data races in recorded traces.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, engines: bool):
        sp.add_argument("files", nargs="+", metavar="TRACE")
        sp.add_argument("--format", choices=("text", "machine"), default="text")
        sp.add_argument("--jobs", type=int, default=1, help="analyze files in parallel")
        sp.add_argument("--max-events", type=int, default=None,
                        help="oracle size bound (default: RACESCAN_ORACLE_MAX or 14)")
        if engines:
            sp.add_argument("--engine", choices=ALL_ENGINES, default="pwrcs")
            sp.add_argument("--no-evict", action="store_true", help="keep every access as a race candidate")
            sp.add_argument("--cs-history", type=int, default=None,
                            help=f"released critical sections kept per lock (default {DEFAULT_CS_HISTORY}, 0 = unbounded)")
            sp.add_argument("--by-location", action="store_true", help="group races by source locations")
            sp.add_argument("--hb-forkjoin", action=argparse.BooleanOptionalAction, default=True,
                            help="include fork/join edges in standalone HB")
            sp.add_argument("--wcp-variant", choices=("WCP2", "WCP2_PRIME"), default="WCP2")
            sp.add_argument("--release-order", action="store_true",
                            help="order releases after earlier critical sections they already follow")
            sp.add_argument("--plain-guards", action="store_true",
                            help="compare guard locks by name only, without acquiring threads")

    common(sub.add_parser("check", help="check well-formedness"), engines=False)
    common(sub.add_parser("analyze", help="report predicted races"), engines=True)
    sp = sub.add_parser("oracle", help="exact races, must-happen-before and deadlocks (small traces)")
    common(sp, engines=False)
    sp.add_argument("--mhb", action="store_true", help="also list must-happen-before pairs")
    common(sub.add_parser("compare", help="false positives/negatives of an engine"), engines=True)

    g = sub.add_parser("gen", help="write a random well-formed trace")
    g.add_argument("--events", type=int, default=12)
    g.add_argument("--threads", type=int, default=3)
    g.add_argument("--locks", type=int, default=2)
    g.add_argument("--vars", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--fork-join-density", type=float, default=0.3)
    g.add_argument("--nesting", type=int, default=2)
    g.add_argument("--cross-thread", type=float, default=0.3)
    g.add_argument("--read-ratio", type=float, default=0.5)
    g.add_argument("-o", "--output")
    return p


def validate(args: argparse.Namespace) -> None:
    if getattr(args, "jobs", 1) < 1:
        raise UsageError("--jobs must be at least 1")
    if getattr(args, "max_events", None) is not None and args.max_events < 0:
        raise UsageError("--max-events must be non-negative")
    if (getattr(args, "cs_history", None) or 0) < 0:
        raise UsageError("--cs-history must be non-negative")
    engine = getattr(args, "engine", None)
    if engine is not None and engine not in STREAM_ENGINES:
        for flag in ("no_evict", "release_order", "plain_guards", "cs_history"):
            if getattr(args, flag) not in (None, False):
                raise UsageError(f"--{flag.replace('_', '-')} only applies to the pwr and pwrcs engines")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CLEAN if exc.code == 0 else EXIT_ERROR
    try:
        validate(args)
    except UsageError as exc:
        print(f"racescan: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.command == "gen":
        return cmd_gen(args)
    if args.jobs > 1 and len(args.files) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(run_file, [args.command] * len(args.files), args.files,
                                     [args] * len(args.files)))
    else:
        outcomes = [run_file(args.command, f, args) for f in args.files]
    for o in outcomes:
        sys.stdout.write(o.text)
    sys.stdout.flush()
    statuses = [o.status for o in outcomes]
    if EXIT_ERROR in statuses:
        return EXIT_ERROR
    return EXIT_FOUND if EXIT_FOUND in statuses else EXIT_CLEAN


if __name__ == "__main__":
    sys.exit(main())
