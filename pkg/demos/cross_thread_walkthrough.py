"""Why a fork/join inside a critical section hides a false race.

t1 holds x while it forks and joins t2, so t2's write can never run
concurrently with t3's protected write. Standard lock sets miss this;
the guard-lock engine and the exact oracle do not.

Run: python3 demos/cross_thread_walkthrough.py
"""

from racescan import oracle
from racescan.predictors import ct_predictor, evaluate_predictor, std_predictor
from racescan.pwr_engine import analyze_stream
from racescan.trace_io import fixture_text, load_fixture

NAME = "cross-thread-critical-sections"


def show(label, value):
    print(f"{label:<34}{value}")


def main():
    trace = load_fixture(NAME)
    print(fixture_text(NAME))

    show("standard lock set of e4", set(oracle.std_lockset(trace, 4)) or "{}")
    show("cross-thread lock set of e4", set(oracle.ct_lockset(trace, 4)))
    show("thread-indexed lock set of e4", set(oracle.ctt_lockset(trace, 4)))
    print()

    std = std_predictor(trace)
    show("std predictor", sorted(std))
    show("  false positives", sorted(evaluate_predictor(trace, std).false_positives))
    show("ct predictor", sorted(ct_predictor(trace)))
    show("oracle", sorted(oracle.true_race_pairs(trace)))
    print()

    for engine in ("pwr", "pwrcs"):
        print(analyze_stream(trace, engine).to_text(), end="")


if __name__ == "__main__":
    main()
