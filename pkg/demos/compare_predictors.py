"""Tally false positives and negatives of each predictor on random traces.

Small traces only: every number is checked against exhaustive search over
correct reorderings.

Run: python3 demos/compare_predictors.py [count]
"""

import sys
from collections import Counter

from racescan import oracle
from racescan.partial_orders import po_races, pwr_closure, wcp_races
from racescan.predictors import ct_predictor, ctt_predictor, std_predictor
from racescan.pwr_engine import analyze_stream
from racescan.trace_io import GenConfig, gen_random_trace

PREDICTORS = {
    "lockset-std": std_predictor,
    "lockset-ct": ct_predictor,
    "lockset-ctt": ctt_predictor,
    "wcp": wcp_races,
    "pwr": lambda t: po_races(t, pwr_closure(t), "std"),
    "pwrcs": lambda t: set(analyze_stream(t, "pwrcs").pairs),
    "pwrcs (no evict)": lambda t: set(analyze_stream(t, "pwrcs", evict=False).pairs),
}


def main(count=300):
    fp, fn = Counter(), Counter()
    races = 0
    for seed in range(count):
        cfg = GenConfig(events=12, threads=3, locks=2, variables=2, seed=seed,
                        fork_join_density=0.5, cross_thread=0.7)
        t = gen_random_trace(cfg)
        truth = oracle.true_race_pairs(t)
        races += len(truth)
        for name, predict in PREDICTORS.items():
            got = predict(t)
            fp[name] += len(got - truth)
            fn[name] += len(truth - got)

    print(f"{count} traces, {races} predictable races\n")
    print(f"{'predictor':<18}{'FP':>6}{'FN':>6}")
    for name in PREDICTORS:
        print(f"{name:<18}{fp[name]:>6}{fn[name]:>6}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 300)
