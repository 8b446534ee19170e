"""Lock-set race predictors and their evaluation against the oracle."""

from __future__ import annotations

from dataclasses import dataclass
from typing import AbstractSet, Mapping

from . import oracle
from .trace import RacePair, Trace, conflicting_pairs, standard_locksets

LockSet = AbstractSet[str]
ThreadIndexedLockSet = AbstractSet[tuple[str, str]]


def indexed_intersection(m: ThreadIndexedLockSet, n: ThreadIndexedLockSet) -> frozenset[str]:
    """Locks held on both sides through acquires in different threads."""
    by_lock: dict[str, set[str]] = {}
    for x, s in m:
        by_lock.setdefault(x, set()).add(s)
    out = set()
    for x, t in n:
        owners = by_lock.get(x)
        if owners and (len(owners) > 1 or t not in owners):
            out.add(x)
    return frozenset(out)


def _lookup(locksets: Mapping[int, object], eid: int):
    try:
        return locksets[eid]
    except KeyError:
        raise KeyError(f"no lock set for e{eid}") from None


def predict_races(trace: Trace, locksets: Mapping[int, LockSet]) -> set[RacePair]:
    """Conflicting pairs whose lock sets are disjoint."""
    return {
        (e, f)
        for e, f in conflicting_pairs(trace)
        if not (set(_lookup(locksets, e)) & set(_lookup(locksets, f)))
    }


def predict_races_indexed(trace: Trace, locksets: Mapping[int, ThreadIndexedLockSet]) -> set[RacePair]:
    """Conflicting pairs whose thread-indexed lock sets do not meet across threads."""
    return {
        (e, f)
        for e, f in conflicting_pairs(trace)
        if not indexed_intersection(_lookup(locksets, e), _lookup(locksets, f))
    }


@dataclass(frozen=True)
class PredictorEvaluation:
    predicted: frozenset[RacePair]
    false_positives: frozenset[RacePair]
    false_negatives: frozenset[RacePair]

    @property
    def exact(self) -> bool:
        return not self.false_positives and not self.false_negatives


def evaluate_predictor(
    trace: Trace, predicted: AbstractSet[RacePair], max_events: int | None = None
) -> PredictorEvaluation:
    truth = oracle.true_race_pairs(trace, max_events)
    pred = frozenset(predicted)
    return PredictorEvaluation(pred, pred - truth, frozenset(truth - pred))


# Convenience wrappers for the three standard lock-set flavours.


def std_predictor(trace: Trace) -> set[RacePair]:
    return predict_races(trace, standard_locksets(trace))


def ct_predictor(trace: Trace, max_events: int | None = None) -> set[RacePair]:
    return predict_races(trace, oracle.ct_locksets(trace, max_events))


def ctt_predictor(trace: Trace, max_events: int | None = None) -> set[RacePair]:
    return predict_races_indexed(trace, oracle.ctt_locksets(trace, max_events))
