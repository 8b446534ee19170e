"""Dense boolean relations over the events of a trace."""

from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np

from .trace import Trace


def transitive_closure(bits: np.ndarray) -> np.ndarray:
    """Warshall closure of a square boolean matrix (not reflexive)."""
    m = bits.astype(bool, copy=True)
    for k in range(m.shape[0]):
        col = m[:, k]
        if col.any():
            m[col] |= m[k]
    return m


def compose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Relational composition: (a;b)[i, j] iff a[i, k] and b[k, j] for some k."""
    return (a.astype(np.float32) @ b.astype(np.float32)) > 0


class RelationMatrix:
    """A binary relation on trace events, ``bits[i, j]`` meaning event i before event j.

    Rows and columns follow trace order; public methods take event ids.
    """

    __slots__ = ("ids", "bits", "_index")

    def __init__(self, ids: Iterable[int], bits: np.ndarray):
        self.ids = tuple(ids)
        n = len(self.ids)
        if bits.shape != (n, n):
            raise ValueError(f"expected a {n}x{n} matrix, got {bits.shape}")
        self.bits = np.asarray(bits, dtype=bool)
        self._index = {e: i for i, e in enumerate(self.ids)}

    @classmethod
    def empty(cls, trace: Trace) -> "RelationMatrix":
        n = len(trace)
        return cls(trace.ids, np.zeros((n, n), dtype=bool))

    @classmethod
    def from_pairs(cls, trace: Trace, pairs: Iterable[tuple[int, int]]) -> "RelationMatrix":
        r = cls.empty(trace)
        for e, f in pairs:
            r.bits[r._index[e], r._index[f]] = True
        return r

    def __len__(self) -> int:
        return len(self.ids)

    def ordered(self, e: int, f: int) -> bool:
        """True when e is before f."""
        return bool(self.bits[self._index[e], self._index[f]])

    __call__ = ordered

    def comparable(self, e: int, f: int) -> bool:
        return self.ordered(e, f) or self.ordered(f, e)

    def pairs(self) -> set[tuple[int, int]]:
        ii, jj = np.nonzero(self.bits)
        return {(self.ids[i], self.ids[j]) for i, j in zip(ii.tolist(), jj.tolist())}

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(sorted(self.pairs()))

    def closure(self) -> "RelationMatrix":
        return RelationMatrix(self.ids, transitive_closure(self.bits))

    def union(self, other: "RelationMatrix") -> "RelationMatrix":
        self._same_domain(other)
        return RelationMatrix(self.ids, self.bits | other.bits)

    __or__ = union

    def is_irreflexive(self) -> bool:
        return not bool(np.diagonal(self.bits).any())

    def is_transitive(self) -> bool:
        return not bool((compose(self.bits, self.bits) & ~self.bits).any())

    def is_strict_partial_order(self) -> bool:
        return self.is_irreflexive() and self.is_transitive()

    def issubset(self, other: "RelationMatrix") -> bool:
        self._same_domain(other)
        return not bool((self.bits & ~other.bits).any())

    __le__ = issubset

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, RelationMatrix)
            and self.ids == other.ids
            and bool(np.array_equal(self.bits, other.bits))
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"RelationMatrix({len(self.ids)} events, {int(self.bits.sum())} pairs)"

    def _same_domain(self, other: "RelationMatrix") -> None:
        if self.ids != other.ids:
            raise ValueError("relations are over different event sets")
