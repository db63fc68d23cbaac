"""Alternating multi-index bookkeeping.

Indices are 1-based, matching the usual coordinate notation x^1..x^n.
"""
from __future__ import annotations

from itertools import combinations

from .errors import DomainError


class MultiIndex(tuple):
    """Strictly increasing tuple of coordinate indices in ``1..n``."""

    __slots__ = ()

    def __new__(cls, entries=(), n=None):
        entries = tuple(int(e) for e in entries)
        if n is None:
            n = max(entries, default=0)
        if len(entries) > n:
            raise DomainError(f"degree {len(entries)} exceeds dimension {n}")
        for a, b in zip(entries, entries[1:]):
            if a >= b:
                raise DomainError(f"multi-index {entries} is not strictly increasing")
        if entries and (entries[0] < 1 or entries[-1] > n):
            raise DomainError(f"multi-index {entries} out of range 1..{n}")
        self = super().__new__(cls, entries)
        return self

    @property
    def degree(self) -> int:
        return len(self)

    def contains_n(self, n: int) -> bool:
        return bool(self) and self[-1] == n

    def without(self, j: int) -> tuple[int, ...]:
        return tuple(e for e in self if e != j)

    def label(self) -> str:
        return ",".join(str(e) for e in self)


def parse_label(text: str, n: int) -> MultiIndex:
    """Parse ``"1,3"`` (or ``""`` for the empty index) into a MultiIndex."""
    text = text.strip()
    if not text:
        return MultiIndex((), n)
    try:
        entries = [int(t) for t in text.split(",")]
    except ValueError:
        raise DomainError(f"bad multi-index label {text!r}") from None
    return MultiIndex(entries, n)


def enumerate_multi_indices(n: int, k: int) -> list[MultiIndex]:
    """All strictly increasing k-tuples from ``1..n`` in lexicographic order."""
    if k < 0 or k > n:
        raise DomainError(f"degree {k} not in 0..{n}")
    return [MultiIndex(c, n) for c in combinations(range(1, n + 1), k)]


def permutation_sign(seq, n: int | None = None) -> int:
    """Levi-Civita symbol: 0 on repeats, else the parity of the sorting permutation."""
    seq = tuple(seq)
    if n is not None and any(s < 1 or s > n for s in seq):
        raise DomainError(f"entries of {seq} out of range 1..{n}")
    if len(set(seq)) != len(seq):
        return 0
    inversions = sum(1 for a in range(len(seq)) for b in range(a + 1, len(seq)) if seq[a] > seq[b])
    return -1 if inversions % 2 else 1


def complement_with_sign(index, n: int) -> tuple[MultiIndex, int]:
    """Increasing complement J of I and the sign of the concatenation I||J."""
    index = MultiIndex(index, n)
    rest = tuple(j for j in range(1, n + 1) if j not in index)
    return MultiIndex(rest, n), permutation_sign(tuple(index) + rest)


def insert_index(index, j: int):
    """Slot of ``j`` in ``index`` and ``(-1)**slot``; ``None`` if already present."""
    if j in tuple(index):
        return None
    pos = sum(1 for e in index if e < j)
    return pos, (-1) ** pos


def merged(index, j: int) -> tuple[int, ...]:
    return tuple(sorted(tuple(index) + (j,)))
