"""Indexing of degree slices by weak compositions.

The slice of degree ``S`` in an ``n``-dimensional count lattice is the
set of weak compositions of ``S`` into ``n`` parts.  Each slice is
stored as a dense array, so we need a bijection between compositions
and array offsets.  We rank compositions in lexicographic order on
``(y_1, ..., y_n)`` via the combinatorial number system: with
``s_j = y_{j+1} + ... + y_n`` the remaining mass after position ``j``,

    rank(y) = sum_{j=1}^{n-1}  C(s_{j-1} + n - j, n - j) - C(s_j + n - j, n - j).

Binomials come from precomputed Pascal rows, so ranking is O(n) lookups
per composition and vectorizes over a whole slice.  The dependency
indices used by the slice recurrence (ranks of ``y - c`` for every bit
pattern ``c``) are cached per ``(n, S)``; they do not depend on any
model parameter.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "Composition",
    "slice_size",
    "rank",
    "unrank",
    "dependency_index",
    "compositions_matrix",
    "get_slice_tables",
    "SliceTables",
]

_INT64_MAX = np.iinfo(np.int64).max


def slice_size(degree: int, n: int) -> int:
    """Number of weak compositions of ``degree`` into ``n`` parts."""
    if n < 1:
        raise ValueError(f"need at least one part, got n={n}")
    if degree < 0:
        return 0
    count = math.comb(degree + n - 1, n - 1)
    if count > _INT64_MAX:
        raise OverflowError(f"slice of degree {degree} in {n} parts exceeds int64 indexing")
    return count


@dataclass(frozen=True)
class Composition:
    """Weak composition: ``n`` non-negative parts with declared total."""

    parts: tuple[int, ...]
    degree: int = field(default=-1)

    def __post_init__(self) -> None:
        parts = tuple(int(v) for v in self.parts)
        object.__setattr__(self, "parts", parts)
        if any(v < 0 for v in parts) or not parts:
            raise ValueError(f"parts must be non-negative and non-empty, got {self.parts}")
        total = sum(parts)
        if self.degree == -1:
            object.__setattr__(self, "degree", total)
        elif self.degree != total:
            raise ValueError(f"declared degree {self.degree} != part sum {total}")

    @property
    def n(self) -> int:
        return len(self.parts)


def rank(y: Composition | Sequence[int]) -> int:
    """Lexicographic rank of ``y`` within its own degree slice."""
    if not isinstance(y, Composition):
        y = Composition(tuple(y))
    parts, n = y.parts, y.n
    r = 0
    remaining = y.degree
    for j in range(n - 1):
        k = n - 1 - j  # parts after position j
        after = remaining - parts[j]
        r += math.comb(remaining + k, k) - math.comb(after + k, k)
        remaining = after
    return r


def unrank(degree: int, n: int, k: int) -> Composition:
    """Composition of ``degree`` into ``n`` parts with lexicographic rank ``k``."""
    size = slice_size(degree, n)
    if not (0 <= k < size):
        raise ValueError(f"rank {k} out of range for slice of size {size}")
    parts = []
    remaining = degree
    for j in range(n - 1):
        kk = n - 1 - j
        v = 0
        while True:
            block = math.comb(remaining - v + kk - 1, kk - 1)
            if k < block:
                break
            k -= block
            v += 1
        parts.append(v)
        remaining -= v
    parts.append(remaining)
    return Composition(tuple(parts), degree)


def dependency_index(
    y: Composition | Sequence[int], c: Sequence[int]
) -> Optional[tuple[int, int]]:
    """Slice offset and rank of ``y - c``, or ``None`` when any entry of
    ``y - c`` is negative (a zero contribution in the recurrence)."""
    if not isinstance(y, Composition):
        y = Composition(tuple(y))
    c = tuple(int(b) for b in c)
    if len(c) != y.n or any(b not in (0, 1) for b in c):
        raise ValueError(f"expected a bit pattern of length {y.n}, got {c}")
    shifted = tuple(v - b for v, b in zip(y.parts, c))
    if any(v < 0 for v in shifted):
        return None
    offset = sum(c)
    return offset, rank(Composition(shifted, y.degree - offset))


# ---------------------------------------------------------------------------
# Vectorized slice tables
# ---------------------------------------------------------------------------

# Pascal rows: _pascal_row(k)[m] == C(m + k, k).  Built by repeated cumsum,
# which keeps the entries exact in int64.
_pascal_rows: dict[int, np.ndarray] = {}


def _pascal_row(k: int, length: int) -> np.ndarray:
    row = _pascal_rows.get(k)
    if row is None or len(row) < length:
        size = max(length, 256)
        row = np.ones(size, dtype=np.int64)
        for _ in range(k):
            row = np.cumsum(row)
        if k > 0 and row[-1] < 0:
            raise OverflowError(f"Pascal row k={k} overflows int64 at length {size}")
        _pascal_rows[k] = row
    return row


def _ranks_in_slice(comps: np.ndarray, degree: int) -> np.ndarray:
    """Vectorized lexicographic ranks of the rows of ``comps``.

    Every row must be a composition of ``degree``; entries may be fed
    from shifted compositions as long as callers mask invalid rows.
    """
    w, n = comps.shape
    if n == 1:
        return np.zeros(w, dtype=np.int64)
    remaining = np.full(w, degree, dtype=np.int64)  # mass from position j onward
    ranks = np.zeros(w, dtype=np.int64)
    for j in range(n - 1):
        k = n - 1 - j
        row = _pascal_row(k, degree + 1)
        after = remaining - comps[:, j]
        ranks += row[remaining] - row[after]
        remaining = after
    return ranks


_comp_cache: dict[tuple[int, int], np.ndarray] = {}


def compositions_matrix(degree: int, n: int) -> np.ndarray:
    """All weak compositions of ``degree`` into ``n`` parts, one per row,
    in lexicographic order (read-only int64 array)."""
    if degree < 0:
        return np.empty((0, n), dtype=np.int64)
    key = (degree, n)
    out = _comp_cache.get(key)
    if out is not None:
        return out
    if n == 1:
        out = np.array([[degree]], dtype=np.int64)
    elif n == 2:
        first = np.arange(degree + 1, dtype=np.int64)
        out = np.column_stack([first, degree - first])
    else:
        blocks = []
        for v in range(degree + 1):
            tail = compositions_matrix(degree - v, n - 1)
            head = np.full((len(tail), 1), v, dtype=np.int64)
            blocks.append(np.hstack([head, tail]))
        out = np.vstack(blocks)
    out.setflags(write=False)
    _comp_cache[key] = out
    return out


@dataclass(frozen=True)
class SliceTables:
    """Parameter-independent gather tables for one slice.

    ``idx[c]`` maps the rank of ``y`` in slice ``degree`` to the rank of
    ``y - c`` in slice ``degree - popcount(c)``; ``-1`` marks a negative
    (zero-contribution) shift.  ``binary_ranks``/``binary_codes`` locate
    the 0/1-valued compositions whose recurrence term includes a
    numerator coefficient.
    """

    degree: int
    n: int
    size: int
    comps: np.ndarray
    idx: dict[int, np.ndarray]
    binary_ranks: np.ndarray
    binary_codes: np.ndarray


# LRU over (n, degree); the budget bounds total cached int64/idx entries.
_table_cache: OrderedDict[tuple[int, int], SliceTables] = OrderedDict()
_table_cache_entries = 0
_TABLE_CACHE_BUDGET = 48_000_000


def _tables_weight(t: SliceTables) -> int:
    return t.comps.size + sum(a.size for a in t.idx.values())


def get_slice_tables(n: int, degree: int) -> SliceTables:
    """Gather tables for slice ``degree`` of the ``n``-part lattice (cached)."""
    global _table_cache_entries
    key = (n, degree)
    hit = _table_cache.get(key)
    if hit is not None:
        _table_cache.move_to_end(key)
        return hit

    comps = compositions_matrix(degree, n)
    w = len(comps)
    idx: dict[int, np.ndarray] = {}
    for code in range(1, 2**n):
        bits = np.array([(code >> b) & 1 for b in range(n)], dtype=np.int64)
        d = int(bits.sum())
        if d > degree:
            continue
        shifted = comps - bits
        valid = (shifted >= 0).all(axis=1)
        ranks = np.full(w, -1, dtype=np.int64)
        if valid.any():
            ranks[valid] = _ranks_in_slice(shifted[valid], degree - d)
        ranks = ranks.astype(np.int64, copy=False)
        ranks.setflags(write=False)
        idx[code] = ranks

    if degree <= n:
        binary = (comps <= 1).all(axis=1)
        binary_ranks = np.flatnonzero(binary)
        codes = (comps[binary_ranks] << np.arange(n, dtype=np.int64)).sum(axis=1)
    else:
        binary_ranks = np.empty(0, dtype=np.int64)
        codes = np.empty(0, dtype=np.int64)

    tables = SliceTables(
        degree=degree,
        n=n,
        size=w,
        comps=comps,
        idx=idx,
        binary_ranks=binary_ranks,
        binary_codes=codes,
    )
    _table_cache[key] = tables
    _table_cache_entries += _tables_weight(tables)
    while _table_cache_entries > _TABLE_CACHE_BUDGET and len(_table_cache) > 1:
        _, evicted = _table_cache.popitem(last=False)
        _table_cache_entries -= _tables_weight(evicted)
    return tables
