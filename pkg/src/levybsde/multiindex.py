"""Multi-indices and the graded lexicographic order.

A multi-index is a tuple of nonnegative integers ``p = (p1, ..., pn)``;
it labels jump monomials ``x**p = x1**p1 * ... * xn**pn`` and everything
built from them (moment tensors, Gram entries, basis elements).

Ordering convention: indices are compared first by total degree, then
lexicographically with the *first* component dominating and larger values
sorting earlier, so for n = 2 the degree-2 block reads
``(2,0) < (1,1) < (0,2)``.  Tests pin this direction.
"""

from __future__ import annotations

import itertools
from math import comb

MultiIndex = tuple[int, ...]


def degree(p: MultiIndex) -> int:
    """Total degree |p| = p1 + ... + pn."""
    return sum(p)


def validate_index(p, n: int | None = None) -> MultiIndex:
    """Coerce to a tuple of nonnegative ints, optionally checking length."""
    q = tuple(int(v) for v in p)
    if any(v < 0 for v in q):
        raise ValueError(f"multi-index must be nonnegative, got {p}")
    if n is not None and len(q) != n:
        raise ValueError(f"multi-index {p} has length {len(q)}, expected {n}")
    return q


def grlex_key(p: MultiIndex):
    """Sort key realizing the graded lexicographic order."""
    return (sum(p),) + tuple(-v for v in p)


def grlex_less(p: MultiIndex, q: MultiIndex) -> bool:
    return grlex_key(p) < grlex_key(q)


def indices_of_degree(n: int, d: int) -> list[MultiIndex]:
    """All multi-indices of length n with |p| = d, in graded lex order."""
    if n == 1:
        return [(d,)]
    out = []
    # enumerate by first component, descending, recursing on the rest
    for first in range(d, -1, -1):
        out.extend((first,) + rest for rest in indices_of_degree(n - 1, d - first))
    return out


def graded_lex_enumerate(n: int, max_degree: int) -> list[MultiIndex]:
    """All multi-indices with 1 <= |p| <= max_degree, graded lex order.

    The count at each degree d is C(n + d - 1, d).
    """
    if n < 1 or max_degree < 1:
        raise ValueError(f"need n >= 1 and max_degree >= 1, got {(n, max_degree)}")
    return list(
        itertools.chain.from_iterable(
            indices_of_degree(n, d) for d in range(1, max_degree + 1)
        )
    )


def count_at_degree(n: int, d: int) -> int:
    return comb(n + d - 1, d)


def unit_index(n: int, i: int) -> MultiIndex:
    """The i-th coordinate index e_i (0-based i)."""
    return tuple(1 if j == i else 0 for j in range(n))


def add(p: MultiIndex, q: MultiIndex) -> MultiIndex:
    return tuple(a + b for a, b in zip(p, q, strict=True))
