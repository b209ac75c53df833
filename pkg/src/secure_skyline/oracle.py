"""Plaintext skyline reference implementations."""

from __future__ import annotations

from collections import Counter
from typing import Iterable, Sequence

Point = tuple[int, ...]


def dominates(a: Sequence[int], b: Sequence[int]) -> bool:
    """True iff ``a`` is no worse than ``b`` everywhere and strictly better somewhere."""
    if len(a) != len(b):
        raise ValueError(f"dimension mismatch: {len(a)} vs {len(b)}")
    strict = False
    for x, y in zip(a, b):
        if x > y:
            return False
        strict = strict or x < y
    return strict


def map_query(p: Sequence[int], q: Sequence[int], mode: str = "squared") -> Point:
    if len(p) != len(q):
        raise ValueError(f"dimension mismatch: {len(p)} vs {len(q)}")
    if mode == "squared":
        return tuple((x - y) ** 2 for x, y in zip(p, q))
    if mode == "absolute":
        return tuple(abs(x - y) for x, y in zip(p, q))
    raise ValueError(f"unknown mapping {mode!r}")


def skyline_iterative(points: Sequence[Sequence[int]], tie: str = "last") -> list[Point]:
    """Repeatedly take the minimum-sum point and drop everything it dominates.

    ``tie`` picks among equal minimum sums: ``last`` takes the highest index,
    ``first`` the lowest.  ``last`` matches the secure protocol's default
    perturbation order.
    """
    if tie not in ("first", "last"):
        raise ValueError(f"unknown tie rule {tie!r}")
    remaining = [tuple(p) for p in points]
    pool: list[Point] = []
    while remaining:
        sums = [sum(p) for p in remaining]
        best = min(sums)
        idx = sums.index(best) if tie == "first" else len(sums) - 1 - sums[::-1].index(best)
        t = remaining.pop(idx)
        pool.append(t)
        remaining = [p for p in remaining if not dominates(t, p)]
    return pool


def skyline_bruteforce(points: Iterable[Sequence[int]]) -> Counter:
    """Multiset of points not dominated by any other point (duplicates kept)."""
    pts = [tuple(p) for p in points]
    return Counter(p for p in pts if not any(dominates(o, p) for o in pts))


def as_multiset(points: Iterable[Sequence[int]]) -> Counter:
    return Counter(tuple(int(v) for v in p) for p in points)
