"""Oblivious dominance test between two encrypted tuples."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from . import paillier as ph
from .paillier import Ciphertext, clog2
from .subprotocols import EncryptedBit, TwoPartyContext, sand_many, sleq_many, sless_many


class DimensionError(ValueError):
    pass


@dataclass
class EncryptedTuple:
    attrs: list[Ciphertext]
    width: int

    @property
    def m(self) -> int:
        return len(self.attrs)


def _check_pair(a: EncryptedTuple, b: EncryptedTuple) -> None:
    if a.m != b.m:
        raise DimensionError(f"tuples have {a.m} and {b.m} attributes")
    if a.width != b.width:
        raise DimensionError(f"tuples have widths {a.width} and {b.width}")


def sdom_many(ctx: TwoPartyContext, pairs: Sequence[tuple[EncryptedTuple, EncryptedTuple]]) -> list[EncryptedBit]:
    """``E(a dominates b)`` for each pair.

    Per pair: one SLEQ per attribute, an AND fold over them, and a strict
    comparison of the attribute sums, which rules out ``a == b``.
    """
    if not pairs:
        return []
    for a, b in pairs:
        _check_pair(a, b)
    m, width = pairs[0][0].m, pairs[0][0].width
    if any(a.m != m or a.width != width for a, _ in pairs):
        raise DimensionError("all pairs in one batch must share m and width")
    ctx.calls["sdom"] += len(pairs)
    pk = ctx.pk

    flat = [(a.attrs[j], b.attrs[j]) for a, b in pairs for j in range(m)]
    deltas = sleq_many(ctx, flat, width)
    phis = [deltas[k * m : (k + 1) * m] for k in range(len(pairs))]
    # AND-fold all pairs' deltas level by level, one batch per level
    while len(phis[0]) > 1:
        folded = sand_many(ctx, [(p[0], p[1]) for p in phis])
        phis = [[f] + p[2:] for f, p in zip(folded, phis)]

    sums = [
        (ph.linear(pk, [(c, 1) for c in a.attrs]), ph.linear(pk, [(c, 1) for c in b.attrs]))
        for a, b in pairs
    ]
    sigmas = sless_many(ctx, sums, width + clog2(m) if m > 1 else width)
    return sand_many(ctx, [(s, p[0]) for s, p in zip(sigmas, phis)])


def sdom(ctx: TwoPartyContext, Ea: EncryptedTuple, Eb: EncryptedTuple) -> EncryptedBit:
    return sdom_many(ctx, [(Ea, Eb)])[0]
