"""Two-party primitives driven by C1 against the key holder C2.

Every function takes a :class:`TwoPartyContext` (C1's view: public key,
blinding RNG, channel to C2) and returns ciphertexts that only C1 holds.
The ``*_many`` variants batch independent instances into one round trip;
the scalar forms are thin wrappers.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from . import paillier as ph
from .keyholder import OpCounter
from .paillier import Ciphertext, ProtocolParams, PublicKey
from .transport import Frame, MsgType, ProtocolError, new_session_id

EncryptedBit = Ciphertext


class ParameterError(ValueError):
    """Bit widths that would let blinded values wrap around N."""


@dataclass
class EncryptedBitVector:
    """Encrypted bits, most significant first."""

    bits: list[Ciphertext]

    @property
    def width(self) -> int:
        return len(self.bits)


@dataclass
class TwoPartyContext:
    pk: PublicKey
    params: ProtocolParams
    channel: object
    rng: random.Random = field(default_factory=ph.default_rng)
    session_id: bytes = field(default_factory=new_session_id)
    counter: OpCounter = field(default_factory=OpCounter)
    calls: Counter = field(default_factory=Counter)
    # bits revealed per SBD round trip; 2 minimizes total modular work
    sbd_chunk: int = 2
    fixed_base: bool = True
    randomizer: ph.FixedBaseRandomizer | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.fixed_base and self.randomizer is None:
            self.randomizer = ph.FixedBaseRandomizer(self.pk, self.rng, self.params.kappa)

    def call(self, msg_type: MsgType, values: Sequence[int]) -> list[int]:
        resp = self.channel.request(Frame.of(msg_type, self.session_id, values))
        return resp.ints()

    def encrypt(self, m: int) -> Ciphertext:
        self.counter.add(enc=1)
        if self.randomizer is not None:
            return self.randomizer.encrypt(m % self.pk.N)
        return ph.encrypt(self.pk, m % self.pk.N, self.rng)

    def ct(self, v: int) -> Ciphertext:
        if not 0 < v < self.pk.N2:
            raise ProtocolError("peer returned a value outside Z_{N^2}")
        return Ciphertext(v, self.pk.key_id)

    def blind_bits(self, width: int) -> int:
        return self.rng.getrandbits(width + self.params.kappa)

    def require_width(self, width: int) -> None:
        if (1 << (width + self.params.kappa + 1)) >= self.pk.N:
            raise ParameterError(f"width {width} with kappa={self.params.kappa} wraps around N")


def sm_many(ctx: TwoPartyContext, pairs: Sequence[tuple[Ciphertext, Ciphertext]]) -> list[Ciphertext]:
    """Encrypted products ``a*b`` for each pair, in one round trip.

    An operand that appears several times is blinded once; C2 then sees that
    blinded value repeated, which carries nothing beyond a single blinding.
    """
    if not pairs:
        return []
    ctx.calls["sm"] += len(pairs)
    pk = ctx.pk
    width = ctx.params.sum_width + 1
    blinded: dict[int, tuple[int, Ciphertext]] = {}

    def blind(c: Ciphertext) -> tuple[int, Ciphertext]:
        key = int(c.value)
        if key not in blinded:
            r = ctx.blind_bits(width)
            blinded[key] = (r, ph.add(pk, c, ctx.encrypt(r)))
        return blinded[key]

    payload, blinds = [], []
    for a, b in pairs:
        ra, ea = blind(a)
        rb, eb = blind(b)
        blinds.append((ra, rb))
        payload += [ea.value, eb.value]
    reply = ctx.call(MsgType.SM_BLINDED_PAIR, payload)
    if len(reply) != len(pairs):
        raise ProtocolError("SM reply has the wrong length", MsgType.SM_BLINDED_PAIR)
    out = []
    for (a, b), (ra, rb), h in zip(pairs, blinds, reply):
        c = ph.linear(pk, [(ctx.ct(h), 1), (a, -rb), (b, -ra)])
        out.append(ph.add_plain(pk, c, -ra * rb))
    return out


def sm(ctx: TwoPartyContext, Ea: Ciphertext, Eb: Ciphertext) -> Ciphertext:
    return sm_many(ctx, [(Ea, Eb)])[0]


def sbd_many(ctx: TwoPartyContext, values: Sequence[Ciphertext], width: int) -> list[EncryptedBitVector]:
    """Bit decomposition of every value (each ``< 2**width``), LSB outward.

    At offset ``i`` C1 holds ``x'``, the value with its ``i`` low bits already
    peeled off, and sends ``x' + r*2**i``.  C2 shifts the decryption down by
    ``i`` and returns the one-hot encoding of its low ``chunk`` bits.  Since
    C1 knows ``r``, every bit of ``(x' >> i) mod 2**chunk`` is a public
    selection over that one-hot vector, as is the amount to subtract.
    With ``chunk == 1`` this is a blinded parity query.
    """
    if width < 1:
        raise ParameterError("width must be positive")
    ctx.require_width(width)
    ctx.calls["sbd"] += len(values)
    pk = ctx.pk
    one = pk.trivial(1)
    residual = list(values)
    lsb_first: list[list[Ciphertext]] = [[] for _ in values]
    i = 0
    while i < width:
        step = min(ctx.sbd_chunk, width - i)
        masks, payload = [], []
        for x in residual:
            r = ctx.blind_bits(width - i)
            masks.append(r)
            payload += [i, step, ph.add(pk, x, ctx.encrypt(r << i)).value]
        reply = ctx.call(MsgType.SBD_MASKED, payload)
        per = (1 << step) - 1
        if len(reply) != per * len(residual):
            raise ProtocolError("SBD reply has the wrong length", MsgType.SBD_MASKED)
        for k, r in enumerate(masks):
            hot = [ctx.ct(v) for v in reply[k * per : (k + 1) * per]]
            hot.insert(0, ph.sub(pk, one, ph.linear(pk, [(h, 1) for h in hot])))
            low = r & per
            digit = [(v - low) & per for v in range(per + 1)]
            for j in range(step):
                lsb_first[k].append(ph.linear(pk, [(hot[v], 1) for v in range(per + 1) if digit[v] >> j & 1]))
            if i + step < width:
                peeled = [(hot[v], -(digit[v] << i)) for v in range(per + 1) if digit[v]]
                residual[k] = ph.linear(pk, [(residual[k], 1)] + peeled)
        i += step
    return [EncryptedBitVector(bits[::-1]) for bits in lsb_first]


def sbd(ctx: TwoPartyContext, Ea: Ciphertext, width: int) -> EncryptedBitVector:
    return sbd_many(ctx, [Ea], width)[0]


def recompose(pk: PublicKey, bits: EncryptedBitVector | Sequence[Ciphertext]) -> Ciphertext:
    seq = bits.bits if isinstance(bits, EncryptedBitVector) else list(bits)
    w = len(seq)
    return ph.linear(pk, [(b, 1 << (w - 1 - g)) for g, b in enumerate(seq)])


def snot(pk: PublicKey, Ea: EncryptedBit) -> EncryptedBit:
    """``E(1 - a)``; local to C1."""
    return ph.add_plain(pk, ph.negate(pk, Ea), 1)


def sand_many(ctx, pairs):
    return sm_many(ctx, pairs)


def sand(ctx: TwoPartyContext, Ea: EncryptedBit, Eb: EncryptedBit) -> EncryptedBit:
    return sm_many(ctx, [(Ea, Eb)])[0]


def sor_many(ctx: TwoPartyContext, pairs: Sequence[tuple[EncryptedBit, EncryptedBit]]) -> list[EncryptedBit]:
    """``a + b - a*b`` for each pair of bits."""
    prods = sm_many(ctx, pairs)
    return [ph.linear(ctx.pk, [(a, 1), (b, 1), (ab, -1)]) for (a, b), ab in zip(pairs, prods)]


def sor(ctx: TwoPartyContext, Ea: EncryptedBit, Eb: EncryptedBit) -> EncryptedBit:
    return sor_many(ctx, [(Ea, Eb)])[0]


def sleq_many(ctx: TwoPartyContext, pairs, width: int) -> list[EncryptedBit]:
    """``E(a <= b)`` via the top bit of ``2**width + b - a``."""
    ctx.calls["sleq"] += len(pairs)
    pk = ctx.pk
    zs = [ph.add_plain(pk, ph.sub(pk, b, a), 1 << width) for a, b in pairs]
    return [v.bits[0] for v in sbd_many(ctx, zs, width + 1)]


def sleq(ctx: TwoPartyContext, Ea: Ciphertext, Eb: Ciphertext, width: int) -> EncryptedBit:
    return sleq_many(ctx, [(Ea, Eb)], width)[0]


def seq_many(ctx: TwoPartyContext, pairs, width: int) -> list[EncryptedBit]:
    both = sleq_many(ctx, list(pairs) + [(b, a) for a, b in pairs], width)
    k = len(pairs)
    return sand_many(ctx, list(zip(both[:k], both[k:])))


def seq(ctx: TwoPartyContext, Ea: Ciphertext, Eb: Ciphertext, width: int) -> EncryptedBit:
    return seq_many(ctx, [(Ea, Eb)], width)[0]


def sless_many(ctx: TwoPartyContext, pairs, width: int, fast: bool = True) -> list[EncryptedBit]:
    """``E(a < b)``.

    ``fast`` uses ``not (b <= a)`` (one comparison); the canonical path is
    ``(a <= b) and not (a == b)``.  Both agree on all inputs.
    """
    ctx.calls["sless"] += len(pairs)
    if fast:
        return [snot(ctx.pk, c) for c in sleq_many(ctx, [(b, a) for a, b in pairs], width)]
    le = sleq_many(ctx, pairs, width)
    eq = seq_many(ctx, pairs, width)
    return sand_many(ctx, [(x, snot(ctx.pk, y)) for x, y in zip(le, eq)])


def sless(ctx: TwoPartyContext, Ea: Ciphertext, Eb: Ciphertext, width: int, fast: bool = True) -> EncryptedBit:
    return sless_many(ctx, [(Ea, Eb)], width, fast=fast)[0]


def smin2_many(ctx: TwoPartyContext, pairs, width: int) -> list[Ciphertext]:
    """``E(min(a, b))`` as ``a*out + b*(1-out)`` with ``out = (a <= b)``."""
    ctx.calls["smin2"] += len(pairs)
    pk = ctx.pk
    outs = sleq_many(ctx, pairs, width)
    terms = []
    for (a, b), o in zip(pairs, outs):
        terms += [(o, a), (snot(pk, o), b)]
    prods = sm_many(ctx, terms)
    return [ph.add(pk, prods[2 * k], prods[2 * k + 1]) for k in range(len(pairs))]


def smin2(ctx: TwoPartyContext, Ea: Ciphertext, Eb: Ciphertext, width: int) -> Ciphertext:
    return smin2_many(ctx, [(Ea, Eb)], width)[0]


def smin_n(ctx: TwoPartyContext, values: Sequence[Ciphertext], width: int, strategy: str = "linear") -> Ciphertext:
    """Encrypted minimum of ``values``.

    ``linear`` folds left to right; ``tree`` pairs values level by level so
    each level is one batched round.
    """
    if not values:
        raise ValueError("smin_n of an empty list")
    ctx.calls["smin_n"] += 1
    if strategy == "linear":
        acc = values[0]
        for v in values[1:]:
            acc = smin2(ctx, acc, v, width)
        return acc
    if strategy != "tree":
        raise ValueError(f"unknown SMIN strategy {strategy!r}")
    level = list(values)
    while len(level) > 1:
        pairs = list(zip(level[::2], level[1::2]))
        nxt = smin2_many(ctx, pairs, width)
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]
