"""Secure dynamic skyline over an encrypted dataset.

C1 runs these functions against C2 through a :class:`TwoPartyContext`.
``bssp`` is the basic protocol, which lets the servers see the selection
order and the dominance pattern.  ``fssp`` hides both: sums carry distinct
perturbation bits, the minimum is located through a permuted, blinded vector,
and processed tuples are flagged to the maximum value instead of deleted.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

from . import paillier as ph
from .dominance import EncryptedTuple, sdom_many
from .keyholder import IntegrityError
from .paillier import Ciphertext, ProtocolParams, PublicKey
from .subprotocols import (
    EncryptedBit,
    EncryptedBitVector,
    TwoPartyContext,
    recompose,
    sbd_many,
    sm_many,
    smin_n,
    sor_many,
)
from .transport import MsgType, ProtocolError

Trace = Callable[..., None]
FosRandomness = Callable[[int], tuple[Sequence[int], Sequence[int]]]

PERTURBATION_ORDERS = ("descending", "ascending")


@dataclass
class EncryptedDataset:
    P: list[EncryptedTuple]
    T: list[EncryptedTuple]
    params: ProtocolParams

    def __post_init__(self):
        if len(self.P) != len(self.T):
            raise ValueError("P and T must have the same length")

    @property
    def n(self) -> int:
        return len(self.T)


@dataclass
class PerturbedSum:
    bits: EncryptedBitVector
    pert_value: int


@dataclass
class SkylinePool:
    """Skyline points in selection order; ``mapped`` holds the matching T rows."""

    points: list[EncryptedTuple] = field(default_factory=list)
    mapped: list[EncryptedTuple] = field(default_factory=list)

    def add(self, p: EncryptedTuple, t: EncryptedTuple) -> None:
        self.points.append(p)
        self.mapped.append(t)

    def __len__(self) -> int:
        return len(self.points)


# -- data owner / client side ------------------------------------------------


def encrypt_tuple(pk: PublicKey, attrs: Sequence[int], width: int, rng=None) -> EncryptedTuple:
    for a in attrs:
        if not 0 <= a < (1 << width):
            raise ValueError(f"attribute {a} does not fit in {width} bits")
    return EncryptedTuple([ph.encrypt(pk, int(a), rng) for a in attrs], width)


def encrypt_points(pk: PublicKey, points: Sequence[Sequence[int]], width: int, rng=None) -> list[EncryptedTuple]:
    return [encrypt_tuple(pk, p, width, rng) for p in points]


def encrypt_query(pk: PublicKey, q: Sequence[int], width: int, rng=None) -> EncryptedTuple:
    """Client's query as ``E(-q[j])``, ready to be added to each record."""
    for a in q:
        if not 0 <= a < (1 << width):
            raise ValueError(f"query attribute {a} does not fit in {width} bits")
    return EncryptedTuple([ph.encrypt(pk, (-int(a)) % pk.N, rng) for a in q], width)


# -- C1 side -----------------------------------------------------------------


def preprocess(ctx: TwoPartyContext, EP: Sequence[EncryptedTuple], Eq_neg: EncryptedTuple) -> EncryptedDataset:
    """Map every record to its squared per-attribute distance from the query."""
    m = Eq_neg.m
    pk = ctx.pk
    for i, p in enumerate(EP):
        if p.m != m:
            raise ValueError(f"record has {p.m} attributes, query has {m}")
        if not all(ph.is_ciphertext(pk, c.value) for c in p.attrs):
            raise ProtocolError(f"record {i} holds a value that is not a ciphertext under this key")
    if not all(ph.is_ciphertext(pk, c.value) for c in Eq_neg.attrs):
        raise ProtocolError("query holds a value that is not a ciphertext under this key", MsgType.QUERY_SUBMIT)
    diffs = [ph.add(pk, c, Eq_neg.attrs[j]) for p in EP for j, c in enumerate(p.attrs)]
    squares = sm_many(ctx, [(d, d) for d in diffs])
    width = mapped_width(ctx.params)
    T = [EncryptedTuple(squares[i * m : (i + 1) * m], width) for i in range(len(EP))]
    return EncryptedDataset(list(EP), T, ctx.params)


def mapped_width(params: ProtocolParams) -> int:
    """Bits per mapped attribute: ``2d`` for squared distances, else what ``l`` allows."""
    return 2 * params.d if params.d is not None else params.attr_width


def attribute_sums(pk: PublicKey, T: Sequence[EncryptedTuple]) -> list[Ciphertext]:
    return [ph.linear(pk, [(c, 1) for c in t.attrs]) for t in T]


def perturbation_values(n: int, order: str = "descending") -> list[int]:
    """Distinct values in ``[0, n)`` appended below each sum.

    ``descending`` gives the first record the largest value, so among equal
    sums the record with the highest index wins; ``ascending`` is the reverse.
    """
    if order == "descending":
        return [n - 1 - i for i in range(n)]
    if order == "ascending":
        return list(range(n))
    raise ValueError(f"unknown perturbation order {order!r}")


def perturb(pk: PublicKey, bits: Sequence[EncryptedBitVector], c: int, order: str = "descending") -> list[PerturbedSum]:
    out = []
    for v, b in zip(perturbation_values(len(bits), order), bits):
        tail = [pk.trivial((v >> (c - 1 - g)) & 1) for g in range(c)]
        out.append(PerturbedSum(EncryptedBitVector(b.bits + tail), v))
    return out


def _draw_fos_randomness(ctx: TwoPartyContext, n: int) -> tuple[list[int], list[int]]:
    N = int(ctx.pk.N)
    blinds = [ctx.rng.randrange(1, N) for _ in range(n)]
    perm = list(range(n))
    ctx.rng.shuffle(perm)
    return blinds, perm


def find_one_skyline(
    ctx: TwoPartyContext,
    ds: EncryptedDataset,
    sums: Sequence[Ciphertext],
    Es_min: Ciphertext,
    randomness: FosRandomness | None = None,
    trace: Trace | None = None,
) -> tuple[EncryptedTuple, EncryptedTuple, list[EncryptedBit]]:
    """Obliviously select the record whose (perturbed) sum equals ``Es_min``.

    Returns ``(p_sky, t_sky, V)`` where ``V`` is the encrypted one-hot
    selection vector.  ``randomness(n)`` may supply ``(blinds, perm)`` with
    ``perm`` 0-based and ``beta[k] = alpha'[perm[k]]``.
    """
    pk, n = ctx.pk, ds.n
    blinds, perm = (randomness or (lambda k: _draw_fos_randomness(ctx, k)))(n)
    if sorted(perm) != list(range(n)) or len(blinds) != n:
        raise ValueError("blinds and permutation must cover every record")
    ctx.calls["fos"] += 1
    alphas = [ph.scalar_mul(pk, ph.sub(pk, s, Es_min), r) for s, r in zip(sums, blinds)]
    beta = [ph.add(pk, alphas[perm[k]], ctx.encrypt(0)) for k in range(n)]
    if trace:
        trace("fos_beta", beta=beta)
    reply = ctx.call(MsgType.FOS_BETA, [c.value for c in beta])
    if len(reply) != n:
        raise ProtocolError("FOS reply has the wrong length", MsgType.FOS_BETA)
    V: list[EncryptedBit] = [None] * n  # type: ignore[list-item]
    for k, u in enumerate(reply):
        V[perm[k]] = ctx.ct(u)

    m = ds.T[0].m
    pairs = [(V[i], ds.T[i].attrs[j]) for j in range(m) for i in range(n)]
    pairs += [(V[i], ds.P[i].attrs[j]) for j in range(m) for i in range(n)]
    prods = sm_many(ctx, pairs)

    def gather(offset: int) -> list[Ciphertext]:
        return [ph.linear(pk, [(c, 1) for c in prods[offset + j * n : offset + (j + 1) * n]]) for j in range(m)]

    t_sky = EncryptedTuple(gather(0), ds.T[0].width)
    p_sky = EncryptedTuple(gather(m * n), ds.P[0].width)
    return p_sky, t_sky, V


def _flag(ctx: TwoPartyContext, bits: list[PerturbedSum], flags: Sequence[EncryptedBit]) -> None:
    """OR each record's flag into every bit of its perturbed sum, in place."""
    w = bits[0].bits.width
    pairs = [(f, b) for f, ps in zip(flags, bits) for b in ps.bits.bits]
    ored = sor_many(ctx, pairs)
    for i, ps in enumerate(bits):
        ps.bits = EncryptedBitVector(ored[i * w : (i + 1) * w])


def _terminate(ctx: TwoPartyContext, Es_min: Ciphertext) -> bool:
    pk = ctx.pk
    r = ctx.rng.randrange(1, int(pk.N))
    lam = ph.scalar_mul(pk, ph.add_plain(pk, Es_min, -ctx.params.max_value), r)
    lam = ph.add(pk, lam, ctx.encrypt(0))
    verdict = ctx.call(MsgType.TERM_LAMBDA, [lam.value])
    if verdict not in ([0], [1]):
        raise ProtocolError("malformed termination verdict", MsgType.TERM_LAMBDA)
    return verdict == [1]


FLAGGING_MODES = ("arithmetic", "bitwise")


def fssp(
    ctx: TwoPartyContext,
    ds: EncryptedDataset,
    *,
    perturbation: str = "descending",
    flagging: str = "arithmetic",
    smin_strategy: str = "linear",
    fos_randomness: FosRandomness | None = None,
    trace: Trace | None = None,
    max_rounds: int | None = None,
) -> SkylinePool:
    """Fully secure skyline; the servers learn only the number of rounds.

    ``flagging="bitwise"`` decomposes each sum, appends the perturbation bits
    and ORs the flags into every bit.  ``"arithmetic"`` computes the same
    values as ``S*2**c + pert`` and ``S + f*(MAX - S)``, one multiplication
    per record instead of one per bit.  Both modes produce identical
    decrypted states.

    ``trace(event, **ciphertexts)`` is called at each stage with C1's
    ciphertexts so tests can inspect intermediate states with the key.
    """
    if flagging not in FLAGGING_MODES:
        raise ValueError(f"unknown flagging mode {flagging!r}")
    pk, params, n = ctx.pk, ctx.params, ds.n
    if params.n < n:
        raise ValueError(f"params sized for n={params.n}, dataset has {n}")
    pool = SkylinePool()
    if n == 0:
        return pool
    c, width, MAX = params.pert_bits, params.sum_width, params.max_value
    sums = attribute_sums(pk, ds.T)
    if trace:
        trace("sums", sums=sums)
    if flagging == "bitwise":
        perturbed = perturb(pk, sbd_many(ctx, sums, params.l), c, perturbation)
        current = [recompose(pk, ps.bits) for ps in perturbed]
    else:
        pert = perturbation_values(n, perturbation)
        current = [ph.add_plain(pk, ph.linear(pk, [(s, 1 << c)]), v) for s, v in zip(sums, pert)]

    rounds = 0
    while True:
        if trace:
            trace("perturbed", sums=current, round=rounds)
        s_min = smin_n(ctx, current, width, smin_strategy)
        if _terminate(ctx, s_min):
            break
        if max_rounds is not None and rounds >= max_rounds:
            raise IntegrityError(f"no termination after {max_rounds} rounds")
        p_sky, t_sky, V = find_one_skyline(ctx, ds, current, s_min, fos_randomness, trace)
        pool.add(p_sky, t_sky)
        if trace:
            trace("selected", p_sky=p_sky, t_sky=t_sky, V=V, round=rounds)
        dominated = sdom_many(ctx, [(t_sky, t) for t in ds.T])
        if flagging == "bitwise":
            _flag(ctx, perturbed, V)
            _flag(ctx, perturbed, dominated)
            current = [recompose(pk, ps.bits) for ps in perturbed]
        else:
            flags = sor_many(ctx, list(zip(V, dominated)))
            gaps = [ph.add_plain(pk, ph.negate(pk, s), MAX) for s in current]
            lifts = sm_many(ctx, list(zip(flags, gaps)))
            current = [ph.add(pk, s, d) for s, d in zip(current, lifts)]
        if trace:
            trace("flagged", sums=current, dominated=dominated, round=rounds)
        rounds += 1
    ctx.calls["rounds"] += rounds
    return pool


def bssp(ctx: TwoPartyContext, ds: EncryptedDataset, *, smin_strategy: str = "linear") -> SkylinePool:
    """Basic secure skyline.

    C2 learns which index holds each minimum and which indexes each skyline
    point dominates.  With several equal minimum sums the first zero is taken.
    """
    pk, params = ctx.pk, ctx.params
    pool = SkylinePool()
    remaining = list(range(ds.n))
    N = int(pk.N)
    while remaining:
        sums = attribute_sums(pk, [ds.T[i] for i in remaining])
        s_min = smin_n(ctx, sums, params.l, smin_strategy)
        alphas = [
            ph.add(pk, ph.scalar_mul(pk, ph.sub(pk, s, s_min), ctx.rng.randrange(1, N)), ctx.encrypt(0))
            for s in sums
        ]
        zeros = ctx.call(MsgType.REVEAL_ZERO, [a.value for a in alphas])
        if not zeros or not 0 <= zeros[0] < len(remaining):
            raise IntegrityError("C2 found no minimum among the blinded differences")
        idx = remaining[zeros[0]]
        pool.add(ds.P[idx], ds.T[idx])
        ctx.calls["rounds"] += 1
        others = [i for i in remaining if i != idx]
        if not others:
            break
        dom = sdom_many(ctx, [(ds.T[idx], ds.T[i]) for i in others])
        hit = set(ctx.call(MsgType.REVEAL_BITS, [d.value for d in dom]))
        if any(not 0 <= h < len(others) for h in hit):
            raise ProtocolError("dominance index out of range", MsgType.REVEAL_BITS)
        remaining = [i for k, i in enumerate(others) if k not in hit]
    return pool


# -- result return -----------------------------------------------------------


@dataclass
class ResultShares:
    """C1's half of the result: plaintext noise for the client, masked values for C2."""

    m: int
    noise: list[int]
    masked: list[Ciphertext]

    @property
    def k(self) -> int:
        return len(self.noise) // self.m if self.m else 0


def mask_result(ctx: TwoPartyContext, pool: SkylinePool, m: int) -> ResultShares:
    pk = ctx.pk
    N = int(pk.N)
    noise, masked = [], []
    for p in pool.points:
        for c in p.attrs:
            r = ctx.rng.randrange(N)
            noise.append(r)
            masked.append(ph.add(pk, c, ctx.encrypt(r)))
    return ResultShares(m, noise, masked)


def unmask_result(N: int, m: int, noise: Sequence[int], revealed: Sequence[int]) -> list[tuple[int, ...]]:
    """Client side: ``p = r' - r mod N``, regrouped into tuples."""
    if len(noise) != len(revealed):
        raise ProtocolError("noise and revealed values differ in length", MsgType.RESULT_RPRIME)
    flat = [(rp - r) % N for r, rp in zip(noise, revealed)]
    return [tuple(flat[i : i + m]) for i in range(0, len(flat), m)]


def return_result(ctx: TwoPartyContext, pool: SkylinePool, m: int, c2_channel, session_id: bytes | None = None) -> list[tuple[int, ...]]:
    """Run the client's part of result return against C2 and return plaintext tuples."""
    from .transport import Frame

    shares = mask_result(ctx, pool, m)
    if not shares.masked:
        return []
    sid = session_id or ctx.session_id
    resp = c2_channel.request(Frame.of(MsgType.RESULT_ALPHA, sid, [c.value for c in shares.masked]))
    return unmask_result(int(ctx.pk.N), m, shares.noise, resp.ints())


def decrypt_pool(sk, pool: SkylinePool) -> list[tuple[int, ...]]:
    """Owner/test helper; never called by either server."""
    return [tuple(ph.decrypt(sk, c) for c in p.attrs) for p in pool.points]
