"""The four roles wired together: data owner, client, C1 and C2.

``run_query`` runs the whole flow in one process over loopback channels
(every message is still encoded to bytes).  :class:`C1Service` is the frame
handler behind ``serve-c1``; ``remote_query`` is the client side against
running servers.
"""

from __future__ import annotations

import csv
import logging
import math
import random
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

from .. import paillier as ph
from ..dominance import EncryptedTuple
from ..keyholder import KeyHolder
from ..oracle import as_multiset, map_query, skyline_bruteforce
from ..paillier import KeyPair, ProtocolParams, PublicKey
from ..partitioner import PartitionPlan, optimal_partitions, run_partitioned
from ..skyline import (
    EncryptedDataset,
    ResultShares,
    SkylinePool,
    bssp,
    encrypt_points,
    encrypt_query,
    fssp,
    mask_result,
    preprocess,
    unmask_result,
)
from ..subprotocols import TwoPartyContext
from ..transport import Frame, LoopbackChannel, MsgType, ProtocolError, TcpConnection, new_session_id

log = logging.getLogger("secure_skyline.c1")

PROTOCOLS = ("BSSP", "FSSP")


@dataclass
class QueryConfig:
    protocol: str = "FSSP"
    l: int = 20
    kappa: int = 80
    # 1 runs unpartitioned; 0 asks the load model for the partition count
    partitions: int = 1
    workers: int = 1
    lazy: bool = False
    flagging: str = "arithmetic"
    seed: int | None = None

    def __post_init__(self):
        self.protocol = self.protocol.upper()
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"protocol must be one of {PROTOCOLS}")
        if self.partitions < 0 or self.workers < 1:
            raise ValueError("partitions must be >= 0 and workers >= 1")


@dataclass
class BenchRecord:
    protocol: str
    n: int
    m: int
    K: int
    l: int
    s: int
    lazy: bool
    workers: int
    computation_time: float
    communication_time: float
    k: int


class ChannelPool:
    """Channel factory that keeps every channel it hands out, for timing totals."""

    def __init__(self, make: Callable[[], object]):
        self._make = make
        self.channels: list = []

    def __call__(self):
        ch = self._make()
        self.channels.append(ch)
        return ch

    @property
    def communication_seconds(self) -> float:
        return sum(c.stats.communication_seconds for c in self.channels)


def plan_for(config: QueryConfig, n: int, m: int) -> PartitionPlan:
    if config.partitions == 1 or n <= 1:
        return PartitionPlan.single(n)
    if config.partitions == 0:
        return optimal_partitions(n, m, config.l)
    return PartitionPlan.fixed(n, config.partitions)


class SecureEngine:
    """``skyline_fn`` over ``(P row, T row)`` items, one fresh C2 session per call."""

    def __init__(self, pk: PublicKey, params: ProtocolParams, channels: Callable[[], object], config: QueryConfig):
        self.pk, self.params, self.channels, self.config = pk, params, channels, config

    def __call__(self, items: list) -> list:
        params = self.params.with_n(max(len(items), 1))
        ctx = TwoPartyContext(self.pk, params, self.channels())
        ds = EncryptedDataset([p for p, _ in items], [t for _, t in items], params)
        pool = run_protocol(ctx, ds, self.config)
        return list(zip(pool.points, pool.mapped))


def run_protocol(ctx: TwoPartyContext, ds: EncryptedDataset, config: QueryConfig) -> SkylinePool:
    if config.protocol == "BSSP":
        return bssp(ctx, ds)
    return fssp(ctx, ds, flagging=config.flagging)


def secure_skyline(
    pk: PublicKey,
    EP: Sequence[EncryptedTuple],
    Eq_neg: EncryptedTuple,
    d: int,
    config: QueryConfig,
    channels: Callable[[], object],
) -> tuple[SkylinePool, PartitionPlan]:
    """C1's whole query: map to the query space, then the chosen protocol."""
    n, m = len(EP), Eq_neg.m
    params = ProtocolParams(config.l, d, config.kappa, pk.bits, max(n, 1), m)
    ctx = TwoPartyContext(pk, params, channels())
    ds = preprocess(ctx, EP, Eq_neg)
    plan = plan_for(config, n, m)
    if plan.s == 1:
        return run_protocol(ctx, ds, config), plan
    engine = SecureEngine(pk, params, channels, config)
    items = run_partitioned(engine, list(zip(ds.P, ds.T)), plan, config.workers, config.lazy, seed=config.seed)
    pool = SkylinePool()
    for p, t in items:
        pool.add(p, t)
    return pool, plan


class C1Service:
    """Handles QUERY_SUBMIT: ``[protocol, partitions, workers, lazy, -q...]``.

    Replies QUERY_SHARES with ``[k, m, noise..., masked...]``; the client
    forwards the masked values to C2 itself.
    """

    def __init__(self, pk: PublicKey, rows: Sequence[EncryptedTuple], d: int, channels: Callable[[], object], defaults: QueryConfig | None = None):
        self.pk, self.rows, self.d, self.channels = pk, list(rows), d, channels
        self.defaults = defaults or QueryConfig()

    def handle(self, frame: Frame) -> Frame:
        if frame.msg_type != MsgType.QUERY_SUBMIT:
            return Frame.error(frame.session_id, f"C1 does not serve {frame.msg_type.name}")
        try:
            vals = frame.ints()
            if len(vals) < 5:
                raise ProtocolError("query too short", MsgType.QUERY_SUBMIT)
            proto, parts, workers, lazy = vals[:4]
            q = vals[4:]
            if self.rows and len(q) != self.rows[0].m:
                raise ProtocolError(f"query has {len(q)} attributes, dataset has {self.rows[0].m}", MsgType.QUERY_SUBMIT)
            config = QueryConfig(
                PROTOCOLS[proto], self.defaults.l, self.defaults.kappa, parts, max(workers, 1), bool(lazy), self.defaults.flagging
            )
            Eq = EncryptedTuple([ph.Ciphertext(v, self.pk.key_id) for v in q], self.d)
            log.info("query: protocol=%s partitions=%d workers=%d", config.protocol, parts, config.workers)
            t0 = time.perf_counter()
            pool, _ = secure_skyline(self.pk, self.rows, Eq, self.d, config, self.channels)
            ctx = TwoPartyContext(self.pk, ProtocolParams(config.l, self.d, config.kappa, self.pk.bits, max(len(self.rows), 1), len(q)), None)  # type: ignore[arg-type]
            shares = mask_result(ctx, pool, len(q))
            log.info("query answered in %.2fs", time.perf_counter() - t0)
            return Frame.of(MsgType.QUERY_SHARES, frame.session_id, [shares.k, shares.m] + shares.noise + [c.value for c in shares.masked])
        except Exception as exc:
            log.warning("query failed: %s", type(exc).__name__)
            return Frame.error(frame.session_id, f"{type(exc).__name__}: {exc}")


def decode_shares(vals: Sequence[int]) -> ResultShares:
    if len(vals) < 2:
        raise ProtocolError("shares message too short", MsgType.QUERY_SHARES)
    k, m = vals[:2]
    body = vals[2:]
    if len(body) != 2 * k * m:
        raise ProtocolError("shares message length does not match k*m", MsgType.QUERY_SHARES)
    noise, masked = body[: k * m], body[k * m :]
    return ResultShares(m, list(noise), [ph.Ciphertext(v, 0) for v in masked])


def reveal_via_c2(pk: PublicKey, shares: ResultShares, c2_channel, d: int) -> list[tuple[int, ...]]:
    """Client: forward the masked values to C2 and remove the noise from its answer.

    A value outside ``[0, 2**d)`` cannot be a record attribute and means some
    ciphertext along the way was not what it claimed to be.
    """
    if not shares.masked:
        return []
    resp = c2_channel.request(Frame.of(MsgType.RESULT_ALPHA, new_session_id(), [int(c.value) for c in shares.masked]))
    result = unmask_result(int(pk.N), shares.m, shares.noise, resp.ints())
    if any(not 0 <= v < 2**d for t in result for v in t):
        raise ProtocolError("result value outside the attribute domain", MsgType.RESULT_RPRIME)
    return result


def remote_query(
    pk: PublicKey,
    q: Sequence[int],
    d: int,
    c1: tuple[str, int],
    c2: tuple[str, int],
    config: QueryConfig,
    timeout: float = 3600.0,
) -> list[tuple[int, ...]]:
    Eq = encrypt_query(pk, q, d)
    header = [PROTOCOLS.index(config.protocol), config.partitions, config.workers, int(config.lazy)]
    with TcpConnection(*c1, timeout=timeout) as conn:
        chan = conn.channel()
        resp = chan.request(Frame.of(MsgType.QUERY_SUBMIT, chan.session_id, header + [c.value for c in Eq.attrs]))
    shares = decode_shares(resp.ints())
    with TcpConnection(*c2, timeout=timeout) as conn:
        return reveal_via_c2(pk, shares, conn.channel(), d)


@dataclass
class QueryResult:
    result: list[tuple[int, ...]]
    record: BenchRecord
    plan: PartitionPlan
    c2: KeyHolder = field(repr=False)


def run_query(
    points: Sequence[Sequence[int]],
    q: Sequence[int],
    config: QueryConfig | None = None,
    *,
    d: int = 8,
    keypair: KeyPair | None = None,
    key_bits: int = 512,
    keyholder: KeyHolder | None = None,
    tamper: Callable[[list[EncryptedTuple]], None] | None = None,
) -> QueryResult:
    """Owner encrypts, client queries, C1 and C2 compute, client decodes; all in-process.

    ``tamper`` may edit the encrypted rows before C1 sees them (negative tests).
    """
    config = config or QueryConfig()
    kp = keypair or ph.keygen(key_bits)
    pk, sk = kp.public_key, kp.private_key
    c2 = keyholder or KeyHolder(sk)
    points = [tuple(int(v) for v in p) for p in points]
    m = len(q)
    EP = encrypt_points(pk, points, d)
    if tamper:
        tamper(EP)
    Eq = encrypt_query(pk, q, d)
    channels = ChannelPool(lambda: LoopbackChannel(c2))
    t0 = time.perf_counter()
    pool, plan = secure_skyline(pk, EP, Eq, d, config, channels)
    ctx = TwoPartyContext(pk, ProtocolParams(config.l, d, config.kappa, pk.bits, max(len(points), 1), m), channels())
    shares = mask_result(ctx, pool, m)
    result = reveal_via_c2(pk, shares, channels(), d)
    wall = time.perf_counter() - t0
    comm = channels.communication_seconds
    rec = BenchRecord(config.protocol, len(points), m, pk.bits, config.l, plan.s, config.lazy, config.workers, wall - comm, comm, len(result))
    return QueryResult(result, rec, plan, c2)


# -- verification and benchmarks ---------------------------------------------

EXIT_OK, EXIT_MISMATCH, EXIT_PROTOCOL = 0, 2, 3


@dataclass
class VerifyReport:
    ok: bool
    exit_code: int
    expected: Counter
    got: Counter
    k: int = 0
    rounds: int = 0
    first_difference: tuple | None = None
    error: str | None = None

    def summary(self) -> str:
        if self.error:
            return f"FAIL protocol error: {self.error}"
        if self.ok:
            return f"PASS k={self.k} rounds={self.rounds}"
        return f"FAIL first differing tuple {self.first_difference}"


def verify(points, q, config: QueryConfig | None = None, **kwargs) -> VerifyReport:
    """Secure result versus the plaintext oracle on the same points and query."""
    expected = skyline_bruteforce([map_query(p, q) for p in points])
    # map the oracle's mapped tuples back to original points for comparison
    want = Counter()
    for p in points:
        t = map_query(p, q)
        if t in expected:
            want[tuple(int(v) for v in p)] += 1
    try:
        out = run_query(points, q, config, **kwargs)
    except (ProtocolError, ValueError) as exc:
        return VerifyReport(False, EXIT_PROTOCOL, want, Counter(), error=f"{type(exc).__name__}: {exc}")
    got = as_multiset(out.result)
    rounds = sum(out.c2.rounds.values())
    if got == want:
        return VerifyReport(True, EXIT_OK, want, got, out.record.k, rounds)
    diff = sorted((got - want) + (want - got))
    return VerifyReport(False, EXIT_MISMATCH, want, got, out.record.k, rounds, diff[0] if diff else None)


def bench(
    ns: Sequence[int] = (100,),
    ms: Sequence[int] = (2,),
    Ks: Sequence[int] = (512,),
    partitions: Sequence[int] = (1,),
    lazies: Sequence[bool] = (False,),
    workers: Sequence[int] = (1,),
    protocols: Sequence[str] = ("FSSP",),
    distribution: str = "INDE",
    d: int = 8,
    l: int = 20,
    seed: int = 0,
    out: str | Path | None = None,
) -> list[BenchRecord]:
    """Sweep the grid; a failed cell is kept with ``k = -1`` and NaN times."""
    from .datasets import DatasetSpec, generate

    records = []
    keys = {K: ph.keygen(K) for K in Ks}
    for K in Ks:
        for n in ns:
            for m in ms:
                pts = generate(DatasetSpec(distribution, n, m, d, seed)).tolist()
                q = [random.Random(seed + n + m).randrange(2**d) for _ in range(m)]
                for proto in protocols:
                    for s in partitions:
                        for lazy in lazies:
                            for w in workers:
                                cfg = QueryConfig(proto, l, partitions=s, workers=w, lazy=lazy, seed=seed)
                                try:
                                    rec = run_query(pts, q, cfg, d=d, keypair=keys[K]).record
                                except Exception as exc:
                                    log.warning("bench cell failed: %s", type(exc).__name__)
                                    rec = BenchRecord(proto, n, m, K, l, s, lazy, w, math.nan, math.nan, -1)
                                records.append(rec)
    if out is not None:
        write_bench_csv(out, records)
    return records


def write_bench_csv(path, records: Sequence[BenchRecord]) -> None:
    cols = [f.name for f in fields(BenchRecord)]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in records:
            w.writerow(asdict(r))
