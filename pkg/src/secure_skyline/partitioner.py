"""Partitioned skyline execution and the model that picks the partition count.

The dataset is split into ``s`` random partitions, each partition's skyline
is computed independently, and computed results are merged pairwise into
new partitions until one remains.  The skyline of a union equals the
skyline of the union of the parts' skylines, so any merge order is correct;
the load model only decides how small the initial partitions should be.
"""

from __future__ import annotations

import logging
import math
import random
import threading
from collections import deque
from concurrent.futures import FIRST_COMPLETED, Executor, ProcessPoolExecutor, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from typing import Callable, Hashable, Sequence

from .transport import Frame, MsgType, ProtocolError

log = logging.getLogger("secure_skyline.partitioner")

LN2 = math.log(2)


# -- load model --------------------------------------------------------------


def expected_skyline(n: float, m: int) -> float:
    """Expected skyline size ``ln(n)**(m-1)`` for independent attributes."""
    if n < 2:
        raise ValueError("expected_skyline needs n >= 2")
    if m < 2:
        raise ValueError("expected_skyline needs m >= 2")
    return math.log(n) ** (m - 1)


def _merge_term(k: float, m: int, l: int) -> float:
    # (log2(2 * k**(m-1) * ln2**(m-1)) + m + l), treating a zero count as a zero term
    inner = 2 * k ** (m - 1) * LN2 ** (m - 1)
    return math.log2(inner) + m + l


def load_w(u: int, v: int, m: int, l: int) -> float:
    """Total computation load with ``n = 2**u`` points in ``s = 2**v`` initial partitions."""
    if not 1 <= v < u:
        raise ValueError(f"need 1 <= v < u, got u={u}, v={v}")
    if m < 1 or l < 1:
        raise ValueError("m and l must be positive")
    x = u - v
    w0 = 2**u * x ** (m - 1) * LN2 ** (m - 1) * (x + m + l)
    return w0 + sum(merge_load(u, v, i, m, l) for i in range(1, v + 1))


def layer0_load(u: int, v: int, m: int, l: int) -> float:
    x = u - v
    return 2**u * x ** (m - 1) * LN2 ** (m - 1) * (x + m + l)


def merge_load(u: int, v: int, i: int, m: int, l: int) -> float:
    """Load of merge layer ``i`` when starting from ``2**v`` partitions."""
    k = i - 1 + u - v
    return 2 ** (v - i + 1) * (i + u - v) ** (m - 1) * k ** (m - 1) * LN2 ** (2 * m - 2) * _merge_term(k, m, l)


def f_x(x: int, m: int, l: int) -> float:
    """``W(v+1) - W(v)`` at ``x = u - v`` with the positive ``2**u ln2**(m-1)`` factor dropped."""
    if x < 1:
        raise ValueError("f_x needs x >= 1")
    prev = (x - 1) ** (m - 1)
    merge = 0.0
    if prev:
        merge = 2.0 ** (1 - x) * x ** (m - 1) * prev * LN2 ** (m - 1) * _merge_term(x - 1, m, l)
    return merge + (prev * (x - 1 + m + l) - x ** (m - 1) * (x + m + l))


def sign_change_x(m: int, l: int, limit: int = 256) -> int:
    """Smallest ``x`` with ``f(x) > 0`` and ``f(x+1) <= 0``; 1 if ``f`` never turns positive before that."""
    for x in range(1, limit):
        if f_x(x, m, l) > 0 and f_x(x + 1, m, l) <= 0:
            return x
    return 1


@dataclass(frozen=True)
class PartitionPlan:
    s: int
    v: int
    x_star: int
    lazy_threshold: int

    @classmethod
    def single(cls, n: int) -> "PartitionPlan":
        return cls(1, 0, max(0, math.ceil(math.log2(max(n, 1)))), max(n, 1))

    @classmethod
    def fixed(cls, n: int, s: int) -> "PartitionPlan":
        """A plan with a chosen ``s``; the lazy threshold follows from ``n / s``."""
        if s < 1 or s & (s - 1):
            raise ValueError("s must be a power of two")
        u = max(1, math.ceil(math.log2(max(n, 2))))
        v = s.bit_length() - 1
        x = max(u - v, 0)
        return cls(s, v, x, 2**x)


def optimal_partitions(n: int, m: int, l: int) -> PartitionPlan:
    """Partition count minimizing :func:`load_w`; ``n`` is padded to a power of two."""
    if n < 1:
        raise ValueError("n must be positive")
    u = math.ceil(math.log2(n)) if n > 1 else 0
    if u < 2:
        return PartitionPlan.single(n)
    v = min(range(1, u), key=lambda v: load_w(u, v, m, l))
    return PartitionPlan(2**v, v, u - v, 2 ** (u - v))


# -- scheduler state machine -------------------------------------------------


@dataclass
class Partition:
    pid: int
    items: list
    generation: int = 0


@dataclass
class SchedulerState:
    """Coordinator bookkeeping; pure and single-threaded.

    Partitions move uncomputed -> computing -> unmerged, and pairs of
    unmerged results become one new uncomputed partition.  With ``lazy``,
    unmerged results are held until their combined size reaches
    ``threshold`` (or nothing else can arrive) and then merged as one group.
    """

    n_t: int
    lazy: bool = False
    threshold: int = 0
    uncomputed: deque = field(default_factory=deque)
    computing: dict = field(default_factory=dict)
    unmerged: deque = field(default_factory=deque)
    next_pid: int = 0
    completed: set = field(default_factory=set)

    @property
    def n_p(self) -> int:
        return len(self.uncomputed)

    @property
    def n_it(self) -> int:
        return self.n_t - len(self.computing)

    @property
    def n_um(self) -> int:
        return len(self.unmerged)

    def add(self, items: list, generation: int = 0) -> Partition:
        part = Partition(self.next_pid, list(items), generation)
        self.next_pid += 1
        self.uncomputed.append(part)
        return part

    def assign(self) -> list[Partition]:
        out = []
        while self.n_p > 0 and self.n_it > 0:
            part = self.uncomputed.popleft()
            self.computing[part.pid] = part
            out.append(part)
        return out

    def complete(self, pid: int, result: list) -> bool:
        """Record a result; a duplicate or unknown ``pid`` is ignored."""
        part = self.computing.pop(pid, None)
        if part is None or pid in self.completed:
            return False
        self.completed.add(pid)
        self.unmerged.append(Partition(pid, list(result), part.generation))
        return True

    def fail(self, pid: int) -> None:
        part = self.computing.pop(pid, None)
        if part is not None:
            self.uncomputed.appendleft(part)

    def _idle(self) -> bool:
        return self.n_p == 0 and not self.computing

    def merge(self) -> list[Partition]:
        made = []
        if not self.lazy:
            while self.n_um > 1:
                a, b = self.unmerged.popleft(), self.unmerged.popleft()
                made.append(self.add(a.items + b.items, max(a.generation, b.generation) + 1))
            return made
        buffered = sum(len(p.items) for p in self.unmerged)
        if self.n_um > 1 and (buffered >= self.threshold or self._idle()):
            group = list(self.unmerged)
            self.unmerged.clear()
            merged = [x for p in group for x in p.items]
            made.append(self.add(merged, max(p.generation for p in group) + 1))
        return made

    @property
    def finished(self) -> bool:
        return self._idle() and self.n_um == 1

    @property
    def result(self) -> list:
        if not self.finished:
            raise RuntimeError("scheduler has not finished")
        return self.unmerged[0].items


def split_random(items: Sequence, s: int, rng: random.Random) -> list[list]:
    """Random partition into ``s`` parts whose sizes differ by at most one."""
    if s < 1:
        raise ValueError("s must be positive")
    order = list(items)
    rng.shuffle(order)
    size, extra = divmod(len(order), s)
    parts, start = [], 0
    for k in range(s):
        end = start + size + (1 if k < extra else 0)
        parts.append(order[start:end])
        start = end
    return [p for p in parts if p] or [[]]


def simulate(s: int, workers: int, lazy: bool, threshold: int, result_size: Callable[[int], int] | None = None, part_size: int = 2) -> int:
    """Explore every completion order of the scheduler; return the number of distinct states.

    Raises ``RuntimeError`` if some order reaches a state with no progress.
    Items are abstract counters, and ``result_size`` maps a partition size
    to its skyline size (default: everything survives).
    """
    result_size = result_size or (lambda k: k)

    def key(st: SchedulerState) -> Hashable:
        return (
            tuple(len(p.items) for p in st.uncomputed),
            tuple(sorted(len(p.items) for p in st.computing.values())),
            tuple(len(p.items) for p in st.unmerged),
        )

    start = SchedulerState(workers, lazy, threshold)
    for _ in range(s):
        start.add([0] * part_size)
    start.assign()
    seen: set = set()
    stack = [start]
    while stack:
        st = stack.pop()
        k = key(st)
        if k in seen:
            continue
        seen.add(k)
        if st.finished:
            continue
        if not st.computing:
            raise RuntimeError(f"scheduler stalled in state {k}")
        for pid in list(st.computing):
            nxt = _clone(st)
            size = len(nxt.computing[pid].items)
            nxt.complete(pid, [0] * result_size(size))
            nxt.merge()
            nxt.assign()
            stack.append(nxt)
    return len(seen)


def _clone(st: SchedulerState) -> SchedulerState:
    return SchedulerState(
        st.n_t,
        st.lazy,
        st.threshold,
        deque(Partition(p.pid, list(p.items), p.generation) for p in st.uncomputed),
        {pid: Partition(p.pid, list(p.items), p.generation) for pid, p in st.computing.items()},
        deque(Partition(p.pid, list(p.items), p.generation) for p in st.unmerged),
        st.next_pid,
        set(st.completed),
    )


# -- coordinator -------------------------------------------------------------


@dataclass
class RunStats:
    computations: int = 0
    merges: int = 0
    retries: int = 0
    max_generation: int = 0


def run_partitioned(
    skyline_fn: Callable[[list], list],
    dataset: Sequence,
    plan: PartitionPlan,
    workers: int = 1,
    lazy: bool = False,
    *,
    executor: str | Executor = "thread",
    seed: int | None = None,
    max_retries: int = 3,
    stats: RunStats | None = None,
) -> list:
    """Skyline of ``dataset`` computed over ``plan.s`` partitions by ``workers`` units.

    ``skyline_fn`` maps a list of items to the sublist that is skyline.  A
    call that raises is retried on the same partition up to ``max_retries``
    times.
    """
    if workers < 1:
        raise ValueError("workers must be at least 1")
    stats = stats if stats is not None else RunStats()
    items = list(dataset)
    if not items:
        return []
    rng = random.Random(seed)
    state = SchedulerState(workers, lazy, plan.lazy_threshold)
    for part in split_random(items, min(plan.s, len(items)), rng):
        state.add(part)

    own = not isinstance(executor, Executor)
    if own:
        pool_cls = {"thread": ThreadPoolExecutor, "process": ProcessPoolExecutor}.get(executor)
        if pool_cls is None:
            raise ValueError(f"unknown executor {executor!r}")
        pool = pool_cls(max_workers=workers)
    else:
        pool = executor
    attempts: dict[int, int] = {}
    futures = {}
    try:
        while True:
            for part in state.assign():
                futures[pool.submit(skyline_fn, part.items)] = part.pid
                stats.computations += 1
            if state.finished:
                break
            if not futures:
                raise RuntimeError("scheduler has no work in flight and is not finished")
            done, _ = wait(list(futures), return_when=FIRST_COMPLETED)
            for fut in done:
                pid = futures.pop(fut)
                exc = fut.exception()
                if exc is not None:
                    attempts[pid] = attempts.get(pid, 0) + 1
                    if attempts[pid] > max_retries:
                        raise exc
                    log.warning("partition %d failed (%s); re-queued", pid, type(exc).__name__)
                    stats.retries += 1
                    state.fail(pid)
                else:
                    state.complete(pid, fut.result())
            for part in state.merge():
                stats.merges += 1
                stats.max_generation = max(stats.max_generation, part.generation)
    finally:
        if own:
            pool.shutdown(wait=True, cancel_futures=True)
    return state.result


# -- manager/worker wire format ----------------------------------------------


def encode_points(pid: int, points: Sequence[Sequence[int]]) -> list[int]:
    dim = len(points[0]) if points else 0
    flat = [int(v) for p in points for v in p]
    if len(flat) != dim * len(points):
        raise ValueError("points must share one dimension")
    return [pid, len(points), dim] + flat


def decode_points(values: Sequence[int]) -> tuple[int, list[tuple[int, ...]]]:
    if len(values) < 3:
        raise ProtocolError("partition message too short")
    pid, count, dim = values[:3]
    flat = values[3:]
    if len(flat) != count * dim:
        raise ProtocolError("partition message length does not match its header")
    return pid, [tuple(flat[i * dim : (i + 1) * dim]) for i in range(count)]


class WorkerHandler:
    """Serves ASSIGN frames by running ``skyline_fn`` and answering RESULT."""

    def __init__(self, skyline_fn: Callable[[list], list]):
        self.skyline_fn = skyline_fn

    def handle(self, frame: Frame) -> Frame:
        if frame.msg_type != MsgType.ASSIGN:
            return Frame.error(frame.session_id, f"worker does not serve {frame.msg_type.name}")
        try:
            pid, points = decode_points(frame.ints())
            result = self.skyline_fn(points)
            return Frame.of(MsgType.RESULT, frame.session_id, encode_points(pid, result))
        except Exception as exc:
            return Frame.error(frame.session_id, f"{type(exc).__name__}: {exc}")


class RemoteSkyline:
    """``skyline_fn`` that ships each partition to a worker over a channel factory."""

    def __init__(self, channel_factory: Callable[[], object]):
        self.channel_factory = channel_factory
        self._pid = 0
        self._lock = threading.Lock()

    def __call__(self, points: list) -> list:
        with self._lock:
            pid = self._pid
            self._pid += 1
        chan = self.channel_factory()
        from .transport import new_session_id

        resp = chan.request(Frame.of(MsgType.ASSIGN, new_session_id(), encode_points(pid, points)))
        got, result = decode_points(resp.ints())
        if got != pid:
            raise ProtocolError("worker answered for a different partition", MsgType.RESULT)
        return result
