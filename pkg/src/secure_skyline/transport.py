"""Length-prefixed binary framing and request/response channels.

Frame layout (big-endian)::

    u32 length | u8 msg_type | 16-byte session id | payload

where ``length`` counts everything after itself.  Payloads are sequences of
WireBigInts (``u32 byte_len | magnitude``) except for ERROR frames, whose
payload is UTF-8 text.
"""

from __future__ import annotations

import enum
import logging
import queue
import socket
import socketserver
import struct
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Protocol

log = logging.getLogger(__name__)

MAX_FRAME_BYTES = 64 * 1024 * 1024
HEADER = struct.Struct(">IB16s")
DEFAULT_TIMEOUT = 30.0


class MsgType(enum.IntEnum):
    SM_BLINDED_PAIR = 0x01
    SM_PRODUCT = 0x02
    SBD_MASKED = 0x03
    SBD_PARITY = 0x04
    FOS_BETA = 0x05
    FOS_U = 0x06
    TERM_LAMBDA = 0x07
    TERM_VERDICT = 0x08
    RESULT_ALPHA = 0x09
    RESULT_RPRIME = 0x0A
    ASSIGN = 0x0B
    RESULT = 0x0C
    REVEAL_ZERO = 0x0D
    ZERO_INDEX = 0x0E
    REVEAL_BITS = 0x0F
    BIT_INDEXES = 0x10
    QUERY_SUBMIT = 0x11
    QUERY_SHARES = 0x12
    ERROR = 0x7F


RESPONSE_OF = {
    MsgType.SM_BLINDED_PAIR: MsgType.SM_PRODUCT,
    MsgType.SBD_MASKED: MsgType.SBD_PARITY,
    MsgType.FOS_BETA: MsgType.FOS_U,
    MsgType.TERM_LAMBDA: MsgType.TERM_VERDICT,
    MsgType.RESULT_ALPHA: MsgType.RESULT_RPRIME,
    MsgType.ASSIGN: MsgType.RESULT,
    MsgType.REVEAL_ZERO: MsgType.ZERO_INDEX,
    MsgType.REVEAL_BITS: MsgType.BIT_INDEXES,
    MsgType.QUERY_SUBMIT: MsgType.QUERY_SHARES,
}
_KNOWN = {int(t) for t in MsgType}


class FrameError(ValueError):
    """Malformed bytes on the wire."""


class ProtocolError(RuntimeError):
    """A peer answered with an error, a foreign session, or an unexpected type."""

    def __init__(self, message: str, msg_type: MsgType | None = None):
        super().__init__(message)
        self.msg_type = msg_type


@dataclass(frozen=True)
class Frame:
    msg_type: MsgType
    session_id: bytes
    payload: bytes = b""

    def __post_init__(self):
        if len(self.session_id) != 16:
            raise FrameError("session id must be 16 bytes")

    @property
    def length(self) -> int:
        return 1 + 16 + len(self.payload)

    def ints(self) -> list[int]:
        return decode_bigints(self.payload)

    @classmethod
    def of(cls, msg_type: MsgType, session_id: bytes, values: Iterable[int] = ()) -> "Frame":
        return cls(msg_type, session_id, encode_bigints(values))

    @classmethod
    def error(cls, session_id: bytes, text: str) -> "Frame":
        return cls(MsgType.ERROR, session_id, text.encode("utf-8"))


def new_session_id() -> bytes:
    return uuid.uuid4().bytes


def encode_bigint(v: int) -> bytes:
    v = int(v)
    if v < 0:
        raise ValueError("WireBigInt is unsigned")
    mag = v.to_bytes((v.bit_length() + 7) // 8, "big") if v else b""
    return struct.pack(">I", len(mag)) + mag


def encode_bigints(values: Iterable[int]) -> bytes:
    return b"".join(encode_bigint(v) for v in values)


def decode_bigints(data: bytes) -> list[int]:
    out = []
    pos, end = 0, len(data)
    while pos < end:
        if end - pos < 4:
            raise FrameError("truncated WireBigInt length")
        (n,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if end - pos < n:
            raise FrameError("truncated WireBigInt magnitude")
        if n and data[pos] == 0:
            raise FrameError("WireBigInt has a leading zero byte")
        out.append(int.from_bytes(data[pos : pos + n], "big"))
        pos += n
    return out


def encode_frame(f: Frame) -> bytes:
    if f.length > MAX_FRAME_BYTES:
        raise FrameError(f"frame of {f.length} bytes exceeds the {MAX_FRAME_BYTES} byte cap")
    return HEADER.pack(f.length, int(f.msg_type), f.session_id) + f.payload


def decode_frame(data: bytes) -> Frame:
    """Decode exactly one frame; trailing or missing bytes are errors."""
    if len(data) < HEADER.size:
        raise FrameError("truncated frame header")
    length, mtype, sid = HEADER.unpack_from(data)
    if length < 17 or length > MAX_FRAME_BYTES:
        raise FrameError(f"bad frame length {length}")
    if len(data) != 4 + length:
        raise FrameError(f"length field says {length} but {len(data) - 4} bytes follow")
    if mtype not in _KNOWN:
        raise FrameError(f"unknown msg_type 0x{mtype:02x}")
    return Frame(MsgType(mtype), sid, bytes(data[HEADER.size :]))


class FrameDecoder:
    """Incremental decoder over a byte stream.  Poisoned after the first error."""

    def __init__(self):
        self._buf = bytearray()
        self.poisoned = False

    def feed(self, chunk: bytes) -> list[Frame]:
        if self.poisoned:
            raise FrameError("decoder is poisoned by an earlier error")
        self._buf += chunk
        frames = []
        try:
            while len(self._buf) >= 4:
                (length,) = struct.unpack_from(">I", self._buf)
                if length < 17 or length > MAX_FRAME_BYTES:
                    raise FrameError(f"bad frame length {length}")
                if len(self._buf) < 4 + length:
                    break
                frames.append(decode_frame(bytes(self._buf[: 4 + length])))
                del self._buf[: 4 + length]
        except FrameError:
            self.poisoned = True
            raise
        return frames

    @property
    def pending(self) -> int:
        return len(self._buf)


def check_response(request: Frame, response: Frame) -> Frame:
    if response.session_id != request.session_id:
        raise ProtocolError("response carries a foreign session id", request.msg_type)
    if response.msg_type == MsgType.ERROR:
        raise ProtocolError(response.payload.decode("utf-8", "replace"), request.msg_type)
    expected = RESPONSE_OF.get(request.msg_type)
    if response.msg_type != expected:
        raise ProtocolError(
            f"expected {expected.name if expected else '?'} for {request.msg_type.name}, "
            f"got {response.msg_type.name}",
            request.msg_type,
        )
    return response


class Handler(Protocol):
    def handle(self, frame: Frame) -> Frame: ...


@dataclass
class ChannelStats:
    requests: int = 0
    bytes_out: int = 0
    bytes_in: int = 0
    total_seconds: float = 0.0
    peer_seconds: float = 0.0

    @property
    def communication_seconds(self) -> float:
        return max(0.0, self.total_seconds - self.peer_seconds)


class LoopbackChannel:
    """In-process channel; every request still goes through the byte encoding."""

    def __init__(self, handler: Handler, tamper: Callable[[bytes], bytes] | None = None):
        self.handler = handler
        self.stats = ChannelStats()
        self.poisoned = False
        # hook applied to response bytes; lets tests corrupt the wire
        self.tamper = tamper
        self._lock = threading.Lock()

    def request(self, frame: Frame) -> Frame:
        with self._lock:
            if self.poisoned:
                raise ProtocolError("channel is poisoned", frame.msg_type)
            t0 = time.perf_counter()
            raw = encode_frame(frame)
            req = decode_frame(raw)
            t1 = time.perf_counter()
            resp = self.handler.handle(req)
            t2 = time.perf_counter()
            raw_resp = encode_frame(resp)
            if self.tamper is not None:
                raw_resp = self.tamper(raw_resp)
            try:
                out = decode_frame(raw_resp)
            except FrameError:
                self.poisoned = True
                raise
            t3 = time.perf_counter()
            st = self.stats
            st.requests += 1
            st.bytes_out += len(raw)
            st.bytes_in += len(raw_resp)
            st.total_seconds += t3 - t0
            st.peer_seconds += t2 - t1
        return check_response(frame, out)


def _read_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed the connection")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> Frame:
    head = _read_exact(sock, 4)
    (length,) = struct.unpack(">I", head)
    if length < 17 or length > MAX_FRAME_BYTES:
        raise FrameError(f"bad frame length {length}")
    return decode_frame(head + _read_exact(sock, length))


class TcpConnection:
    """Client side of one socket, multiplexing many sessions by session id."""

    def __init__(self, host: str, port: int, timeout: float = DEFAULT_TIMEOUT):
        self.timeout = timeout
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.settimeout(None)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_KEEPALIVE, 1)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._send_lock = threading.Lock()
        self._waiters: dict[bytes, queue.Queue] = {}
        self._waiters_lock = threading.Lock()
        self._closed = False
        self.error: Exception | None = None
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self):
        try:
            while True:
                frame = read_frame(self.sock)
                with self._waiters_lock:
                    q = self._waiters.get(frame.session_id)
                if q is None:
                    log.warning("discarding frame for unknown session")
                    continue
                q.put(frame)
        except Exception as exc:  # connection closed or poisoned stream
            if not self._closed:
                self.error = exc
            with self._waiters_lock:
                for q in self._waiters.values():
                    q.put(exc)

    def channel(self, session_id: bytes | None = None) -> "TcpChannel":
        sid = session_id or new_session_id()
        with self._waiters_lock:
            if sid in self._waiters:
                raise ValueError("session already open on this connection")
            self._waiters[sid] = queue.Queue()
        return TcpChannel(self, sid)

    def _release(self, sid: bytes):
        with self._waiters_lock:
            self._waiters.pop(sid, None)

    def send(self, frame: Frame):
        data = encode_frame(frame)
        with self._send_lock:
            self.sock.sendall(data)
        return len(data)

    @property
    def closed(self) -> bool:
        return self._closed or not self._reader.is_alive()

    def close(self):
        self._closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class TcpChannel:
    """One session on a :class:`TcpConnection`; one request in flight at a time."""

    def __init__(self, conn: TcpConnection, session_id: bytes):
        self.conn = conn
        self.session_id = session_id
        self.stats = ChannelStats()
        self._lock = threading.Lock()

    def request(self, frame: Frame) -> Frame:
        if frame.session_id != self.session_id:
            frame = Frame(frame.msg_type, self.session_id, frame.payload)
        with self._lock:
            q = self.conn._waiters[self.session_id]
            t0 = time.perf_counter()
            self.stats.bytes_out += self.conn.send(frame)
            try:
                resp = q.get(timeout=self.conn.timeout)
            except queue.Empty:
                raise ProtocolError(f"timed out waiting for reply to {frame.msg_type.name}", frame.msg_type)
            if isinstance(resp, Exception):
                raise ProtocolError(f"connection failed: {resp}", frame.msg_type)
            self.stats.total_seconds += time.perf_counter() - t0
            self.stats.requests += 1
            self.stats.bytes_in += 4 + resp.length
        return check_response(frame, resp)

    def close(self):
        self.conn._release(self.session_id)


class _StreamHandler(socketserver.BaseRequestHandler):
    def handle(self):
        server: FrameServer = self.server  # type: ignore[assignment]
        sock: socket.socket = self.request
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_KEEPALIVE, 1)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        send_lock = threading.Lock()
        pool = ThreadPoolExecutor(max_workers=server.session_threads)

        def work(frame: Frame):
            try:
                resp = server.frame_handler.handle(frame)
            except Exception as exc:
                log.warning("handler failed on %s: %s", frame.msg_type.name, type(exc).__name__)
                resp = Frame.error(frame.session_id, f"{type(exc).__name__}: {exc}")
            data = encode_frame(resp)
            with send_lock:
                sock.sendall(data)

        try:
            while True:
                try:
                    frame = read_frame(sock)
                except (ConnectionError, OSError):
                    break
                except FrameError as exc:
                    log.warning("poisoned stream: %s", exc)
                    break
                pool.submit(work, frame)
        finally:
            pool.shutdown(wait=True)


class FrameServer(socketserver.ThreadingTCPServer):
    """TCP server dispatching every frame to ``frame_handler.handle``.

    Frames of different sessions on one socket are served concurrently.
    """

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], frame_handler: Handler, session_threads: int = 8):
        self.frame_handler = frame_handler
        self.session_threads = session_threads
        super().__init__(address, _StreamHandler)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t


class FunctionHandler:
    """Adapts ``{MsgType: fn(frame) -> Frame}`` into a :class:`Handler`."""

    def __init__(self, routes: dict[MsgType, Callable[[Frame], Frame]]):
        self.routes = routes

    def handle(self, frame: Frame) -> Frame:
        fn = self.routes.get(frame.msg_type)
        if fn is None:
            return Frame.error(frame.session_id, f"unsupported request {frame.msg_type.name}")
        return fn(frame)


def iter_frames(data: bytes, chunk_sizes: Iterable[int]) -> Iterator[Frame]:
    """Feed ``data`` through a decoder in the given chunk sizes (test helper)."""
    dec = FrameDecoder()
    pos = 0
    for size in chunk_sizes:
        if pos >= len(data):
            break
        yield from dec.feed(data[pos : pos + size])
        pos += size
    if pos < len(data):
        yield from dec.feed(data[pos:])
