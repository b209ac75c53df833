"""The key-holding server role (C2).

C2 answers blinded decryption queries.  Everything it decrypts is either
additively masked, multiplicatively masked, permuted, or a bit that it
re-encrypts without returning in the clear.  Nothing it logs carries a
plaintext.
"""

from __future__ import annotations

import logging
import random
import threading
from dataclasses import dataclass, field

from .paillier import Ciphertext, PrivateFixedBaseRandomizer, PrivateKey, decrypt, default_rng, is_ciphertext
from .transport import RESPONSE_OF, Frame, MsgType

log = logging.getLogger("secure_skyline.c2")

MAX_SBD_CHUNK = 4


class IntegrityError(RuntimeError):
    """A request violates a protocol precondition C2 can observe."""


@dataclass
class OpCounter:
    encryptions: int = 0
    decryptions: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, enc: int = 0, dec: int = 0) -> None:
        with self._lock:
            self.encryptions += enc
            self.decryptions += dec

    @property
    def total(self) -> int:
        return self.encryptions + self.decryptions

    def snapshot(self) -> tuple[int, int]:
        with self._lock:
            return self.encryptions, self.decryptions


class KeyHolder:
    """Frame handler implementing every C2 response in the catalog."""

    def __init__(self, sk: PrivateKey, rng: random.Random | None = None, record: bool = False):
        """``record`` keeps every decrypted value in :attr:`observed` (tests only)."""
        self.sk = sk
        self.observed: list[tuple[MsgType, int]] | None = [] if record else None
        self.pk = sk.public_key
        self.rng = rng or default_rng()
        self.counter = OpCounter()
        self.rounds: dict[bytes, int] = {}
        self._rng_lock = threading.Lock()
        self._local = threading.local()
        self._randomizer = PrivateFixedBaseRandomizer(sk, self.rng)
        self._routes = {
            MsgType.SM_BLINDED_PAIR: self._sm,
            MsgType.SBD_MASKED: self._sbd,
            MsgType.FOS_BETA: self._fos,
            MsgType.TERM_LAMBDA: self._term,
            MsgType.RESULT_ALPHA: self._result,
            MsgType.REVEAL_ZERO: self._reveal_zero,
            MsgType.REVEAL_BITS: self._reveal_bits,
        }

    def handle(self, frame: Frame) -> Frame:
        fn = self._routes.get(frame.msg_type)
        if fn is None:
            return Frame.error(frame.session_id, f"C2 does not serve {frame.msg_type.name}")
        self._local.msg_type = frame.msg_type
        try:
            values = fn(frame.session_id, frame.ints())
        except Exception as exc:
            log.warning("rejecting %s: %s", frame.msg_type.name, type(exc).__name__)
            return Frame.error(frame.session_id, f"{type(exc).__name__}: {exc}")
        log.debug("served %s (%d values)", frame.msg_type.name, len(values))
        return Frame.of(RESPONSE_OF[frame.msg_type], frame.session_id, values)

    def _ct(self, v: int) -> Ciphertext:
        if not is_ciphertext(self.pk, v):
            raise IntegrityError("value is not a ciphertext under this key")
        return Ciphertext(v, self.pk.key_id)

    def _dec(self, v: int) -> int:
        self.counter.add(dec=1)
        y = decrypt(self.sk, self._ct(v))
        if self.observed is not None:
            self.observed.append((self._local.msg_type, y))
        return y

    def _enc(self, m: int) -> int:
        self.counter.add(enc=1)
        with self._rng_lock:
            rn = self._randomizer.draw()
        return int((1 + m * self.pk.N) * rn % self.pk.N2)

    def _sm(self, sid, vals):
        if len(vals) % 2:
            raise IntegrityError("SM request needs pairs")
        memo: dict[int, int] = {}

        def dec(v):
            if v not in memo:
                memo[v] = self._dec(v)
            return memo[v]

        N = self.pk.N
        return [self._enc(dec(a) * dec(b) % N) for a, b in zip(vals[::2], vals[1::2])]

    def _sbd(self, sid, vals):
        # (shift, chunk, ciphertext) triples; reply is the one-hot encoding of
        # the chunk above `shift`, without its v=0 entry
        if len(vals) % 3:
            raise IntegrityError("SBD request needs (shift, chunk, ciphertext) triples")
        out = []
        for shift, chunk, c in zip(vals[::3], vals[1::3], vals[2::3]):
            if not 1 <= chunk <= MAX_SBD_CHUNK:
                raise IntegrityError(f"SBD chunk must be in [1, {MAX_SBD_CHUNK}]")
            y = self._dec(c)
            if y & ((1 << shift) - 1):
                raise IntegrityError("masked value has nonzero low bits")
            digit = (y >> shift) & ((1 << chunk) - 1)
            out += [self._enc(int(digit == v)) for v in range(1, 1 << chunk)]
        return out

    def _fos(self, sid, vals):
        plain = [self._dec(v) for v in vals]
        zeros = sum(1 for p in plain if p == 0)
        if zeros != 1:
            raise IntegrityError(f"selection vector must contain exactly one zero, saw {zeros}")
        return [self._enc(1 if p == 0 else 0) for p in plain]

    def _term(self, sid, vals):
        if len(vals) != 1:
            raise IntegrityError("termination check takes one value")
        done = self._dec(vals[0]) == 0
        if not done:
            self.rounds[sid] = self.rounds.get(sid, 0) + 1
        return [1 if done else 0]

    def _result(self, sid, vals):
        return [self._dec(v) for v in vals]

    def _reveal_zero(self, sid, vals):
        self.rounds[sid] = self.rounds.get(sid, 0) + 1
        return [i for i, v in enumerate(vals) if self._dec(v) == 0]

    def _reveal_bits(self, sid, vals):
        out = []
        for i, v in enumerate(vals):
            b = self._dec(v)
            if b not in (0, 1):
                raise IntegrityError("dominance output is not a bit")
            if b:
                out.append(i)
        return out

