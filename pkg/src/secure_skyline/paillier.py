"""Paillier cryptosystem with the additive-homomorphic operations used by the protocols.

Plaintexts are residues mod ``N``.  Signed quantities are carried as modular
values; the protocols only ever decrypt blinded or boolean values.
"""

from __future__ import annotations

import hashlib
import random
import secrets
from dataclasses import dataclass, field

import gmpy2
from gmpy2 import mpz

SUPPORTED_KEY_SIZES = (512, 1024, 2048)
MIN_KEY_SIZE = 512

# Miller-Rabin rounds; 4**-40 = 2**-80 error bound per candidate.
_MR_ROUNDS = 40


class KeyMismatchError(ValueError):
    """Raised when a ciphertext is used with a key it was not produced under."""


def default_rng() -> random.Random:
    return secrets.SystemRandom()


def _random_prime(bits: int, rng: random.Random) -> mpz:
    while True:
        # top two bits set so that p*q has exactly 2*bits bits
        cand = rng.getrandbits(bits) | (3 << (bits - 2)) | 1
        if gmpy2.is_prime(cand, _MR_ROUNDS):
            return mpz(cand)


@dataclass(frozen=True)
class PublicKey:
    N: int
    N2: int = field(init=False, repr=False, compare=False)
    g: int = field(init=False, repr=False, compare=False)
    key_id: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = mpz(self.N)
        object.__setattr__(self, "N", n)
        object.__setattr__(self, "N2", n * n)
        object.__setattr__(self, "g", n + 1)
        digest = hashlib.sha256(int(n).to_bytes((n.bit_length() + 7) // 8, "big")).digest()
        object.__setattr__(self, "key_id", int.from_bytes(digest[:8], "big"))

    @property
    def bits(self) -> int:
        return int(self.N.bit_length())

    def trivial(self, m: int) -> "Ciphertext":
        """Deterministic encoding ``1 + mN`` of a public constant.

        Only valid inside a homomorphic expression that is rerandomized
        before it leaves the party.
        """
        return Ciphertext((1 + (m % self.N) * self.N) % self.N2, self.key_id)

    def random_unit(self, rng: random.Random) -> mpz:
        while True:
            r = mpz(rng.randrange(1, int(self.N)))
            if gmpy2.gcd(r, self.N) == 1:
                return r

    def __repr__(self) -> str:
        return f"PublicKey(K={self.bits}, id={self.key_id:016x})"


@dataclass(frozen=True, repr=False)
class PrivateKey:
    public_key: PublicKey
    p: int
    q: int

    def __post_init__(self):
        p, q = mpz(self.p), mpz(self.q)
        if p * q != self.public_key.N:
            raise ValueError("p*q does not match N")
        if p > q:
            p, q = q, p
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        self._set("lam", gmpy2.lcm(p - 1, q - 1))
        self._set("mu", gmpy2.invert(self.lam, self.public_key.N))
        self._set("p2", p * p)
        self._set("q2", q * q)
        self._set("hp", self._h(p, self.p2))
        self._set("hq", self._h(q, self.q2))
        self._set("q_inv", gmpy2.invert(q, p))
        # exponents for CRT-accelerated r^N mod p^2, q^2
        n = self.public_key.N
        self._set("ep", n % (p * (p - 1)))
        self._set("eq", n % (q * (q - 1)))
        self._set("q2_inv", gmpy2.invert(self.q2, self.p2))

    def _set(self, name, value):
        object.__setattr__(self, name, value)

    def _h(self, x, x2):
        g = self.public_key.g
        return gmpy2.invert((gmpy2.powmod(g, x - 1, x2) - 1) // x, x)

    def __repr__(self) -> str:
        return f"PrivateKey({self.public_key!r})"

    def random_nth_residue(self, rng: random.Random) -> mpz:
        """Uniform ``r^N mod N^2`` over ``r`` in ``Z_N^*`` at half the cost of :meth:`powN`.

        Mod ``p^2`` the N-th residues are exactly the Teichmueller lifts
        ``x^p``, which depend only on ``x mod p``.
        """
        a = gmpy2.powmod(mpz(rng.randrange(1, int(self.p))), self.p, self.p2)
        b = gmpy2.powmod(mpz(rng.randrange(1, int(self.q))), self.q, self.q2)
        return b + ((a - b) * self.q2_inv % self.p2) * self.q2

    def powN(self, r: mpz) -> mpz:
        """``r^N mod N^2`` via CRT over ``p^2`` and ``q^2``."""
        a = gmpy2.powmod(r, self.ep, self.p2)
        b = gmpy2.powmod(r, self.eq, self.q2)
        return b + ((a - b) * self.q2_inv % self.p2) * self.q2


@dataclass(frozen=True, slots=True)
class Ciphertext:
    value: int
    key_id: int

    def __repr__(self) -> str:
        return f"Ciphertext(...{int(self.value) & 0xFFFF:04x})"


@dataclass(frozen=True)
class KeyPair:
    public_key: PublicKey
    private_key: PrivateKey

    def __iter__(self):
        return iter((self.public_key, self.private_key))


def keygen(key_size_bits: int = 512, rng: random.Random | None = None) -> KeyPair:
    """Generate a Paillier key pair with ``g = N + 1``.

    ``rng`` may be a seeded :class:`random.Random` for reproducible test keys.
    """
    if key_size_bits < MIN_KEY_SIZE:
        raise ValueError(f"key size must be at least {MIN_KEY_SIZE} bits, got {key_size_bits}")
    if key_size_bits % 2:
        raise ValueError("key size must be even")
    rng = rng or default_rng()
    half = key_size_bits // 2
    while True:
        p = _random_prime(half, rng)
        q = _random_prime(half, rng)
        if p == q:
            continue
        n = p * q
        if n.bit_length() == key_size_bits and gmpy2.gcd(n, (p - 1) * (q - 1)) == 1:
            break
    pk = PublicKey(n)
    return KeyPair(pk, PrivateKey(pk, p, q))


def _check(pk: PublicKey, *cs: Ciphertext) -> None:
    for c in cs:
        if c.key_id != pk.key_id:
            raise KeyMismatchError("ciphertext belongs to a different key")


def is_ciphertext(pk: PublicKey, v: int) -> bool:
    """True when ``v`` is a unit of ``Z_(N^2)``, i.e. could be an encryption under ``pk``."""
    return 0 < v < pk.N2 and gmpy2.gcd(v, pk.N) == 1


def encrypt(pk: PublicKey, m: int, rng: random.Random | None = None, *, sk: PrivateKey | None = None) -> Ciphertext:
    """Probabilistic encryption of ``0 <= m < N``.

    Passing the matching ``sk`` computes the randomizer by CRT; the result
    has the same distribution.
    """
    return encrypt_with(pk, m, pk.random_unit(rng or default_rng()), sk=sk)


def encrypt_private(sk: PrivateKey, m: int, rng: random.Random | None = None) -> Ciphertext:
    """Encryption by a key holder; same distribution as :func:`encrypt`."""
    pk = sk.public_key
    if m < 0 or m >= pk.N:
        raise ValueError("plaintext out of range [0, N)")
    rn = sk.random_nth_residue(rng or default_rng())
    return Ciphertext((1 + m * pk.N) * rn % pk.N2, pk.key_id)


def encrypt_with(pk: PublicKey, m: int, r: int, *, sk: PrivateKey | None = None) -> Ciphertext:
    """Encryption with an explicit randomizer ``r`` in ``Z_N^*``."""
    if m < 0 or m >= pk.N:
        raise ValueError("plaintext out of range [0, N)")
    r = mpz(r)
    if sk is not None:
        rn = sk.powN(r)
    else:
        rn = gmpy2.powmod(r, pk.N, pk.N2)
    return Ciphertext((1 + m * pk.N) * rn % pk.N2, pk.key_id)


class _Comb:
    """Fixed-base exponentiation by a table of ``base**(d * 2**(w*WINDOW))``."""

    WINDOW = 8

    def __init__(self, base: mpz, modulus: mpz, exp_bits: int):
        self.modulus = modulus
        size = 1 << self.WINDOW
        self.table = []
        for _ in range(-(-exp_bits // self.WINDOW)):
            row = [mpz(1)] * size
            for d in range(1, size):
                row[d] = row[d - 1] * base % modulus
            self.table.append(row)
            base = row[-1] * base % modulus

    def pow(self, e: int) -> mpz:
        mod, mask, acc = self.modulus, (1 << self.WINDOW) - 1, mpz(1)
        for row in self.table:
            d = e & mask
            if d:
                acc = acc * row[d] % mod
            e >>= self.WINDOW
        return acc


class FixedBaseRandomizer:
    """Randomizers ``h**a`` for a fixed N-th residue ``h`` and fresh ``a``.

    ``h`` is the N-th power of a random square and ``a`` has ``kappa`` bits
    more than ``N``, so ``h**a`` is statistically uniform in the subgroup
    ``h`` generates.  Each draw costs one multiplication per exponent byte
    instead of a full exponentiation.
    """

    def __init__(self, pk: PublicKey, rng: random.Random | None = None, kappa: int = 80):
        self.pk = pk
        self.rng = rng or default_rng()
        x = pk.random_unit(self.rng)
        self.exp_bits = pk.bits + kappa
        self._comb = _Comb(gmpy2.powmod(x * x, pk.N, pk.N2), pk.N2, self.exp_bits)

    def draw(self) -> mpz:
        return self._comb.pow(self.rng.getrandbits(self.exp_bits))

    def encrypt(self, m: int) -> Ciphertext:
        pk = self.pk
        if m < 0 or m >= pk.N:
            raise ValueError("plaintext out of range [0, N)")
        return Ciphertext((1 + m * pk.N) * self.draw() % pk.N2, pk.key_id)


class PrivateFixedBaseRandomizer(FixedBaseRandomizer):
    """Key-holder version: one comb per prime square, combined by CRT.

    Mod ``p**2`` the N-th residues form the cyclic group of Teichmueller
    lifts; a random lift raised to an exponent uniform mod ``p - 1`` is
    uniform in the subgroup it generates.
    """

    def __init__(self, sk: PrivateKey, rng: random.Random | None = None):
        self.pk = sk.public_key
        self.sk = sk
        self.rng = rng or default_rng()
        p, q = sk.p, sk.q
        self._cp = _Comb(gmpy2.powmod(mpz(self.rng.randrange(2, int(p))), p, sk.p2), sk.p2, int(p).bit_length())
        self._cq = _Comb(gmpy2.powmod(mpz(self.rng.randrange(2, int(q))), q, sk.q2), sk.q2, int(q).bit_length())

    def draw(self) -> mpz:
        sk = self.sk
        a = self._cp.pow(self.rng.randrange(int(sk.p) - 1))
        b = self._cq.pow(self.rng.randrange(int(sk.q) - 1))
        return b + ((a - b) * sk.q2_inv % sk.p2) * sk.q2


def decrypt(sk: PrivateKey, c: Ciphertext) -> int:
    pk = sk.public_key
    _check(pk, c)
    v = mpz(c.value)
    p, q = sk.p, sk.q
    mp = (gmpy2.powmod(v, p - 1, sk.p2) - 1) // p * sk.hp % p
    mq = (gmpy2.powmod(v, q - 1, sk.q2) - 1) // q * sk.hq % q
    return int(mq + ((mp - mq) * sk.q_inv % p) * q)


def decrypt_textbook(sk: PrivateKey, c: Ciphertext) -> int:
    """``L(c^lambda mod N^2) * mu mod N`` without CRT; used to cross-check."""
    pk = sk.public_key
    _check(pk, c)
    u = gmpy2.powmod(mpz(c.value), sk.lam, pk.N2)
    return int((u - 1) // pk.N * sk.mu % pk.N)


def add(pk: PublicKey, c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    _check(pk, c1, c2)
    return Ciphertext(mpz(c1.value) * c2.value % pk.N2, pk.key_id)


def add_plain(pk: PublicKey, c: Ciphertext, k: int) -> Ciphertext:
    """Add a public constant without fresh randomness."""
    _check(pk, c)
    return Ciphertext(mpz(c.value) * (1 + (k % pk.N) * pk.N) % pk.N2, pk.key_id)


def scalar_mul(pk: PublicKey, c: Ciphertext, k: int) -> Ciphertext:
    _check(pk, c)
    if k < 0 or k >= pk.N:
        raise ValueError("scalar out of range [0, N)")
    return Ciphertext(gmpy2.powmod(mpz(c.value), k, pk.N2), pk.key_id)


def negate(pk: PublicKey, c: Ciphertext) -> Ciphertext:
    """Ciphertext of ``-a mod N``.

    Computed as the inverse mod ``N^2``, which decrypts identically to
    ``scalar_mul(c, N - 1)`` and costs one modular inversion.
    """
    _check(pk, c)
    return Ciphertext(gmpy2.invert(mpz(c.value), pk.N2), pk.key_id)


def sub(pk: PublicKey, c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    _check(pk, c1, c2)
    return Ciphertext(mpz(c1.value) * gmpy2.invert(mpz(c2.value), pk.N2) % pk.N2, pk.key_id)


def linear(pk: PublicKey, terms) -> Ciphertext:
    """Ciphertext of ``sum(k_i * a_i) mod N`` for ``(c_i, k_i)`` pairs.

    Negative coefficients are taken through the inverse, so small signed
    coefficients stay cheap.
    """
    acc = mpz(1)
    N2 = pk.N2
    for c, k in terms:
        _check(pk, c)
        v = mpz(c.value)
        if k < 0:
            v = gmpy2.invert(v, N2)
            k = -k
        if k == 1:
            acc = acc * v % N2
        elif k:
            acc = acc * gmpy2.powmod(v, k, N2) % N2
    return Ciphertext(acc, pk.key_id)


def rerandomize(pk: PublicKey, c: Ciphertext, rng: random.Random | None = None) -> Ciphertext:
    _check(pk, c)
    r = pk.random_unit(rng or default_rng())
    return Ciphertext(mpz(c.value) * gmpy2.powmod(r, pk.N, pk.N2) % pk.N2, pk.key_id)


def clog2(x: int) -> int:
    """``ceil(log2 x)`` for positive integers, 0 for ``x == 1``."""
    if x < 1:
        raise ValueError("clog2 needs a positive integer")
    return (x - 1).bit_length()


@dataclass(frozen=True)
class ProtocolParams:
    """Bit-width bookkeeping shared by both servers.

    ``l`` bounds the attribute sums of the mapped tuples; each mapped attribute
    then fits in ``l - ceil(log2 m)`` bits.  ``d`` is the raw attribute width
    (``None`` when mapped tuples are supplied directly).
    """

    l: int = 20
    d: int | None = 8
    kappa: int = 80
    K: int = 512
    n: int = 1
    m: int = 2

    def __post_init__(self):
        if self.n < 1 or self.m < 1 or self.l < 1:
            raise ValueError("n, m, l must be positive")
        if self.d is not None and self.l < 2 * self.d + clog2(self.m):
            raise ValueError(
                f"l={self.l} cannot hold squared differences of d={self.d}-bit values over m={self.m} dims"
            )
        if self.l + clog2(self.n) + self.kappa + 2 >= self.K:
            raise ValueError("blinded values would wrap around N; increase K or reduce l/kappa")

    @property
    def attr_width(self) -> int:
        return self.l - clog2(self.m)

    @property
    def pert_bits(self) -> int:
        return clog2(self.n)

    @property
    def sum_width(self) -> int:
        return self.l + self.pert_bits

    @property
    def max_value(self) -> int:
        return (1 << self.sum_width) - 1

    def check_key(self, pk: PublicKey) -> None:
        if pk.bits != self.K:
            raise ValueError(f"params expect K={self.K}, key has {pk.bits} bits")
        if (1 << (self.l + clog2(self.n) + self.kappa + 2)) >= pk.N:
            raise ValueError("blinded values would wrap around N")

    def with_n(self, n: int) -> "ProtocolParams":
        return ProtocolParams(self.l, self.d, self.kappa, self.K, n, self.m)
