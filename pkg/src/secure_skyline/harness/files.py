"""On-disk formats: key files and the encrypted dataset file.

Every file is a 4-byte magic followed by WireBigInts, the same integer
encoding the transport uses.  The encrypted dataset header is
``K, n, m, d, l`` and the ciphertexts follow row-major.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from ..dominance import EncryptedTuple
from ..paillier import Ciphertext, KeyPair, PrivateKey, PublicKey
from ..transport import decode_bigints, encode_bigints

PUBLIC_MAGIC = b"SKYP"
PRIVATE_MAGIC = b"SKYS"
DATASET_MAGIC = b"SKY1"


class FileFormatError(ValueError):
    pass


def _read(path: str | Path, magic: bytes) -> list[int]:
    data = Path(path).read_bytes()
    if data[:4] != magic:
        raise FileFormatError(f"{path}: not a {magic.decode()} file")
    try:
        return decode_bigints(data[4:])
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc


def _write(path: str | Path, magic: bytes, values) -> Path:
    path = Path(path)
    path.write_bytes(magic + encode_bigints(values))
    return path


def write_public_key(path, pk: PublicKey) -> Path:
    return _write(path, PUBLIC_MAGIC, [pk.bits, pk.N])


def read_public_key(path) -> PublicKey:
    vals = _read(path, PUBLIC_MAGIC)
    if len(vals) != 2:
        raise FileFormatError(f"{path}: public key file needs K and N")
    K, N = vals
    pk = PublicKey(N)
    if pk.bits != K:
        raise FileFormatError(f"{path}: header says K={K}, modulus has {pk.bits} bits")
    return pk


def write_private_key(path, sk: PrivateKey) -> Path:
    path = _write(path, PRIVATE_MAGIC, [sk.public_key.bits, sk.p, sk.q])
    path.chmod(0o600)
    return path


def read_private_key(path) -> PrivateKey:
    vals = _read(path, PRIVATE_MAGIC)
    if len(vals) != 3:
        raise FileFormatError(f"{path}: private key file needs K, p and q")
    K, p, q = vals
    pk = PublicKey(p * q)
    if pk.bits != K:
        raise FileFormatError(f"{path}: header says K={K}, modulus has {pk.bits} bits")
    return PrivateKey(pk, p, q)


def key_text(path) -> str:
    """Hex rendering of a key file, for debugging."""
    data = Path(path).read_bytes()
    names = {PUBLIC_MAGIC: ("K", "N"), PRIVATE_MAGIC: ("K", "p", "q")}.get(data[:4])
    if names is None:
        raise FileFormatError(f"{path}: not a key file")
    vals = decode_bigints(data[4:])
    return "\n".join(f"{k}={v}" if k == "K" else f"{k}=0x{v:x}" for k, v in zip(names, vals))


def write_keypair(prefix: str | Path, kp: KeyPair) -> tuple[Path, Path]:
    prefix = str(prefix)
    return write_public_key(prefix + ".pub", kp.public_key), write_private_key(prefix + ".key", kp.private_key)


@dataclass
class EncryptedDatasetFile:
    K: int
    n: int
    m: int
    d: int
    l: int
    rows: list[EncryptedTuple]


def write_encrypted_dataset(path, pk: PublicKey, rows: list[EncryptedTuple], d: int, l: int) -> Path:
    m = rows[0].m if rows else 0
    flat = []
    for r in rows:
        if r.m != m:
            raise ValueError("rows must share one dimension")
        flat += [c.value for c in r.attrs]
    return _write(path, DATASET_MAGIC, [pk.bits, len(rows), m, d, l] + flat)


def read_encrypted_dataset(path, pk: PublicKey) -> EncryptedDatasetFile:
    vals = _read(path, DATASET_MAGIC)
    if len(vals) < 5:
        raise FileFormatError(f"{path}: truncated header")
    K, n, m, d, l = vals[:5]
    body = vals[5:]
    if K != pk.bits:
        raise FileFormatError(f"{path}: encrypted under K={K}, key has {pk.bits} bits")
    if len(body) != n * m:
        raise FileFormatError(f"{path}: expected {n * m} ciphertexts, found {len(body)}")
    for v in body:
        if not 0 < v < pk.N2:
            raise FileFormatError(f"{path}: value outside Z_(N^2)")
    rows = [EncryptedTuple([Ciphertext(v, pk.key_id) for v in body[i * m : (i + 1) * m]], d) for i in range(n)]
    return EncryptedDatasetFile(K, n, m, d, l, rows)
