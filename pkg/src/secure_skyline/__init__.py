"""Secure dynamic skyline queries on Paillier-encrypted data (two non-colluding servers)."""

from .oracle import skyline_bruteforce
from .paillier import KeyPair, ProtocolParams, decrypt, encrypt, keygen
from .skyline import bssp, fssp

__all__ = ["KeyPair", "ProtocolParams", "bssp", "decrypt", "encrypt", "fssp", "keygen", "skyline_bruteforce"]
