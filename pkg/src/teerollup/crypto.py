"""Hashing and signatures shared by every actor.

SHA-256 for digests, Ed25519 for signatures. The raw 32-byte Ed25519 public
key doubles as the account address on both the rollup and the main chain.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

DIGEST_SIZE = 32
PUBLIC_KEY_SIZE = 32
SIGNATURE_SIZE = 64

Digest = bytes
PublicKey = bytes


def hash(message: bytes) -> Digest:  # noqa: A001 - mirrors the protocol's H(.)
    return hashlib.sha256(message).digest()


def hash_many(*parts: bytes) -> Digest:
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return h.digest()


@dataclass(frozen=True)
class KeyPair:
    public_key: PublicKey
    secret_key: bytes = field(repr=False)


@dataclass(frozen=True)
class Signature:
    value: bytes
    signer: PublicKey

    def encode(self) -> bytes:
        return self.signer + self.value


def gen_keypair(seed: bytes) -> KeyPair:
    """Derive an Ed25519 keypair from 32 bytes of simulation entropy."""
    if len(seed) != 32:
        raise ValueError("seed must be 32 bytes")
    sk = Ed25519PrivateKey.from_private_bytes(seed)
    return KeyPair(public_key=sk.public_key().public_bytes_raw(), secret_key=seed)


@lru_cache(maxsize=4096)
def _private_key(secret: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(secret)


def sign(message: bytes, key: KeyPair) -> Signature:
    return sign_with_secret(message, key.secret_key, key.public_key)


def sign_with_secret(message: bytes, secret_key: bytes, public_key: PublicKey) -> Signature:
    return Signature(_private_key(secret_key).sign(message), public_key)


@lru_cache(maxsize=1 << 18)
def _verify_raw(message: bytes, sig: bytes, pk: bytes) -> bool:
    # verification is a pure function, so memoising it is safe; replicas
    # re-verify the same batch many times
    try:
        Ed25519PublicKey.from_public_bytes(pk).verify(sig, message)
    except (InvalidSignature, ValueError):
        return False
    return True


def verify(message: bytes, sig: Signature | bytes | None, pk: PublicKey) -> bool:
    """True iff ``sig`` was produced over ``message`` by the holder of ``pk``.

    Malformed inputs of any kind return False.
    """
    if sig is None:
        return False
    raw = sig.value if isinstance(sig, Signature) else sig
    if isinstance(sig, Signature) and sig.signer != pk:
        return False
    if not isinstance(raw, (bytes, bytearray)) or len(raw) != SIGNATURE_SIZE:
        return False
    if not isinstance(pk, (bytes, bytearray)) or len(pk) != PUBLIC_KEY_SIZE:
        return False
    return _verify_raw(bytes(message), bytes(raw), bytes(pk))
