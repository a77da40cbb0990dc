"""
Ed25519 signatures and SHA-256 digests used by every transaction and block.

Keys are raw 32-byte values and travel as lowercase hex in every file format.
"""

from __future__ import annotations

import hashlib
import secrets
import threading
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)

from .exceptions import InvalidKey, InvalidSeed, InvalidValue

ED25519 = "ed25519"
KEY_SIZE = 32
SIGNATURE_SIZE = 64
KEY_ID_BYTES = 16


class OperationCounters:
    """Process-wide tallies of the expensive primitives, read by the bench."""

    FIELDS = ("signatures", "signature_verifications", "hash_computations")

    def __init__(self):
        self._lock = threading.Lock()
        self._counts = dict.fromkeys(self.FIELDS, 0)

    def bump(self, name):
        with self._lock:
            self._counts[name] += 1

    def snapshot(self):
        with self._lock:
            return dict(self._counts)

    def reset(self):
        with self._lock:
            self._counts = dict.fromkeys(self.FIELDS, 0)


counters = OperationCounters()


@dataclass(frozen=True)
class Digest:
    value: bytes

    def __post_init__(self):
        if len(self.value) != 32:
            raise InvalidValue("digest must be 32 bytes")

    def hex(self):
        return self.value.hex()

    @classmethod
    def from_hex(cls, text):
        return cls(bytes.fromhex(text))


ZERO_DIGEST = Digest(bytes(32))


@dataclass(frozen=True)
class Signature:
    scheme: str
    value: bytes

    def __post_init__(self):
        if len(self.value) != SIGNATURE_SIZE:
            raise InvalidValue("signature must be 64 bytes")

    def to_map(self):
        return {"scheme": self.scheme, "value": self.value.hex()}

    @classmethod
    def from_map(cls, data):
        return cls(scheme=data["scheme"], value=bytes.fromhex(data["value"]))


@dataclass(frozen=True)
class KeyPair:
    key_id: str
    signing_key: bytes
    verification_key: bytes

    def to_map(self):
        return {
            "key_id": self.key_id,
            "signing_key": self.signing_key.hex(),
            "verification_key": self.verification_key.hex(),
        }

    @classmethod
    def from_map(cls, data):
        keypair = generate_keypair(bytes.fromhex(data["signing_key"]))
        if keypair.verification_key.hex() != data["verification_key"]:
            raise InvalidKey("verification key does not match signing key")
        return keypair

    def __repr__(self):
        return f"KeyPair(key_id={self.key_id!r})"


def digest(data: bytes) -> Digest:
    counters.bump("hash_computations")
    return Digest(hashlib.sha256(data).digest())


def key_id_for(verification_key: bytes) -> str:
    return digest(verification_key).value[:KEY_ID_BYTES].hex()


def generate_keypair(seed: bytes | None = None) -> KeyPair:
    """Derive a keypair from ``seed``, or from fresh OS entropy when omitted."""
    if seed is None:
        seed = secrets.token_bytes(KEY_SIZE)
    elif not isinstance(seed, (bytes, bytearray)) or len(seed) != KEY_SIZE:
        raise InvalidSeed("seed must be exactly 32 bytes")
    private_key = Ed25519PrivateKey.from_private_bytes(bytes(seed))
    verification_key = private_key.public_key().public_bytes(
        encoding=Encoding.Raw, format=PublicFormat.Raw
    )
    signing_key = private_key.private_bytes(
        encoding=Encoding.Raw,
        format=PrivateFormat.Raw,
        encryption_algorithm=NoEncryption(),
    )
    return KeyPair(
        key_id=key_id_for(verification_key),
        signing_key=signing_key,
        verification_key=verification_key,
    )


def sign(message: bytes, signing_key: bytes) -> Signature:
    if not isinstance(signing_key, (bytes, bytearray)) or len(signing_key) != KEY_SIZE:
        raise InvalidKey("signing key must be 32 bytes")
    counters.bump("signatures")
    private_key = Ed25519PrivateKey.from_private_bytes(bytes(signing_key))
    return Signature(scheme=ED25519, value=private_key.sign(message))


def verify_signature(message: bytes, sig, verification_key: bytes) -> bool:
    """Accept iff ``sig`` was made over ``message`` by the matching key.

    Malformed inputs (wrong lengths, unknown scheme) reject instead of raising.
    """
    counters.bump("signature_verifications")
    if isinstance(sig, Signature):
        if sig.scheme != ED25519:
            return False
        raw = sig.value
    else:
        raw = sig
    if not isinstance(raw, (bytes, bytearray)) or len(raw) != SIGNATURE_SIZE:
        return False
    if (
        not isinstance(verification_key, (bytes, bytearray))
        or len(verification_key) != KEY_SIZE
    ):
        return False
    try:
        public_key = Ed25519PublicKey.from_public_bytes(bytes(verification_key))
        public_key.verify(bytes(raw), message)
        return True
    except (InvalidSignature, ValueError):
        return False
