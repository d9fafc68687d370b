"""Ed25519 key pairs and signatures for agreement and request signing."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, NoEncryption, PrivateFormat, PublicFormat

KEY_SIZE = 32
SIG_SIZE = 64


class KeyDecodeError(ValueError):
    """Malformed key or signature encoding."""


@dataclass(frozen=True)
class KeyPair:
    public: bytes
    secret: bytes = b""

    def __repr__(self) -> str:
        return f"KeyPair(public={self.public.hex()[:16]}...)"

    def sign(self, message: bytes) -> bytes:
        return sign(self.secret, message)


def keygen(seed: bytes | None = None) -> KeyPair:
    """Fresh key pair; a ``seed`` makes it deterministic (simulation, tests)."""
    if seed is None:
        sk = Ed25519PrivateKey.generate()
    else:
        sk = Ed25519PrivateKey.from_private_bytes(hashlib.sha256(b"dsnmech-key" + seed).digest())
    secret = sk.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())
    public = sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    return KeyPair(public, secret)


def sign(secret: bytes, message: bytes) -> bytes:
    if len(secret) != KEY_SIZE:
        raise KeyDecodeError("secret key must be 32 bytes")
    return Ed25519PrivateKey.from_private_bytes(secret).sign(message)


def verify_sig(public: bytes, message: bytes, signature: bytes) -> bool:
    """True iff ``signature`` is valid for ``message`` under ``public``.

    A structurally malformed key or signature raises ``KeyDecodeError``;
    a well-formed but wrong signature just returns False.
    """
    if len(public) != KEY_SIZE:
        raise KeyDecodeError("public key must be 32 bytes")
    if len(signature) != SIG_SIZE:
        raise KeyDecodeError("signature must be 64 bytes")
    try:
        key = Ed25519PublicKey.from_public_bytes(public)
    except ValueError as exc:
        raise KeyDecodeError(str(exc)) from None
    try:
        key.verify(signature, message)
    except InvalidSignature:
        return False
    return True


def dump_keypair(kp: KeyPair) -> str:
    return f"public {kp.public.hex()}\nsecret {kp.secret.hex()}\n"


def load_keypair(text: str) -> KeyPair:
    fields = {}
    for line in text.splitlines():
        if line.strip():
            name, _, value = line.partition(" ")
            fields[name] = value.strip()
    try:
        public = bytes.fromhex(fields["public"])
        secret = bytes.fromhex(fields.get("secret", ""))
    except (KeyError, ValueError) as exc:
        raise KeyDecodeError(f"bad key file: {exc}") from None
    if len(public) != KEY_SIZE or len(secret) not in (0, KEY_SIZE):
        raise KeyDecodeError("bad key length")
    return KeyPair(public, secret)
