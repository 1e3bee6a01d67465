"""Ed25519 signing helpers shared by every signed surface in the package."""

from __future__ import annotations

import base64
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ed25519

VK_BYTES = 32
SIG_BYTES = 64


@dataclass(frozen=True)
class SigningKey:
    """An Ed25519 keypair; ``verification_key`` is the raw 32-byte public key."""

    signing_key: ed25519.Ed25519PrivateKey
    verification_key: bytes

    @classmethod
    def generate(cls) -> "SigningKey":
        return cls.from_seed(None)

    @classmethod
    def from_seed(cls, seed: bytes | None) -> "SigningKey":
        if seed is None:
            sk = ed25519.Ed25519PrivateKey.generate()
        else:
            sk = ed25519.Ed25519PrivateKey.from_private_bytes(seed)
        vk = sk.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return cls(sk, vk)

    def sign(self, message: bytes) -> bytes:
        return self.signing_key.sign(message)

    def seed_bytes(self) -> bytes:
        return self.signing_key.private_bytes(
            serialization.Encoding.Raw,
            serialization.PrivateFormat.Raw,
            serialization.NoEncryption(),
        )


def verify(vk: bytes, signature: bytes, message: bytes) -> bool:
    """Return True iff ``signature`` is valid for ``message`` under raw key ``vk``.

    Malformed keys or signatures verify as False rather than raising.
    """
    if len(vk) != VK_BYTES or len(signature) != SIG_BYTES:
        return False
    try:
        ed25519.Ed25519PublicKey.from_public_bytes(vk).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


def load_public(vk: bytes) -> ed25519.Ed25519PublicKey:
    """Parse a raw public key, raising ValueError on bad length or encoding."""
    if len(vk) != VK_BYTES:
        raise ValueError(f"verification key must be {VK_BYTES} bytes, got {len(vk)}")
    return ed25519.Ed25519PublicKey.from_public_bytes(vk)


def b64e(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def b64d(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"), validate=True)
