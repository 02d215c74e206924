"""One-time polynomial MAC for the classical channel.

Each message gets its own key pair ``(r, s)`` derived from the shared 256-bit
secret and a never-repeating counter. The tag is::

    tag = (sum_i c_i * r^(k-i+1) + s) mod (2^127 - 1)

where ``c_i`` are 15-byte message blocks read little-endian with a 0x01 byte
appended (so every coefficient is below 2^121). Because the modulus is prime
and ``r != 0``, two messages differing in one block always produce different
tags under the same key.
"""
from __future__ import annotations

import hashlib
import hmac
import secrets
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import AuthCounterError

PRIME = (1 << 127) - 1
BLOCK = 15
KEY_BYTES = 32
MAX_COUNTER = (1 << 64) - 1


@dataclass(frozen=True)
class AuthTag:
    counter: int
    value: bytes  # 16 bytes, big-endian

    def hex(self) -> str:
        return self.value.hex()


@dataclass
class AuthSecret:
    """Pre-shared 256-bit secret plus the counters that keep tags one-time.

    ``counter`` is the next counter to tag with; ``verified_through`` is the
    highest counter accepted so far (tags at or below it are stale).
    """

    key_bits: bytes
    counter: int = 0
    verified_through: int = -1

    def __post_init__(self):
        if len(self.key_bits) != KEY_BYTES:
            raise ValueError(f"auth secret must be {KEY_BYTES * 8} bits")

    @classmethod
    def generate(cls, rng: Optional[np.random.Generator] = None) -> "AuthSecret":
        if rng is None:
            return cls(secrets.token_bytes(KEY_BYTES))
        return cls(rng.integers(0, 256, size=KEY_BYTES, dtype=np.uint8).tobytes())

    @classmethod
    def from_hex(cls, text: str) -> "AuthSecret":
        return cls(bytes.fromhex(text))

    def hex(self) -> str:
        return self.key_bits.hex()


def _one_time_keys(key_bits: bytes, counter: int):
    d = hmac.new(key_bits, b"qkdvault/auth" + counter.to_bytes(8, "big"), hashlib.sha256).digest()
    r = int.from_bytes(d[:16], "big") % PRIME or 1
    s = int.from_bytes(d[16:], "big") % PRIME
    return r, s


def poly_tag(message: bytes, key_bits: bytes, counter: int) -> bytes:
    r, s = _one_time_keys(key_bits, counter)
    acc = 0
    for i in range(0, len(message), BLOCK):
        c = int.from_bytes(message[i : i + BLOCK] + b"\x01", "little")
        acc = (acc + c) * r % PRIME
    return ((acc + s) % PRIME).to_bytes(16, "big")


def authenticate_message(message: bytes, auth: AuthSecret) -> AuthTag:
    if auth.counter > MAX_COUNTER:
        raise AuthCounterError("authentication counter exhausted; replace the secret")
    counter = auth.counter
    auth.counter += 1
    return AuthTag(counter, poly_tag(bytes(message), auth.key_bits, counter))


def verify_message(message: bytes, tag: Optional[AuthTag], auth: AuthSecret) -> bool:
    if tag is None or len(tag.value) != 16:
        return False
    if not 0 <= tag.counter <= MAX_COUNTER or tag.counter <= auth.verified_through:
        return False
    expected = poly_tag(bytes(message), auth.key_bits, tag.counter)
    if not hmac.compare_digest(expected, tag.value):
        return False
    auth.verified_through = tag.counter
    return True
