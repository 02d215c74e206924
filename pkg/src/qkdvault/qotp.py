"""One-time-pad encryption with single-use keys.

Ciphertext file layout::

    b"QOTP1" | key_id (16 bytes) | bit length (8 bytes, big-endian) | packed bits
"""
from __future__ import annotations

import secrets
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from .bits import BitsLike, as_bits, bits_to_bytes, bytes_to_bits, unpack
from .errors import DemoInapplicableError, KeyLengthError, KeyReuseError, WrongKeyError

MAGIC = b"QOTP1"
KEY_ID_BYTES = 16


def _frozen(bits: np.ndarray) -> np.ndarray:
    bits = np.array(bits, dtype=np.uint8)
    bits.flags.writeable = False
    return bits


@dataclass(frozen=True)
class PlainText:
    bits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bits", _frozen(as_bits(self.bits)))

    @classmethod
    def from_bytes(cls, data: bytes) -> "PlainText":
        return cls(bytes_to_bits(data))

    def to_bytes(self) -> bytes:
        if len(self.bits) % 8:
            raise ValueError("plaintext is not a whole number of bytes")
        return bits_to_bytes(self.bits)

    def __eq__(self, other):
        return isinstance(other, PlainText) and np.array_equal(self.bits, other.bits)

    def __len__(self):
        return len(self.bits)


@dataclass(frozen=True)
class CipherText:
    bits: np.ndarray
    key_id: bytes

    def __post_init__(self):
        object.__setattr__(self, "bits", _frozen(as_bits(self.bits)))
        if len(self.key_id) != KEY_ID_BYTES:
            raise ValueError(f"key_id must be {KEY_ID_BYTES} bytes")

    def __eq__(self, other):
        return (
            isinstance(other, CipherText)
            and self.key_id == other.key_id
            and np.array_equal(self.bits, other.bits)
        )

    def __len__(self):
        return len(self.bits)

    def to_file_bytes(self) -> bytes:
        return MAGIC + self.key_id + struct.pack(">Q", len(self.bits)) + bits_to_bytes(self.bits)

    @classmethod
    def from_file_bytes(cls, data: bytes) -> "CipherText":
        head = len(MAGIC) + KEY_ID_BYTES + 8
        if len(data) < head or not data.startswith(MAGIC):
            raise ValueError("not a QOTP1 ciphertext")
        key_id = data[len(MAGIC) : len(MAGIC) + KEY_ID_BYTES]
        (nbits,) = struct.unpack(">Q", data[head - 8 : head])
        body = data[head:]
        if len(body) != (nbits + 7) // 8:
            raise ValueError("ciphertext body length does not match header")
        return cls(unpack(body, nbits), key_id)


@dataclass(eq=False)
class OtpKey:
    """Key material that may encrypt exactly one message."""

    id: bytes
    bits: np.ndarray
    used: bool = False
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        self.bits = _frozen(as_bits(self.bits))
        if len(self.id) != KEY_ID_BYTES:
            raise ValueError(f"key id must be {KEY_ID_BYTES} bytes")

    @classmethod
    def fresh(cls, bits: BitsLike) -> "OtpKey":
        return cls(secrets.token_bytes(KEY_ID_BYTES), bits)

    def __len__(self):
        return len(self.bits)

    def _claim(self) -> None:
        with self._lock:
            if self.used:
                raise KeyReuseError(f"key {self.id.hex()} has already encrypted a message")
            self.used = True


class UnsafeReusableKey(OtpKey):
    """TEST/DEMO ONLY: a key that never records use, so it can encrypt twice.

    Exists to demonstrate the two-time-pad leak; production code never builds one.
    """

    def _claim(self) -> None:
        self.used = True


def _xor(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.bitwise_xor(a, b)


def encrypt(message: PlainText, key: OtpKey) -> CipherText:
    if len(key.bits) != len(message.bits):
        raise KeyLengthError(f"key has {len(key.bits)} bits, message has {len(message.bits)}")
    key._claim()
    return CipherText(_xor(message.bits, key.bits), key.id)


def decrypt(cipher: CipherText, key: OtpKey) -> PlainText:
    if key.id != cipher.key_id:
        raise WrongKeyError(f"ciphertext needs key {cipher.key_id.hex()}, got {key.id.hex()}")
    if len(key.bits) != len(cipher.bits):
        raise KeyLengthError(f"key has {len(key.bits)} bits, ciphertext has {len(cipher.bits)}")
    return PlainText(_xor(cipher.bits, key.bits))


def reuse_attack_demo(c1: CipherText, c2: CipherText) -> np.ndarray:
    """XOR of two ciphertexts under one key: equals the XOR of the plaintexts."""
    if c1.key_id != c2.key_id:
        raise DemoInapplicableError("ciphertexts were produced under different keys")
    if len(c1.bits) != len(c2.bits):
        raise KeyLengthError("ciphertexts differ in length")
    return _xor(c1.bits, c2.bits)
