"""Bit-string helpers.

Bit strings are 1-D ``numpy.uint8`` arrays holding only 0 and 1. Byte payloads
are expanded most-significant-bit first.
"""
from __future__ import annotations

from typing import Iterable, Union

import numpy as np

BitsLike = Union[str, bytes, Iterable[int], np.ndarray]


def as_bits(value: BitsLike) -> np.ndarray:
    """Coerce ``value`` to a bit array.

    Strings are read as literal ``"0"``/``"1"`` characters. ``bytes`` are NOT
    accepted here because the intent (characters vs. payload) is ambiguous; use
    :func:`bytes_to_bits` for payloads.
    """
    if isinstance(value, (bytes, bytearray)):
        raise TypeError("use bytes_to_bits() for byte payloads")
    if isinstance(value, str):
        if value and set(value) - {"0", "1"}:
            raise ValueError(f"not a bit string: {value!r}")
        return np.frombuffer(value.encode("ascii"), dtype=np.uint8) - ord("0") if value else np.zeros(0, np.uint8)
    arr = np.asarray(list(value) if not isinstance(value, np.ndarray) else value)
    if arr.ndim != 1:
        raise ValueError("bit strings are one-dimensional")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError("bit strings may only contain 0 and 1")
    return arr.astype(np.uint8, copy=True)


def to_str(bits: np.ndarray) -> str:
    return "".join("1" if b else "0" for b in np.asarray(bits).tolist())


def bytes_to_bits(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8))


def bits_to_bytes(bits: np.ndarray) -> bytes:
    """Pack bits MSB-first; a trailing partial byte is zero padded."""
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def unpack(data: bytes, nbits: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8))
    if bits.size < nbits:
        raise ValueError(f"need {nbits} bits, got {bits.size}")
    return bits[:nbits].copy()


def parity(bits: np.ndarray) -> int:
    return int(np.count_nonzero(bits) & 1)
