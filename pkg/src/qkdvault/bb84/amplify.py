"""Privacy amplification by seeded Toeplitz hashing over GF(2)."""
from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.signal import fftconvolve

from ..errors import InsufficientKeyError

# Input chunk length for the FFT path; keeps convolution sums below 2^20 so
# float64 rounding is exact.
CHUNK = 1 << 20
_DIRECT_LIMIT = 1 << 22


def output_length(n: int, disclosed_bits: int, security_margin: int) -> int:
    return n - disclosed_bits - security_margin


def toeplitz_hash(bits: np.ndarray, first_row: np.ndarray, first_column: Optional[np.ndarray] = None) -> np.ndarray:
    """Multiply ``bits`` by the binary Toeplitz matrix given by its first row and column.

    The matrix is ``len(first_column) x len(bits)``; ``first_row[0]`` and
    ``first_column[0]`` must agree. Omitting ``first_column`` gives a single
    output bit.
    """
    x = np.asarray(bits, dtype=np.int64)
    row = np.asarray(first_row, dtype=np.int64)
    col = row[:1] if first_column is None else np.asarray(first_column, dtype=np.int64)
    n, ell = len(x), len(col)
    if len(row) != n:
        raise ValueError("first_row length must match the input length")
    if ell and n and row[0] != col[0]:
        raise ValueError("first_row[0] and first_column[0] must agree")
    if ell == 0 or n == 0:
        return np.zeros(ell, dtype=np.uint8)
    # T[i, j] = diag[i - j + n - 1]  =>  y = (diag * x)[n-1 : n-1+ell]
    diag = np.concatenate([row[::-1], col[1:]])
    return _toeplitz_product(diag, x, ell)


def _toeplitz_product(diag: np.ndarray, x: np.ndarray, ell: int) -> np.ndarray:
    n = len(x)
    if n * ell <= _DIRECT_LIMIT:
        return (np.convolve(diag, x)[n - 1 : n - 1 + ell] & 1).astype(np.uint8)
    acc = np.zeros(ell, dtype=np.int64)
    for start in range(0, n, CHUNK):
        xc = x[start : start + CHUNK].astype(np.float64)
        b = len(xc)
        base = n - start - b
        window = diag[base : n - 1 - start + ell].astype(np.float64)
        conv = fftconvolve(window, xc)[b - 1 : b - 1 + ell]
        rounded = np.rint(conv)
        if np.abs(conv - rounded).max(initial=0.0) > 0.25:
            raise ArithmeticError("FFT rounding error in Toeplitz product")
        acc += rounded.astype(np.int64) & 1
    return (acc & 1).astype(np.uint8)


def privacy_amplify(reconciled: np.ndarray, disclosed_bits: int, security_margin: int, seed: int) -> np.ndarray:
    """Compress ``reconciled`` to ``n - disclosed_bits - security_margin`` bits.

    The Toeplitz diagonal is drawn from ``seed`` (announced publicly in a
    session), so both parties compute the same hash.
    """
    n = len(reconciled)
    ell = output_length(n, disclosed_bits, security_margin)
    if ell <= 0:
        raise InsufficientKeyError(
            f"{n} reconciled bits cannot cover {disclosed_bits} disclosed + {security_margin} margin"
        )
    diag = np.random.default_rng(seed).integers(0, 2, size=n + ell - 1, dtype=np.uint8)
    return toeplitz_product(reconciled, diag, ell)


def toeplitz_product(bits: np.ndarray, diag: np.ndarray, ell: int) -> np.ndarray:
    """Product with the ``ell x len(bits)`` Toeplitz matrix ``T[i, j] = diag[i - j + n - 1]``."""
    x = np.asarray(bits, dtype=np.int64)
    diag = np.asarray(diag, dtype=np.int64)
    if len(diag) != len(x) + ell - 1:
        raise ValueError("diagonal must have n + ell - 1 entries")
    return _toeplitz_product(diag, x, ell)
