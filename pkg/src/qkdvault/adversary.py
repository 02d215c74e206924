"""Eavesdropper models and their analytic disturbance.

Eve's intercept-resend measurement uses a uniformly random basis per photon.
When her basis is wrong (probability 1/2) she re-sends a photon in the wrong
basis and Bob, measuring in Alice's basis, reads a fair coin, so a tapped
sifted bit is wrong with probability 1/2 * 1/2 = 1/4.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from .channel import Basis, PhotonState, encode, measure, measure_arrays


@dataclass(frozen=True)
class NoAdversary:
    name = "none"


@dataclass(frozen=True)
class InterceptResend:
    fraction: float = 1.0
    name = "intercept"

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError(f"fraction must lie in [0, 1], got {self.fraction}")


@dataclass(frozen=True)
class MitmImpersonate:
    """Full intercept-resend plus forged classical messages.

    With ``authenticated_channel`` the session authenticates every classical
    message, so each forgery is rejected.
    """

    authenticated_channel: bool = True
    name = "mitm"


AdversaryStrategy = Union[NoAdversary, InterceptResend, MitmImpersonate]


def tapped_fraction(strategy: AdversaryStrategy) -> float:
    if isinstance(strategy, InterceptResend):
        return strategy.fraction
    if isinstance(strategy, MitmImpersonate):
        return 1.0
    return 0.0


def from_name(name: str, fraction: float = 1.0, authenticated: bool = True) -> AdversaryStrategy:
    name = name.lower().replace("-", "_")
    if name in ("none", ""):
        return NoAdversary()
    if name in ("intercept", "intercept_resend"):
        return InterceptResend(fraction)
    if name in ("mitm", "mitm_impersonate"):
        return MitmImpersonate(authenticated)
    raise ValueError(f"unknown adversary {name!r}")


def tap(photon: PhotonState, strategy: AdversaryStrategy, rng: np.random.Generator) -> PhotonState:
    f = tapped_fraction(strategy)
    if f == 0.0 or rng.random() >= f:
        return photon
    eve_basis = Basis(int(rng.integers(0, 2)))
    outcome = measure(photon, eve_basis, rng)
    return encode(outcome, eve_basis)


def tap_arrays(
    bases: np.ndarray, bits: np.ndarray, strategy: AdversaryStrategy, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized :func:`tap`. Returns (bases, bits, tapped_mask) as seen by Bob."""
    n = len(bits)
    f = tapped_fraction(strategy)
    if f == 0.0:
        return bases, bits, np.zeros(n, dtype=bool)
    tapped = rng.random(n) < f
    eve_bases = rng.integers(0, 2, size=n, dtype=np.uint8)
    eve_bits = measure_arrays(bases, bits, eve_bases, rng)
    return (
        np.where(tapped, eve_bases, bases).astype(np.uint8),
        np.where(tapped, eve_bits, bits).astype(np.uint8),
        tapped,
    )


def expected_qber(strategy: AdversaryStrategy, flip_probability: float = 0.0) -> float:
    """Sifted-key error rate: f/4 + p * (1 - f/2).

    An error needs exactly one of (Eve disturbance, channel flip), so with
    e = f/4 the rate is e(1-p) + (1-e)p.
    """
    e = tapped_fraction(strategy) / 4.0
    p = flip_probability
    return e + p * (1.0 - 2.0 * e)


def detection_probability(strategy: AdversaryStrategy, sample_size: int) -> float:
    """Chance that a public sample of ``sample_size`` sifted bits shows an error."""
    if sample_size < 0:
        raise ValueError("sample_size must be non-negative")
    q = expected_qber(strategy, 0.0)
    return 1.0 - (1.0 - q) ** sample_size
