"""Polarized-photon channel for BB84.

Photons are kept symbolic, as a (basis, bit) pair. For the four BB84 states
this is exact: a measurement in the preparation basis returns the encoded bit,
a measurement in the conjugate basis returns a fair coin.

Two surfaces are provided. :func:`encode`, :func:`measure` and
:func:`transmit` work on :class:`PhotonState` objects and enforce the
single-measurement rule per photon. :func:`transmit_arrays` and
:func:`measure_arrays` implement the same rules over numpy arrays (basis codes
0/1, bits 0/1) and are what the protocol engine runs on.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, List, Optional, Sequence

import numpy as np

if TYPE_CHECKING:
    from .adversary import AdversaryStrategy


class PhotonConsumedError(RuntimeError):
    """A photon was measured a second time."""


class Basis(enum.IntEnum):
    RECTILINEAR = 0
    DIAGONAL = 1

    @property
    def symbol(self) -> str:
        return "+" if self is Basis.RECTILINEAR else "x"

    @classmethod
    def parse(cls, token: str) -> "Basis":
        token = token.strip().lower()
        if token in ("+", "r", "rectilinear"):
            return cls.RECTILINEAR
        if token in ("x", "×", "d", "diagonal"):
            return cls.DIAGONAL
        raise ValueError(f"unknown basis {token!r}")


# (basis, bit) -> polarization angle in degrees
POLARIZATION = {
    (Basis.RECTILINEAR, 0): 0,
    (Basis.RECTILINEAR, 1): 90,
    (Basis.DIAGONAL, 0): 45,
    (Basis.DIAGONAL, 1): 135,
}
POLARIZATION_NAMES = {0: "Horizontal", 90: "Vertical", 45: "45° (/)", 135: "135° (\\)"}


@dataclass(eq=True)
class PhotonState:
    basis: Basis
    bit: int
    _measured: bool = field(default=False, compare=False, repr=False)

    @property
    def polarization(self) -> int:
        return POLARIZATION[(self.basis, self.bit)]

    @property
    def measured(self) -> bool:
        return self._measured


def encode(bit: int, basis: Basis) -> PhotonState:
    if bit not in (0, 1):
        raise ValueError(f"bit must be 0 or 1, got {bit!r}")
    return PhotonState(Basis(basis), int(bit))


def measure(photon: PhotonState, measurement_basis: Basis, rng: np.random.Generator) -> int:
    """Measure ``photon`` once; the state is destroyed afterwards."""
    if photon._measured:
        raise PhotonConsumedError("photon has already been measured")
    photon._measured = True
    if Basis(measurement_basis) == photon.basis:
        return photon.bit
    return int(rng.integers(0, 2))


def measure_arrays(
    bases: np.ndarray, bits: np.ndarray, measurement_bases: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Vectorized :func:`measure`: faithful on matching bases, fair coin otherwise."""
    coins = rng.integers(0, 2, size=len(bits), dtype=np.uint8)
    return np.where(bases == measurement_bases, bits, coins).astype(np.uint8)


@dataclass(frozen=True)
class ChannelConfig:
    flip_probability: float = 0.0
    loss_probability: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("flip_probability", "loss_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class TransmissionRecord:
    """What reached Bob.

    ``received_bases``, ``received_bits`` and ``flips`` are aligned with
    ``detected_indices``; ``flips`` marks photons whose matching-basis readout
    the channel noise inverts.
    """

    sent_count: int
    detected_indices: np.ndarray
    received_bases: np.ndarray
    received_bits: np.ndarray
    flips: np.ndarray
    tapped_indices: np.ndarray

    @property
    def received_photons(self) -> List[PhotonState]:
        return [
            PhotonState(Basis(int(b)), int(x))
            for b, x in zip(self.received_bases.tolist(), self.received_bits.tolist())
        ]


def transmit_arrays(
    bases: np.ndarray,
    bits: np.ndarray,
    config: ChannelConfig,
    adversary: "Optional[AdversaryStrategy]" = None,
    rng: Optional[np.random.Generator] = None,
) -> TransmissionRecord:
    """Send photons through the adversary tap, then loss, then flip marking."""
    from .adversary import NoAdversary, tap_arrays

    bases = np.asarray(bases, dtype=np.uint8)
    bits = np.asarray(bits, dtype=np.uint8)
    if bases.shape != bits.shape or bases.ndim != 1:
        raise ValueError("bases and bits must be equal-length 1-D arrays")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n = len(bits)

    bases, bits, tapped = tap_arrays(bases, bits, adversary or NoAdversary(), rng)
    kept = rng.random(n) >= config.loss_probability
    flips = rng.random(n) < config.flip_probability
    detected = np.flatnonzero(kept)
    return TransmissionRecord(
        sent_count=n,
        detected_indices=detected,
        received_bases=bases[detected],
        received_bits=bits[detected],
        flips=flips[detected].astype(np.uint8),
        tapped_indices=np.flatnonzero(tapped),
    )


def transmit(
    photons: Sequence[PhotonState],
    config: ChannelConfig,
    adversary: "Optional[AdversaryStrategy]" = None,
    rng: Optional[np.random.Generator] = None,
) -> TransmissionRecord:
    if not photons:
        raise ValueError("nothing to transmit")
    if any(p.measured for p in photons):
        raise PhotonConsumedError("cannot transmit a photon that was already measured")
    bases = np.fromiter((p.basis for p in photons), dtype=np.uint8, count=len(photons))
    bits = np.fromiter((p.bit for p in photons), dtype=np.uint8, count=len(photons))
    return transmit_arrays(bases, bits, config, adversary, rng)
