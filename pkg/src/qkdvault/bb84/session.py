"""BB84 session: raw exchange, sifting, QBER check, reconciliation, amplification."""
from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ..adversary import AdversaryStrategy, MitmImpersonate, NoAdversary
from ..bits import bits_to_bytes, to_str
from ..channel import Basis, ChannelConfig, TransmissionRecord, measure_arrays, transmit_arrays
from ..errors import InsufficientKeyError, ReconciliationError, SessionCorruptionError
from .amplify import privacy_amplify
from .auth import AuthSecret, AuthTag, poly_tag
from .cascade import error_correct
from .transcript import AuthenticationFailure, Message, Transcript

DEFAULT_SAMPLE_SIZE = 19
DEFAULT_QBER_THRESHOLD = 0.11
DEFAULT_SECURITY_MARGIN = 30


class Status(str, enum.Enum):
    ESTABLISHED = "Established"
    ABORTED_QBER = "AbortedQber"
    ABORTED_LENGTH = "AbortedLength"
    ABORTED_AUTH = "AbortedAuth"


@dataclass
class AliceState:
    bits: np.ndarray
    bases: np.ndarray

    def __post_init__(self):
        if len(self.bits) != len(self.bases) or len(self.bits) < 1:
            raise SessionCorruptionError("Alice needs equal, non-empty bit and basis lists")


@dataclass
class BobState:
    """Bob's bases and readouts; ``measurements`` holds -1 where nothing was detected."""

    bases: np.ndarray
    measurements: np.ndarray

    def __post_init__(self):
        if len(self.bases) != len(self.measurements):
            raise SessionCorruptionError("Bob's bases and measurements differ in length")

    @property
    def detected(self) -> np.ndarray:
        return self.measurements >= 0


@dataclass(frozen=True)
class SessionParams:
    photon_count: int
    sample_size: int = DEFAULT_SAMPLE_SIZE
    qber_threshold: float = DEFAULT_QBER_THRESHOLD
    security_margin: int = DEFAULT_SECURITY_MARGIN
    seed: int = 0

    def __post_init__(self):
        if self.photon_count < 1:
            raise ValueError("photon_count must be positive")
        if not 0.0 < self.qber_threshold < 1.0:
            raise ValueError("qber_threshold must lie in (0, 1)")
        if self.sample_size < 0 or self.security_margin < 0:
            raise ValueError("sample_size and security_margin must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class ScriptedDraws:
    """Fixed choices replacing the random draws of :func:`generate_raw`.

    ``coins`` gives Bob's outcome at each position where his basis differs
    from the arriving photon's; other entries are ignored.
    """

    alice_bits: Tuple[int, ...]
    alice_bases: Tuple[Basis, ...]
    bob_bases: Tuple[Basis, ...]
    coins: Tuple[int, ...]


_R, _D = Basis.RECTILINEAR, Basis.DIAGONAL
WORKED_EXAMPLE = ScriptedDraws(
    alice_bits=(0, 1, 1, 0, 0, 1, 0, 0),
    alice_bases=(_R, _D, _R, _D, _R, _D, _R, _D),
    bob_bases=(_D, _D, _R, _R, _R, _D, _D, _D),
    coins=(1, 0, 0, 1, 0, 0, 0, 0),
)


@dataclass
class QkdSessionResult:
    status: Status
    sifted_length: int
    estimated_qber: float
    disclosed_bits: int
    final_key: Optional[np.ndarray]
    transcript: Transcript
    sample_size: int = 0
    sample_errors: int = 0
    parity_leakage: int = 0
    bob_final_key: Optional[np.ndarray] = None
    kept_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    sample_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    key_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    detail: str = ""

    @property
    def established(self) -> bool:
        return self.status is Status.ESTABLISHED

    @property
    def final_length(self) -> int:
        return 0 if self.final_key is None else len(self.final_key)

    @property
    def session_id(self) -> str:
        return hashlib.sha256(self.transcript.to_ndjson().encode()).hexdigest()[:32]

    def summary(self) -> dict:
        return {
            "status": self.status.value,
            "sifted_length": self.sifted_length,
            "qber": self.estimated_qber,
            "final_length": self.final_length,
        }


def _streams(params: SessionParams, channel: ChannelConfig):
    ss = np.random.SeedSequence([params.seed, channel.seed])
    return [np.random.default_rng(s) for s in ss.spawn(6)]


def generate_raw(
    params: SessionParams,
    channel: ChannelConfig,
    adversary: AdversaryStrategy = NoAdversary(),
    *,
    script: Optional[ScriptedDraws] = None,
    rngs=None,
) -> Tuple[AliceState, BobState, TransmissionRecord]:
    alice_rng, bob_rng, chan_rng = (rngs or _streams(params, channel))[:3]
    if script is not None:
        n = len(script.alice_bits)
        a_bits = np.array(script.alice_bits, dtype=np.uint8)
        a_bases = np.array(script.alice_bases, dtype=np.uint8)
        b_bases = np.array(script.bob_bases, dtype=np.uint8)
    else:
        n = params.photon_count
        a_bits = alice_rng.integers(0, 2, size=n, dtype=np.uint8)
        a_bases = alice_rng.integers(0, 2, size=n, dtype=np.uint8)
        b_bases = bob_rng.integers(0, 2, size=n, dtype=np.uint8)

    record = transmit_arrays(a_bases, a_bits, channel, adversary, chan_rng)
    det = record.detected_indices
    if script is not None:
        coins = np.array(script.coins, dtype=np.uint8)[det]
        readout = np.where(record.received_bases == b_bases[det], record.received_bits, coins)
    else:
        readout = measure_arrays(record.received_bases, record.received_bits, b_bases[det], bob_rng)
    matching = record.received_bases == b_bases[det]
    readout = readout ^ (record.flips & matching)

    measurements = np.full(n, -1, dtype=np.int8)
    measurements[det] = readout
    return AliceState(a_bits, a_bases), BobState(b_bases, measurements), record


def sift(
    alice: AliceState, bob: BobState, record: TransmissionRecord, *, transcript: Optional[Transcript] = None
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Keep detected positions where both bases agree. Returns (alice, bob, kept_indices)."""
    n = len(alice.bits)
    if len(bob.bases) != n or record.sent_count != n:
        raise SessionCorruptionError("Alice, Bob and channel record disagree on photon count")
    det = record.detected_indices
    if not np.array_equal(np.flatnonzero(bob.detected), det):
        raise SessionCorruptionError("Bob's detections do not match the channel record")
    if transcript is not None:
        mask = np.zeros(n, dtype=np.uint8)
        mask[det] = 1
        transcript.exchange("bob", "detected", bits_to_bytes(mask))
        transcript.exchange("bob", "bob_bases", bits_to_bytes(bob.bases[det]))
        transcript.exchange("alice", "alice_bases", bits_to_bytes(alice.bases[det]))
    kept = det[alice.bases[det] == bob.bases[det]]
    return alice.bits[kept].copy(), bob.measurements[kept].astype(np.uint8), kept


def estimate_qber(
    alice_sifted: np.ndarray,
    bob_sifted: np.ndarray,
    sample_size: int,
    rng: np.random.Generator,
    *,
    transcript: Optional[Transcript] = None,
) -> Tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Disclose a random sample, return (qber, remaining_alice, remaining_bob, sample_indices).

    Sampled positions are dropped from both remaining strings.
    """
    n = len(alice_sifted)
    if len(bob_sifted) != n:
        raise SessionCorruptionError("sifted strings differ in length")
    if sample_size > n:
        raise InsufficientKeyError(f"cannot sample {sample_size} of {n} sifted bits")
    idx = np.sort(rng.choice(n, size=sample_size, replace=False)) if sample_size else np.zeros(0, np.int64)
    a, b = alice_sifted[idx], bob_sifted[idx]
    if transcript is not None:
        transcript.exchange("alice", "sample_indices", idx.astype(">u4").tobytes())
        transcript.exchange("bob", "sample_bits", bits_to_bytes(b))
        transcript.exchange("alice", "sample_bits", bits_to_bytes(a))
    errors = int(np.count_nonzero(a != b))
    qber = errors / sample_size if sample_size else 0.0
    keep = np.ones(n, dtype=bool)
    keep[idx] = False
    return qber, alice_sifted[keep], bob_sifted[keep], idx


class _Forger:
    """Active attacker replacing Bob's first classical message with a forgery.

    The content is relayed unchanged; only the tag is Eve's, computed with a
    secret she guessed. Unauthenticated channels accept it silently.
    """

    def __init__(self, rng: np.random.Generator):
        self.key = AuthSecret.generate(rng).key_bits
        self.done = False

    def __call__(self, msg: Message) -> Message:
        if self.done or msg.sender != "bob":
            return msg
        self.done = True
        tag = None
        if msg.tag is not None:
            tag = AuthTag(msg.tag.counter, poly_tag(msg.signed_bytes(), self.key, msg.tag.counter))
        return Message(msg.seq, msg.sender, msg.kind, msg.payload, tag)


def run_session(
    params: SessionParams,
    channel: ChannelConfig = ChannelConfig(),
    adversary: AdversaryStrategy = NoAdversary(),
    auth: Optional[AuthSecret] = None,
    *,
    script: Optional[ScriptedDraws] = None,
) -> QkdSessionResult:
    """Run one BB84 session end to end. Aborts come back as statuses, never exceptions.

    A :class:`MitmImpersonate` adversary with ``authenticated_channel`` set
    forces authentication on; if no secret is given one is drawn from the
    session seed.
    """
    rngs = _streams(params, channel)
    sample_rng, post_rng, eve_rng = rngs[3:]
    interceptor = None
    if isinstance(adversary, MitmImpersonate):
        if adversary.authenticated_channel and auth is None:
            auth = AuthSecret.generate(post_rng)
        interceptor = _Forger(eve_rng)
    transcript = Transcript(auth, interceptor)
    result = QkdSessionResult(Status.ABORTED_LENGTH, 0, 0.0, 0, None, transcript, params.sample_size)

    def abort(status: Status, detail: str) -> QkdSessionResult:
        result.status, result.detail = status, detail
        return result

    try:
        alice, bob, record = generate_raw(params, channel, adversary, script=script, rngs=rngs)
        transcript.exchange("alice", "session_start", struct.pack(">Q", len(alice.bits)))
        a_sift, b_sift, kept = sift(alice, bob, record, transcript=transcript)
        result.sifted_length = len(kept)
        result.kept_indices = kept
        if len(kept) == 0 or params.sample_size > len(kept):
            return abort(Status.ABORTED_LENGTH, f"sifted key of {len(kept)} bits is too short")

        qber, a_rem, b_rem, sample = estimate_qber(
            a_sift, b_sift, params.sample_size, sample_rng, transcript=transcript
        )
        keep = np.ones(len(kept), dtype=bool)
        keep[sample] = False
        result.sample_indices = kept[sample]
        result.key_indices = kept[keep]
        result.estimated_qber = qber
        result.sample_errors = int(round(qber * params.sample_size))
        result.disclosed_bits = params.sample_size
        if qber > params.qber_threshold:
            return abort(Status.ABORTED_QBER, f"estimated QBER {qber:.4f} exceeds {params.qber_threshold}")

        cascade_seed, pa_seed = (int(x) for x in post_rng.integers(0, 2**63, size=2))
        try:
            corrected, leakage = error_correct(a_rem, b_rem, qber, seed=cascade_seed, transcript=transcript)
        except ReconciliationError as exc:
            return abort(Status.ABORTED_QBER, str(exc))
        result.parity_leakage = leakage
        result.disclosed_bits = params.sample_size + leakage

        transcript.exchange("alice", "pa_seed", struct.pack(">Q", pa_seed))
        try:
            key = privacy_amplify(a_rem, leakage, params.security_margin, pa_seed)
        except InsufficientKeyError as exc:
            return abort(Status.ABORTED_LENGTH, str(exc))
        result.final_key = key
        result.bob_final_key = privacy_amplify(corrected, leakage, params.security_margin, pa_seed)
        result.status = Status.ESTABLISHED
        return result
    except AuthenticationFailure as exc:
        result.final_key = result.bob_final_key = None
        return abort(Status.ABORTED_AUTH, str(exc))


def describe_sift(kept: np.ndarray, alice_sifted: np.ndarray) -> str:
    return f"kept indices (1-based): {[int(i) + 1 for i in kept]}\nsifted key: {to_str(alice_sifted)}"
