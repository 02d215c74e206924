"""Pool of QKD key material with single-use, mark-before-release consumption.

Pool file layout (all integers big-endian)::

    b"QKDPOOL1" | version u8 | segment count u32
    per segment:  body length u32 | body | CRC-32(body) u32
    body:         segment id (16) | origin length u16 | origin (utf-8)
                  | bit count u64 | range count u32
                  | ranges: start u64, end u64, key id (16)
                  | packed key bits

Each consumed range records the key id it was issued under, so the pool
doubles as the decrypt ledger: :meth:`KeyPool.material` returns the bits of
an issued key.
"""
from __future__ import annotations

import json
import os
import secrets
import struct
import tempfile
import threading
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from .bits import as_bits, bits_to_bytes, unpack
from .errors import KeyExhaustedError, PoolCorruptError, QkdVaultError, WrongKeyError
from .qotp import KEY_ID_BYTES, OtpKey

MAGIC = b"QKDPOOL1"
VERSION = 1

PathLike = Union[str, os.PathLike]


class DepositRejectedError(QkdVaultError):
    """Only established sessions may feed the pool."""


@dataclass
class Segment:
    segment_id: bytes
    bits: np.ndarray
    origin: str
    # (start, end, key_id); FIFO consumption keeps these contiguous from 0
    consumed: List[Tuple[int, int, bytes]] = field(default_factory=list)

    @property
    def cursor(self) -> int:
        return self.consumed[-1][1] if self.consumed else 0

    @property
    def available(self) -> int:
        return len(self.bits) - self.cursor

    def encode(self) -> bytes:
        origin = self.origin.encode("utf-8")
        parts = [
            self.segment_id,
            struct.pack(">H", len(origin)),
            origin,
            struct.pack(">QI", len(self.bits), len(self.consumed)),
        ]
        for start, end, key_id in self.consumed:
            parts.append(struct.pack(">QQ", start, end) + key_id)
        parts.append(bits_to_bytes(self.bits))
        body = b"".join(parts)
        return struct.pack(">I", len(body)) + body + struct.pack(">I", zlib.crc32(body))

    @classmethod
    def decode(cls, body: bytes) -> "Segment":
        try:
            pos = 16
            seg_id = body[:pos]
            (olen,) = struct.unpack_from(">H", body, pos)
            pos += 2
            origin = body[pos : pos + olen].decode("utf-8")
            pos += olen
            nbits, nranges = struct.unpack_from(">QI", body, pos)
            pos += 12
            ranges = []
            for _ in range(nranges):
                start, end = struct.unpack_from(">QQ", body, pos)
                ranges.append((start, end, body[pos + 16 : pos + 16 + KEY_ID_BYTES]))
                pos += 16 + KEY_ID_BYTES
            packed = body[pos:]
            if len(packed) != (nbits + 7) // 8:
                raise PoolCorruptError("segment bit payload has the wrong length")
            return cls(seg_id, unpack(packed, nbits), origin, ranges)
        except (struct.error, UnicodeDecodeError, ValueError) as exc:
            raise PoolCorruptError(f"malformed segment: {exc}") from exc


class KeyPool:
    """Thread-safe FIFO pool of key segments.

    With a ``path`` every mutation is written to disk (atomically, via a
    temporary file) before the call returns, and consumed bits are marked
    durably before the key leaves :meth:`consume`. ``fault_hook`` is called
    with ``"after_mark"`` at that point; tests use it to simulate a crash.
    """

    def __init__(self, path: Optional[PathLike] = None, audit_path: Optional[PathLike] = None):
        self.path = Path(path) if path is not None else None
        if audit_path is None and self.path is not None:
            audit_path = self.path.with_name(self.path.name + ".audit.jsonl")
        self.audit_path = Path(audit_path) if audit_path is not None else None
        self.segments: List[Segment] = []
        self.audit: List[dict] = []
        self.fault_hook: Optional[Callable[[str], None]] = None
        self._issued: Dict[bytes, List[Tuple[int, int, int]]] = {}
        self._available = 0
        self._head = 0  # first segment that may still hold unconsumed bits
        self._lock = threading.RLock()

    # -- accounting ---------------------------------------------------------

    @property
    def total_available(self) -> int:
        with self._lock:
            return self._available

    @property
    def total_deposited(self) -> int:
        with self._lock:
            return sum(len(s.bits) for s in self.segments)

    @property
    def total_consumed(self) -> int:
        with self._lock:
            return sum(s.cursor for s in self.segments)

    # -- mutation -----------------------------------------------------------

    def deposit(self, session) -> str:
        from .bb84.session import Status

        if session.status is not Status.ESTABLISHED or session.final_key is None:
            raise DepositRejectedError(f"cannot deposit a session with status {session.status.value}")
        with self._lock:
            # replaying one session would put the same key material in twice
            if any(seg.origin == session.session_id for seg in self.segments):
                raise DepositRejectedError(f"session {session.session_id} was already deposited")
            return self.deposit_bits(session.final_key, origin=session.session_id)

    def deposit_bits(self, bits, origin: str = "") -> str:
        seg = Segment(secrets.token_bytes(16), as_bits(bits), origin)
        with self._lock:
            self.segments.append(seg)
            self._available += len(seg.bits)
            self._save()
            self._log("deposit", seg.segment_id, 0, len(seg.bits))
        return seg.segment_id.hex()

    def consume(self, length: int) -> OtpKey:
        if length < 0:
            raise ValueError("length must be non-negative")
        with self._lock:
            available = self.total_available
            if available < length:
                raise KeyExhaustedError(
                    f"pool holds {available} bits but {length} are needed; establish more keys"
                )
            key_id = secrets.token_bytes(KEY_ID_BYTES)
            pieces = []
            need = length
            for i in range(self._head, len(self.segments)):
                seg = self.segments[i]
                if need == 0:
                    break
                take = min(need, seg.available)
                if take == 0:
                    continue
                start = seg.cursor
                seg.consumed.append((start, start + take, key_id))
                pieces.append((i, start, start + take))
                need -= take
            self._issued[key_id] = pieces
            self._available -= length
            while self._head < len(self.segments) and self.segments[self._head].available == 0:
                self._head += 1
            self._save()
            for i, start, end in pieces:
                self._log("consume", self.segments[i].segment_id, start, end, key_id)
            if self.fault_hook is not None:
                self.fault_hook("after_mark")
            return OtpKey(key_id, self._gather(pieces))

    # -- decrypt ledger -----------------------------------------------------

    def material(self, key_id: bytes) -> OtpKey:
        """Bits previously issued under ``key_id``, for decryption only."""
        with self._lock:
            pieces = self._issued.get(bytes(key_id))
            if pieces is None:
                raise WrongKeyError(f"no key {bytes(key_id).hex()} was issued from this pool")
            return OtpKey(bytes(key_id), self._gather(pieces), used=True)

    def issued_key_ids(self) -> List[bytes]:
        with self._lock:
            return list(self._issued)

    def _gather(self, pieces) -> np.ndarray:
        if not pieces:
            return np.zeros(0, dtype=np.uint8)
        return np.concatenate([self.segments[i].bits[s:e] for i, s, e in pieces])

    # -- persistence --------------------------------------------------------

    def to_bytes(self) -> bytes:
        with self._lock:
            head = MAGIC + bytes([VERSION]) + struct.pack(">I", len(self.segments))
            return head + b"".join(s.encode() for s in self.segments)

    def persist(self, path: Optional[PathLike] = None) -> bytes:
        """Serialize the pool; also write it to ``path`` (or the pool's own path)."""
        data = self.to_bytes()
        target = Path(path) if path is not None else self.path
        if target is not None:
            _atomic_write(target, data)
        return data

    def _save(self) -> None:
        if self.path is not None:
            _atomic_write(self.path, self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes, **kwargs) -> "KeyPool":
        pool = cls(**kwargs)
        if len(data) < len(MAGIC) + 5 or not data.startswith(MAGIC):
            raise PoolCorruptError("missing QKDPOOL1 header")
        if data[len(MAGIC)] != VERSION:
            raise PoolCorruptError(f"unsupported pool version {data[len(MAGIC)]}")
        pos = len(MAGIC) + 1
        (count,) = struct.unpack_from(">I", data, pos)
        pos += 4
        for _ in range(count):
            if pos + 4 > len(data):
                raise PoolCorruptError("truncated pool file")
            (blen,) = struct.unpack_from(">I", data, pos)
            body = data[pos + 4 : pos + 4 + blen]
            crc = data[pos + 4 + blen : pos + 8 + blen]
            if len(body) != blen or len(crc) != 4:
                raise PoolCorruptError("truncated pool file")
            if zlib.crc32(body) != struct.unpack(">I", crc)[0]:
                raise PoolCorruptError("segment checksum mismatch")
            pool.segments.append(Segment.decode(body))
            pos += 8 + blen
        if pos != len(data):
            raise PoolCorruptError("trailing bytes after last segment")
        for i, seg in enumerate(pool.segments):
            for start, end, key_id in seg.consumed:
                pool._issued.setdefault(key_id, []).append((i, start, end))
        pool._available = sum(seg.available for seg in pool.segments)
        while pool._head < len(pool.segments) and pool.segments[pool._head].available == 0:
            pool._head += 1
        return pool

    @classmethod
    def load(cls, path: PathLike, audit_path: Optional[PathLike] = None) -> "KeyPool":
        path = Path(path)
        pool = cls.from_bytes(path.read_bytes(), path=path, audit_path=audit_path)
        if pool.audit_path is not None and pool.audit_path.exists():
            pool.audit = read_audit(pool.audit_path)
        return pool

    @classmethod
    def open(cls, path: PathLike) -> "KeyPool":
        """Load ``path`` if it exists, else start an empty pool backed by it."""
        path = Path(path)
        return cls.load(path) if path.exists() else cls(path)

    # -- audit --------------------------------------------------------------

    def _log(self, op: str, segment_id: bytes, start: int, end: int, key_id: Optional[bytes] = None):
        rec = {
            "ts": time.time(),
            "op": op,
            "segment_id": segment_id.hex(),
            "range": [start, end],
        }
        if key_id is not None:
            rec["key_id"] = key_id.hex()
        self.audit.append(rec)
        if self.audit_path is not None:
            with open(self.audit_path, "a", encoding="utf-8") as fp:
                fp.write(json.dumps(rec) + "\n")


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fp:
            fp.write(data)
            fp.flush()
            os.fsync(fp.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_audit(path: PathLike) -> List[dict]:
    with open(path, encoding="utf-8") as fp:
        return [json.loads(line) for line in fp if line.strip()]


@dataclass
class AuditReplay:
    deposited: int
    consumed: int
    overlaps: List[Tuple[str, Tuple[int, int], Tuple[int, int]]]
    out_of_bounds: List[Tuple[str, Tuple[int, int]]]

    @property
    def clean(self) -> bool:
        return not self.overlaps and not self.out_of_bounds


def replay_audit(records: Iterable[dict]) -> AuditReplay:
    """Rebuild consumption from an audit log and look for double issue."""
    sizes: Dict[str, int] = {}
    ranges: Dict[str, List[Tuple[int, int]]] = {}
    for rec in records:
        seg = rec["segment_id"]
        start, end = rec["range"]
        if rec["op"] == "deposit":
            sizes[seg] = end - start
            ranges.setdefault(seg, [])
        elif rec["op"] == "consume":
            ranges.setdefault(seg, []).append((start, end))
    overlaps, oob = [], []
    for seg, rs in ranges.items():
        rs = sorted(rs)
        for a, b in zip(rs, rs[1:]):
            if b[0] < a[1]:
                overlaps.append((seg, a, b))
        for r in rs:
            if r[0] < 0 or r[1] > sizes.get(seg, -1) or r[0] > r[1]:
                oob.append((seg, r))
    consumed = sum(e - s for rs in ranges.values() for s, e in rs)
    return AuditReplay(sum(sizes.values()), consumed, overlaps, oob)
