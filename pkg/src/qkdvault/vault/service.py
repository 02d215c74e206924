"""Cloud-side vault: accounts, QKD key establishment, OTP-encrypted blobs.

Each user shares a 256-bit :class:`AuthSecret` with the server, handed out
once at registration (the bootstrap trust assumption). Every key
establishment authenticates its classical messages with that secret, and the
resulting key lands in the user's :class:`KeyPool`. Blobs are encrypted with
fresh pool material; the pool keeps the issued bits so ``get`` can decrypt.
"""
from __future__ import annotations

import hashlib
import hmac
import re
import secrets
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .. import adversary as adv
from ..bb84.auth import AuthSecret
from ..bb84.session import DEFAULT_SAMPLE_SIZE, SessionParams, Status, run_session
from ..bits import bytes_to_bits, bits_to_bytes
from ..channel import ChannelConfig
from ..errors import KeyExhaustedError, QkdVaultError
from ..keystore import KeyPool
from ..qotp import CipherText, PlainText, decrypt, encrypt

PBKDF2_ITERATIONS = 10_000
SALT_BYTES = 16
TOKEN_TTL = 30 * 60
MIN_PASSWORD = 8
USERNAME_RE = re.compile(r"^[A-Za-z0-9_.-]{1,64}$")


class VaultError(QkdVaultError):
    code = "error"
    http_status = 500


class ValidationError(VaultError):
    code, http_status = "validation", 400


class ConflictError(VaultError):
    code, http_status = "conflict", 409


class AuthenticationFailed(VaultError):
    code, http_status = "authentication_failed", 401


class AuthorizationError(VaultError):
    code, http_status = "unauthorized", 401


class NotFoundError(VaultError):
    code, http_status = "not_found", 404


@dataclass
class UserRecord:
    username: str
    salt: bytes
    credential_digest: bytes
    auth_secret: AuthSecret
    created_at: float


@dataclass(frozen=True)
class SessionToken:
    token: str
    username: str
    expiry: float


@dataclass(frozen=True)
class VaultEntry:
    name: str
    ciphertext: CipherText
    owner: str
    stored_at: float


def credential_digest(password: str, salt: bytes, iterations: int = PBKDF2_ITERATIONS) -> bytes:
    return hashlib.pbkdf2_hmac("sha256", password.encode("utf-8"), salt, iterations)


class VaultService:
    def __init__(
        self,
        data_dir: Optional[str] = None,
        clock: Callable[[], float] = time.time,
        token_ttl: float = TOKEN_TTL,
    ):
        self.data_dir = Path(data_dir) if data_dir else None
        self.clock = clock
        self.token_ttl = token_ttl
        self.users: Dict[str, UserRecord] = {}
        self.tokens: Dict[str, SessionToken] = {}
        self.pools: Dict[str, KeyPool] = {}
        self.entries: Dict[Tuple[str, str], VaultEntry] = {}
        self._reserved: set = set()
        self._lock = threading.Lock()
        self._user_locks: Dict[str, threading.Lock] = {}
        self._seeds: Dict[str, set] = {}
        # stand-in digest so unknown users cost the same as wrong passwords
        self._dummy_salt = secrets.token_bytes(SALT_BYTES)

    # -- accounts -----------------------------------------------------------

    def register(self, username: str, password: str) -> dict:
        if not isinstance(username, str) or not USERNAME_RE.match(username):
            raise ValidationError("username must be 1-64 characters of [A-Za-z0-9_.-]")
        if not isinstance(password, str) or len(password.strip()) == 0:
            raise ValidationError("password must not be empty")
        if len(password) < MIN_PASSWORD:
            raise ValidationError(f"password must have at least {MIN_PASSWORD} characters")
        salt = secrets.token_bytes(SALT_BYTES)
        digest = credential_digest(password, salt)
        with self._lock:
            if username in self.users:
                raise ConflictError(f"username {username!r} is taken")
            record = UserRecord(username, salt, digest, AuthSecret.generate(), self.clock())
            self.users[username] = record
            self._user_locks[username] = threading.Lock()
            if self.data_dir is not None:
                self.pools[username] = KeyPool.open(self.data_dir / f"{username}.pool")
            else:
                self.pools[username] = KeyPool()
        return {
            "username": username,
            "auth_secret_hex": record.auth_secret.hex(),
            "created_at": record.created_at,
        }

    def login(self, username: str, password: str) -> SessionToken:
        record = self.users.get(username) if isinstance(username, str) else None
        salt = record.salt if record else self._dummy_salt
        digest = credential_digest(password if isinstance(password, str) else "", salt)
        if record is None or not hmac.compare_digest(digest, record.credential_digest):
            raise AuthenticationFailed("invalid username or password")
        token = SessionToken(secrets.token_hex(16), username, self.clock() + self.token_ttl)
        with self._lock:
            self.tokens[token.token] = token
        return token

    def authorize(self, token) -> str:
        tok = self.tokens.get(token) if isinstance(token, str) else None
        if tok is None:
            raise AuthorizationError("missing or unknown session token")
        if self.clock() >= tok.expiry:
            with self._lock:
                self.tokens.pop(tok.token, None)
            raise AuthorizationError("session token expired")
        return tok.username

    # -- key establishment --------------------------------------------------

    def establish_key(
        self,
        token: str,
        photon_count: int,
        flip: float = 0.0,
        loss: float = 0.0,
        adversary: str = "none",
        fraction: float = 1.0,
        seed: Optional[int] = None,
        sample_size: int = DEFAULT_SAMPLE_SIZE,
    ) -> dict:
        user = self.authorize(token)
        try:
            params = SessionParams(
                int(photon_count), sample_size=int(sample_size),
                seed=secrets.randbits(64) if seed is None else int(seed),
            )
            channel = ChannelConfig(float(flip), float(loss), seed=params.seed)
            strategy = adv.from_name(adversary, float(fraction))
        except (TypeError, ValueError) as exc:
            raise ValidationError(str(exc)) from exc
        record = self.users[user]
        with self._user_locks[user]:
            # a repeated seed would regenerate identical key material
            used = self._seeds.setdefault(user, set())
            if params.seed in used:
                raise ConflictError(f"seed {params.seed} was already used for this account")
            used.add(params.seed)
            result = run_session(params, channel, strategy, record.auth_secret)
            if result.status is Status.ESTABLISHED:
                self.pools[user].deposit(result)
        out = result.summary()
        out["session_id"] = result.session_id
        out["available_bits"] = self.pools[user].total_available
        return out

    def pool(self, token: str) -> KeyPool:
        return self.pools[self.authorize(token)]

    # -- blobs --------------------------------------------------------------

    def put_bits(self, token: str, name: str, bits) -> dict:
        user = self.authorize(token)
        if not isinstance(name, str) or not name or "/" in name:
            raise ValidationError("blob name must be a non-empty string without '/'")
        message = PlainText(bits)
        slot = (user, name)
        with self._lock:
            if slot in self.entries or slot in self._reserved:
                raise ConflictError(f"blob {name!r} already exists")
            self._reserved.add(slot)
        try:
            try:
                key = self.pools[user].consume(len(message))
            except KeyExhaustedError as exc:
                raise KeyExhaustedError(f"{exc}; call establish_key (POST /qkd/session) first") from exc
            entry = VaultEntry(name, encrypt(message, key), user, self.clock())
            with self._lock:
                self.entries[slot] = entry
        finally:
            with self._lock:
                self._reserved.discard(slot)
        return {"name": name, "key_id": entry.ciphertext.key_id.hex(), "length": len(message)}

    def put_blob(self, token: str, name: str, payload: bytes) -> dict:
        out = self.put_bits(token, name, bytes_to_bits(payload))
        out["length"] = len(payload)
        return out

    def get_bits(self, token: str, name: str) -> np.ndarray:
        user = self.authorize(token)
        entry = self.entries.get((user, name))
        if entry is None:
            raise NotFoundError(f"no blob named {name!r}")
        key = self.pools[user].material(entry.ciphertext.key_id)
        return decrypt(entry.ciphertext, key).bits

    def get_blob(self, token: str, name: str) -> bytes:
        return bits_to_bytes(self.get_bits(token, name))
