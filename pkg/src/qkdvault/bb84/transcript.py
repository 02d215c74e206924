"""Public classical-channel log of a BB84 session."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import IO, Iterable, List, Optional

from .auth import AuthSecret, AuthTag, authenticate_message, verify_message


class AuthenticationFailure(Exception):
    """A classical message failed tag verification."""

    def __init__(self, message: "Message"):
        super().__init__(f"message {message.seq} ({message.kind}) failed authentication")
        self.message = message


@dataclass(frozen=True)
class Message:
    seq: int
    sender: str
    kind: str
    payload: bytes
    tag: Optional[AuthTag] = None

    def signed_bytes(self) -> bytes:
        return b"%d|%s|%s|" % (self.seq, self.sender.encode(), self.kind.encode()) + self.payload

    def to_record(self) -> dict:
        rec = {
            "seq": self.seq,
            "sender": self.sender,
            "kind": self.kind,
            "payload_hex": self.payload.hex(),
            "tag_hex": self.tag.hex() if self.tag else None,
        }
        if self.tag is not None:
            rec["counter"] = self.tag.counter
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Message":
        tag = None
        if rec.get("tag_hex"):
            tag = AuthTag(int(rec["counter"]), bytes.fromhex(rec["tag_hex"]))
        return cls(int(rec["seq"]), rec["sender"], rec["kind"], bytes.fromhex(rec["payload_hex"]), tag)


class Transcript:
    """Ordered classical messages. Tags are attached when ``auth`` is set.

    ``interceptor`` may replace a message between sender and receiver; it
    models an active attacker on the classical channel.
    """

    def __init__(self, auth: Optional[AuthSecret] = None, interceptor=None):
        self.auth = auth
        self.interceptor = interceptor
        self.messages: List[Message] = []

    def __len__(self):
        return len(self.messages)

    def __iter__(self):
        return iter(self.messages)

    def exchange(self, sender: str, kind: str, payload: bytes) -> Message:
        """Send a message and have the receiver accept it.

        Raises :class:`AuthenticationFailure` when the delivered message does
        not verify under the shared secret.
        """
        msg = Message(len(self.messages), sender, kind, bytes(payload))
        if self.auth is not None:
            msg = replace(msg, tag=authenticate_message(msg.signed_bytes(), self.auth))
        if self.interceptor is not None:
            msg = self.interceptor(msg)
        self.messages.append(msg)
        if self.auth is not None and not verify_message(msg.signed_bytes(), msg.tag, self.auth):
            raise AuthenticationFailure(msg)
        return msg

    def to_ndjson(self) -> str:
        return "".join(json.dumps(m.to_record(), sort_keys=True) + "\n" for m in self.messages)

    def write(self, fp: IO[str]) -> None:
        fp.write(self.to_ndjson())


def read_ndjson(lines: Iterable[str]) -> List[Message]:
    return [Message.from_record(json.loads(line)) for line in lines if line.strip()]
