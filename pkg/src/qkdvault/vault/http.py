"""JSON-over-HTTP front end for :class:`VaultService`.

Routes::

    GET  /health
    POST /register      {username, password}              -> 201 {auth_secret_hex}
    POST /login         {username, password}              -> 200 {token, expires_at}
    POST /qkd/session   {photon_count, flip, loss, adversary, fraction, seed?, sample_size?}
                                                          -> 200 {status, sifted_length, qber, final_length}
    PUT  /vault/{name}  raw bytes                         -> 201 {key_id, length}
    GET  /vault/{name}                                    -> 200 raw bytes

Authenticated routes take ``Authorization: Bearer <token>``. Every response
carries an ``X-Request-Id`` header; JSON bodies repeat it as ``request_id``.
Errors are ``{code, message, request_id}``.
"""
from __future__ import annotations

import json
import logging
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional
from urllib.parse import unquote

from ..errors import KeyExhaustedError
from .service import ValidationError, VaultError, VaultService

log = logging.getLogger(__name__)

MAX_BODY = 64 * 1024 * 1024


class _Handler(BaseHTTPRequestHandler):
    server: "VaultHTTPServer"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.debug("%s - %s", self.address_string(), fmt % args)

    # -- plumbing -----------------------------------------------------------

    def _send(self, status: int, body: bytes, content_type: str):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("X-Request-Id", self.request_id)
        self.end_headers()
        self.wfile.write(body)

    def _json(self, status: int, obj: dict):
        obj = dict(obj, request_id=self.request_id)
        self._send(status, json.dumps(obj).encode(), "application/json")

    def _error(self, status: int, code: str, message: str):
        # the request body may be unread; do not reuse the connection
        self.close_connection = True
        self._json(status, {"code": code, "message": message})

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_BODY:
            raise ValidationError(f"body exceeds {MAX_BODY} bytes")
        return self.rfile.read(length) if length else b""

    def _json_body(self) -> dict:
        try:
            obj = json.loads(self._body() or b"{}")
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ValidationError("JSON body must be an object")
        return obj

    def _token(self) -> Optional[str]:
        auth = self.headers.get("Authorization", "")
        return auth[7:].strip() if auth.startswith("Bearer ") else None

    def _dispatch(self, method: str):
        self.request_id = uuid.uuid4().hex
        svc = self.server.service
        path = self.path.split("?", 1)[0]
        try:
            if method == "GET" and path == "/health":
                return self._json(200, {"status": "ok"})
            if method == "POST" and path == "/register":
                body = self._json_body()
                out = svc.register(body.get("username"), body.get("password"))
                return self._json(201, out)
            if method == "POST" and path == "/login":
                body = self._json_body()
                tok = svc.login(body.get("username"), body.get("password"))
                return self._json(200, {"token": tok.token, "expires_at": tok.expiry})
            if method == "POST" and path == "/qkd/session":
                body = self._json_body()
                out = svc.establish_key(
                    self._token(),
                    body.get("photon_count", 0),
                    flip=body.get("flip", 0.0),
                    loss=body.get("loss", 0.0),
                    adversary=body.get("adversary", "none"),
                    fraction=body.get("fraction", 1.0),
                    seed=body.get("seed"),
                    sample_size=body.get("sample_size", 19),
                )
                return self._json(200, out)
            if path.startswith("/vault/") and method in ("PUT", "GET"):
                name = unquote(path[len("/vault/") :])
                if method == "PUT":
                    data = self._body()
                    out = svc.put_blob(self._token(), name, data)
                    return self._json(201, out)
                return self._send(200, svc.get_blob(self._token(), name), "application/octet-stream")
            return self._error(404, "not_found", f"no route for {method} {path}")
        except KeyExhaustedError as exc:
            return self._error(507, "key_exhausted", str(exc))
        except VaultError as exc:
            return self._error(exc.http_status, exc.code, str(exc))
        except Exception as exc:  # pragma: no cover - last-resort guard
            log.exception("request failed")
            return self._error(500, "internal", str(exc))

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_PUT(self):
        self._dispatch("PUT")


class VaultHTTPServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, service: VaultService):
        self.service = service
        super().__init__(address, _Handler)


def make_server(service: VaultService, host: str = "127.0.0.1", port: int = 8084) -> VaultHTTPServer:
    """Bind a server; raises ``OSError`` if the port is taken."""
    return VaultHTTPServer((host, port), service)
