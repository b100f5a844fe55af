"""Newline-delimited JSON job protocol and a blocking client.

Every request and response is one UTF-8 JSON object followed by ``\\n``.
Requests::

    {"type": "submit", "shots": N, "qasm": S[, "seed": K]}
    {"type": "status", "id": I}
    {"type": "result", "id": I}

Responses::

    {"type": "job_id", "id": I}
    {"type": "status", "id": I, "status": "queued|running|completed|failed"}
    {"type": "result", "id": I, "counts": {bitstring: count, ...}}
    {"type": "error", "code": CODE, "message": M}
"""

from __future__ import annotations

import json
import logging
import socket
import threading
import time
from typing import Any

from .errors import BACKEND_ERRORS, BackendError, BackendUnreachable

log = logging.getLogger(__name__)

MAX_LINE_BYTES = 16 * 1024 * 1024
DEFAULT_PORT = 9000
STATUSES = ("queued", "running", "completed", "failed")


def encode(message: dict[str, Any]) -> bytes:
    # json.dumps escapes control characters, so the only LF is the terminator
    return (json.dumps(message, ensure_ascii=False, separators=(",", ":")) + "\n").encode("utf-8")


def decode(line: bytes) -> dict[str, Any]:
    obj = json.loads(line.decode("utf-8"))
    if not isinstance(obj, dict):
        raise ValueError("message must be a JSON object")
    return obj


def error_message(code: str, message: str) -> dict[str, Any]:
    return {"type": "error", "code": code, "message": message}


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.strip().rpartition(":")
    if not sep:
        return text.strip(), DEFAULT_PORT
    return host or "127.0.0.1", int(port)


def parse_addresses(text: str) -> list[tuple[str, int]]:
    return [parse_address(part) for part in text.split(",") if part.strip()]


class BackendClient:
    """One reusable connection to a backend.

    Thread-safe: concurrent callers are serialized so each request is paired
    with its own response line. Connection failures are retried with
    exponential backoff and then reported as :class:`BackendUnreachable`.
    """

    def __init__(
        self,
        host: str,
        port: int,
        *,
        timeout: float = 30.0,
        retries: int = 5,
        backoff: float = 0.1,
    ):
        self.host = host
        self.port = port
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._sock: socket.socket | None = None
        self._reader = None
        self._lock = threading.Lock()
        self.requests_sent = 0

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    def _connect(self) -> None:
        sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        self._reader = sock.makefile("rb")

    def close(self) -> None:
        with self._lock:
            self._drop()

    def _drop(self) -> None:
        for obj in (self._reader, self._sock):
            if obj is not None:
                try:
                    obj.close()
                except OSError:
                    pass
        self._sock = None
        self._reader = None

    def __enter__(self) -> "BackendClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def request(self, message: dict[str, Any]) -> dict[str, Any]:
        payload = encode(message)
        last_error: Exception | None = None
        with self._lock:
            for attempt in range(self.retries + 1):
                if attempt:
                    time.sleep(self.backoff * 2 ** (attempt - 1))
                try:
                    if self._sock is None:
                        self._connect()
                    self._sock.sendall(payload)
                    self.requests_sent += 1
                    line = self._reader.readline(MAX_LINE_BYTES + 1)
                    if not line:
                        raise ConnectionError("backend closed the connection")
                    response = decode(line)
                    break
                except (OSError, ValueError) as exc:
                    # a resent submit after a drop may create a duplicate job
                    last_error = exc
                    log.debug("request to %s failed (attempt %d): %s", self.address, attempt + 1, exc)
                    self._drop()
            else:
                raise BackendUnreachable(
                    f"backend {self.address} unreachable after {self.retries + 1} attempts: {last_error}"
                ) from last_error
        if response.get("type") == "error":
            cls = BACKEND_ERRORS.get(response.get("code"), BackendError)
            raise cls(str(response.get("message", "")))
        return response

    def submit(self, shots: int, qasm: str, seed: int | None = None) -> int:
        msg: dict[str, Any] = {"type": "submit", "shots": shots, "qasm": qasm}
        if seed is not None:
            msg["seed"] = seed
        return int(self.request(msg)["id"])

    def status(self, job_id: int) -> str:
        return str(self.request({"type": "status", "id": job_id})["status"])

    def result(self, job_id: int) -> dict[str, int]:
        counts = self.request({"type": "result", "id": job_id})["counts"]
        return {str(k): int(v) for k, v in counts.items()}
