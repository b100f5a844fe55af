"""The networked simulator backend.

Jobs arrive over TCP (see :mod:`qoffload.protocol`), wait in a FIFO queue and
are executed one at a time by a single worker thread. Connection handlers only
touch the job table under its lock and never wait for a job to run.
"""

from __future__ import annotations

import argparse
import collections
import hashlib
import logging
import socketserver
import threading
import time
from dataclasses import dataclass, field
from typing import Any

from .errors import (
    BackendError,
    JobFailed,
    MalformedRequest,
    NotCompleted,
    PayloadTooLarge,
    ShotsOutOfRange,
    UnknownJob,
)
from .protocol import DEFAULT_PORT, MAX_LINE_BYTES, decode, encode, error_message
from .qasm import parse
from .simulator import DEFAULT_MAX_QUBITS, Counts, sample_counts
from .transpiler import DEFAULT_GATESET, GateSet, transpile

log = logging.getLogger(__name__)

DEFAULT_MAX_SHOTS = 10_000_000


@dataclass
class JobRecord:
    id: int
    shots: int
    qasm: str
    seed: int | None = None
    status: str = "queued"
    counts: Counts | None = None
    error_message: str | None = None
    submitted_at: float = field(default_factory=time.monotonic)
    started_at: float | None = None
    finished_at: float | None = None


@dataclass
class BackendConfig:
    max_qubits: int = DEFAULT_MAX_QUBITS
    max_shots: int = DEFAULT_MAX_SHOTS
    transpile: bool = False
    gateset: GateSet = DEFAULT_GATESET
    inject_latency_ms: float = 0.0
    seed: int | None = None
    result_ttl: float | None = None


def derive_seed(server_seed: int, shots: int, qasm: str) -> int:
    digest = hashlib.sha256(f"{server_seed}\x00{shots}\x00{qasm}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


class JobQueue:
    """Job table plus FIFO of pending ids."""

    def __init__(self, config: BackendConfig | None = None):
        self.config = config or BackendConfig()
        self.records: dict[int, JobRecord] = {}
        self.pending: collections.deque[int] = collections.deque()
        self._next_id = 1
        self._cond = threading.Condition()

    def handle_submit(self, shots: Any, qasm: Any, seed: Any = None) -> int:
        if isinstance(shots, bool) or not isinstance(shots, int):
            raise MalformedRequest("'shots' must be an integer")
        if not isinstance(qasm, str) or not qasm.strip():
            raise MalformedRequest("'qasm' must be a non-empty string")
        if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
            raise MalformedRequest("'seed' must be a non-negative integer")
        if not 1 <= shots <= self.config.max_shots:
            raise ShotsOutOfRange(f"shots must be in [1, {self.config.max_shots}], got {shots}")
        if seed is None and self.config.seed is not None:
            seed = derive_seed(self.config.seed, shots, qasm)
        with self._cond:
            job_id = self._next_id
            self._next_id += 1
            self.records[job_id] = JobRecord(job_id, shots, qasm, seed)
            self.pending.append(job_id)
            self._cond.notify_all()
        return job_id

    def _lookup(self, job_id: Any) -> JobRecord:
        if isinstance(job_id, bool) or not isinstance(job_id, int):
            raise MalformedRequest("'id' must be an integer")
        self._evict_expired()
        rec = self.records.get(job_id)
        if rec is None:
            raise UnknownJob(f"unknown job id {job_id}")
        return rec

    def _evict_expired(self) -> None:
        ttl = self.config.result_ttl
        if ttl is None:
            return
        now = time.monotonic()
        stale = [
            jid
            for jid, rec in self.records.items()
            if rec.finished_at is not None and now - rec.finished_at > ttl
        ]
        for jid in stale:
            del self.records[jid]

    def handle_status(self, job_id: Any) -> str:
        with self._cond:
            return self._lookup(job_id).status

    def handle_result(self, job_id: Any) -> Counts:
        with self._cond:
            rec = self._lookup(job_id)
            if rec.status == "completed":
                return dict(rec.counts)
            if rec.status == "failed":
                raise JobFailed(rec.error_message or "job failed")
            raise NotCompleted(f"job {job_id} is {rec.status}")

    def wait_for_job(self, timeout: float | None = None) -> bool:
        with self._cond:
            return self._cond.wait_for(lambda: bool(self.pending), timeout)

    def process_next_job(self) -> JobRecord | None:
        """Run the head of the queue to completion (or failure)."""
        with self._cond:
            if not self.pending:
                return None
            rec = self.records[self.pending.popleft()]
            rec.status = "running"
            rec.started_at = time.monotonic()
        cfg = self.config
        try:
            if cfg.inject_latency_ms > 0:
                time.sleep(cfg.inject_latency_ms / 1000.0)
            circuit = parse(rec.qasm)
            if cfg.transpile:
                circuit = transpile(circuit, cfg.gateset)
            counts = sample_counts(circuit, rec.shots, rec.seed, max_qubits=cfg.max_qubits)
        except Exception as exc:  # every execution error becomes a failed job
            with self._cond:
                rec.error_message = f"{type(exc).__name__}: {exc}"
                rec.finished_at = time.monotonic()
                rec.status = "failed"
            log.info("job %d failed: %s", rec.id, rec.error_message)
            return rec
        with self._cond:
            rec.counts = counts
            rec.finished_at = time.monotonic()
            rec.status = "completed"
        log.debug("job %d completed", rec.id)
        return rec

    def dispatch(self, request: dict[str, Any]) -> dict[str, Any]:
        kind = request.get("type")
        if kind == "submit":
            job_id = self.handle_submit(request.get("shots"), request.get("qasm"), request.get("seed"))
            return {"type": "job_id", "id": job_id}
        if kind == "status":
            job_id = request.get("id")
            return {"type": "status", "id": job_id, "status": self.handle_status(job_id)}
        if kind == "result":
            job_id = request.get("id")
            return {"type": "result", "id": job_id, "counts": self.handle_result(job_id)}
        raise MalformedRequest(f"unknown request type {kind!r}")


class _Handler(socketserver.StreamRequestHandler):
    server: "_TCPServer"

    def handle(self) -> None:
        backend = self.server.backend
        while True:
            try:
                line = self.rfile.readline(MAX_LINE_BYTES + 1)
            except OSError:
                return
            if not line:
                return
            if len(line) > MAX_LINE_BYTES and not line.endswith(b"\n"):
                if not self._drain():
                    return
                response = error_message(
                    PayloadTooLarge.code, f"request exceeds {MAX_LINE_BYTES} bytes"
                )
            elif not line.strip():
                continue
            else:
                response = backend.respond(line)
            try:
                self.wfile.write(encode(response))
                self.wfile.flush()
            except OSError:
                return

    def _drain(self) -> bool:
        """Skip to the end of an oversized line. False if the peer went away."""
        while True:
            try:
                chunk = self.rfile.readline(MAX_LINE_BYTES)
            except OSError:
                return False
            if not chunk:
                return False
            if chunk.endswith(b"\n"):
                return True


class _TCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True
    backend: "BackendServer"


class BackendServer:
    """TCP front end plus the single execution worker.

    ``port=0`` binds an ephemeral port; read it back from :attr:`address`.
    """

    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = DEFAULT_PORT,
        config: BackendConfig | None = None,
        record_requests: bool = False,
    ):
        self.queue = JobQueue(config)
        self._tcp = _TCPServer((host, port), _Handler)
        self._tcp.backend = self
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self.record_requests = record_requests
        self.request_log: list[tuple[float, str, Any]] = []
        self._log_lock = threading.Lock()

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._tcp.server_address[:2]
        return host, port

    @property
    def address_text(self) -> str:
        host, port = self.address
        return f"{host}:{port}"

    def respond(self, line: bytes) -> dict[str, Any]:
        try:
            request = decode(line)
        except (ValueError, UnicodeDecodeError) as exc:
            return error_message(MalformedRequest.code, f"invalid JSON line: {exc}")
        try:
            response = self.queue.dispatch(request)
        except BackendError as exc:
            return error_message(exc.code, exc.message)
        if self.record_requests:
            with self._log_lock:
                self.request_log.append((time.monotonic(), request.get("type"), response.get("id")))
        return response

    def _worker(self) -> None:
        while not self._stop.is_set():
            if self.queue.wait_for_job(timeout=0.05):
                self.queue.process_next_job()

    def start(self) -> "BackendServer":
        for target in (self._tcp.serve_forever, self._worker):
            t = threading.Thread(target=target, daemon=True, name=f"qoffload-backend-{target.__name__}")
            t.start()
            self._threads.append(t)
        return self

    def serve_forever(self) -> None:
        worker = threading.Thread(target=self._worker, daemon=True, name="qoffload-backend-worker")
        worker.start()
        self._threads.append(worker)
        try:
            self._tcp.serve_forever()
        finally:
            self.shutdown()

    def shutdown(self) -> None:
        self._stop.set()
        self._tcp.shutdown()
        self._tcp.server_close()
        for t in self._threads:
            if t is not threading.current_thread():
                t.join(timeout=5)

    def __enter__(self) -> "BackendServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.shutdown()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qoffload-backend", description="Simulated QPU job server.")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=DEFAULT_PORT)
    p.add_argument("--max-qubits", type=int, default=DEFAULT_MAX_QUBITS)
    p.add_argument("--max-shots", type=int, default=DEFAULT_MAX_SHOTS)
    p.add_argument("--transpile", action="store_true", help="lower each job to the native gate set")
    p.add_argument("--gateset", default="rz,sx,cx")
    p.add_argument("--inject-latency-ms", type=float, default=0.0,
                   help="extra execution time per job, emulating device time")
    p.add_argument("--seed", type=int, default=None,
                   help="derive per-job seeds from this value and the job content")
    p.add_argument("--result-ttl", type=float, default=None,
                   help="evict finished jobs after this many seconds")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    config = BackendConfig(
        max_qubits=args.max_qubits,
        max_shots=args.max_shots,
        transpile=args.transpile,
        gateset=GateSet.parse(args.gateset),
        inject_latency_ms=args.inject_latency_ms,
        seed=args.seed,
        result_ttl=args.result_ttl,
    )
    server = BackendServer(args.host, args.port, config)
    log.info("qoffload backend listening on %s", server.address_text)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
