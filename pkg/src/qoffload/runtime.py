"""Dataflow task runtime with asynchronous QPU offloading.

Tasks declare how they access named handles (``in``, ``out``, ``inout`` or
``accumulate``). Edges are derived in creation order:

* a reader depends on the last writer of the handle;
* a writer depends on the last writer and on every reader since then;
* ``accumulate`` tasks on the same handle form a group: they share the
  predecessors of the first member, are mutually exclusive but unordered
  among themselves, and the next reader or writer depends on all of them.

Host tasks run on a fixed worker pool. A QPU task occupies a worker only
while its kernel is prepared and submitted; afterwards a single poller tracks
the backend job and writes the counts into the result handle, releasing the
task's successors in the same polling tick.
"""

from __future__ import annotations

import enum
import itertools
import logging
import os
import queue
import threading
import time
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import (
    BackendUnreachable,
    KernelFileNotFound,
    QOffloadError,
    TaskFailed,
    UnknownHandle,
)
from .protocol import BackendClient, parse_addresses
from .qasm import append_extension, substitute_params

log = logging.getLogger(__name__)


class Mode(str, enum.Enum):
    IN = "in"
    OUT = "out"
    INOUT = "inout"
    ACCUMULATE = "accumulate"


class Handle:
    """A named data cell managed by a :class:`Runtime`."""

    def __init__(self, hid: int, name: str, value: Any = None):
        self.id = hid
        self.name = name
        self.value = value
        self.lock = threading.Lock()

    def __repr__(self) -> str:
        return f"Handle({self.name!r}, value={self.value!r})"


@dataclass
class QpuTaskSpec:
    kernel_name: str
    shots: int
    result_handle: Handle
    params: Sequence[float] | Handle | None = None
    extension: str | None = None
    n_qubits: int | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if not self.kernel_name and not self.extension:
            raise ValueError("an empty kernel name requires a non-empty extension")
        if self.kernel_name and not _valid_stem(self.kernel_name):
            raise ValueError(f"invalid kernel name {self.kernel_name!r}")


def _valid_stem(name: str) -> bool:
    return all(c.isalnum() or c in "_-." for c in name) and not name.startswith(".")


Access = tuple[Handle, Mode]


@dataclass
class TaskNode:
    id: int
    kind: str
    accesses: tuple[Access, ...]
    payload: Any
    label: str
    state: str = "created"
    preds: set[int] = field(default_factory=set)
    succs: list[int] = field(default_factory=list)
    unreleased: int = 0
    error: BaseException | None = None
    poisoned: bool = False
    job: tuple[int, int] | None = None
    start_seq: int | None = None
    end_seq: int | None = None
    started_at: float | None = None
    finished_at: float | None = None

    @property
    def done(self) -> bool:
        return self.state in ("finished", "failed")


@dataclass
class _HandleDeps:
    writers: list[int] = field(default_factory=list)
    readers: list[int] = field(default_factory=list)
    acc_open: bool = False
    acc_preds: list[int] = field(default_factory=list)


class DepGraph:
    """Task DAG built online from declared accesses. Not thread-safe by
    itself; :class:`Runtime` guards it with its lock."""

    def __init__(self):
        self.nodes: dict[int, TaskNode] = {}
        self._deps: dict[int, _HandleDeps] = {}
        self._ids = itertools.count(1)

    def add_task(self, kind: str, accesses: Iterable[Access], payload: Any = None, label: str = "") -> TaskNode:
        node = TaskNode(next(self._ids), kind, tuple(accesses), payload, label)
        preds: set[int] = set()
        for handle, mode in node.accesses:
            deps = self._deps.setdefault(handle.id, _HandleDeps())
            if mode is Mode.IN:
                preds.update(deps.writers)
                deps.readers.append(node.id)
                deps.acc_open = False
            elif mode is Mode.ACCUMULATE:
                if not deps.acc_open:
                    deps.acc_preds = deps.writers + deps.readers
                    deps.writers, deps.readers = [], []
                    deps.acc_open = True
                preds.update(deps.acc_preds)
                deps.writers.append(node.id)
            else:
                preds.update(deps.writers)
                preds.update(deps.readers)
                deps.writers, deps.readers = [node.id], []
                deps.acc_open = False
        preds.discard(node.id)
        node.preds = preds
        for p in preds:
            pred = self.nodes[p]
            pred.succs.append(node.id)
            if not pred.done:
                node.unreleased += 1
        self.nodes[node.id] = node
        return node

    def edges(self) -> set[tuple[int, int]]:
        return {(p, n.id) for n in self.nodes.values() for p in n.preds}

    def compute_ready(self) -> set[int]:
        """Created tasks whose predecessor edges have all been released."""
        return {
            n.id
            for n in self.nodes.values()
            if n.state in ("created", "ready") and n.unreleased == 0
        }

    def release(self, task_id: int) -> list[TaskNode]:
        """Mark *task_id* finished and return successors that became ready."""
        node = self.nodes[task_id]
        node.state = "finished"
        ready = []
        for s in node.succs:
            succ = self.nodes[s]
            succ.unreleased -= 1
            if succ.unreleased == 0 and succ.state == "created":
                succ.state = "ready"
                ready.append(succ)
        return ready

    def poison(self, task_id: int, error: BaseException) -> list[TaskNode]:
        """Fail *task_id* and transitively every successor not yet done."""
        failed = []
        stack = [(task_id, error, False)]
        while stack:
            tid, err, poisoned = stack.pop()
            node = self.nodes[tid]
            if node.done:
                continue
            node.state = "failed"
            node.error = err
            node.poisoned = poisoned
            failed.append(node)
            for s in node.succs:
                cause = QOffloadError(f"predecessor task {tid} ({node.label}) failed")
                stack.append((s, cause, True))
        return failed

    def is_acyclic(self) -> bool:
        return all(p < n.id for n in self.nodes.values() for p in n.preds)


def _normalize_accesses(
    accesses: Iterable[tuple[Handle, Mode | str]] | None,
    ins: Iterable[Handle],
    outs: Iterable[Handle],
    inouts: Iterable[Handle],
    accumulates: Iterable[Handle],
) -> list[Access]:
    result: list[Access] = []
    for handle, mode in accesses or ():
        result.append((handle, Mode(mode)))
    result.extend((h, Mode.IN) for h in ins)
    result.extend((h, Mode.OUT) for h in outs)
    result.extend((h, Mode.INOUT) for h in inouts)
    result.extend((h, Mode.ACCUMULATE) for h in accumulates)
    return result


_STOP = object()


class Runtime:
    """Host worker pool, dependency tracking and QPU offloading."""

    def __init__(
        self,
        workers: int = 4,
        backends: Sequence[tuple[str, int]] | str | None = None,
        qasm_dir: str | os.PathLike | None = None,
        poll_interval: float = 0.01,
        cache_kernels: bool = False,
        retries: int = 5,
        backoff: float = 0.1,
    ):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        if isinstance(backends, str):
            backends = parse_addresses(backends)
        self.backends = list(backends or [])
        self.qasm_dir = Path(qasm_dir) if qasm_dir is not None else Path.cwd() / "qasm"
        self.poll_interval = poll_interval
        self.cache_kernels = cache_kernels
        self.retries = retries
        self.backoff = backoff

        self.graph = DepGraph()
        self._lock = threading.RLock()
        self._idle = threading.Condition(self._lock)
        self._handles: dict[int, Handle] = {}
        self._hid = itertools.count(1)
        self._seq = itertools.count()
        self._unfinished = 0
        self._failures: list[TaskNode] = []
        self._ready: queue.Queue = queue.Queue()
        self._kernel_cache: dict[str, str] = {}
        self._rr = itertools.count()

        self._submit_clients = [self._client(a) for a in self.backends]
        self._poll_clients = [self._client(a) for a in self.backends]
        self._outstanding: dict[tuple[int, int], int] = {}
        self._wake_poller = threading.Event()
        self._closing = threading.Event()
        self.poll_ticks = 0

        self._workers = [
            threading.Thread(target=self._worker_loop, name=f"qoffload-worker-{i}", daemon=True)
            for i in range(workers)
        ]
        for t in self._workers:
            t.start()
        self._poller = threading.Thread(target=self._poll_loop, name="qoffload-poller", daemon=True)
        self._poller.start()

    @classmethod
    def from_env(cls, **overrides) -> "Runtime":
        """Configure from ``QOFFLOAD_BACKEND``, ``QOFFLOAD_QASM_DIR`` and ``QOFFLOAD_POLL_MS``."""
        kwargs: dict[str, Any] = {}
        if os.environ.get("QOFFLOAD_BACKEND"):
            kwargs["backends"] = parse_addresses(os.environ["QOFFLOAD_BACKEND"])
        if os.environ.get("QOFFLOAD_QASM_DIR"):
            kwargs["qasm_dir"] = os.environ["QOFFLOAD_QASM_DIR"]
        if os.environ.get("QOFFLOAD_POLL_MS"):
            kwargs["poll_interval"] = float(os.environ["QOFFLOAD_POLL_MS"]) / 1000.0
        kwargs.update(overrides)
        return cls(**kwargs)

    def _client(self, address: tuple[str, int]) -> BackendClient:
        return BackendClient(address[0], address[1], retries=self.retries, backoff=self.backoff)

    # -- public API ----------------------------------------------------------

    def register(self, name: str, value: Any = None) -> Handle:
        with self._lock:
            handle = Handle(next(self._hid), name, value)
            self._handles[handle.id] = handle
            return handle

    def spawn_host_task(
        self,
        work: Callable[[], Any],
        accesses: Iterable[tuple[Handle, Mode | str]] | None = None,
        *,
        ins: Iterable[Handle] = (),
        outs: Iterable[Handle] = (),
        inouts: Iterable[Handle] = (),
        accumulates: Iterable[Handle] = (),
        label: str | None = None,
    ) -> int:
        if not callable(work):
            raise TypeError("work must be callable")
        acc = _normalize_accesses(accesses, ins, outs, inouts, accumulates)
        return self._spawn("host", acc, work, label or getattr(work, "__name__", "host"))

    def spawn_qpu_task(
        self,
        spec: QpuTaskSpec,
        accesses: Iterable[tuple[Handle, Mode | str]] | None = None,
        *,
        ins: Iterable[Handle] = (),
        label: str | None = None,
    ) -> int:
        if not self.backends:
            raise BackendUnreachable("no backend configured (set QOFFLOAD_BACKEND)")
        acc = _normalize_accesses(accesses, ins, (), (), ())
        modes = {h.id: m for h, m in acc}
        result_mode = modes.get(spec.result_handle.id)
        if result_mode is None:
            acc.append((spec.result_handle, Mode.OUT))
        elif result_mode not in (Mode.OUT, Mode.INOUT):
            raise ValueError("the result handle must be accessed as out or inout")
        if isinstance(spec.params, Handle) and spec.params.id not in modes:
            acc.append((spec.params, Mode.IN))
        if spec.kernel_name:
            path = self.kernel_path(spec.kernel_name)
            if spec.kernel_name not in self._kernel_cache and not path.is_file():
                raise KernelFileNotFound(f"kernel file {path} not found")
        return self._spawn("qpu", acc, spec, label or spec.kernel_name or "qpu")

    def taskwait(self) -> None:
        """Block until every spawned task is done; raise the first failure."""
        with self._idle:
            self._idle.wait_for(lambda: self._unfinished == 0)
            if self._failures:
                first = self._failures[0]
                self._failures.clear()
                raise TaskFailed(first.id, first.label, first.error) from first.error

    def kernel_path(self, kernel_name: str) -> Path:
        return self.qasm_dir / f"{kernel_name}.qasm"

    def shutdown(self, wait: bool = True) -> None:
        if self._closing.is_set():
            return
        if wait:
            with self._idle:
                self._idle.wait_for(lambda: self._unfinished == 0)
        self._closing.set()
        for _ in self._workers:
            self._ready.put(_STOP)
        self._wake_poller.set()
        for t in self._workers:
            t.join(timeout=5)
        self._poller.join(timeout=5)
        for c in self._submit_clients + self._poll_clients:
            c.close()

    def __enter__(self) -> "Runtime":
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown(wait=exc[0] is None)

    # -- scheduling ----------------------------------------------------------

    def _spawn(self, kind: str, accesses: list[Access], payload: Any, label: str) -> int:
        with self._lock:
            for handle, _ in accesses:
                if self._handles.get(handle.id) is not handle:
                    raise UnknownHandle(f"handle {handle.name!r} is not registered with this runtime")
            node = self.graph.add_task(kind, accesses, payload, label)
            self._unfinished += 1
            failed_pred = next(
                (p for p in node.preds if self.graph.nodes[p].state == "failed"), None
            )
            if failed_pred is not None:
                # the original failure may already have been reported, so
                # report this task too rather than dropping it silently
                cause = QOffloadError(f"predecessor task {failed_pred} failed")
                cause.__cause__ = self.graph.nodes[failed_pred].error
                self._fail_locked(node, cause, poisoned=True)
                self._failures.append(node)
            elif node.unreleased == 0:
                node.state = "ready"
                self._ready.put(node)
            return node.id

    def _finish(self, node: TaskNode, error: BaseException | None = None) -> None:
        with self._lock:
            node.end_seq = next(self._seq)
            node.finished_at = time.monotonic()
            if error is None:
                for succ in self.graph.release(node.id):
                    self._ready.put(succ)
                self._unfinished -= 1
            else:
                self._fail_locked(node, error)
            self._idle.notify_all()

    def _fail_locked(self, node: TaskNode, error: BaseException, poisoned: bool = False) -> None:
        failed = self.graph.poison(node.id, error)
        node.poisoned = poisoned
        if not poisoned:
            self._failures.append(node)
        self._unfinished -= len(failed)
        self._idle.notify_all()

    def _worker_loop(self) -> None:
        while True:
            node = self._ready.get()
            if node is _STOP:
                return
            with self._lock:
                if node.state != "ready":
                    continue
                node.state = "running"
                node.start_seq = next(self._seq)
                node.started_at = time.monotonic()
            if node.kind == "host":
                self._run_host(node)
            else:
                self._launch_qpu(node)

    def _run_host(self, node: TaskNode) -> None:
        locks = sorted(
            {h.id: h for h, m in node.accesses if m is Mode.ACCUMULATE}.values(), key=lambda h: h.id
        )
        for h in locks:
            h.lock.acquire()
        try:
            node.payload()
        except BaseException as exc:
            log.debug("host task %d (%s) failed: %s", node.id, node.label, exc)
            self._finish(node, exc)
            return
        finally:
            for h in reversed(locks):
                h.lock.release()
        self._finish(node)

    # -- QPU offloading ------------------------------------------------------

    def _load_kernel(self, name: str) -> str:
        if not name:
            return ""
        if self.cache_kernels and name in self._kernel_cache:
            return self._kernel_cache[name]
        path = self.kernel_path(name)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise KernelFileNotFound(f"kernel file {path} not found") from None
        if self.cache_kernels:
            self._kernel_cache[name] = text
        return text

    def build_source(self, spec: QpuTaskSpec) -> str:
        """Kernel text after parameter substitution and extension."""
        source = self._load_kernel(spec.kernel_name)
        params = spec.params.value if isinstance(spec.params, Handle) else spec.params
        if params is not None:
            source = substitute_params(source, params)
        if spec.extension:
            source = append_extension(source, spec.extension, spec.n_qubits)
        return source

    def _launch_qpu(self, node: TaskNode) -> None:
        spec: QpuTaskSpec = node.payload
        try:
            source = self.build_source(spec)
            idx = next(self._rr) % len(self._submit_clients)
            job_id = self._submit_clients[idx].submit(spec.shots, source, spec.seed)
        except BaseException as exc:
            self._finish(node, exc)
            return
        with self._lock:
            node.job = (idx, job_id)
            node.state = "offloaded"
            self._outstanding[(idx, job_id)] = node.id
        self._wake_poller.set()

    def _poll_loop(self) -> None:
        while not self._closing.is_set():
            with self._lock:
                has_work = bool(self._outstanding)
            if not has_work:
                self._wake_poller.wait(timeout=0.1)
                self._wake_poller.clear()
                continue
            self.poll_backend()
            time.sleep(self.poll_interval)

    def poll_backend(self) -> list[int]:
        """One polling tick: status for each outstanding job, result for each
        newly completed one. Returns the task ids that finished or failed."""
        with self._lock:
            outstanding = dict(self._outstanding)
        self.poll_ticks += 1
        done: list[int] = []
        for (idx, job_id), tid in sorted(outstanding.items()):
            node = self.graph.nodes[tid]
            client = self._poll_clients[idx]
            try:
                status = client.status(job_id)
                if status not in ("completed", "failed"):
                    continue
                counts = client.result(job_id)
            except BackendUnreachable as exc:
                self._complete_job(idx, job_id, node, error=exc)
                done.append(tid)
                continue
            except QOffloadError as exc:
                # JobFailed carries the backend's error message
                self._complete_job(idx, job_id, node, error=exc)
                done.append(tid)
                continue
            node.payload.result_handle.value = counts
            self._complete_job(idx, job_id, node)
            done.append(tid)
        return done

    def _complete_job(self, idx: int, job_id: int, node: TaskNode, error: BaseException | None = None) -> None:
        with self._lock:
            self._outstanding.pop((idx, job_id), None)
        self._finish(node, error)
