"""The three hybrid applications: coin flip, energy landscape and VQE.

Each ``run_*`` function drives a :class:`~qoffload.runtime.Runtime` against
one or more backends and returns plain data (dicts / rows) that the CLI
serializes.
"""

from __future__ import annotations

import csv
import io
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .direct import OptProblem, minimize
from .observable import (
    PauliSum,
    estimate_energy,
    exact_energy,
    group_energy,
    group_terms,
    basis_extension,
    load_pauli_sum,
)
from .protocol import parse_addresses
from .qasm import parse, substitute_params
from .runtime import QpuTaskSpec, Runtime

TWO_PI = 2 * math.pi


def data_dir() -> Path:
    return Path(str(resources.files("qoffload") / "data"))


def default_qasm_dir() -> Path:
    env = os.environ.get("QOFFLOAD_QASM_DIR")
    if env:
        return Path(env)
    local = Path.cwd() / "qasm"
    return local if local.is_dir() else data_dir() / "qasm"


def default_hamiltonian() -> Path:
    local = Path.cwd() / "hamiltonians" / "heisenberg4.txt"
    return local if local.is_file() else data_dir() / "hamiltonians" / "heisenberg4.txt"


def job_seed(base: int, *path: int) -> int:
    """Deterministic 63-bit seed for one job, independent of submission order."""
    state = np.random.SeedSequence([base, *path]).generate_state(1, dtype=np.uint64)[0]
    return int(state) >> 1


@dataclass
class RunConfig:
    backends: list[tuple[str, int]] = field(default_factory=list)
    shots: int = 100_000
    seed: int = 0
    qasm_dir: Path | None = None
    output: Path | None = None
    grid: int = 32
    mode: str = "par"
    budget: int = 300
    ftol_rel: float = 1e-4
    exact: bool = False
    hamiltonian: Path | None = None
    workers: int = 4
    poll_interval: float = 0.01

    def __post_init__(self):
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if self.grid < 2:
            raise ValueError("grid size must be >= 2")
        if self.mode not in ("seq", "par", "sequential", "parallel"):
            raise ValueError(f"unknown mode {self.mode!r}")
        self.mode = {"sequential": "seq", "parallel": "par"}.get(self.mode, self.mode)
        if isinstance(self.backends, str):
            self.backends = parse_addresses(self.backends)

    def resolved_qasm_dir(self) -> Path:
        return Path(self.qasm_dir) if self.qasm_dir is not None else default_qasm_dir()

    def load_hamiltonian(self) -> PauliSum:
        return load_pauli_sum(self.hamiltonian or default_hamiltonian())

    def make_runtime(self) -> Runtime:
        return Runtime(
            workers=self.workers,
            backends=self.backends,
            qasm_dir=self.resolved_qasm_dir(),
            poll_interval=self.poll_interval,
        )


def _with_runtime(config: RunConfig, runtime: Runtime | None, body: Callable[[Runtime], Any]) -> Any:
    if runtime is not None:
        return body(runtime)
    with config.make_runtime() as rt:
        return body(rt)


# -- coin flip ----------------------------------------------------------------


def run_coin_flip(config: RunConfig, runtime: Runtime | None = None, out=None) -> dict[str, Any]:
    out = out or sys.stdout

    def body(rt: Runtime) -> dict[str, Any]:
        results = rt.register("results")
        rt.spawn_qpu_task(
            QpuTaskSpec("coin_flip", config.shots, results, seed=job_seed(config.seed, 0))
        )

        def print_results():
            for key in sorted(results.value):
                print(f"state {key}: {results.value[key]} times", file=out)

        rt.spawn_host_task(print_results, ins=[results])
        rt.taskwait()
        counts = dict(sorted(results.value.items()))
        zero = counts.get("0", 0)
        sigma = math.sqrt(config.shots * 0.25)
        return {
            "example": "coin-flip",
            "shots": config.shots,
            "seed": config.seed,
            "counts": counts,
            "z_score": abs(zero - config.shots / 2) / sigma,
        }

    return _with_runtime(config, runtime, body)


# -- energy landscape -----------------------------------------------------------


def grid_angles(n: int) -> list[float]:
    return [TWO_PI * i / n for i in range(n)]


def run_landscape(config: RunConfig, runtime: Runtime | None = None) -> list[tuple[float, float, float]]:
    """Energy on an N x N grid over [0, 2*pi)^2, one QPU job per measurement group."""
    h = config.load_hamiltonian()
    groups = group_terms(h)
    extensions = [basis_extension(g, h.n_qubits) for g in groups]
    angles = grid_angles(config.grid)
    points = [(i, j, angles[i], angles[j]) for i in range(config.grid) for j in range(config.grid)]

    def spec(i: int, j: int, t0: float, t1: float, g: int, handle) -> QpuTaskSpec:
        return QpuTaskSpec(
            "ansatz",
            config.shots,
            handle,
            params=[t0, t1],
            extension=extensions[g],
            seed=job_seed(config.seed, i, j, g),
        )

    def sequential(rt: Runtime) -> list[tuple[float, float, float]]:
        rows = []
        for i, j, t0, t1 in points:
            parts = []
            for g, group in enumerate(groups):
                res = rt.register(f"counts[{i},{j},{g}]")
                rt.spawn_qpu_task(spec(i, j, t0, t1, g, res))
                rt.taskwait()
                parts.append(group_energy(h, group, res.value, config.shots))
            rows.append((t0, t1, math.fsum(parts)))
        return rows

    def parallel(rt: Runtime) -> list[tuple[float, float, float]]:
        energies = []
        for i, j, t0, t1 in points:
            acc = rt.register(f"partial[{i},{j}]", [])
            energy = rt.register(f"energy[{i},{j}]")
            for g, group in enumerate(groups):
                res = rt.register(f"counts[{i},{j},{g}]")
                rt.spawn_qpu_task(spec(i, j, t0, t1, g, res))

                def add(res=res, group=group, acc=acc):
                    acc.value.append(group_energy(h, group, res.value, config.shots))

                rt.spawn_host_task(add, ins=[res], accumulates=[acc], label="calc_energy")

            def total(acc=acc, energy=energy):
                energy.value = math.fsum(acc.value)

            rt.spawn_host_task(total, ins=[acc], outs=[energy], label="total_energy")
            energies.append((t0, t1, energy))
        rt.taskwait()
        return [(t0, t1, e.value) for t0, t1, e in energies]

    return _with_runtime(config, runtime, sequential if config.mode == "seq" else parallel)


def landscape_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["theta0", "theta1", "energy"])
    for t0, t1, e in rows:
        writer.writerow([f"{t0:.17g}", f"{t1:.17g}", f"{e:.17g}"])
    return buf.getvalue()


# -- variational algorithm ----------------------------------------------------


def bound_ansatz(source: str, theta) -> Any:
    return parse(substitute_params(source, [float(t) for t in theta]), "ansatz")


def run_vqe(config: RunConfig, runtime: Runtime | None = None) -> dict[str, Any]:
    """Minimize the ansatz energy over [0, 2*pi]^2 with DIRECT."""
    h = config.load_hamiltonian()
    groups = group_terms(h)
    extensions = [basis_extension(g, h.n_qubits) for g in groups]
    source = (config.resolved_qasm_dir() / "ansatz.qasm").read_text(encoding="utf-8")

    def body(rt: Runtime | None) -> dict[str, Any]:
        evaluations = 0

        def measure(theta, tag: int) -> float:
            handles = []
            for g in range(len(groups)):
                res = rt.register(f"counts[{tag},{g}]")
                rt.spawn_qpu_task(
                    QpuTaskSpec(
                        "ansatz",
                        config.shots,
                        res,
                        params=[float(t) for t in theta],
                        extension=extensions[g],
                        seed=job_seed(config.seed, tag, g),
                    )
                )
                handles.append(res)
            rt.taskwait()
            return estimate_energy(h, groups, [r.value for r in handles], config.shots)

        def objective(theta: np.ndarray) -> float:
            nonlocal evaluations
            evaluations += 1
            if config.exact:
                return exact_energy(bound_ansatz(source, theta), h)
            return measure(theta, evaluations)

        def remeasure(theta) -> float:
            return measure(theta, 0)

        problem = OptProblem(objective, [0.0, 0.0], [TWO_PI, TWO_PI], config.budget, config.ftol_rel)
        result = minimize(problem)
        # the incumbent is the minimum of many noisy estimates and so biased
        # low; re-measure the returned angles with fresh shots
        final = result.fun if config.exact else remeasure(result.x)
        return {
            "example": "vqe",
            "shots": None if config.exact else config.shots,
            "seed": config.seed,
            "budget": config.budget,
            "ftol_rel": config.ftol_rel,
            "best_theta": [float(t) for t in result.x],
            "best_energy": result.fun,
            "final_energy": final,
            "evaluations": result.nfev,
            "iterations": result.nit,
            "stop_reason": result.stop_reason,
            "exact_energy_at_best": exact_energy(bound_ansatz(source, result.x), h),
            "groups": len(groups),
        }

    if config.exact:
        return body(None)
    return _with_runtime(config, runtime, body)
