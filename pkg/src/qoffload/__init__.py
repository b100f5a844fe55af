"""Offload parameterized OpenQASM kernels from a dataflow task runtime to a
networked statevector simulator."""

from .backend import BackendConfig, BackendServer, JobQueue, JobRecord
from .direct import HyperRect, OptProblem, minimize, potentially_optimal, trisect
from .observable import (
    MeasurementGroup,
    PauliSum,
    basis_extension,
    estimate_energy,
    estimate_term,
    exact_energy,
    group_terms,
    parse_pauli_sum,
)
from .protocol import BackendClient
from .qasm import Circuit, GateOp, append_extension, parse, serialize, substitute_params
from .runtime import DepGraph, Handle, Mode, QpuTaskSpec, Runtime
from .simulator import StateVector, exact_probabilities, run_statevector, sample_counts
from .transpiler import GateSet, decompose_1q, equivalent_up_to_phase, transpile, unitary_of

__version__ = "0.1.0"

__all__ = [
    "BackendClient",
    "BackendConfig",
    "BackendServer",
    "Circuit",
    "DepGraph",
    "GateOp",
    "GateSet",
    "Handle",
    "HyperRect",
    "JobQueue",
    "JobRecord",
    "MeasurementGroup",
    "Mode",
    "OptProblem",
    "PauliSum",
    "QpuTaskSpec",
    "Runtime",
    "StateVector",
    "append_extension",
    "basis_extension",
    "decompose_1q",
    "equivalent_up_to_phase",
    "estimate_energy",
    "estimate_term",
    "exact_energy",
    "exact_probabilities",
    "group_terms",
    "minimize",
    "parse",
    "parse_pauli_sum",
    "potentially_optimal",
    "run_statevector",
    "sample_counts",
    "serialize",
    "substitute_params",
    "transpile",
    "trisect",
    "unitary_of",
]
