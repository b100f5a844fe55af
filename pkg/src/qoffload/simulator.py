"""Statevector simulation and shot sampling.

Qubit ``k`` is bit ``k`` of the amplitude index. Count keys are strings over
the classical register with classical bit 0 as the rightmost character.

Sampling uses numpy's PCG64 generator so a given ``(circuit, shots, seed)``
always yields the same counts.
"""

from __future__ import annotations

from collections import Counter

import numpy as np

from .errors import MeasurementInOraclePath, NoMeasurements, QubitCapExceeded
from .gates import gate_matrix
from .qasm import Circuit, GateOp

DEFAULT_MAX_QUBITS = 24

Counts = dict[str, int]


class StateVector:
    """Dense ``2**n`` amplitude vector, mutated in place by :meth:`apply`."""

    def __init__(self, n_qubits: int, amps: np.ndarray | None = None):
        self.n_qubits = n_qubits
        if amps is None:
            amps = np.zeros(2**n_qubits, dtype=complex)
            amps[0] = 1.0
        self.amps = np.asarray(amps, dtype=complex).reshape(2**n_qubits)

    def copy(self) -> "StateVector":
        return StateVector(self.n_qubits, self.amps.copy())

    def norm(self) -> float:
        return float(np.vdot(self.amps, self.amps).real)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amps) ** 2

    def apply_matrix(self, matrix: np.ndarray, qubits: tuple[int, ...]) -> None:
        n, m = self.n_qubits, len(qubits)
        tensor = self.amps.reshape((2,) * n)
        # array axis for qubit q is n-1-q; matrix axes are ordered high bit first
        axes = [n - 1 - q for q in reversed(qubits)]
        u = matrix.reshape((2,) * (2 * m))
        out = np.tensordot(u, tensor, axes=(list(range(m, 2 * m)), axes))
        out = np.moveaxis(out, list(range(m)), axes)
        self.amps = np.ascontiguousarray(out).reshape(2**n)

    def apply(self, op: GateOp) -> None:
        if op.kind == "barrier":
            return
        if op.kind == "measure":
            raise MeasurementInOraclePath("measure cannot be applied as a unitary")
        self.apply_matrix(gate_matrix(op.kind, op.params), op.qubits)

    def outcome_probability(self, qubit: int) -> float:
        """Probability that measuring *qubit* yields 1."""
        tensor = self.amps.reshape((2,) * self.n_qubits)
        sub = np.take(tensor, 1, axis=self.n_qubits - 1 - qubit)
        return float(np.vdot(sub, sub).real)

    def collapse(self, qubit: int, outcome: int, prob: float) -> None:
        tensor = self.amps.reshape((2,) * self.n_qubits).copy()
        idx = [slice(None)] * self.n_qubits
        idx[self.n_qubits - 1 - qubit] = 1 - outcome
        tensor[tuple(idx)] = 0.0
        self.amps = tensor.reshape(2**self.n_qubits) / np.sqrt(prob)


def _check_cap(circuit: Circuit, max_qubits: int) -> None:
    if circuit.n_qubits > max_qubits:
        raise QubitCapExceeded(
            f"circuit needs {circuit.n_qubits} qubits, exceeding the qubit cap of {max_qubits}"
        )


def run_statevector(circuit: Circuit, max_qubits: int = DEFAULT_MAX_QUBITS) -> StateVector:
    """Apply every op of a measurement-free circuit to ``|0...0>``."""
    _check_cap(circuit, max_qubits)
    if circuit.has_measurements:
        raise MeasurementInOraclePath("run_statevector requires a circuit without measure ops")
    state = StateVector(circuit.n_qubits)
    for op in circuit.ops:
        state.apply(op)
    return state


def _split_terminal(circuit: Circuit) -> tuple[list[GateOp], list[GateOp]] | None:
    """Return (unitary ops, measures) if every measurement is terminal."""
    measured: set[int] = set()
    gates: list[GateOp] = []
    measures: list[GateOp] = []
    for op in circuit.ops:
        if op.kind == "measure":
            if op.qubits[0] in measured:
                return None
            measured.add(op.qubits[0])
            measures.append(op)
        elif op.kind == "barrier":
            continue
        else:
            if measured.intersection(op.qubits):
                return None
            gates.append(op)
    return gates, measures


def _key(bits: list[int]) -> str:
    return "".join(str(b) for b in reversed(bits))


def _qubit_to_clbit_map(measures: list[GateOp]) -> list[tuple[int, int]]:
    # later measures into the same clbit overwrite earlier ones
    last: dict[int, int] = {}
    for op in measures:
        last[op.clbit] = op.qubits[0]
    return [(q, c) for c, q in last.items()]


def _marginal(state: StateVector, circuit: Circuit, measures: list[GateOp]) -> dict[str, float]:
    probs = state.probabilities()
    mapping = _qubit_to_clbit_map(measures)
    index = np.arange(probs.size)
    key_code = np.zeros(probs.size, dtype=np.int64)
    for q, c in mapping:
        key_code |= ((index >> q) & 1) << c
    codes, inverse = np.unique(key_code, return_inverse=True)
    sums = np.bincount(inverse, weights=probs)
    width = circuit.n_clbits
    return {format(int(code), f"0{width}b"): float(p) for code, p in zip(codes, sums)}


def exact_probabilities(circuit: Circuit, max_qubits: int = DEFAULT_MAX_QUBITS) -> dict[str, float]:
    """Outcome distribution over the classical register (zero entries omitted)."""
    _check_cap(circuit, max_qubits)
    split = _split_terminal(circuit)
    if split is None:
        raise MeasurementInOraclePath("exact_probabilities requires terminal measurements only")
    gates, measures = split
    state = StateVector(circuit.n_qubits)
    for op in gates:
        state.apply(op)
    dist = _marginal(state, circuit, measures)
    return {k: p for k, p in dist.items() if p > 0.0}


def make_rng(seed: int | None) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def sample_counts(
    circuit: Circuit,
    shots: int,
    seed: int | None = None,
    max_qubits: int = DEFAULT_MAX_QUBITS,
) -> Counts:
    """Simulate *shots* executions and tally classical register outcomes."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    _check_cap(circuit, max_qubits)
    if not circuit.has_measurements:
        raise NoMeasurements("circuit has no measure operations")
    rng = make_rng(seed)
    split = _split_terminal(circuit)
    if split is not None:
        gates, measures = split
        state = StateVector(circuit.n_qubits)
        for op in gates:
            state.apply(op)
        dist = _marginal(state, circuit, measures)
        keys = sorted(dist)
        p = np.array([dist[k] for k in keys])
        p = np.clip(p, 0.0, None)
        draws = rng.multinomial(shots, p / p.sum())
        return {k: int(n) for k, n in zip(keys, draws) if n > 0}
    return _sample_branching(circuit, shots, rng)


def _sample_branching(circuit: Circuit, shots: int, rng: np.random.Generator) -> Counts:
    """Per-shot Born-rule collapse, with shots that share a measurement
    history simulated together (binomial split at each measurement)."""
    counts: Counter[str] = Counter()
    # stack of (op index, state, classical bits, number of shots on this branch)
    stack = [(0, StateVector(circuit.n_qubits), [0] * circuit.n_clbits, shots)]
    ops = circuit.ops
    while stack:
        i, state, bits, n = stack.pop()
        while i < len(ops) and ops[i].kind != "measure":
            state.apply(ops[i])
            i += 1
        if i == len(ops):
            counts[_key(bits)] += n
            continue
        op = ops[i]
        p1 = min(max(state.outcome_probability(op.qubits[0]), 0.0), 1.0)
        n1 = int(rng.binomial(n, p1))
        for outcome, k in ((0, n - n1), (1, n1)):
            if k == 0:
                continue
            child = state.copy()
            child.collapse(op.qubits[0], outcome, p1 if outcome else 1.0 - p1)
            child_bits = list(bits)
            child_bits[op.clbit] = outcome
            stack.append((i + 1, child, child_bits, k))
    return dict(counts)
