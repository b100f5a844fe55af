"""Lowering of circuits to a native gate set.

Single-qubit gates go through a ZYZ Euler decomposition and are re-expressed
in the target's one-qubit basis; for the default ``{rz, sx, cx}`` target that
is the ZXZXZ form ``rz . sx . rz . sx . rz``. Two- and three-qubit gates are
expanded with textbook identities, and adjacent ``rz`` rotations are merged.
"""

from __future__ import annotations

import cmath
import math
from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    IrreducibleGate,
    MeasurementPresent,
    TooManyQubits,
    UnsupportedGate,
)
from .gates import ARITY, gate_matrix
from .qasm import Circuit, GateOp
from .simulator import StateVector

ANGLE_EPS = 1e-12
MAX_UNITARY_QUBITS = 10

_ONE_QUBIT_BASES = ({"rz", "sx"}, {"u3"}, {"rz", "ry"}, {"rz", "rx"})


@dataclass(frozen=True)
class GateSet:
    names: frozenset[str] = frozenset({"rz", "sx", "cx"})

    def __post_init__(self):
        names = frozenset(self.names)
        object.__setattr__(self, "names", names)
        unknown = names - set(ARITY)
        if unknown:
            raise UnsupportedGate(f"unknown gate kinds in gate set: {sorted(unknown)}")
        if not names & {"cx", "cz"}:
            raise IrreducibleGate("gate set needs an entangling gate (cx or cz)")
        if self.one_qubit_basis is None:
            raise IrreducibleGate(
                "gate set cannot express arbitrary one-qubit gates; "
                "include {rz, sx}, {u3}, {rz, ry} or {rz, rx}"
            )

    @classmethod
    def parse(cls, text: str) -> "GateSet":
        return cls(frozenset(n.strip() for n in text.split(",") if n.strip()))

    @property
    def one_qubit_basis(self) -> frozenset[str] | None:
        for basis in _ONE_QUBIT_BASES:
            if basis <= self.names:
                return frozenset(basis)
        return None


DEFAULT_GATESET = GateSet()


def wrap_angle(theta: float) -> float:
    """Map an angle into (-pi, pi]."""
    wrapped = math.remainder(theta, 2 * math.pi)
    if wrapped == -math.pi:
        wrapped = math.pi
    return wrapped


def _negligible(theta: float) -> bool:
    return abs(wrap_angle(theta)) < ANGLE_EPS


def zyz_angles(u: np.ndarray) -> tuple[float, float, float]:
    """Angles (theta, phi, lam) with u ~ Rz(phi) Ry(theta) Rz(lam) up to phase."""
    det = complex(np.linalg.det(u))
    v = u / cmath.sqrt(det)
    a, b = complex(v[0, 0]), complex(v[1, 0])
    theta = 2 * math.atan2(abs(b), abs(a))
    if abs(b) < 1e-14:
        return 0.0, -2 * cmath.phase(a), 0.0
    if abs(a) < 1e-14:
        return theta, 2 * cmath.phase(b), 0.0
    plus = -2 * cmath.phase(a)
    minus = 2 * cmath.phase(b)
    return theta, (plus + minus) / 2, (plus - minus) / 2


def _synth_1q(u: np.ndarray, q: int, basis: frozenset[str]) -> list[GateOp]:
    theta, phi, lam = zyz_angles(u)
    if basis == {"u3"}:
        return [GateOp("u3", (theta, phi, lam), (q,))]
    if _negligible(theta):
        seq = [("rz", phi + lam)]
    elif basis == {"rz", "sx"}:
        seq = [("rz", lam), ("sx", None), ("rz", theta + math.pi), ("sx", None), ("rz", phi + math.pi)]
    elif basis == {"rz", "ry"}:
        seq = [("rz", lam), ("ry", theta), ("rz", phi)]
    else:
        # Ry(t) = Rz(pi/2) Rx(t) Rz(-pi/2)
        seq = [("rz", lam - math.pi / 2), ("rx", theta), ("rz", phi + math.pi / 2)]
    ops = []
    for kind, angle in seq:
        if angle is None:
            ops.append(GateOp(kind, (), (q,)))
        elif not _negligible(angle):
            ops.append(GateOp(kind, (wrap_angle(angle),), (q,)))
    return ops


def decompose_1q(gate: GateOp, gateset: GateSet = DEFAULT_GATESET) -> list[GateOp]:
    """Express a one-qubit gate in the gate set's one-qubit basis."""
    if gate.kind not in ARITY or ARITY[gate.kind][0] != 1:
        raise UnsupportedGate(f"{gate.kind!r} is not a supported one-qubit gate")
    basis = gateset.one_qubit_basis
    if gate.kind in gateset.names:
        if gate.kind == "rz":
            return [] if _negligible(gate.params[0]) else [gate]
        return [gate]
    return _synth_1q(gate_matrix(gate.kind, gate.params), gate.qubits[0], basis)


def _ccx_expansion(a: int, b: int, c: int) -> list[GateOp]:
    g = GateOp
    return [
        g("h", (), (c,)),
        g("cx", (), (b, c)),
        g("tdg", (), (c,)),
        g("cx", (), (a, c)),
        g("t", (), (c,)),
        g("cx", (), (b, c)),
        g("tdg", (), (c,)),
        g("cx", (), (a, c)),
        g("t", (), (b,)),
        g("t", (), (c,)),
        g("h", (), (c,)),
        g("cx", (), (a, b)),
        g("t", (), (a,)),
        g("tdg", (), (b,)),
        g("cx", (), (a, b)),
    ]


def _expand_multi(op: GateOp, gateset: GateSet) -> list[GateOp]:
    """Rewrite a 2q/3q gate as one-qubit gates plus the native entangler."""
    names = gateset.names
    if op.kind in names:
        return [op]
    if op.kind == "ccx":
        out: list[GateOp] = []
        for sub in _ccx_expansion(*op.qubits):
            out.extend(_expand_multi(sub, gateset) if sub.kind == "cx" else [sub])
        return out
    if op.kind == "swap":
        a, b = op.qubits
        out = []
        for sub in (GateOp("cx", (), (a, b)), GateOp("cx", (), (b, a)), GateOp("cx", (), (a, b))):
            out.extend(_expand_multi(sub, gateset))
        return out
    if op.kind == "cz":
        if "cx" not in names:
            raise IrreducibleGate("cz cannot be reached without cx or cz in the gate set")
        c, t = op.qubits
        return [GateOp("h", (), (t,)), GateOp("cx", (), (c, t)), GateOp("h", (), (t,))]
    if op.kind == "cx":
        if "cz" not in names:
            raise IrreducibleGate("cx cannot be reached without cx or cz in the gate set")
        c, t = op.qubits
        return [GateOp("h", (), (t,)), GateOp("cz", (), (c, t)), GateOp("h", (), (t,))]
    if op.kind in ARITY:
        return [op]
    raise UnsupportedGate(f"cannot lower gate kind {op.kind!r}")


def merge_rz(ops: Iterable[GateOp]) -> list[GateOp]:
    """Fuse runs of rz on the same qubit and drop rotations that vanish mod 2*pi."""
    out: list[GateOp] = []
    pending: dict[int, float] = {}

    def flush(q: int) -> None:
        angle = pending.pop(q, None)
        if angle is not None and not _negligible(angle):
            out.append(GateOp("rz", (wrap_angle(angle),), (q,)))

    for op in ops:
        if op.kind == "rz":
            q = op.qubits[0]
            pending[q] = pending.get(q, 0.0) + op.params[0]
            continue
        for q in op.qubits:
            flush(q)
        out.append(op)
    for q in sorted(pending):
        flush(q)
    return out


def transpile(circuit: Circuit, gateset: GateSet = DEFAULT_GATESET) -> Circuit:
    """Lower *circuit* so that every unitary op is in *gateset*."""
    lowered: list[GateOp] = []
    for op in circuit.ops:
        if op.kind in ("measure", "barrier"):
            lowered.append(op)
            continue
        if op.kind not in ARITY:
            raise UnsupportedGate(f"unsupported gate kind {op.kind!r}")
        for sub in _expand_multi(op, gateset):
            if len(sub.qubits) == 1:
                lowered.extend(decompose_1q(sub, gateset))
            else:
                lowered.append(sub)
    if "rz" in gateset.names:
        lowered = merge_rz(lowered)
    return Circuit(circuit.n_qubits, circuit.n_clbits, tuple(lowered), circuit.source_name)


def unitary_of(circuit: Circuit) -> np.ndarray:
    """Full ``2**n x 2**n`` unitary, column j = circuit applied to basis state j."""
    n = circuit.n_qubits
    if n > MAX_UNITARY_QUBITS:
        raise TooManyQubits(f"unitary_of supports at most {MAX_UNITARY_QUBITS} qubits, got {n}")
    if circuit.has_measurements:
        raise MeasurementPresent("unitary_of requires a circuit without measurements")
    dim = 2**n
    # treat the identity's columns as a batch: one extra leading axis
    batch = StateVector(n + _batch_bits(dim), np.eye(dim, dtype=complex).reshape(-1))
    for op in circuit.ops:
        if op.kind == "barrier":
            continue
        batch.apply_matrix(gate_matrix(op.kind, op.params), op.qubits)
    return batch.amps.reshape(dim, dim).T


def _batch_bits(dim: int) -> int:
    return dim.bit_length() - 1


def equivalent_up_to_phase(a: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> bool:
    """True iff ``a ~ exp(i alpha) b`` elementwise within *tol*."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape} differ")
    flat = np.argmax(np.abs(b))
    pivot = b.flat[flat]
    if abs(pivot) == 0:
        return bool(np.max(np.abs(a)) < tol)
    if abs(a.flat[flat]) == 0:
        return False
    phase = a.flat[flat] / pivot
    phase /= abs(phase)
    return bool(np.max(np.abs(a - phase * b)) < tol)
