"""Gate vocabulary: arities and unitary matrices.

Multi-qubit matrices are little-endian in their operands: for an op acting on
``qubits = (a, b, ...)`` the matrix row/column index has ``a`` as bit 0,
``b`` as bit 1 and so on. For ``cx`` the first operand is the control.
"""

from __future__ import annotations

import cmath
import math

import numpy as np

# kind -> (number of qubits, number of angle parameters)
ARITY: dict[str, tuple[int, int]] = {
    "h": (1, 0),
    "x": (1, 0),
    "y": (1, 0),
    "z": (1, 0),
    "s": (1, 0),
    "sdg": (1, 0),
    "t": (1, 0),
    "tdg": (1, 0),
    "sx": (1, 0),
    "sxdg": (1, 0),
    "rx": (1, 1),
    "ry": (1, 1),
    "rz": (1, 1),
    "u1": (1, 1),
    "u2": (1, 2),
    "u3": (1, 3),
    "cx": (2, 0),
    "cz": (2, 0),
    "swap": (2, 0),
    "ccx": (3, 0),
}

NON_UNITARY = frozenset({"barrier", "measure"})
GATE_KINDS = frozenset(ARITY) | NON_UNITARY

_SQ2 = 1.0 / math.sqrt(2.0)

_FIXED: dict[str, np.ndarray] = {
    "h": np.array([[_SQ2, _SQ2], [_SQ2, -_SQ2]], dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
    "s": np.array([[1, 0], [0, 1j]], dtype=complex),
    "sdg": np.array([[1, 0], [0, -1j]], dtype=complex),
    "t": np.array([[1, 0], [0, cmath.exp(1j * math.pi / 4)]], dtype=complex),
    "tdg": np.array([[1, 0], [0, cmath.exp(-1j * math.pi / 4)]], dtype=complex),
    "sx": 0.5 * np.array([[1 + 1j, 1 - 1j], [1 - 1j, 1 + 1j]], dtype=complex),
    "sxdg": 0.5 * np.array([[1 - 1j, 1 + 1j], [1 + 1j, 1 - 1j]], dtype=complex),
    "cx": np.array(
        [[1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0], [0, 1, 0, 0]], dtype=complex
    ),
    "cz": np.diag([1, 1, 1, -1]).astype(complex),
    "swap": np.array(
        [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex
    ),
}

_ccx = np.eye(8, dtype=complex)
# controls are bits 0 and 1, target bit 2: swap |011> and |111>
_ccx[[3, 7]] = _ccx[[7, 3]]
_FIXED["ccx"] = _ccx


def rx(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def ry(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz(theta: float) -> np.ndarray:
    return np.array(
        [[cmath.exp(-0.5j * theta), 0], [0, cmath.exp(0.5j * theta)]], dtype=complex
    )


def u3(theta: float, phi: float, lam: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array(
        [
            [c, -cmath.exp(1j * lam) * s],
            [cmath.exp(1j * phi) * s, cmath.exp(1j * (phi + lam)) * c],
        ],
        dtype=complex,
    )


def gate_matrix(kind: str, params: tuple[float, ...] | list[float] = ()) -> np.ndarray:
    """Unitary of a gate kind, little-endian in its qubit operands."""
    if kind in _FIXED:
        return _FIXED[kind]
    if kind == "rx":
        return rx(params[0])
    if kind == "ry":
        return ry(params[0])
    if kind == "rz":
        return rz(params[0])
    if kind == "u1":
        return np.array([[1, 0], [0, cmath.exp(1j * params[0])]], dtype=complex)
    if kind == "u2":
        return u3(math.pi / 2, params[0], params[1])
    if kind == "u3":
        return u3(*params)
    raise KeyError(f"no matrix for gate kind {kind!r}")


def inverse(kind: str, params: tuple[float, ...]) -> tuple[str, tuple[float, ...]]:
    """The (kind, params) of the adjoint gate."""
    self_inverse = {"h", "x", "y", "z", "cx", "cz", "swap", "ccx"}
    if kind in self_inverse:
        return kind, ()
    pairs = {"s": "sdg", "sdg": "s", "t": "tdg", "tdg": "t", "sx": "sxdg", "sxdg": "sx"}
    if kind in pairs:
        return pairs[kind], ()
    if kind in ("rx", "ry", "rz", "u1"):
        return kind, (-params[0],)
    if kind == "u2":
        return "u3", (-math.pi / 2, -params[1], -params[0])
    if kind == "u3":
        return "u3", (-params[0], -params[2], -params[1])
    raise KeyError(kind)
