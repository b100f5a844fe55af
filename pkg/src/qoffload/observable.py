"""Pauli-sum observables: parsing, qubit-wise commuting grouping, measurement
basis extensions and expectation estimates from counts.

Pauli strings are indexed left to right: character ``k`` acts on qubit ``k``.
Count keys are the reverse (qubit 0 is the rightmost character).
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadCoefficient,
    BadPauliChar,
    GroupCountMismatch,
    KeyLengthMismatch,
    LengthMismatch,
)
from .qasm import Circuit, append_extension, parse, serialize
from .simulator import StateVector, exact_probabilities, run_statevector

PAULI_CHARS = frozenset("IXYZ")


@dataclass(frozen=True)
class PauliSum:
    n_qubits: int
    terms: tuple[tuple[float, str], ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple((float(c), p) for c, p in self.terms))
        for coeff, paulis in self.terms:
            if not math.isfinite(coeff):
                raise BadCoefficient(f"non-finite coefficient {coeff!r}")
            if len(paulis) != self.n_qubits:
                raise LengthMismatch(
                    f"Pauli string {paulis!r} has length {len(paulis)}, expected {self.n_qubits}"
                )
            bad = set(paulis) - PAULI_CHARS
            if bad:
                raise BadPauliChar(f"invalid Pauli character(s) {sorted(bad)} in {paulis!r}")

    @property
    def coeff_l1(self) -> float:
        return sum(abs(c) for c, _ in self.terms)

    def scaled(self, alpha: float) -> "PauliSum":
        return PauliSum(self.n_qubits, tuple((alpha * c, p) for c, p in self.terms))

    def __add__(self, other: "PauliSum") -> "PauliSum":
        if other.n_qubits != self.n_qubits:
            raise LengthMismatch("cannot add Pauli sums over different qubit counts")
        return PauliSum(self.n_qubits, self.terms + other.terms)


@dataclass
class MeasurementGroup:
    basis: str
    members: list[int] = field(default_factory=list)


def parse_pauli_sum(text: str) -> PauliSum:
    """Parse lines of ``<coeff> <pauli-string>``; ``#`` starts a comment."""
    terms: list[tuple[float, str]] = []
    width: int | None = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise BadCoefficient(f"line {lineno}: expected '<coeff> <pauli-string>', got {raw!r}")
        try:
            coeff = float(parts[0])
        except ValueError:
            raise BadCoefficient(f"line {lineno}: bad coefficient {parts[0]!r}") from None
        if not math.isfinite(coeff):
            raise BadCoefficient(f"line {lineno}: non-finite coefficient {parts[0]!r}")
        paulis = parts[1].upper()
        bad = set(paulis) - PAULI_CHARS
        if bad:
            raise BadPauliChar(f"line {lineno}: invalid Pauli character(s) {sorted(bad)}")
        if width is None:
            width = len(paulis)
        elif len(paulis) != width:
            raise LengthMismatch(f"line {lineno}: Pauli string length {len(paulis)} != {width}")
        terms.append((coeff, paulis))
    return PauliSum(width or 0, tuple(terms))


def load_pauli_sum(path) -> PauliSum:
    with open(path, encoding="utf-8") as fh:
        return parse_pauli_sum(fh.read())


def _compatible(basis: str, paulis: str) -> bool:
    return all(b == "I" or p == "I" or b == p for b, p in zip(basis, paulis))


def _merge(basis: str, paulis: str) -> str:
    return "".join(p if b == "I" else b for b, p in zip(basis, paulis))


def group_terms(h: PauliSum) -> list[MeasurementGroup]:
    """Greedy first-fit qubit-wise commuting grouping in term order."""
    groups: list[MeasurementGroup] = []
    for idx, (_, paulis) in enumerate(h.terms):
        for g in groups:
            if _compatible(g.basis, paulis):
                g.basis = _merge(g.basis, paulis)
                g.members.append(idx)
                break
        else:
            groups.append(MeasurementGroup(paulis, [idx]))
    return groups


def basis_extension(group: MeasurementGroup, n_qubits: int) -> str:
    """QASM rotating each qubit into its group basis, then measuring all qubits."""
    lines = []
    for q in range(n_qubits):
        letter = group.basis[q] if q < len(group.basis) else "I"
        if letter == "X":
            lines.append(f"h q[{q}];")
        elif letter == "Y":
            lines.append(f"sdg q[{q}];")
            lines.append(f"h q[{q}];")
    lines.extend(f"measure q[{q}] -> c[{q}];" for q in range(n_qubits))
    return "\n".join(lines)


def _parity_mask(paulis: str) -> int:
    mask = 0
    for q, p in enumerate(paulis):
        if p != "I":
            mask |= 1 << q
    return mask


def estimate_term(counts: Mapping[str, int], term: str, shots: int) -> float:
    """Estimate <P> from computational-basis counts taken in P's eigenbasis."""
    mask = _parity_mask(term)
    support = mask.bit_length()
    total = 0
    for key, n in counts.items():
        if len(key) < support:
            raise KeyLengthMismatch(
                f"count key {key!r} too short for a term acting on qubit {support - 1}"
            )
        parity = bin(int(key, 2) & mask).count("1") & 1
        total += -n if parity else n
    return total / shots


def group_energy(
    h: PauliSum, group: MeasurementGroup, counts: Mapping[str, int], shots: int
) -> float:
    """Contribution of one group's terms to the energy estimate."""
    return math.fsum(h.terms[k][0] * estimate_term(counts, h.terms[k][1], shots) for k in group.members)


def estimate_energy(
    h: PauliSum,
    groups: Sequence[MeasurementGroup],
    counts_per_group: Sequence[Mapping[str, int]],
    shots: int | None = None,
) -> float:
    """Sum of ``coeff_k * <P_k>`` with each term read from its group's counts."""
    if len(groups) != len(counts_per_group):
        raise GroupCountMismatch(f"{len(groups)} groups but {len(counts_per_group)} count sets")
    owner: dict[int, int] = {}
    for gi, g in enumerate(groups):
        for k in g.members:
            owner[k] = gi
    if set(owner) != set(range(len(h.terms))):
        raise GroupCountMismatch("groups do not cover every term exactly")
    contributions = []
    for k, (coeff, paulis) in enumerate(h.terms):
        counts = counts_per_group[owner[k]]
        n = shots if shots is not None else sum(counts.values())
        contributions.append(coeff * estimate_term(counts, paulis, n))
    return math.fsum(contributions)


_PAULI_MATS = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def pauli_expectation(state: StateVector, paulis: str) -> complex:
    phi = state.copy()
    for q, p in enumerate(paulis):
        if p != "I":
            phi.apply_matrix(_PAULI_MATS[p], (q,))
    return complex(np.vdot(state.amps, phi.amps))


def exact_energy(circuit: Circuit, h: PauliSum) -> float:
    """Infinite-shot energy <psi|H|psi> of a measurement-free circuit."""
    if circuit.n_qubits != h.n_qubits:
        raise LengthMismatch(f"circuit has {circuit.n_qubits} qubits, H acts on {h.n_qubits}")
    state = run_statevector(circuit)
    value = sum(c * pauli_expectation(state, p) for c, p in h.terms)
    if abs(value.imag) >= 1e-10:
        raise ArithmeticError(f"energy has imaginary part {value.imag!r}")
    return float(value.real)


def energy_stddev(
    circuit: Circuit, h: PauliSum, groups: Sequence[MeasurementGroup], shots: int
) -> float:
    """Exact standard deviation of :func:`estimate_energy` at *shots* per group.

    Each group's estimator is the mean over shots of
    ``f(b) = sum_k coeff_k * (-1)**parity_k(b)`` in the rotated basis.
    """
    base = serialize(circuit.without_measurements())
    variance = 0.0
    for g in groups:
        probs = exact_probabilities(parse(append_extension(base, basis_extension(g, h.n_qubits))))
        keys = list(probs)
        p = np.array([probs[k] for k in keys])
        codes = np.array([int(k, 2) for k in keys])
        f = np.zeros(len(keys))
        for k in g.members:
            coeff, paulis = h.terms[k]
            mask = _parity_mask(paulis)
            parity = np.array([bin(int(c) & mask).count("1") & 1 for c in codes])
            f += coeff * (1 - 2 * parity)
        mean = float(p @ f)
        variance += max(float(p @ (f * f)) - mean * mean, 0.0) / shots
    return math.sqrt(variance)
