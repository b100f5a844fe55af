"""OpenQASM 2.0 handling: placeholder substitution, extensions, parsing and
serialization.

The accepted dialect is the qelib1 subset listed in :data:`qoffload.gates.ARITY`
plus ``barrier`` and ``measure``. Kernels may carry ``$[k]`` placeholders that
are replaced textually before parsing.
"""

from __future__ import annotations

import math
import re
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field

from .errors import (
    IndexOutOfRange,
    PlaceholderOutOfRange,
    QasmSyntaxError,
    UndeclaredRegister,
    UnsupportedFeature,
    UnusedParameter,
)
from .gates import ARITY

PLACEHOLDER_RE = re.compile(r"\$\[(\d+)\]")
HEADER = 'OPENQASM 2.0;\ninclude "qelib1.inc";\n'

_ALIASES = {"U": "u3", "CX": "cx", "u": "u3", "p": "u1", "cnot": "cx"}
_UNSUPPORTED = {"if", "reset", "opaque", "gate"}
_FUNCS = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "exp": math.exp,
    "ln": math.log,
    "sqrt": math.sqrt,
}


@dataclass(frozen=True)
class GateOp:
    kind: str
    params: tuple[float, ...] = ()
    qubits: tuple[int, ...] = ()
    clbit: int | None = None

    def __post_init__(self):
        if self.kind == "measure":
            if len(self.qubits) != 1 or self.clbit is None or self.params:
                raise ValueError("measure takes exactly one qubit and one clbit")
            return
        if self.clbit is not None:
            raise ValueError(f"{self.kind} does not take a classical bit")
        if self.kind == "barrier":
            if self.params:
                raise ValueError("barrier takes no parameters")
            return
        try:
            nq, npar = ARITY[self.kind]
        except KeyError:
            raise ValueError(f"unknown gate kind {self.kind!r}") from None
        if len(self.qubits) != nq or len(self.params) != npar:
            raise ValueError(
                f"{self.kind} expects {nq} qubit(s) and {npar} parameter(s), "
                f"got {len(self.qubits)} and {len(self.params)}"
            )
        if len(set(self.qubits)) != len(self.qubits):
            raise ValueError(f"{self.kind} operands must be distinct qubits")

    @property
    def is_unitary(self) -> bool:
        return self.kind not in ("measure", "barrier")


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    n_clbits: int
    ops: tuple[GateOp, ...] = ()
    source_name: str = ""
    version: str | None = "2.0"
    includes: tuple[str, ...] = ("qelib1.inc",)

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        for op in self.ops:
            for q in op.qubits:
                if not 0 <= q < self.n_qubits:
                    raise IndexOutOfRange(f"qubit {q} outside register of {self.n_qubits}")
            if op.clbit is not None and not 0 <= op.clbit < self.n_clbits:
                raise IndexOutOfRange(f"clbit {op.clbit} outside register of {self.n_clbits}")

    @property
    def has_measurements(self) -> bool:
        return any(op.kind == "measure" for op in self.ops)

    def without_measurements(self) -> "Circuit":
        return Circuit(
            self.n_qubits,
            self.n_clbits,
            tuple(op for op in self.ops if op.kind != "measure"),
            self.source_name,
        )

    def gate_count(self) -> int:
        return sum(1 for op in self.ops if op.is_unitary)


# -- textual passes ---------------------------------------------------------


def format_angle(value: float) -> str:
    """Decimal rendering that round-trips a float with >= 15 significant digits."""
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"cannot render non-finite angle {value!r}")
    fixed = f"{value:.15f}"
    if float(fixed) == value and _significant_digits(fixed) >= 15:
        return fixed
    shortest = repr(value)
    if _significant_digits(shortest) >= 15:
        return shortest
    return f"{value:.14e}"


def _significant_digits(text: str) -> int:
    mantissa = text.lower().split("e")[0].lstrip("+-").replace(".", "")
    return len(mantissa.lstrip("0")) or 1


def substitute_params(source: str, binding: Sequence[float]) -> str:
    """Replace each ``$[k]`` in *source* with ``binding[k]``.

    Raises :class:`PlaceholderOutOfRange` for unbound indices; warns with
    :class:`UnusedParameter` when the binding is longer than needed.
    """
    values = [float(v) for v in binding]
    highest = -1

    def repl(m: re.Match) -> str:
        nonlocal highest
        k = int(m.group(1))
        if k >= len(values):
            raise PlaceholderOutOfRange(
                f"placeholder $[{k}] but only {len(values)} value(s) bound"
            )
        highest = max(highest, k)
        return format_angle(values[k])

    out = PLACEHOLDER_RE.sub(repl, source)
    if len(values) > highest + 1:
        warnings.warn(
            f"{len(values)} parameter(s) bound but highest placeholder is $[{highest}]",
            UnusedParameter,
            stacklevel=2,
        )
    return out


def append_extension(source: str, extension: str, n_qubits: int | None = None) -> str:
    """Append *extension* on a new line after *source*.

    An empty *source* gets the canonical header plus ``qreg q[N]; creg c[N];``.
    When *n_qubits* is not given, N is one more than the highest index
    referenced in the extension.
    """
    if not extension:
        return source
    if source.strip():
        return f"{source}\n{extension}"
    if n_qubits is None:
        indices = [int(i) for i in re.findall(r"\[(\d+)\]", extension)]
        n_qubits = max(indices, default=0) + 1
    return f"{HEADER}qreg q[{n_qubits}];\ncreg c[{n_qubits}];\n{extension}"


# -- tokenizer --------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<real>(?:\d+\.\d*|\.\d+)(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+)
  | (?P<int>\d+)
  | (?P<id>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<str>"[^"\n]*")
  | (?P<op>->|==|[;,()\[\]{}+\-*/^$])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _strip_comments(source: str) -> str:
    return re.sub(r"//[^\n]*", "", source)


def _tokenize(source: str) -> list[_Tok]:
    text = _strip_comments(source)
    toks: list[_Tok] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise QasmSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "ws":
            chunk = m.group()
            nl = chunk.count("\n")
            if nl:
                line += nl
                line_start = pos + chunk.rindex("\n") + 1
        else:
            toks.append(_Tok(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


# -- parser -----------------------------------------------------------------


@dataclass
class _Register:
    offset: int
    size: int


@dataclass
class _Parser:
    toks: list[_Tok]
    pos: int = 0
    qregs: dict[str, _Register] = field(default_factory=dict)
    cregs: dict[str, _Register] = field(default_factory=dict)
    n_qubits: int = 0
    n_clbits: int = 0
    ops: list[GateOp] = field(default_factory=list)
    version: str | None = None
    includes: list[str] = field(default_factory=list)

    @property
    def tok(self) -> _Tok:
        return self.toks[self.pos]

    def error(self, message: str, tok: _Tok | None = None) -> QasmSyntaxError:
        tok = tok or self.tok
        return QasmSyntaxError(message, tok.line, tok.col)

    def advance(self) -> _Tok:
        tok = self.tok
        self.pos += 1
        return tok

    def expect(self, text: str) -> _Tok:
        if self.tok.text != text:
            shown = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {shown!r}")
        return self.advance()

    def expect_kind(self, kind: str, what: str) -> _Tok:
        if self.tok.kind != kind:
            shown = self.tok.text or "end of input"
            raise self.error(f"expected {what}, found {shown!r}")
        return self.advance()

    # program structure

    def program(self) -> None:
        if self.tok.text != "OPENQASM":
            raise self.error("program must start with 'OPENQASM 2.0;'")
        self.advance()
        ver = self.tok
        if ver.kind not in ("real", "int"):
            raise self.error("expected version number")
        self.advance()
        if float(ver.text) != 2.0:
            raise UnsupportedFeature(f"OpenQASM version {ver.text} (only 2.0 is supported)")
        self.version = "2.0"
        self.expect(";")
        while self.tok.kind != "eof":
            self.statement()

    def statement(self) -> None:
        tok = self.tok
        if tok.text == "$":
            raise self.error("unresolved parameter placeholder")
        if tok.kind != "id":
            raise self.error(f"unexpected {tok.text!r}")
        word = tok.text
        if word in _UNSUPPORTED:
            raise UnsupportedFeature(f"'{word}' is not supported (line {tok.line})")
        if word == "OPENQASM":
            raise self.error("OPENQASM header must come first")
        if word == "include":
            self.advance()
            name = self.expect_kind("str", "file name").text[1:-1]
            if name != "qelib1.inc":
                raise UnsupportedFeature(f"include of {name!r} (only qelib1.inc is available)")
            self.includes.append(name)
            self.expect(";")
        elif word in ("qreg", "creg"):
            self.declaration(word)
        elif word == "measure":
            self.measure()
        elif word == "barrier":
            self.advance()
            args = self.arglist(self.qregs)
            self.expect(";")
            qubits: list[int] = []
            for arg in args:
                for q in arg:
                    if q not in qubits:
                        qubits.append(q)
            self.ops.append(GateOp("barrier", (), tuple(qubits)))
        else:
            self.gate_call()

    def declaration(self, word: str) -> None:
        self.advance()
        name = self.expect_kind("id", "register name")
        self.expect("[")
        size = int(self.expect_kind("int", "register size").text)
        self.expect("]")
        self.expect(";")
        if size < 1:
            raise self.error(f"register {name.text} must have positive size", name)
        if name.text in self.qregs or name.text in self.cregs:
            raise self.error(f"register {name.text!r} already declared", name)
        if word == "qreg":
            self.qregs[name.text] = _Register(self.n_qubits, size)
            self.n_qubits += size
        else:
            self.cregs[name.text] = _Register(self.n_clbits, size)
            self.n_clbits += size

    def argument(self, regs: dict[str, _Register]) -> list[int]:
        name = self.expect_kind("id", "register reference")
        reg = regs.get(name.text)
        if reg is None:
            kind = "quantum" if regs is self.qregs else "classical"
            raise UndeclaredRegister(
                f"{kind} register {name.text!r} not declared (line {name.line})"
            )
        if self.tok.text == "[":
            self.advance()
            idx_tok = self.tok
            if idx_tok.text == "$":
                raise self.error("unresolved parameter placeholder")
            idx = int(self.expect_kind("int", "index").text)
            self.expect("]")
            if idx >= reg.size:
                raise IndexOutOfRange(
                    f"{name.text}[{idx}] out of range for size {reg.size} (line {idx_tok.line})"
                )
            return [reg.offset + idx]
        return [reg.offset + i for i in range(reg.size)]

    def arglist(self, regs: dict[str, _Register]) -> list[list[int]]:
        args = [self.argument(regs)]
        while self.tok.text == ",":
            self.advance()
            args.append(self.argument(regs))
        return args

    def measure(self) -> None:
        self.advance()
        src = self.argument(self.qregs)
        self.expect("->")
        dst = self.argument(self.cregs)
        self.expect(";")
        if len(src) != len(dst):
            raise self.error("measure operands have different sizes")
        for q, c in zip(src, dst):
            self.ops.append(GateOp("measure", (), (q,), c))

    def gate_call(self) -> None:
        name_tok = self.advance()
        kind = _ALIASES.get(name_tok.text, name_tok.text)
        if kind not in ARITY:
            raise UnsupportedFeature(
                f"unknown gate {name_tok.text!r} (line {name_tok.line}); custom gates are not supported"
            )
        params: list[float] = []
        if self.tok.text == "(":
            self.advance()
            if self.tok.text != ")":
                params.append(self.expr())
                while self.tok.text == ",":
                    self.advance()
                    params.append(self.expr())
            self.expect(")")
        args = self.arglist(self.qregs)
        self.expect(";")
        nq, npar = ARITY[kind]
        if len(params) != npar:
            raise self.error(f"{kind} takes {npar} parameter(s), got {len(params)}", name_tok)
        if len(args) != nq:
            raise self.error(f"{kind} takes {nq} qubit argument(s), got {len(args)}", name_tok)
        sizes = {len(a) for a in args if len(a) > 1}
        if len(sizes) > 1:
            raise self.error("register arguments have different sizes", name_tok)
        width = sizes.pop() if sizes else 1
        for i in range(width):
            qubits = tuple(a[i] if len(a) > 1 else a[0] for a in args)
            if len(set(qubits)) != len(qubits):
                raise self.error(f"{kind} operands must be distinct qubits", name_tok)
            self.ops.append(GateOp(kind, tuple(params), qubits))

    # expressions: sum := term (('+'|'-') term)*, term := unary (('*'|'/') unary)*,
    # unary := '-' unary | power, power := atom ('^' unary)?

    def expr(self) -> float:
        value = self.term()
        while self.tok.text in ("+", "-"):
            op = self.advance().text
            rhs = self.term()
            value = value + rhs if op == "+" else value - rhs
        return value

    def term(self) -> float:
        value = self.unary()
        while self.tok.text in ("*", "/"):
            op_tok = self.advance()
            rhs = self.unary()
            if op_tok.text == "*":
                value *= rhs
            else:
                if rhs == 0:
                    raise self.error("division by zero", op_tok)
                value /= rhs
        return value

    def unary(self) -> float:
        if self.tok.text == "-":
            self.advance()
            return -self.unary()
        if self.tok.text == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> float:
        base = self.atom()
        if self.tok.text == "^":
            self.advance()
            return base ** self.unary()
        return base

    def atom(self) -> float:
        tok = self.tok
        if tok.kind in ("real", "int"):
            self.advance()
            return float(tok.text)
        if tok.text == "(":
            self.advance()
            value = self.expr()
            self.expect(")")
            return value
        if tok.text == "$":
            raise self.error("unresolved parameter placeholder")
        if tok.kind == "id":
            self.advance()
            if tok.text == "pi":
                return math.pi
            if tok.text in _FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                try:
                    return _FUNCS[tok.text](arg)
                except ValueError as exc:
                    raise self.error(f"{tok.text}: {exc}", tok) from None
            raise self.error(f"unknown identifier {tok.text!r} in expression", tok)
        shown = tok.text or "end of input"
        raise self.error(f"expected expression, found {shown!r}")


def parse(source: str, source_name: str = "") -> Circuit:
    """Parse fully substituted OpenQASM 2.0 text into a :class:`Circuit`."""
    p = _Parser(_tokenize(source))
    p.program()
    return Circuit(
        n_qubits=p.n_qubits,
        n_clbits=p.n_clbits,
        ops=tuple(p.ops),
        source_name=source_name,
        version=p.version,
        includes=tuple(p.includes),
    )


def serialize(circuit: Circuit) -> str:
    """Render *circuit* as OpenQASM 2.0 over flat registers ``q`` and ``c``."""
    lines = [HEADER.rstrip("\n"), f"qreg q[{circuit.n_qubits}];"]
    if circuit.n_clbits:
        lines.append(f"creg c[{circuit.n_clbits}];")
    for op in circuit.ops:
        if op.kind == "measure":
            lines.append(f"measure q[{op.qubits[0]}] -> c[{op.clbit}];")
            continue
        args = ",".join(f"q[{q}]" for q in op.qubits)
        if op.params:
            angles = ",".join(format_angle(p) for p in op.params)
            lines.append(f"{op.kind}({angles}) {args};")
        else:
            lines.append(f"{op.kind} {args};")
    return "\n".join(lines) + "\n"
