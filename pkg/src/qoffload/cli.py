"""``qoffload`` command line: run the example applications, transpile
kernels ahead of time, or start a backend."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import backend as backend_mod
from .apps import RunConfig, landscape_csv, run_coin_flip, run_landscape, run_vqe
from .backend import BackendConfig, BackendServer
from .errors import QOffloadError
from .protocol import parse_addresses
from .qasm import PLACEHOLDER_RE, parse, serialize
from .transpiler import GateSet, transpile

log = logging.getLogger("qoffload")


def _add_run_parser(sub) -> None:
    p = sub.add_parser("run", help="run an example application")
    p.add_argument("example", choices=["coin-flip", "landscape", "vqe"])
    p.add_argument("--shots", type=int, default=None)
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--mode", choices=["seq", "par", "sequential", "parallel"], default="par")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hamiltonian", type=Path, default=None)
    p.add_argument("--backend", default=None, help="HOST:PORT[,HOST:PORT...]; default $QOFFLOAD_BACKEND")
    p.add_argument("--qasm-dir", type=Path, default=None)
    p.add_argument("--budget", type=int, default=300)
    p.add_argument("--ftol-rel", type=float, default=1e-4)
    p.add_argument("--exact", action="store_true", help="vqe: use the infinite-shot objective")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--poll-ms", type=float, default=None)
    p.add_argument("--local-backend", action="store_true",
                   help="start an in-process backend instead of connecting to one")
    p.add_argument("--inject-latency-ms", type=float, default=0.0,
                   help="with --local-backend: per-job device latency")
    p.add_argument("-o", "--output", type=Path, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qoffload", description="Hybrid quantum-classical task offloading.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run_parser(sub)

    t = sub.add_parser("transpile", help="lower a placeholder-free kernel to a native gate set")
    t.add_argument("input", type=Path)
    t.add_argument("--gateset", default="rz,sx,cx")
    t.add_argument("-o", "--output", type=Path, default=None)

    sub.add_parser("backend", help="start a backend server (same options as qoffload-backend)", add_help=False)
    return parser


def _default_shots(example: str) -> int:
    return {"coin-flip": 100_000, "landscape": 10_000, "vqe": 10_000}[example]


def _write(text: str, output: Path | None) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        output.write_text(text, encoding="utf-8", newline="\n")


def cmd_run(args) -> int:
    server = None
    if args.local_backend:
        server = BackendServer(
            "127.0.0.1", 0, BackendConfig(inject_latency_ms=args.inject_latency_ms)
        ).start()
        backends = [server.address]
    else:
        text = args.backend or os.environ.get("QOFFLOAD_BACKEND") or "127.0.0.1:9000"
        backends = parse_addresses(text)
    poll = args.poll_ms if args.poll_ms is not None else float(os.environ.get("QOFFLOAD_POLL_MS", 10))
    config = RunConfig(
        backends=backends,
        shots=args.shots or _default_shots(args.example),
        seed=args.seed,
        qasm_dir=args.qasm_dir,
        output=args.output,
        grid=args.grid,
        mode=args.mode,
        budget=args.budget,
        ftol_rel=args.ftol_rel,
        exact=args.exact,
        hamiltonian=args.hamiltonian,
        workers=args.workers,
        poll_interval=poll / 1000.0,
    )
    started = time.perf_counter()
    try:
        if args.example == "coin-flip":
            report = run_coin_flip(config, out=sys.stderr if args.output is None else sys.stdout)
            _write(json.dumps(report, indent=2, sort_keys=True) + "\n", args.output)
        elif args.example == "landscape":
            _write(landscape_csv(run_landscape(config)), args.output)
        else:
            report = run_vqe(config)
            _write(json.dumps(report, indent=2, sort_keys=True) + "\n", args.output)
    finally:
        if server is not None:
            server.shutdown()
    log.info("%s finished in %.2f s", args.example, time.perf_counter() - started)
    return 0


def cmd_transpile(args) -> int:
    source = args.input.read_text(encoding="utf-8")
    if PLACEHOLDER_RE.search(source):
        raise QOffloadError(
            f"{args.input} contains $[k] placeholders; ahead-of-time transpilation needs bound angles"
        )
    circuit = transpile(parse(source, args.input.stem), GateSet.parse(args.gateset))
    _write(serialize(circuit), args.output)
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "backend":
        return backend_mod.main(argv[1:])
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_transpile(args)
    except (QOffloadError, OSError, ValueError) as exc:
        print(f"qoffload: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
