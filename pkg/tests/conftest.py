import sys
from pathlib import Path

import pytest

from qoffload.backend import BackendConfig, BackendServer
from qoffload.runtime import Runtime

ROOT = Path(__file__).resolve().parents[1]
QASM_DIR = ROOT / "qasm"
HAMILTONIAN = ROOT / "hamiltonians" / "heisenberg4.txt"

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def backend_factory():
    servers = []

    def make(**config):
        record = config.pop("record_requests", False)
        server = BackendServer("127.0.0.1", 0, BackendConfig(**config), record_requests=record).start()
        servers.append(server)
        return server

    yield make
    for s in servers:
        s.shutdown()


@pytest.fixture
def backend(backend_factory):
    return backend_factory(seed=1234)


@pytest.fixture
def runtime_factory():
    runtimes = []

    def make(backends=(), **kwargs):
        kwargs.setdefault("qasm_dir", QASM_DIR)
        kwargs.setdefault("poll_interval", 0.005)
        rt = Runtime(backends=[s.address if hasattr(s, "address") else s for s in backends], **kwargs)
        runtimes.append(rt)
        return rt

    yield make
    for rt in runtimes:
        rt.shutdown(wait=False)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
