import random
import threading
import time

import pytest

from qoffload.errors import BackendUnreachable, KernelFileNotFound, TaskFailed, UnknownHandle
from qoffload.runtime import DepGraph, Handle, Mode, QpuTaskSpec, Runtime

from dags import conflicting_pairs, random_program, run_program, sequential_oracle


def edges_of(spec):
    g = DepGraph()
    handles = {}
    for accesses in spec:
        g.add_task("host", [(handles.setdefault(n, Handle(len(handles), n)), Mode(m)) for n, m in accesses])
    return closure(g.edges())


def closure(edges):
    out = set(edges)
    while True:
        extra = {(a, d) for a, b in out for c, d in out if b == c} - out
        if not extra:
            return out
        out |= extra


class TestDepGraph:
    def test_raw(self):
        assert edges_of([[("a", "out")], [("a", "in")]]) == {(1, 2)}

    def test_war(self):
        assert edges_of([[("a", "in")], [("a", "out")]]) == {(1, 2)}

    def test_waw(self):
        assert edges_of([[("a", "out")], [("a", "out")]]) == {(1, 2)}

    def test_readers_are_independent(self):
        assert edges_of([[("a", "out")], [("a", "in")], [("a", "in")], [("a", "inout")]]) == closure({
            (1, 2), (1, 3), (2, 4), (3, 4)
        })

    def test_accumulate_group(self):
        e = edges_of([[("a", "out")], [("a", "accumulate")], [("a", "accumulate")], [("a", "in")]])
        assert e == closure({(1, 2), (1, 3), (2, 4), (3, 4)})

    def test_accumulate_groups_are_split_by_reader(self):
        e = edges_of([[("a", "accumulate")], [("a", "in")], [("a", "accumulate")]])
        assert e == closure({(1, 2), (2, 3)})

    def test_independent_handles(self):
        assert edges_of([[("a", "out")], [("b", "out")]]) == set()

    def test_acyclic(self):
        rng = random.Random(0)
        for _ in range(20):
            n, tasks = random_program(rng)
            g = DepGraph()
            hs = [Handle(i, str(i)) for i in range(n)]
            for acc in tasks:
                g.add_task("host", [(hs[h], m) for h, m in acc])
            assert g.is_acyclic()


class TestHostTasks:
    def test_sequential_equivalence_small(self):
        rng = random.Random(1)
        for k in range(10):
            n, tasks = random_program(rng, max_tasks=30)
            expected = sequential_oracle(n, tasks)
            for workers in (1, 4):
                values, nodes, violations = run_program(n, tasks, workers, seed=k)
                assert values == expected
                assert not violations
                for i, j in conflicting_pairs(tasks):
                    assert nodes[i].end_seq < nodes[j].start_seq

    def test_taskwait_with_nothing_spawned(self):
        with Runtime(workers=1) as rt:
            rt.taskwait()

    def test_unknown_handle(self):
        with Runtime(workers=1) as rt, Runtime(workers=1) as other:
            foreign = other.register("x")
            with pytest.raises(UnknownHandle):
                rt.spawn_host_task(lambda: None, ins=[foreign])

    def test_failure_poisons_successors(self):
        ran = []
        with Runtime(workers=2) as rt:
            a, b, c = (rt.register(n) for n in "abc")

            def boom():
                raise RuntimeError("kaput")

            rt.spawn_host_task(boom, outs=[a], label="boom")
            rt.spawn_host_task(lambda: ran.append("succ"), ins=[a], outs=[b])
            rt.spawn_host_task(lambda: ran.append("grandchild"), ins=[b])
            rt.spawn_host_task(lambda: ran.append("independent"), outs=[c])
            with pytest.raises(TaskFailed) as info:
                rt.taskwait()
            assert isinstance(info.value.__cause__, RuntimeError)
            assert info.value.label == "boom"
            assert ran == ["independent"]
            # spawning after a failure on the same handle is poisoned at once
            rt.spawn_host_task(lambda: ran.append("late"), ins=[a])
            with pytest.raises(TaskFailed):
                rt.taskwait()
            assert "late" not in ran
            rt.spawn_host_task(lambda: ran.append("fresh"), outs=[c])
            rt.taskwait()
        assert ran[-1] == "fresh"

    def test_workers_run_in_parallel(self):
        barrier = threading.Barrier(3, timeout=5)
        with Runtime(workers=3) as rt:
            for i in range(3):
                rt.spawn_host_task(barrier.wait, outs=[rt.register(str(i))])
            rt.taskwait()


class TestQpuTasks:
    def test_kernel_missing_raises_before_network(self, backend, runtime_factory, tmp_path):
        rt = runtime_factory([backend], qasm_dir=tmp_path)
        res = rt.register("r")
        with pytest.raises(KernelFileNotFound):
            rt.spawn_qpu_task(QpuTaskSpec("nope", 10, res))
        assert backend.queue.records == {}

    def test_no_backend(self, runtime_factory):
        rt = runtime_factory([])
        with pytest.raises(BackendUnreachable):
            rt.spawn_qpu_task(QpuTaskSpec("coin_flip", 10, rt.register("r")))

    def test_coin_flip_and_consumer(self, backend, runtime_factory):
        rt = runtime_factory([backend])
        res = rt.register("r")
        seen = []
        rt.spawn_qpu_task(QpuTaskSpec("coin_flip", 1000, res, seed=1))
        rt.spawn_host_task(lambda: seen.append(dict(res.value)), ins=[res])
        rt.taskwait()
        assert sum(seen[0].values()) == 1000

    def test_params_from_handle_and_extension(self, backend, runtime_factory):
        rt = runtime_factory([backend])
        theta = rt.register("theta")
        res = rt.register("r")
        rt.spawn_host_task(lambda: setattr(theta, "value", [0.0, 0.0]), outs=[theta])
        ext = "\n".join(f"measure q[{i}] -> c[{i}];" for i in range(4))
        rt.spawn_qpu_task(QpuTaskSpec("ansatz", 200, res, params=theta, extension=ext, seed=2))
        rt.taskwait()
        assert sum(res.value.values()) == 200

    def test_extension_only_kernel(self, backend, runtime_factory):
        rt = runtime_factory([backend])
        res = rt.register("r")
        rt.spawn_qpu_task(QpuTaskSpec("", 50, res, extension="x q[1];\nmeasure q[1] -> c[1];"))
        rt.taskwait()
        assert res.value == {"10": 50}

    def test_failed_job_surfaces(self, backend, runtime_factory):
        rt = runtime_factory([backend])
        res = rt.register("r")
        rt.spawn_qpu_task(QpuTaskSpec("", 5, res, extension="reset q[0];\nmeasure q[0] -> c[0];"))
        with pytest.raises(TaskFailed, match="JobFailed"):
            rt.taskwait()

    def test_round_robin_over_backends(self, backend_factory, runtime_factory):
        servers = [backend_factory(), backend_factory()]
        rt = runtime_factory(servers)
        handles = [rt.register(str(i)) for i in range(6)]
        for h in handles:
            rt.spawn_qpu_task(QpuTaskSpec("coin_flip", 10, h))
        rt.taskwait()
        assert [len(s.queue.records) for s in servers] == [3, 3]

    def test_one_status_per_outstanding_job_per_tick(self, backend_factory, runtime_factory):
        server = backend_factory(inject_latency_ms=30)
        rt = runtime_factory([server], poll_interval=0.01)
        for i in range(4):
            rt.spawn_qpu_task(QpuTaskSpec("coin_flip", 10, rt.register(str(i))))
        rt.taskwait()
        client = rt._poll_clients[0]
        statuses = client.requests_sent - 4  # minus one result per job
        assert statuses <= 4 * rt.poll_ticks
        assert rt._submit_clients[0].requests_sent == 4

    def test_host_task_runs_while_job_in_flight(self, backend_factory, runtime_factory):
        server = backend_factory(inject_latency_ms=300)
        rt = runtime_factory([server], workers=1)
        res, other = rt.register("r"), rt.register("o")
        qpu = rt.spawn_qpu_task(QpuTaskSpec("coin_flip", 10, res))
        host = rt.spawn_host_task(lambda: time.sleep(0.01), outs=[other])
        rt.taskwait()
        q, h = rt.graph.nodes[qpu], rt.graph.nodes[host]
        assert q.started_at < h.finished_at < q.finished_at
