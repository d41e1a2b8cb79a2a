"""Worker pool, subprocess protocol and the built-in benchmarks."""

import math
import shlex
import sys
import threading
import time

import numpy as np
import pytest

from benchmarks import BENCHMARKS, BenchmarkSpec, SyntheticEvaluator, distortion, list_benchmarks, synthetic_objective
from config_space import ConfigurationSpace, ParameterSpec, sample_uniform
from evaluation import (
    CallableEvaluator, EvaluationRequest, Evaluator, SubprocessEvaluator, WorkerPool, evaluate_batch,
    subprocess_evaluate,
)
from experiments import fidelity_correlations
from utils import EvaluatorSetupError, InvalidParameterError, make_rng

SPACE = ConfigurationSpace([ParameterSpec("x", "continuous", 0.0, 1.0)])


def requests(n, resource=1.0):
    rng = make_rng(0, "sample")
    return [EvaluationRequest(sample_uniform(SPACE, rng), resource, f"req-{i}") for i in range(n)]


class SleepEvaluator(Evaluator):
    """Module level so the process backend can pickle it."""
    name = "sleep"

    def __init__(self, seconds):
        self.seconds = seconds

    def __call__(self, config, resource):
        time.sleep(self.seconds)
        return config["x"]


# --- Worker Pool ---
def test_serial_pool_keeps_request_order():
    results = evaluate_batch(requests(5), 1, CallableEvaluator(lambda c, r: c["x"] * r))
    assert [r.request_id for r in results] == [f"req-{i}" for i in range(5)]
    assert [r.finished_seq for r in results] == list(range(5))
    assert all(not r.failed and r.duration >= 0 for r in results)


def test_parallel_pool_caps_in_flight_and_overlaps():
    pool = WorkerPool(SleepEvaluator(0.2), workers=3)
    start = time.perf_counter()
    results = pool.evaluate_batch(requests(9))
    elapsed = time.perf_counter() - start
    assert [r.request_id for r in results] == [f"req-{i}" for i in range(9)]
    assert pool.peak_in_flight <= 3
    assert 0.55 <= elapsed < 1.2


def test_one_failure_does_not_abort_siblings():
    def flaky(config, resource):
        if config["x"] == bad["x"]:
            raise RuntimeError("diverged")
        return 1.0

    reqs = requests(9)
    bad = reqs[4].config
    results = evaluate_batch(reqs, 3, CallableEvaluator(flaky))
    assert results[4].failed and "diverged" in results[4].error
    assert results[4].loss_or_inf == math.inf
    assert sum(not r.failed for r in results) == 8


def test_non_finite_loss_is_a_failure():
    results = evaluate_batch(requests(2), 1, CallableEvaluator(lambda c, r: float("nan")))
    assert all(r.failed for r in results)


def test_thread_timeout_marks_failure():
    results = evaluate_batch(requests(2), 2, SleepEvaluator(1.0), timeout=0.2)
    assert all(r.failed and r.timed_out for r in results)


class FirstCallSleeps(Evaluator):
    name = "first-call-sleeps"

    def __init__(self, seconds):
        self.seconds = seconds
        self.calls = 0

    def __call__(self, config, resource):
        self.calls += 1
        if self.calls == 1:
            time.sleep(self.seconds)
        return config["x"]


def test_timed_out_thread_keeps_its_slot_across_batches():
    pool = WorkerPool(FirstCallSleeps(0.6), workers=1, timeout=0.1)
    first = pool.evaluate_batch(requests(1))
    second = pool.evaluate_batch(requests(1))
    assert first[0].timed_out and second[0].timed_out
    assert "waiting for a worker" in second[0].error
    time.sleep(0.8)
    assert pool.peak_in_flight <= 1
    assert pool.evaluator.calls == 1


def test_next_batch_runs_once_the_slot_frees():
    pool = WorkerPool(FirstCallSleeps(0.7), workers=1, timeout=0.5)
    assert pool.evaluate_batch(requests(1))[0].timed_out
    second = pool.evaluate_batch(requests(1))
    assert not second[0].failed
    assert pool.peak_in_flight <= 1


def test_serial_only_evaluator_forces_one_worker():
    seen = []
    lock = threading.Lock()

    def record(config, resource):
        with lock: seen.append(threading.get_ident())
        return 0.0

    pool = WorkerPool(CallableEvaluator(record, serial_only=True), workers=4)
    assert pool.workers == 1
    pool.evaluate_batch(requests(4))
    assert pool.peak_in_flight == 1


def test_process_backend_kills_timed_out_workers():
    results = evaluate_batch(requests(3), 3, SleepEvaluator(5.0), timeout=0.5, backend="process")
    assert all(r.failed and r.timed_out for r in results)


def test_process_backend_runs_synthetic_benchmark():
    spec = BenchmarkSpec("hartmann3", noise_std=0.0, fidelity_bias=0.0)
    rng = make_rng(0, "sample")
    reqs = [EvaluationRequest(sample_uniform(spec.space, rng), 27.0, f"h-{i}") for i in range(4)]
    results = evaluate_batch(reqs, 2, SyntheticEvaluator(spec, 0), backend="process")
    assert all(not r.failed for r in results)
    assert sorted(r.finished_seq for r in results) == [0, 1, 2, 3]
    for req, res in zip(reqs, results):
        assert res.loss == pytest.approx(spec.benchmark.f_true(req.config))


def test_pool_parameter_validation():
    with pytest.raises(InvalidParameterError):
        WorkerPool(SleepEvaluator(0), workers=0)
    with pytest.raises(InvalidParameterError):
        WorkerPool(SleepEvaluator(0), backend="cluster")


# --- Subprocess Protocol ---
IDENTITY = """
import json, sys
req = json.load(sys.stdin)
print("warming up", file=sys.stderr)
json.dump({"request_id": req["request_id"], "loss": req["config"]["x"]}, sys.stdout)
"""


def script_command(tmp_path, body, name="evaluator.py"):
    path = tmp_path / name
    path.write_text(body, encoding="utf-8")
    return f"{shlex.quote(sys.executable)} {shlex.quote(str(path))}"


def test_identity_round_trip_is_bit_exact(tmp_path):
    command = script_command(tmp_path, IDENTITY)
    for req in requests(5):
        result = subprocess_evaluate(command, req, timeout=30)
        assert not result.failed
        assert result.loss == req.config["x"]


def test_nonzero_exit_captures_stderr(tmp_path):
    command = script_command(tmp_path, "import sys\nprint('out of memory', file=sys.stderr)\nsys.exit(3)\n")
    result = subprocess_evaluate(command, requests(1)[0], timeout=30)
    assert result.failed and not result.timed_out
    assert "exit status 3" in result.error and "out of memory" in result.error


def test_undecodable_output_keeps_stderr(tmp_path):
    body = ("import sys\nsys.stdout.buffer.write(b'\\xff\\xfe garbage')\n"
            "sys.stderr.buffer.write(b'cuda error \\xc3\\x28 at step 7')\nsys.exit(2)\n")
    result = subprocess_evaluate(script_command(tmp_path, body), requests(1)[0], timeout=30)
    assert result.failed and "exit status 2" in result.error
    assert "cuda error" in result.error and "at step 7" in result.error
    garbled = script_command(tmp_path, "import sys\nsys.stdout.buffer.write(b'\\xff{}')\n", "garbled.py")
    assert subprocess_evaluate(garbled, requests(1)[0], timeout=30).failed


def test_malformed_and_mismatched_replies(tmp_path):
    bad = script_command(tmp_path, "print('not json')\n", "bad.py")
    assert subprocess_evaluate(bad, requests(1)[0], timeout=30).failed
    other = script_command(tmp_path, "import json\nprint(json.dumps({'request_id': 'other', 'loss': 1.0}))\n", "other.py")
    result = subprocess_evaluate(other, requests(1)[0], timeout=30)
    assert result.failed and "does not match" in result.error


def test_timeout_kills_child(tmp_path):
    command = script_command(tmp_path, "import time\ntime.sleep(30)\n")
    start = time.perf_counter()
    result = subprocess_evaluate(command, requests(1)[0], timeout=0.5)
    assert result.failed and result.timed_out
    assert time.perf_counter() - start < 10


def test_subprocess_failures_do_not_abort_siblings(tmp_path):
    body = IDENTITY.replace("json.dump(", "sys.exit(1) if req['request_id'] == 'req-1' else json.dump(")
    evaluator = SubprocessEvaluator(script_command(tmp_path, body), timeout=30)
    results = evaluate_batch(requests(3), 3, evaluator)
    assert [r.failed for r in results] == [False, True, False]


def test_subprocess_evaluator_setup_errors():
    with pytest.raises(EvaluatorSetupError):
        SubprocessEvaluator("", timeout=10)
    with pytest.raises(EvaluatorSetupError):
        SubprocessEvaluator("python eval.py", timeout=None)
    with pytest.raises(EvaluatorSetupError):
        SubprocessEvaluator("python 'unterminated", timeout=10)
    with pytest.raises(EvaluatorSetupError):
        SubprocessEvaluator("/nonexistent/trainer --epochs 3", timeout=10)
    with pytest.raises(EvaluatorSetupError):
        SubprocessEvaluator("no-such-trainer-on-path", timeout=10)
    assert SubprocessEvaluator(f"{shlex.quote(sys.executable)} train.py", timeout=10).timeout == 10


# --- Benchmarks ---
def test_branin_minimum_at_full_fidelity():
    spec = BenchmarkSpec("branin", noise_std=0.0, fidelity_bias=1.0, max_resource=27)
    for x1, x2 in ((math.pi, 2.275), (-math.pi, 12.275), (9.42478, 2.475)):
        config = spec.space.make({"x1": x1, "x2": x2})
        assert synthetic_objective(spec, config, 27, make_rng(0)) == pytest.approx(0.397887, abs=1e-4)


def test_hartmann_known_minima():
    h3 = BenchmarkSpec("hartmann3", fidelity_bias=0.0)
    c3 = h3.space.make({"x0": 0.114614, "x1": 0.555649, "x2": 0.852547})
    assert h3.benchmark.f_true(c3) == pytest.approx(-3.86278, abs=1e-4)
    h6 = BenchmarkSpec("hartmann6", fidelity_bias=0.0)
    point = (0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573)
    c6 = h6.space.make({f"x{i}": v for i, v in enumerate(point)})
    assert h6.benchmark.f_true(c6) == pytest.approx(-3.32237, abs=1e-4)


def test_counting_ones_optimum():
    spec = BenchmarkSpec("counting_ones")
    values = {f"c{i}": "1" for i in range(4)} | {f"x{i}": 1.0 for i in range(4)}
    assert spec.benchmark.f_true(spec.space.make(values)) == pytest.approx(-1.0)


def test_bias_vanishes_at_full_resource_and_without_bias():
    spec = BenchmarkSpec("hartmann6", noise_std=0.0, fidelity_bias=1.0, max_resource=27)
    flat = BenchmarkSpec("hartmann6", noise_std=0.0, fidelity_bias=0.0, max_resource=27)
    rng = make_rng(5, "sample")
    for _ in range(20):
        c = sample_uniform(spec.space, rng)
        truth = spec.benchmark.f_true(c)
        assert synthetic_objective(spec, c, 27, rng) == truth
        for r in (1, 3, 9):
            assert synthetic_objective(flat, c, r, rng) == truth
        assert synthetic_objective(spec, c, 1, rng) != truth


def test_bias_is_measured_in_the_benchmark_unit():
    rng = make_rng(2, "sample")
    for name, bench in BENCHMARKS.items():
        spec = BenchmarkSpec(name, noise_std=0.0, fidelity_bias=0.5, max_resource=27)
        for _ in range(10):
            c = sample_uniform(spec.space, rng)
            shift = synthetic_objective(spec, c, 1, rng) - bench.f_true(c)
            assert shift == pytest.approx(0.5 * (26 / 27) * bench.spread * distortion(spec, c))
            assert abs(shift) <= 0.5 * bench.spread + 1e-12


def test_synthetic_evaluator_is_deterministic():
    spec = BenchmarkSpec("branin", noise_std=0.5)
    c = sample_uniform(spec.space, make_rng(1, "sample"))
    a, b = SyntheticEvaluator(spec, 3), SyntheticEvaluator(spec, 3)
    assert a(c, 9) == b(c, 9)
    assert a(c, 9) != SyntheticEvaluator(spec, 4)(c, 9)


def test_fidelity_information_increases_with_resource():
    for name in BENCHMARKS:
        per_seed = [fidelity_correlations(BenchmarkSpec(name, fidelity_bias=1.0), [1, 3, 9, 27], seed=s)
                    for s in range(10)]
        medians = np.median(per_seed, axis=0)
        assert all(a <= b + 1e-12 for a, b in zip(medians, medians[1:]))
        assert medians[-1] == pytest.approx(1.0)


def test_benchmark_registry():
    names = {b["name"] for b in list_benchmarks()}
    assert names == set(BENCHMARKS) == {"branin", "hartmann3", "hartmann6", "counting_ones"}
    with pytest.raises(InvalidParameterError):
        BenchmarkSpec("rosenbrock")
    with pytest.raises(InvalidParameterError):
        BenchmarkSpec("branin", noise_std=-1)
