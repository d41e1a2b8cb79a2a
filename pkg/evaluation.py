# --- START OF FILE evaluation.py ---
"""
Evaluation boundary: evaluator interface, a bounded worker pool and the
subprocess JSON protocol for external training jobs.

Failures never cross the pool boundary as exceptions; every request comes
back as an EvaluationResult, failed ones with `failed=True`.
"""

import json
import logging
import math
import shlex
import shutil
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor, FIRST_COMPLETED, wait
from concurrent.futures import TimeoutError as FutureTimeoutError
from dataclasses import dataclass

from pebble import ProcessPool, ProcessExpired

from config_space import Configuration
from utils import EvaluatorSetupError, InvalidParameterError

logger = logging.getLogger(__name__)

STDERR_KEEP_CHARS = 4000
POLL_SECONDS = 0.05


@dataclass(frozen=True)
class EvaluationRequest:
    config: Configuration
    resource: float
    request_id: str


@dataclass
class EvaluationResult:
    request_id: str
    loss: float | None
    duration: float = 0.0
    failed: bool = False
    error: str | None = None
    timed_out: bool = False
    finished_seq: int = -1

    @property
    def loss_or_inf(self) -> float:
        return math.inf if self.failed or self.loss is None else float(self.loss)


def failure(request_id: str, error: str, duration: float = 0.0, timed_out: bool = False) -> EvaluationResult:
    return EvaluationResult(request_id, None, duration, failed=True, error=error, timed_out=timed_out)


# --- Evaluators ---
class Evaluator:
    """Objective f(config, resource) -> loss. Subclasses override `__call__` or `run`."""
    serial_only = False
    name = "evaluator"

    def __call__(self, config: Configuration, resource: float) -> float:
        raise NotImplementedError

    def run(self, request: EvaluationRequest) -> EvaluationResult:
        start = time.perf_counter()
        try:
            loss = float(self(request.config, request.resource))
        except Exception as e:
            duration = time.perf_counter() - start
            logger.warning(f"Evaluation {request.request_id} raised {type(e).__name__}: {e}")
            return failure(request.request_id, f"{type(e).__name__}: {e}", duration)
        duration = time.perf_counter() - start
        if not math.isfinite(loss):
            return failure(request.request_id, f"non-finite loss {loss}", duration)
        return EvaluationResult(request.request_id, loss, duration)


class CallableEvaluator(Evaluator):
    """Wraps a plain function fn(config, resource) -> loss."""

    def __init__(self, fn, serial_only: bool = False, name: str | None = None):
        self.fn = fn
        self.serial_only = serial_only
        self.name = name or getattr(fn, "__name__", "callable")

    def __call__(self, config: Configuration, resource: float) -> float:
        return self.fn(config, resource)


class SubprocessEvaluator(Evaluator):
    """Runs `command` once per request using the JSON stdin/stdout protocol."""

    def __init__(self, command: str, timeout: float):
        if not command or not command.strip():
            raise EvaluatorSetupError("subprocess evaluator needs a command")
        if timeout is None or float(timeout) <= 0:
            raise EvaluatorSetupError("subprocess evaluator needs a positive timeout")
        try: argv = shlex.split(command)
        except ValueError as e: raise EvaluatorSetupError(f"cannot parse command '{command}': {e}")
        if not argv: raise EvaluatorSetupError("subprocess evaluator needs a command")
        if shutil.which(argv[0]) is None:
            raise EvaluatorSetupError(f"evaluator executable '{argv[0]}' not found or not executable")
        self.command = command
        self.timeout = float(timeout)
        self.name = argv[0]

    def run(self, request: EvaluationRequest) -> EvaluationResult:
        return subprocess_evaluate(self.command, request, self.timeout)


def subprocess_evaluate(command: str, request: EvaluationRequest, timeout: float | None = None) -> EvaluationResult:
    """Spawns the command, writes one request object to stdin, reads one {"request_id", "loss"} object back."""
    payload = {"request_id": request.request_id, "resource": request.resource, "config": request.config.to_dict()}
    start = time.perf_counter()
    try:
        proc = subprocess.run(
            shlex.split(command), input=json.dumps(payload), capture_output=True,
            text=True, encoding="utf-8", errors="replace", timeout=timeout,
        )
    except subprocess.TimeoutExpired as e:
        # subprocess.run kills the child before re-raising
        stderr = e.stderr.decode("utf-8", "replace") if isinstance(e.stderr, bytes) else (e.stderr or "")
        logger.warning(f"Evaluation {request.request_id} timed out after {timeout}s.")
        return failure(request.request_id, f"timeout after {timeout}s\n{stderr[-STDERR_KEEP_CHARS:]}",
                       time.perf_counter() - start, timed_out=True)
    except OSError as e:
        logger.error(f"Could not launch evaluator command '{command}': {e}")
        return failure(request.request_id, f"launch failed: {e}", time.perf_counter() - start)
    duration = time.perf_counter() - start
    stderr = (proc.stderr or "")[-STDERR_KEEP_CHARS:]
    if proc.returncode != 0:
        logger.warning(f"Evaluation {request.request_id} exited with status {proc.returncode}.")
        return failure(request.request_id, f"exit status {proc.returncode}\n{stderr}", duration)
    reply = _parse_reply(proc.stdout)
    if reply is None:
        return failure(request.request_id, f"malformed reply: {proc.stdout[:200]!r}\n{stderr}", duration)
    if reply.get("request_id") != request.request_id:
        return failure(request.request_id, f"reply for '{reply.get('request_id')}' does not match request\n{stderr}", duration)
    loss = reply.get("loss")
    if isinstance(loss, bool) or not isinstance(loss, (int, float)) or not math.isfinite(loss):
        return failure(request.request_id, f"reply has no finite loss: {loss!r}\n{stderr}", duration)
    return EvaluationResult(request.request_id, float(loss), duration)


def _parse_reply(stdout: str) -> dict | None:
    text = (stdout or "").strip()
    if not text:
        return None
    for candidate in (text, text.splitlines()[-1]):
        try:
            reply = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(reply, dict):
            return reply
    return None


def _run_request(evaluator: Evaluator, request: EvaluationRequest) -> EvaluationResult:
    return evaluator.run(request)


# --- Worker Pool ---
class WorkerPool:
    """
    Bounded pool for one rung of evaluations.

    backend "thread": ThreadPoolExecutor; a timed-out call is reported as a
    failure but its thread cannot be killed. It keeps holding one of the
    pool's `workers` slots until it returns, also across later batches, so
    a request that never gets a slot within `timeout` is failed unrun.
    backend "process": pebble ProcessPool; timed-out workers are killed.
    """

    def __init__(self, evaluator: Evaluator, workers: int = 1, timeout: float | None = None, backend: str = "thread"):
        if int(workers) < 1: raise InvalidParameterError(f"workers must be >= 1, got {workers}")
        if backend not in ("thread", "process"): raise InvalidParameterError(f"unknown pool backend '{backend}'")
        if timeout is not None and float(timeout) <= 0: raise InvalidParameterError(f"timeout must be positive, got {timeout}")
        self.evaluator = evaluator
        self.workers = 1 if getattr(evaluator, "serial_only", False) else int(workers)
        if self.workers != int(workers):
            logger.info(f"Evaluator '{evaluator.name}' is serial-only; using 1 worker instead of {workers}.")
        self.timeout = float(timeout) if timeout is not None else None
        self.backend = backend
        self.lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(self.workers)
        self.in_flight = 0
        self.peak_in_flight = 0
        self._seq = 0

    def _enter(self):
        with self.lock:
            self.in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)

    def _leave(self, result: EvaluationResult) -> EvaluationResult:
        with self.lock:
            self.in_flight -= 1
            result.finished_seq = self._seq
            self._seq += 1
        return result

    def _guarded(self, request: EvaluationRequest, on_start=None) -> EvaluationResult | None:
        # the slot is released only when the evaluator call returns
        with self._slots:
            if on_start is not None and not on_start():
                return None
            self._enter()
            try:
                result = self.evaluator.run(request)
            except Exception as e:
                logger.error(f"Evaluator crashed on {request.request_id}: {e}", exc_info=True)
                result = failure(request.request_id, f"{type(e).__name__}: {e}")
            return self._leave(result)

    def evaluate_batch(self, requests: list[EvaluationRequest]) -> list[EvaluationResult]:
        if not requests:
            return []
        if self.backend == "process":
            return self._evaluate_processes(requests)
        if self.workers == 1 and self.timeout is None:
            return [self._guarded(r) for r in requests]
        return self._evaluate_threads(requests)

    def _evaluate_threads(self, requests):
        results: list[EvaluationResult | None] = [None] * len(requests)
        started: dict[int, float] = {}
        abandoned: set[int] = set()
        start_lock = threading.Lock()
        submitted = time.monotonic()

        def task(i, request):
            def on_start():
                with start_lock:
                    if i in abandoned:
                        return False
                    started[i] = time.monotonic()
                    return True
            return self._guarded(request, on_start)

        executor = ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix="mfes-eval")
        try:
            futures = {executor.submit(task, i, r): i for i, r in enumerate(requests)}
            pending = set(futures)
            while pending:
                done, pending = wait(pending, timeout=POLL_SECONDS if self.timeout else None, return_when=FIRST_COMPLETED)
                for f in done:
                    if results[futures[f]] is None:
                        results[futures[f]] = f.result()
                if self.timeout is None:
                    continue
                now = time.monotonic()
                for f in list(pending):
                    i = futures[f]
                    with start_lock:
                        t0 = started.get(i)
                        if t0 is None and now - submitted > self.timeout:
                            abandoned.add(i)
                    if t0 is not None and now - t0 > self.timeout:
                        logger.warning(f"Evaluation {requests[i].request_id} exceeded {self.timeout}s; marking as failed.")
                        results[i] = failure(requests[i].request_id, f"timeout after {self.timeout}s", now - t0, timed_out=True)
                    elif i in abandoned:
                        logger.warning(f"Evaluation {requests[i].request_id} got no free worker within {self.timeout}s; marking as failed.")
                        results[i] = failure(requests[i].request_id, f"timeout after {self.timeout}s waiting for a worker",
                                             now - submitted, timed_out=True)
                    else:
                        continue
                    with self.lock:
                        results[i].finished_seq = self._seq
                        self._seq += 1
                    pending.discard(f)
        finally:
            executor.shutdown(wait=False, cancel_futures=True)
        return results

    def _evaluate_processes(self, requests):
        results: list[EvaluationResult | None] = [None] * len(requests)
        order: dict[int, int] = {}

        def mark_done(i):
            def callback(_future):
                with self.lock:
                    order[i] = self._seq
                    self._seq += 1
            return callback

        with ProcessPool(max_workers=self.workers) as pool:
            futures = []
            for i, r in enumerate(requests):
                future = pool.schedule(_run_request, args=(self.evaluator, r), timeout=self.timeout)
                future.add_done_callback(mark_done(i))
                futures.append(future)
            for i, (r, future) in enumerate(zip(requests, futures)):
                try:
                    results[i] = future.result()
                except FutureTimeoutError:
                    logger.warning(f"Evaluation {r.request_id} timed out after {self.timeout}s; worker killed.")
                    results[i] = failure(r.request_id, f"timeout after {self.timeout}s", self.timeout or 0.0, timed_out=True)
                except ProcessExpired as e:
                    logger.warning(f"Worker for {r.request_id} died: {e}")
                    results[i] = failure(r.request_id, f"worker process expired: {e}")
                except Exception as e:
                    logger.warning(f"Evaluation {r.request_id} failed in worker: {e}")
                    results[i] = failure(r.request_id, f"{type(e).__name__}: {e}")
        # the pool is joined here, so every completion callback has run
        for i, result in enumerate(results):
            result.finished_seq = order.get(i, i)
        return results



def evaluate_batch(requests: list[EvaluationRequest], workers: int, evaluator: Evaluator,
                   timeout: float | None = None, backend: str = "thread") -> list[EvaluationResult]:
    """Results in request order; at most `workers` evaluations in flight."""
    return WorkerPool(evaluator, workers, timeout, backend).evaluate_batch(requests)

# --- END OF FILE evaluation.py ---
