"""Evaluation backends: a deterministic in-process mock and a subprocess
runner client speaking the line protocol of :mod:`kernelevo.wire`.

The mock simulates fitness from source-text features so the full search loop
is testable without a GPU: named speed tokens shrink the simulated runtime,
named failure markers produce the corresponding failure class, and everything
is a pure function of (candidate source, task, backend seed).
"""

from __future__ import annotations

import logging
import os
import queue
import shlex
import subprocess
import threading
import time
import zlib

from .evaluation import (
    CASE_STATUSES,
    STATUS_COMPILE_ERROR,
    STATUS_MEMORY_ERROR,
    STATUS_NUMERIC_ERROR,
    STATUS_PASS,
    STATUS_TIMEOUT,
    BackendUnavailable,
    EvalCaseResult,
    EvalReport,
    classify_failure,
    compute_speedup,
    crash_report,
    summarize_runtime,
)
from .tasks import BASELINE_COMPILED, BASELINE_NATIVE, KernelCandidate, TaskSpec, enumerate_eval_cases
from . import wire

logger = logging.getLogger(__name__)

# Source tokens the mock treats as genuine optimizations (multiplicative).
MOCK_SPEED_TOKENS = {
    "shared_tile": 0.80,
    "vectorized_float4": 0.84,
    "warp_shuffle": 0.87,
    "coalesced_access": 0.90,
    "loop_unroll": 0.92,
    "constant_cache": 0.94,
    "stride_loop": 0.95,
    "fast_math": 0.96,
}

# Markers that make the mock fail a candidate with a specific class.
MOCK_FAIL_COMPILE = "__compile_bug__"
MOCK_FAIL_MEMORY = "__oob_access__"
MOCK_FAIL_NUMERIC = "__bad_math__"
MOCK_FAIL_TIMEOUT = "__stall__"

_MOCK_FAILURES = (
    (MOCK_FAIL_COMPILE, STATUS_COMPILE_ERROR, "nvcc exit 1: error: expected ';'"),
    (
        MOCK_FAIL_MEMORY,
        STATUS_MEMORY_ERROR,
        "CUDA error: an illegal memory access was encountered",
    ),
    (MOCK_FAIL_NUMERIC, STATUS_NUMERIC_ERROR, "tolerance violated"),
    (MOCK_FAIL_TIMEOUT, STATUS_TIMEOUT, "wall-clock budget exceeded"),
)


def _crc(text: str) -> int:
    return zlib.crc32(text.encode())


class MockBackend:
    """Deterministic fitness simulator keyed on source-text features."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    # -- simulated physics ------------------------------------------------

    def base_runtime_ms(self, task: TaskSpec) -> float:
        return 6.0 + (_crc(task.name) % 600) / 100.0

    def baseline_runtime_ms(self, task: TaskSpec) -> dict[str, float]:
        base = self.base_runtime_ms(task)
        values = {BASELINE_NATIVE: base * 1.18, BASELINE_COMPILED: base * 0.92}
        return {b: values[b] for b in task.config.baselines if b in values}

    def candidate_runtime_ms(self, source: str, task: TaskSpec) -> float:
        runtime = self.base_runtime_ms(task)
        for token, factor in MOCK_SPEED_TOKENS.items():
            if token in source:
                runtime *= factor
        jitter = 1.0 + ((_crc(f"{self.seed}:{source}") % 2001) - 1000) / 1e6
        return runtime * jitter

    # -- backend surface ---------------------------------------------------

    def open_session(self, task: TaskSpec, device: str) -> "MockSession":
        return MockSession(self, task)


class MockSession:
    def __init__(self, backend: MockBackend, task: TaskSpec):
        self.backend = backend
        self.task = task

    def evaluate(self, candidate: KernelCandidate) -> EvalReport:
        task = self.task
        cases = enumerate_eval_cases(task.config)
        for marker, status, log in _MOCK_FAILURES:
            if marker in candidate.source:
                if status == STATUS_COMPILE_ERROR:
                    results = (
                        EvalCaseResult(case_id="compile", status=status, message=log),
                    )
                else:
                    diff = 0.5 if status == STATUS_NUMERIC_ERROR else None
                    results = tuple(
                        EvalCaseResult(
                            case_id=c.case_id, status=status, max_abs_diff=diff, message=log
                        )
                        for c in cases
                    )
                return EvalReport(
                    candidate_id=candidate.id, correct=False, case_results=results
                )

        runtime = self.backend.candidate_runtime_ms(candidate.source, task)
        baselines = self.backend.baseline_runtime_ms(task)
        results = tuple(
            EvalCaseResult(
                case_id=c.case_id, status=STATUS_PASS, max_abs_diff=0.0, message=""
            )
            for c in cases
        )
        return EvalReport(
            candidate_id=candidate.id,
            correct=True,
            case_results=results,
            runtime_ms=runtime,
            runtime_std_ms=runtime * 0.01,
            baseline_runtime_ms=baselines,
            speedup={b: compute_speedup(ms, runtime) for b, ms in baselines.items()},
            profile={
                "host-profiler": (
                    f"mock profile for {candidate.kernel_name}: "
                    f"runtime {runtime:.4f} ms, memory-bound"
                )
            },
        )

    def close(self) -> None:
        pass


class SubprocessBackend:
    """Launches one runner process per device and drives it over pipes.

    The launch command comes from ``runner_cmd`` or the RUNNER_CMD environment
    variable; ``--mode`` and ``--device`` are appended.  Baseline runtimes are
    measured once per (task, device) and cached.
    """

    def __init__(
        self,
        runner_cmd: str | None = None,
        mode: str = "cuda",
        compile_budget_s: float = 120.0,
        evaluate_budget_s: float = 180.0,
        compile_flags: tuple[str, ...] = ("-O3", "--use_fast_math"),
    ):
        cmd = runner_cmd or os.environ.get("RUNNER_CMD")
        if not cmd:
            raise BackendUnavailable("RUNNER_CMD not configured")
        self.runner_cmd = cmd
        self.mode = mode
        self.compile_budget_s = compile_budget_s
        self.evaluate_budget_s = evaluate_budget_s
        self.compile_flags = compile_flags
        self._baseline_cache: dict[tuple[str, str, str], dict[str, float]] = {}
        self._cache_lock = threading.Lock()

    def spawn(self, device: str) -> subprocess.Popen:
        argv = shlex.split(self.runner_cmd) + ["--mode", self.mode, "--device", device]
        try:
            return subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
            )
        except OSError as exc:
            raise BackendUnavailable(f"cannot launch runner: {exc}") from exc

    def open_session(self, task: TaskSpec, device: str) -> "RunnerSession":
        session = RunnerSession(self, self.spawn(device), task, device)
        session.handshake()
        return session

    def cached_baselines(self, task: TaskSpec, device: str) -> dict[str, float] | None:
        with self._cache_lock:
            return self._baseline_cache.get((task.name, task.direction, device))

    def store_baselines(self, task: TaskSpec, device: str, values: dict[str, float]) -> None:
        with self._cache_lock:
            self._baseline_cache[(task.name, task.direction, device)] = values


class RunnerSession:
    def __init__(self, backend: SubprocessBackend, proc: subprocess.Popen, task: TaskSpec, device: str):
        self.backend = backend
        self.task = task
        self.device = device
        self._dead = False
        self._attach(proc)

    # -- plumbing ----------------------------------------------------------

    def _attach(self, proc: subprocess.Popen) -> None:
        self.proc = proc
        # Blocking readline happens on a dedicated thread so reply reads can
        # observe the wall-clock budget even when the runner hangs.
        self._lines: queue.SimpleQueue = queue.SimpleQueue()
        self._reader = threading.Thread(target=self._pump, args=(proc, self._lines), daemon=True)
        self._reader.start()

    @staticmethod
    def _pump(proc: subprocess.Popen, lines: queue.SimpleQueue) -> None:
        assert proc.stdout is not None
        try:
            for line in proc.stdout:
                lines.put(line)
        except ValueError:
            pass  # stream closed under us
        lines.put(None)

    def _ensure_alive(self) -> None:
        """Relaunch the runner if a previous candidate took it down."""
        if not self._dead and self.proc.poll() is None:
            return
        logger.warning("runner on device %s died; relaunching", self.device)
        self._attach(self.backend.spawn(self.device))
        self._dead = False
        self.handshake()

    def _send(self, message: wire.RunnerMessage) -> None:
        assert self.proc.stdin is not None
        self.proc.stdin.write(wire.encode(message))
        self.proc.stdin.flush()

    def _read(self, deadline: float) -> wire.RunnerMessage:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise TimeoutError("runner reply budget exceeded")
        try:
            line = self._lines.get(timeout=remaining)
        except queue.Empty:
            raise TimeoutError("runner reply budget exceeded") from None
        if line is None:
            self._lines.put(None)  # keep end-of-stream sticky for later reads
            self._dead = True
            raise ConnectionError("runner closed its output stream")
        return wire.decode(line)

    def handshake(self) -> None:
        try:
            self._send(wire.RunnerMessage(wire.HELLO, {"mode": self.backend.mode, "device": self.device}))
            reply = self._read(time.monotonic() + 30.0)
        except Exception as exc:
            self.close()
            raise BackendUnavailable(f"runner handshake failed: {exc}") from exc
        if reply.kind != wire.HELLO or reply.protocol_version != wire.PROTOCOL_VERSION:
            self.close()
            raise BackendUnavailable(f"unexpected handshake reply: {reply.kind}")

    # -- evaluation --------------------------------------------------------

    def evaluate(self, candidate: KernelCandidate) -> EvalReport:
        try:
            self._ensure_alive()
        except BackendUnavailable as exc:
            return crash_report(candidate.id, f"runner relaunch failed: {exc}")
        task = self.task
        cases = enumerate_eval_cases(task.config)
        cached = self.backend.cached_baselines(task, self.device)
        want_baselines = list(task.config.baselines) if cached is None else []
        request = wire.RunnerMessage(
            wire.EVAL_REQUEST,
            {
                "candidate_id": candidate.id,
                "kernel_name": candidate.kernel_name,
                "source": candidate.source,
                "task_name": task.name,
                "reference_source": task.reference_source,
                "direction": task.direction,
                "cases": [
                    {
                        "case_id": c.case_id,
                        "shapes": [list(s) for s in c.shapes],
                        "init_seed": c.init_seed,
                        "input_seed": c.input_seed,
                    }
                    for c in cases
                ],
                "atol": task.config.atol,
                "rtol": task.config.rtol,
                "warmup_runs": task.config.warmup_runs,
                "timed_runs": task.config.timed_runs,
                "baselines": want_baselines,
                "compile_flags": list(self.backend.compile_flags),
                "budgets": {
                    "compile_s": self.backend.compile_budget_s,
                    "evaluate_s": self.backend.evaluate_budget_s,
                },
            },
        )
        deadline = (
            time.monotonic()
            + self.backend.compile_budget_s
            + self.backend.evaluate_budget_s
            + 2.0  # protocol slack on top of the per-candidate budgets
        )
        try:
            self._send(request)
            return self._collect(candidate, cases, cached, deadline)
        except (TimeoutError,) as exc:
            self._abandon()
            return EvalReport(
                candidate_id=candidate.id,
                correct=False,
                case_results=(
                    EvalCaseResult(
                        case_id="budget", status=STATUS_TIMEOUT, message=str(exc)
                    ),
                ),
            )
        except (wire.WireError, ConnectionError, BrokenPipeError, OSError) as exc:
            self._abandon()
            return crash_report(candidate.id, f"protocol failure: {exc}")

    def _collect(self, candidate, cases, cached_baselines, deadline) -> EvalReport:
        case_results: list[EvalCaseResult] = []
        samples_ms: list[float] | None = None
        baseline_samples: dict[str, list[float]] = {}
        profile: dict[str, str] = {}
        while True:
            message = self._read(deadline)
            if message.kind == wire.BYE:
                break
            if message.kind == wire.ERROR:
                text = message.payload.get("message", "") + "\n" + message.payload.get("traceback", "")
                return crash_report(candidate.id, text.strip())
            if message.kind == wire.CASE_RESULT:
                payload = message.payload
                status = payload["status"]
                if status not in CASE_STATUSES:
                    status = classify_failure(status, payload.get("message", ""))
                case_results.append(
                    EvalCaseResult(
                        case_id=payload["case_id"],
                        status=status,
                        max_abs_diff=payload.get("max_abs_diff"),
                        message=payload.get("message", ""),
                    )
                )
            elif message.kind == wire.TIMING_RESULT:
                samples_ms = list(message.payload["samples_ms"])
                for name, samples in message.payload.get("baseline_samples_ms", {}).items():
                    baseline_samples[name] = list(samples)
            elif message.kind == wire.PROFILE_BLOB:
                profile[message.payload["label"]] = message.payload["text"]
            # hello and eval_request are never valid mid-reply
            elif message.kind in (wire.HELLO, wire.EVAL_REQUEST):
                raise wire.WireError(f"unexpected {message.kind} in reply stream")

        correct = bool(case_results) and all(
            r.status == STATUS_PASS for r in case_results
        )
        runtime_ms = runtime_std = None
        if correct and samples_ms is not None:
            runtime_ms, runtime_std = summarize_runtime(
                samples_ms, self.task.config.warmup_runs
            )
        elif correct and samples_ms is None:
            # A correct candidate must come with timing; treat as crash.
            return crash_report(candidate.id, "runner omitted timing_result")

        baselines = dict(cached_baselines or {})
        if baseline_samples:
            for name, samples in baseline_samples.items():
                mean, _ = summarize_runtime(samples, self.task.config.warmup_runs)
                baselines[name] = mean
            self.backend.store_baselines(self.task, self.device, baselines)

        speedup = {}
        if runtime_ms is not None:
            speedup = {
                name: compute_speedup(ms, runtime_ms) for name, ms in baselines.items()
            }
        return EvalReport(
            candidate_id=candidate.id,
            correct=correct,
            case_results=tuple(case_results),
            runtime_ms=runtime_ms,
            runtime_std_ms=runtime_std,
            baseline_runtime_ms=baselines,
            speedup=speedup,
            profile=profile or None,
        )

    def _abandon(self) -> None:
        """Kill a runner whose reply stream can no longer be trusted."""
        self._dead = True
        try:
            self.proc.kill()
            self.proc.wait(timeout=5)
        except Exception:
            pass

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self._send(wire.RunnerMessage(wire.BYE, {}))
                self.proc.wait(timeout=10)
            except Exception:
                self._abandon()
        try:
            if self.proc.stdin:
                self.proc.stdin.close()
            if self.proc.stdout:
                self.proc.stdout.close()
        except Exception:
            pass
