"""Correctness checking, timing statistics, failure taxonomy, and the
device-parallel dispatch of candidate kernels to an evaluation backend."""

from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .tasks import KernelCandidate, TaskSpec

logger = logging.getLogger(__name__)

STATUS_PASS = "pass"
STATUS_COMPILE_ERROR = "compile_error"
STATUS_MEMORY_ERROR = "memory_error"
STATUS_NUMERIC_ERROR = "numeric_error"
STATUS_TIMEOUT = "timeout"
STATUS_PARSE_ERROR = "parse_error"
STATUS_RUNNER_CRASH = "runner_crash"

CASE_STATUSES = (
    STATUS_PASS,
    STATUS_COMPILE_ERROR,
    STATUS_MEMORY_ERROR,
    STATUS_NUMERIC_ERROR,
    STATUS_TIMEOUT,
    STATUS_PARSE_ERROR,
    STATUS_RUNNER_CRASH,
)

# CUDA runtime diagnostics that identify device memory faults in a log.
MEMORY_ERROR_MARKERS = (
    "an illegal memory access was encountered",
    "illegal memory access",
    "out of memory",
    "misaligned address",
    "invalid device pointer",
    "device-side assert",
    "unspecified launch failure",
    "illegal instruction",
)

PROFILE_HOST = "host-profiler"
PROFILE_HARDWARE = "hardware-profiler"
PROFILE_STATIC = "static-analysis"


class ShapeMismatch(ValueError):
    """Compared arrays do not share a shape."""


class InsufficientSamples(ValueError):
    """Fewer timing samples than the warmup count requires."""


class NonPositiveRuntime(ValueError):
    """Speedup is undefined for non-positive runtimes."""


class BackendUnavailable(RuntimeError):
    """The evaluation backend cannot be reached or launched."""


@dataclass(frozen=True, slots=True)
class EvalCaseResult:
    """Outcome of one correctness case."""

    case_id: str
    status: str
    max_abs_diff: float | None = None
    message: str = ""

    def __post_init__(self):
        if self.status not in CASE_STATUSES:
            raise ValueError(f"unknown case status {self.status!r}")
        if self.status in (STATUS_PASS, STATUS_NUMERIC_ERROR) and self.max_abs_diff is None:
            raise ValueError(f"{self.status} requires max_abs_diff")


@dataclass(frozen=True, slots=True)
class EvalReport:
    """Per-candidate outcome: correctness verdicts, timing, speedups, profiles."""

    candidate_id: str
    correct: bool
    case_results: tuple[EvalCaseResult, ...]
    runtime_ms: float | None = None
    runtime_std_ms: float | None = None
    baseline_runtime_ms: dict[str, float] = field(default_factory=dict)
    speedup: dict[str, float] = field(default_factory=dict)
    profile: dict[str, str] | None = None

    def __post_init__(self):
        if self.correct != (self.runtime_ms is not None):
            raise ValueError("runtime_ms must be present exactly when correct")
        if self.correct and any(r.status != STATUS_PASS for r in self.case_results):
            raise ValueError("correct report cannot contain failing cases")

    @property
    def failure_status(self) -> str | None:
        for result in self.case_results:
            if result.status != STATUS_PASS:
                return result.status
        return None


def check_allclose(a, b, atol: float, rtol: float) -> tuple[bool, float]:
    """Elementwise |a - b| <= atol + rtol*|b| over the whole array.

    Returns (ok, max_violation) with max_violation = max(|a-b| - rtol*|b|);
    any NaN in ``a`` fails the check.  ``b`` is the reference side, so the
    check is not symmetric unless rtol == 0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape {a.shape} vs {b.shape}")
    if a.size == 0:
        return True, 0.0
    with np.errstate(invalid="ignore", over="ignore"):
        diff = np.abs(a - b)
        excess = diff - rtol * np.abs(b)
        ok = bool(np.all(diff <= atol + rtol * np.abs(b))) and not bool(
            np.isnan(a).any()
        )
        max_violation = float(np.max(excess))
    return ok, max_violation


def summarize_runtime(samples_ms: list[float], warmup: int) -> tuple[float, float]:
    """Mean and population std over post-warmup samples."""
    if warmup < 0:
        raise InsufficientSamples("warmup must be >= 0")
    if len(samples_ms) <= warmup:
        raise InsufficientSamples(
            f"{len(samples_ms)} samples cannot cover warmup={warmup}"
        )
    steady = np.asarray(samples_ms[warmup:], dtype=np.float64)
    return float(steady.mean()), float(steady.std())


def compute_speedup(baseline_ms: float, candidate_ms: float) -> float:
    """Speedup of the candidate over a baseline runtime."""
    if baseline_ms <= 0 or candidate_ms <= 0:
        raise NonPositiveRuntime(f"runtimes must be > 0: {baseline_ms}, {candidate_ms}")
    return baseline_ms / candidate_ms


# Coarse statuses a runner may report for a non-passing candidate.
RUNNER_STATUS_COMPILE = "compile_failed"
RUNNER_STATUS_TOLERANCE = "tolerance_violation"
RUNNER_STATUS_BUDGET = "budget_exceeded"
RUNNER_STATUS_UNPARSED = "unparsed_output"
RUNNER_STATUS_CRASH = "crash"


def classify_failure(runner_status: str, log: str) -> str:
    """Map a runner-reported failure onto the case-status taxonomy.

    Total function: unrecognized statuses become runner_crash.
    """
    if runner_status == RUNNER_STATUS_COMPILE:
        return STATUS_COMPILE_ERROR
    lowered = log.lower()
    if any(marker in lowered for marker in MEMORY_ERROR_MARKERS):
        return STATUS_MEMORY_ERROR
    if runner_status == RUNNER_STATUS_TOLERANCE:
        return STATUS_NUMERIC_ERROR
    if runner_status == RUNNER_STATUS_BUDGET:
        return STATUS_TIMEOUT
    if runner_status == RUNNER_STATUS_UNPARSED:
        return STATUS_PARSE_ERROR
    return STATUS_RUNNER_CRASH


class EvalSession(Protocol):
    """One device-bound evaluation channel."""

    def evaluate(self, candidate: KernelCandidate) -> EvalReport: ...

    def close(self) -> None: ...


class EvalBackend(Protocol):
    """Factory of per-device evaluation sessions."""

    def open_session(self, task: TaskSpec, device: str) -> EvalSession: ...


def crash_report(candidate_id: str, message: str) -> EvalReport:
    """Report for a candidate whose evaluation machinery failed."""
    return EvalReport(
        candidate_id=candidate_id,
        correct=False,
        case_results=(
            EvalCaseResult(
                case_id="session", status=STATUS_RUNNER_CRASH, message=message[:4000]
            ),
        ),
    )


def evaluate_candidates(
    candidates: list[KernelCandidate],
    task: TaskSpec,
    devices: list[str],
    backend: EvalBackend,
) -> list[EvalReport]:
    """Evaluate candidates across devices, one worker per device.

    Each candidate runs on exactly one device, at most one candidate per
    device at a time.  Reports come back in candidate input order.
    Per-candidate failures are encoded in reports, never raised; only a
    backend that cannot produce sessions at all raises BackendUnavailable.
    """
    if not devices:
        raise BackendUnavailable("no devices configured")
    if not candidates:
        return []

    work: queue.SimpleQueue = queue.SimpleQueue()
    for item in enumerate(candidates):
        work.put(item)
    results: list[EvalReport | None] = [None] * len(candidates)
    session_errors: list[Exception] = []

    def worker(device: str) -> None:
        try:
            session = backend.open_session(task, device)
        except Exception as exc:  # session failure disables this device
            session_errors.append(exc)
            return
        try:
            while True:
                try:
                    index, candidate = work.get_nowait()
                except queue.Empty:
                    return
                try:
                    results[index] = session.evaluate(candidate)
                except Exception as exc:
                    logger.warning("evaluation crashed for %s: %s", candidate.id, exc)
                    results[index] = crash_report(candidate.id, str(exc))
        finally:
            try:
                session.close()
            except Exception:
                logger.debug("session close failed for %s", device, exc_info=True)

    threads = [
        threading.Thread(target=worker, args=(dev,), daemon=True)
        for dev in devices[: len(candidates)]
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    if any(r is None for r in results):
        if session_errors and all(r is None for r in results):
            raise BackendUnavailable(f"no device session could be opened: {session_errors[0]}")
        # Some devices died mid-run; finish remaining work with crash reports.
        for i, r in enumerate(results):
            if r is None:
                results[i] = crash_report(candidates[i].id, "device session lost")
    return results  # type: ignore[return-value]
