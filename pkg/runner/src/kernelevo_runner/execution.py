"""Candidate execution: extension compilation, the correctness case product,
the warmup/steady-state timing protocol, baselines, and profiler capture."""

from __future__ import annotations

import hashlib
import os
import re
import shlex
import shutil
import subprocess
import tempfile
import time
from dataclasses import dataclass, field

import torch

from .reference import Reference, compare_outputs

STATUS_PASS = "pass"
STATUS_COMPILE_ERROR = "compile_error"
STATUS_MEMORY_ERROR = "memory_error"
STATUS_NUMERIC_ERROR = "numeric_error"
STATUS_TIMEOUT = "timeout"
STATUS_RUNNER_CRASH = "runner_crash"

MEMORY_MARKERS = (
    "illegal memory access",
    "out of memory",
    "misaligned address",
    "device-side assert",
    "invalid device pointer",
    "unspecified launch failure",
)


@dataclass
class CaseOutcome:
    case_id: str
    status: str
    max_abs_diff: float | None = None
    message: str = ""


@dataclass
class TimingOutcome:
    samples_ms: list[float] = field(default_factory=list)
    completed: int = 0
    budget_exceeded: bool = False


def classify_runtime_error(exc: BaseException) -> str:
    text = str(exc).lower()
    if any(marker in text for marker in MEMORY_MARKERS):
        return STATUS_MEMORY_ERROR
    return STATUS_RUNNER_CRASH


def compile_and_load(source: str, task_name: str, flags: list[str], direction: str):
    """Build the candidate as a torch extension; failure is a result.

    Returns (callable, log, source_path); the callable is None on failure
    with the compiler diagnostics in the log.
    """
    from torch.utils import cpp_extension

    digest = hashlib.sha1(source.encode()).hexdigest()[:10]
    name = re.sub(r"[^A-Za-z0-9_]", "_", f"{task_name}_{digest}")
    build_dir = tempfile.mkdtemp(prefix=f"kev_{name}_")
    src_path = f"{build_dir}/{name}.cu"
    with open(src_path, "w") as handle:
        handle.write(source)
    try:
        module = cpp_extension.load(
            name=name,
            sources=[src_path],
            extra_cuda_cflags=list(flags),
            with_cuda=True,
            verbose=False,
            build_directory=build_dir,
        )
    except Exception as exc:
        return None, str(exc).strip(), src_path
    entry = getattr(module, direction, None)
    if entry is None:
        return None, f"extension loaded but exports no '{direction}' symbol", src_path
    return entry, "", src_path


def _sync(device: str) -> None:
    if device.startswith("cuda"):
        torch.cuda.synchronize(device)


def _reset_device_state(device: str) -> str | None:
    """Check for a sticky device error; returns the message if unrecoverable."""
    if not device.startswith("cuda"):
        return None
    try:
        torch.cuda.synchronize(device)
        return None
    except RuntimeError as exc:
        return str(exc)


def run_cases(
    candidate,
    reference: Reference,
    cases: list[dict],
    atol: float,
    rtol: float,
    device: str = "cpu",
) -> list[CaseOutcome]:
    """Full correctness product; device error state is checked between cases
    and a sticky error aborts the remaining cases as memory errors."""
    outcomes = []
    for index, case in enumerate(cases):
        case_id = case["case_id"]
        try:
            args = reference.build_case(
                case["shapes"], case["init_seed"], case["input_seed"], device
            )
            # No no_grad here: autograd-based backward references need it on.
            expected = reference(*[a.clone() for a in args])
            got = candidate(*[a.clone() for a in args])
            _sync(device)
        except Exception as exc:
            status = classify_runtime_error(exc)
            outcomes.append(CaseOutcome(case_id, status, message=str(exc)[:4000]))
            sticky = _reset_device_state(device)
            if sticky is not None:
                for rest in cases[index + 1 :]:
                    outcomes.append(
                        CaseOutcome(
                            rest["case_id"],
                            STATUS_MEMORY_ERROR,
                            message=f"aborted by sticky device error: {sticky[:500]}",
                        )
                    )
                break
            continue
        ok, max_abs_diff = compare_outputs(got, expected, atol, rtol)
        if ok:
            outcomes.append(CaseOutcome(case_id, STATUS_PASS, max_abs_diff=max_abs_diff))
        else:
            outcomes.append(
                CaseOutcome(
                    case_id,
                    STATUS_NUMERIC_ERROR,
                    max_abs_diff=max_abs_diff,
                    message=f"tolerance violated: max_abs_diff={max_abs_diff:.3e}",
                )
            )
    return outcomes


def run_timing(
    fn,
    args: list[torch.Tensor],
    warmup: int,
    timed: int,
    device: str = "cpu",
    budget_s: float | None = None,
) -> TimingOutcome:
    """Exactly warmup+timed synchronized invocations; all samples returned.

    The orchestrator discards the warmup samples itself.  Device-event timing
    on CUDA, host clock otherwise.
    """
    outcome = TimingOutcome()
    total = warmup + timed
    deadline = time.monotonic() + budget_s if budget_s is not None else None
    use_events = device.startswith("cuda")
    for _ in range(total):
        if deadline is not None and time.monotonic() > deadline:
            outcome.budget_exceeded = True
            break
        if use_events:
            start = torch.cuda.Event(enable_timing=True)
            end = torch.cuda.Event(enable_timing=True)
            start.record()
            fn(*args)
            end.record()
            torch.cuda.synchronize(device)
            elapsed_ms = start.elapsed_time(end)
        else:
            t0 = time.perf_counter()
            fn(*args)
            elapsed_ms = (time.perf_counter() - t0) * 1e3
        outcome.samples_ms.append(elapsed_ms)
        outcome.completed += 1
    return outcome


def measure_baselines(
    reference: Reference,
    args: list[torch.Tensor],
    baselines: list[str],
    warmup: int,
    timed: int,
    device: str = "cpu",
    mode: str = "cpu_reference",
    budget_s: float | None = None,
) -> dict[str, list[float]]:
    """Native (eager) and, on real hardware, compiled reference timings.

    A compiled baseline that cannot be produced is reported absent rather
    than failing the request.
    """
    results: dict[str, list[float]] = {}
    for baseline in baselines:
        if baseline == "native":
            outcome = run_timing(reference, args, warmup, timed, device, budget_s)
            results[baseline] = outcome.samples_ms
        elif baseline == "compiled":
            if mode != "cuda":
                continue  # compiled baseline unavailable off-hardware
            try:
                compiled = torch.compile(reference.entry)
                outcome = run_timing(compiled, args, warmup, timed, device, budget_s)
                results[baseline] = outcome.samples_ms
            except Exception:
                continue
    return results


def collect_profiles(fn, args: list[torch.Tensor], device: str, source_path: str | None = None) -> dict[str, str]:
    """Host-profiler text always; ncu and clang-tidy only when on PATH."""
    profiles: dict[str, str] = {}
    try:
        from torch.profiler import ProfilerActivity, profile

        activities = [ProfilerActivity.CPU]
        if device.startswith("cuda"):
            activities.append(ProfilerActivity.CUDA)
        with profile(activities=activities) as prof:
            for _ in range(3):
                fn(*args)
            _sync(device)
        profiles["host-profiler"] = prof.key_averages().table(
            sort_by="self_cpu_time_total", row_limit=25
        )
    except Exception as exc:
        profiles["host-profiler"] = f"host profiler unavailable: {exc}"
    if source_path and shutil.which("clang-tidy"):
        try:
            tidy = subprocess.run(
                ["clang-tidy", source_path, "--", "-x", "cuda", "-std=c++17"],
                capture_output=True,
                text=True,
                timeout=120,
            )
            profiles["static-analysis"] = (tidy.stdout + tidy.stderr)[:20000]
        except Exception:
            pass
    # Hardware profiling is an opaque hook: the operator supplies the command
    # (e.g. an ncu invocation); its stdout is attached verbatim.
    ncu_cmd = os.environ.get("KERNELEVO_NCU_CMD")
    if ncu_cmd and source_path and device.startswith("cuda"):
        try:
            ncu = subprocess.run(
                shlex.split(ncu_cmd) + [source_path],
                capture_output=True,
                text=True,
                timeout=300,
            )
            profiles["hardware-profiler"] = (ncu.stdout + ncu.stderr)[:40000]
        except Exception:
            pass
    return profiles
