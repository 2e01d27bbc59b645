"""Request loop: one runner process serves one device, answering
eval_requests sequentially over stdin/stdout.

Every request gets a complete, well-formed reply stream even when the
candidate (or the runner internals) fail:

    case_result* [timing_result] profile_blob* bye
"""

from __future__ import annotations

import sys
import time
import traceback
from dataclasses import dataclass

from . import protocol
from .execution import (
    STATUS_COMPILE_ERROR,
    STATUS_PASS,
    STATUS_TIMEOUT,
    CaseOutcome,
    collect_profiles,
    compile_and_load,
    measure_baselines,
    run_cases,
    run_timing,
)
from .reference import Reference, ReferenceError

MODE_CUDA = "cuda"
MODE_CPU_REFERENCE = "cpu_reference"


@dataclass
class RunnerConfig:
    mode: str = MODE_CUDA
    device: str = "0"
    compile_flags: tuple[str, ...] = ("-O3", "--use_fast_math")
    compile_budget_s: float = 120.0
    evaluate_budget_s: float = 180.0

    def __post_init__(self):
        if self.mode not in (MODE_CUDA, MODE_CPU_REFERENCE):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def torch_device(self) -> str:
        if self.mode == MODE_CUDA:
            return f"cuda:{self.device}"
        return "cpu"


def _emit_cases(cid: str, outcomes: list[CaseOutcome], out) -> bool:
    all_pass = bool(outcomes)
    for outcome in outcomes:
        protocol.send(
            protocol.CASE_RESULT,
            {
                "candidate_id": cid,
                "case_id": outcome.case_id,
                "status": outcome.status,
                "max_abs_diff": outcome.max_abs_diff,
                "message": outcome.message,
            },
            out,
        )
        all_pass = all_pass and outcome.status == STATUS_PASS
    return all_pass


def handle_eval(payload: dict, config: RunnerConfig, out) -> None:
    cid = payload["candidate_id"]
    direction = payload["direction"]
    device = config.torch_device

    try:
        reference = Reference(payload["reference_source"], direction)
    except ReferenceError as exc:
        protocol.send(
            protocol.CASE_RESULT,
            {
                "candidate_id": cid,
                "case_id": "reference",
                "status": "runner_crash",
                "max_abs_diff": None,
                "message": str(exc),
            },
            out,
        )
        protocol.send(protocol.BYE, {}, out)
        return

    source_path = None
    if config.mode == MODE_CUDA:
        compile_started = time.monotonic()
        candidate, log, source_path = compile_and_load(
            payload["source"],
            payload.get("task_name", "candidate"),
            payload.get("compile_flags", list(config.compile_flags)),
            direction,
        )
        if candidate is None:
            elapsed = time.monotonic() - compile_started
            status = (
                STATUS_TIMEOUT
                if elapsed > config.compile_budget_s
                else STATUS_COMPILE_ERROR
            )
            protocol.send(
                protocol.CASE_RESULT,
                {
                    "candidate_id": cid,
                    "case_id": "compile",
                    "status": status,
                    "max_abs_diff": None,
                    "message": log[-8000:],
                },
                out,
            )
            protocol.send(protocol.BYE, {}, out)
            return
    else:
        # Harness self-test mode: the reference is its own candidate.
        candidate = reference

    outcomes = run_cases(
        candidate,
        reference,
        payload["cases"],
        payload["atol"],
        payload["rtol"],
        device,
    )
    all_pass = _emit_cases(cid, outcomes, out)

    if all_pass:
        # Timing and profiling run on the first case's tensors.
        first = payload["cases"][0]
        args = reference.build_case(
            first["shapes"], first["init_seed"], first["input_seed"], device
        )
        warmup, timed = payload["warmup_runs"], payload["timed_runs"]
        timing = run_timing(
            candidate, args, warmup, timed, device, budget_s=config.evaluate_budget_s
        )
        if timing.budget_exceeded:
            protocol.send(
                protocol.CASE_RESULT,
                {
                    "candidate_id": cid,
                    "case_id": "timing",
                    "status": STATUS_TIMEOUT,
                    "max_abs_diff": None,
                    "message": (
                        f"timing budget exceeded after {timing.completed} of "
                        f"{warmup + timed} invocations"
                    ),
                },
                out,
            )
        else:
            baseline_samples = measure_baselines(
                reference,
                args,
                payload.get("baselines", []),
                warmup,
                timed,
                device,
                config.mode,
                budget_s=config.evaluate_budget_s,
            )
            protocol.send(
                protocol.TIMING_RESULT,
                {
                    "candidate_id": cid,
                    "samples_ms": timing.samples_ms,
                    "invocations": timing.completed,
                    "baseline_samples_ms": baseline_samples,
                },
                out,
            )
            for label, text in collect_profiles(
                candidate, args, device, source_path
            ).items():
                protocol.send(
                    protocol.PROFILE_BLOB,
                    {"candidate_id": cid, "label": label, "text": text},
                    out,
                )
    protocol.send(protocol.BYE, {}, out)


def serve(config: RunnerConfig, stdin=None, stdout=None) -> int:
    """Process requests until bye or stdin EOF; exceptions never kill the loop."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            kind, payload = protocol.decode(line)
        except protocol.ProtocolError as exc:
            protocol.send(
                protocol.ERROR, {"message": f"malformed request: {exc}", "traceback": ""}, stdout
            )
            continue
        try:
            if kind == protocol.HELLO:
                protocol.send(
                    protocol.HELLO, {"mode": config.mode, "device": config.device}, stdout
                )
            elif kind == protocol.EVAL_REQUEST:
                handle_eval(payload, config, stdout)
            elif kind == protocol.BYE:
                return 0
            else:
                protocol.send(
                    protocol.ERROR,
                    {"message": f"unexpected message kind {kind!r}", "traceback": ""},
                    stdout,
                )
        except Exception as exc:
            protocol.send(
                protocol.ERROR,
                {"message": str(exc), "traceback": traceback.format_exc()[-8000:]},
                stdout,
            )
    return 0
