"""Reference-to-CUDA translation loop: sample, evaluate, summarize the
failure, feed it back, and iterate until a kernel passes the full case
product or the generation budget runs out."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .evaluation import EvalBackend, EvalReport, evaluate_candidates
from .gateway import (
    PURPOSE_CUDA,
    PURPOSE_SUMMARIZER,
    LlmGateway,
    ParsedKernelResponse,
    ParseError,
    SamplerSettings,
    TransportError,
    parse_kernel_response,
)
from .prompts import PromptRegistry, fill
from .tasks import FORWARD, KernelCandidate, TaskSpec, normalize_kernel_name

logger = logging.getLogger(__name__)

SUMMARY_CHAR_BUDGET = 2000
NO_DIAGNOSTIC_SENTINEL = "no diagnostic output"
_PARSE_FAIL_SUMMARY = "response missing required tags"


@dataclass(frozen=True, slots=True)
class TranslationAttempt:
    response: str
    parsed: ParsedKernelResponse | None
    parse_failure: str | None
    report: EvalReport | None
    error_summary: str | None


@dataclass
class TranslationState:
    """Chronological record of one translation run."""

    attempts: list[TranslationAttempt] = field(default_factory=list)

    @property
    def generation(self) -> int:
        return len(self.attempts)

    @property
    def error_summaries(self) -> list[str]:
        return [a.error_summary for a in self.attempts if a.error_summary is not None]


@dataclass(frozen=True, slots=True)
class TranslationSuccess:
    """A correct seed kernel (archive generation 0) plus the loop record."""

    candidate: KernelCandidate
    report: EvalReport
    state: TranslationState


@dataclass(frozen=True, slots=True)
class TranslationFailure:
    state: TranslationState


def summarize_error(
    gateway: LlmGateway, raw_log: str, settings: SamplerSettings
) -> str:
    """LLM one-liner for a failure log; degrades to a log tail, never blocks."""
    if not raw_log.strip():
        return NO_DIAGNOSTIC_SENTINEL
    prompt = (
        "Summarize the following CUDA build/evaluation error so an engineer "
        "can fix the kernel. Be specific and brief.\n\n" + raw_log[-8000:]
    )
    try:
        exchange = gateway.sample(
            settings, "", [("user", prompt)], purpose=PURPOSE_SUMMARIZER
        )
        summary = exchange.response.strip()
    except TransportError:
        summary = raw_log[-SUMMARY_CHAR_BUDGET:]
    if not summary.strip():
        return NO_DIAGNOSTIC_SENTINEL
    return summary[:SUMMARY_CHAR_BUDGET]


def _failure_log(report: EvalReport) -> str:
    lines = []
    for result in report.case_results:
        if result.status != "pass":
            diff = f" (max_abs_diff={result.max_abs_diff})" if result.max_abs_diff is not None else ""
            lines.append(f"[{result.case_id}] {result.status}{diff}: {result.message}")
    return "\n".join(lines) or "candidate failed without diagnostics"


def translate(
    task: TaskSpec,
    gateway: LlmGateway,
    backend: EvalBackend,
    settings: SamplerSettings,
    max_generations: int = 10,
    summarizer_settings: SamplerSettings | None = None,
    registry: PromptRegistry | None = None,
    device: str = "0",
) -> TranslationSuccess | TranslationFailure:
    """Translate the task's reference implementation into a correct kernel.

    Each failed attempt appends the parsed kernel and an error summary as
    conversation turns before resampling; a parse failure consumes a
    generation like any other.  Failure is a returned value, never an
    exception.
    """
    registry = registry or PromptRegistry()
    summarizer_settings = summarizer_settings or settings
    forward = task.direction == FORWARD
    mode = "forward" if forward else "backward"
    system = registry.text(f"translate_{mode}_system").strip()
    iteration = fill(
        registry.text(f"translate_{mode}_iteration"), module_fn_str=task.reference_source
    ).strip()
    # The forward prompt demands only <cuda>; the backward prompt demands all
    # three tags, so parsing mirrors what each prompt asked for.
    required = ("cuda",) if forward else ("name", "description", "cuda")

    state = TranslationState()
    messages: list[tuple[str, str]] = [("user", iteration)]
    for attempt_idx in range(max_generations):
        exchange = None
        try:
            exchange = gateway.sample(settings, system, messages, purpose=PURPOSE_CUDA)
            response = exchange.response
        except TransportError as exc:
            response = ""
            parse_failure = f"transport failure: {exc}"
            parsed = None
        if exchange is not None:
            try:
                parsed = parse_kernel_response(response, required=required)
                parse_failure = None
            except ParseError as exc:
                parsed = None
                parse_failure = str(exc)

        if parsed is None:
            summary = _PARSE_FAIL_SUMMARY
            state.attempts.append(
                TranslationAttempt(response, None, parse_failure, None, summary)
            )
            messages = messages + [
                ("assistant", response[:SUMMARY_CHAR_BUDGET]),
                ("user", summary + "\n\n" + iteration),
            ]
            continue

        candidate = KernelCandidate(
            id=f"t{attempt_idx}",
            kernel_name=normalize_kernel_name(parsed.kernel_name),
            description=parsed.description,
            source=parsed.cuda_source,
            provenance=settings,
            generation=0,
            parent_ids=(),
        )
        report = evaluate_candidates([candidate], task, [device], backend)[0]
        if report.correct:
            state.attempts.append(
                TranslationAttempt(response, parsed, None, report, None)
            )
            logger.info(
                "translation of %s succeeded on attempt %d", task.name, attempt_idx + 1
            )
            return TranslationSuccess(candidate=candidate, report=report, state=state)

        summary = summarize_error(gateway, _failure_log(report), summarizer_settings)
        state.attempts.append(
            TranslationAttempt(response, parsed, None, report, summary)
        )
        messages = messages + [
            ("assistant", f"<cuda>\n{parsed.cuda_source}\n</cuda>"),
            ("user", summary + "\n\n" + iteration),
        ]

    logger.info("translation of %s exhausted %d generations", task.name, max_generations)
    return TranslationFailure(state=state)
