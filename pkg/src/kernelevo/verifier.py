"""LLM soft-verification of kernel candidates and verifier prompt tuning.

Three specialized verifiers (compilation, memory, numerics) each return a
binary verdict parsed from a fixed answer marker; a candidate's score is the
sum of the three.  The tuning loop has a meta-agent rewrite the verifier
prompt pair against a labeled kernel dataset, keeping the full history.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .gateway import (
    PURPOSE_TUNER,
    PURPOSE_VERIFIER,
    LlmGateway,
    SamplerSettings,
    TransportError,
)
from .prompts import PromptRegistry, fill

logger = logging.getLogger(__name__)

ERROR_COMPILATION = "compilation"
ERROR_MEMORY = "memory"
ERROR_NUMERICS = "numerics"
ERROR_TYPES = (ERROR_COMPILATION, ERROR_MEMORY, ERROR_NUMERICS)

ANSWER_MARKER = "FINAL VERIFICATION ANSWER"

_SLOTS = ("{problem_description}", "{cuda_code}")

# One-line goal statement handed to the tuning meta-agent per error type.
ERROR_TYPE_INSTRUCTIONS = {
    ERROR_COMPILATION: (
        "The two prompts will be used by an LLM to verify the correct nvcc "
        "compilation of the CUDA kernel code."
    ),
    ERROR_NUMERICS: (
        "The two prompts will be used by an LLM to verify the correctness of "
        "the numerical results of the CUDA kernel code (e.g. the output of "
        "the kernel has to be the same as the reference solution)."
    ),
    ERROR_MEMORY: (
        "The two prompts will be used by an LLM to verify the correctness of "
        "the memory usage of the CUDA kernel code (e.g. the memory allocated "
        "is not greater than the memory available)."
    ),
}

_SLOT_SCAFFOLD = (
    "\n\nHere is the problem description and the CUDA kernel code to verify:"
    "\n\nPROBLEM DESCRIPTION:\n{problem_description}"
    "\n\nCUDA KERNEL CODE:\n```cuda\n{cuda_code}\n```"
)


class EmptyDataset(ValueError):
    """No labeled entries available for the requested error type."""


class MetaParseError(ValueError):
    """The tuning meta-agent's response does not follow the output format."""


@dataclass(frozen=True, slots=True)
class VerifierPrompt:
    """System prompt plus an instruction template with both content slots."""

    error_type: str
    system: str
    instruction: str

    def __post_init__(self):
        if self.error_type not in ERROR_TYPES:
            raise ValueError(f"error_type must be one of {ERROR_TYPES}")
        for slot in _SLOTS:
            if self.instruction.count(slot) != 1:
                raise ValueError(f"instruction must contain {slot} exactly once")


@dataclass(frozen=True, slots=True)
class Verdict:
    passed: bool
    raw: str
    error_type: str


@dataclass(frozen=True, slots=True)
class LabeledKernel:
    id: str
    kernel_source: str
    problem_description: str
    label: bool


@dataclass(frozen=True, slots=True)
class LabeledKernelDataset:
    error_type: str
    entries: tuple[LabeledKernel, ...]
    balanced: bool = False

    def __post_init__(self):
        if self.error_type not in ERROR_TYPES:
            raise ValueError(f"error_type must be one of {ERROR_TYPES}")
        if self.balanced:
            positives = sum(1 for e in self.entries if e.label)
            if abs(positives - (len(self.entries) - positives)) > 1:
                raise ValueError("dataset flagged balanced but labels are skewed")

    @classmethod
    def from_file(cls, path: str | Path) -> "LabeledKernelDataset":
        data = json.loads(Path(path).read_text())
        return cls(
            error_type=data["error_type"],
            entries=tuple(
                LabeledKernel(
                    id=str(e["id"]),
                    kernel_source=e["kernel_source"],
                    problem_description=e.get("problem_description", ""),
                    label=bool(e["label"]),
                )
                for e in data["entries"]
            ),
            balanced=bool(data.get("balanced", False)),
        )


@dataclass(frozen=True, slots=True)
class TuningEntry:
    prompt: VerifierPrompt | None
    accuracy: float
    error_summaries: str


@dataclass
class TuningRun:
    error_type: str
    history: list[TuningEntry] = field(default_factory=list)

    @property
    def best(self) -> int:
        if not self.history:
            raise ValueError("empty tuning history")
        accuracies = [h.accuracy for h in self.history]
        return accuracies.index(max(accuracies))


_VERDICT_RE = re.compile(
    re.escape(ANSWER_MARKER) + r"\s*:\s*['\"]?(true|false)", re.IGNORECASE
)


def parse_verdict(text: str) -> bool:
    """Last answer-marker occurrence wins; no parseable marker means reject."""
    matches = _VERDICT_RE.findall(text)
    if not matches:
        return False
    return matches[-1].lower() == "true"


def verify(
    gateway: LlmGateway,
    prompt: VerifierPrompt,
    problem_description: str,
    cuda_code: str,
    settings: SamplerSettings,
    registry: PromptRegistry | None = None,
    reflections: int = 0,
) -> Verdict:
    """One binary verdict; transport failure fails closed."""
    registry = registry or PromptRegistry()
    parsing_definition = registry.text("verifier_parsing_definition").strip()
    message = (
        fill(prompt.instruction, problem_description=problem_description, cuda_code=cuda_code)
        + "\n"
        + parsing_definition
    )
    messages: list[tuple[str, str]] = [("user", message)]
    try:
        exchange = gateway.sample(settings, prompt.system, messages, purpose=PURPOSE_VERIFIER)
        for _ in range(reflections):
            messages = messages + [
                ("assistant", exchange.response),
                (
                    "user",
                    "Reflect on your analysis above: re-examine the kernel for "
                    "anything you missed, then restate your conclusion. "
                    + parsing_definition,
                ),
            ]
            exchange = gateway.sample(settings, prompt.system, messages, purpose=PURPOSE_VERIFIER)
    except TransportError:
        return Verdict(passed=False, raw="transport_error", error_type=prompt.error_type)
    return Verdict(
        passed=parse_verdict(exchange.response),
        raw=exchange.response,
        error_type=prompt.error_type,
    )


def score_candidate(
    gateway: LlmGateway,
    cuda_code: str,
    problem_description: str,
    prompts: dict[str, VerifierPrompt],
    settings: SamplerSettings,
    registry: PromptRegistry | None = None,
    reflections: int = 0,
) -> tuple[int, list[Verdict]]:
    """Sum of the three verifier verdicts; the calls run concurrently."""
    if sorted(prompts) != sorted(ERROR_TYPES):
        raise ValueError(f"need exactly one prompt per error type {ERROR_TYPES}")
    order = list(ERROR_TYPES)
    with ThreadPoolExecutor(max_workers=len(order)) as pool:
        verdicts = list(
            pool.map(
                lambda et: verify(
                    gateway,
                    prompts[et],
                    problem_description,
                    cuda_code,
                    settings,
                    registry,
                    reflections,
                ),
                order,
            )
        )
    return sum(int(v.passed) for v in verdicts), verdicts


def select_top(scores: list[int], n_star: int) -> list[int]:
    """Indices of the n_star highest scores, ties broken by lower index."""
    if n_star < 1:
        raise ValueError("n_star must be >= 1")
    ranked = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return ranked[:n_star]


def evaluate_prompt_accuracy(
    gateway: LlmGateway,
    prompt: VerifierPrompt,
    dataset: LabeledKernelDataset,
    settings: SamplerSettings,
    registry: PromptRegistry | None = None,
) -> tuple[float, str]:
    """Plain 0/1 accuracy over the dataset plus per-mistake one-liners."""
    if dataset.error_type != prompt.error_type:
        raise ValueError("dataset and prompt target different error types")
    if not dataset.entries:
        raise EmptyDataset(dataset.error_type)
    mistakes = []
    correct = 0
    for entry in dataset.entries:
        verdict = verify(
            gateway, prompt, entry.problem_description, entry.kernel_source, settings, registry
        )
        if verdict.passed == entry.label:
            correct += 1
        else:
            mistakes.append(
                f"entry {entry.id}: expected {entry.label}, got {verdict.passed}"
            )
    return correct / len(dataset.entries), "\n".join(mistakes)


def _parse_meta_response(text: str, error_type: str) -> VerifierPrompt:
    system_idx = text.find("SYSTEM PROMPT:")
    instruction_idx = text.find("INSTRUCTION PROMPT:")
    if system_idx == -1 or instruction_idx == -1 or instruction_idx < system_idx:
        raise MetaParseError("response lacks SYSTEM PROMPT / INSTRUCTION PROMPT sections")
    system = text[system_idx + len("SYSTEM PROMPT:") : instruction_idx].strip()
    instruction = text[instruction_idx + len("INSTRUCTION PROMPT:") :].strip()
    if not system or not instruction:
        raise MetaParseError("empty system or instruction prompt")
    counts = tuple(instruction.count(slot) for slot in _SLOTS)
    if counts == (0, 0):
        # The meta-agent writes instructions only; the content scaffold is
        # appended so the pair stays a fillable template.
        instruction += _SLOT_SCAFFOLD
    elif counts != (1, 1):
        raise MetaParseError(f"instruction slot counts {counts} are not usable")
    return VerifierPrompt(error_type=error_type, system=system, instruction=instruction)


def tune_prompt(
    gateway: LlmGateway,
    error_type: str,
    dataset: LabeledKernelDataset,
    meta_settings: SamplerSettings,
    verifier_settings: SamplerSettings,
    generations: int = 20,
    registry: PromptRegistry | None = None,
) -> TuningRun:
    """Iteratively rewrite a verifier prompt pair against the labeled dataset.

    Strictly sequential: each generation sees the full prior history of
    (prompt, accuracy, error summaries).  An unparseable meta response
    consumes its generation with accuracy 0.
    """
    if error_type not in ERROR_TYPES:
        raise ValueError(f"error_type must be one of {ERROR_TYPES}")
    registry = registry or PromptRegistry()
    system = fill(
        registry.text("verifier_tuning_system"),
        error_type_instructions=ERROR_TYPE_INSTRUCTIONS[error_type],
    )
    iteration = registry.text("verifier_tuning_iteration").strip()
    run = TuningRun(error_type=error_type)
    messages: list[tuple[str, str]] = [("user", iteration)]
    for gen in range(generations):
        try:
            exchange = gateway.sample(meta_settings, system, messages, purpose=PURPOSE_TUNER)
        except TransportError as exc:
            run.history.append(TuningEntry(None, 0.0, f"meta transport failure: {exc}"))
            continue
        try:
            prompt = _parse_meta_response(exchange.response, error_type)
        except MetaParseError as exc:
            run.history.append(TuningEntry(None, 0.0, f"meta parse failure: {exc}"))
            feedback = f"Your response could not be parsed ({exc})."
        else:
            accuracy, summaries = evaluate_prompt_accuracy(
                gateway, prompt, dataset, verifier_settings, registry
            )
            run.history.append(TuningEntry(prompt, accuracy, summaries))
            feedback = f"Verifier accuracy: {accuracy:.3f}"
            if summaries:
                feedback += "\nMistakes:\n" + summaries
        logger.info("tuning %s gen %d: %s", error_type, gen, feedback.splitlines()[0])
        messages = messages + [
            ("assistant", exchange.response),
            ("user", feedback + "\n\n" + iteration),
        ]
    return run


# ---------------------------------------------------------------------------
# Prompt persistence


def default_verifier_prompts(registry: PromptRegistry | None = None) -> dict[str, VerifierPrompt]:
    """The shipped tuned prompt pairs, one per error type."""
    registry = registry or PromptRegistry()
    return {
        et: VerifierPrompt(
            error_type=et,
            system=registry.text(f"verifier_{et}_system").strip(),
            instruction=registry.text(f"verifier_{et}_instruction").strip(),
        )
        for et in ERROR_TYPES
    }


def save_verifier_prompt(prompt: VerifierPrompt, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"verifier_{prompt.error_type}_system.txt").write_text(prompt.system)
    (directory / f"verifier_{prompt.error_type}_instruction.txt").write_text(prompt.instruction)


def load_verifier_prompt(directory: str | Path, error_type: str) -> VerifierPrompt:
    directory = Path(directory)
    return VerifierPrompt(
        error_type=error_type,
        system=(directory / f"verifier_{error_type}_system.txt").read_text(),
        instruction=(directory / f"verifier_{error_type}_instruction.txt").read_text(),
    )
