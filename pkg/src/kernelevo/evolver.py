"""Evolutionary kernel optimization: an append-only archive of evaluated
candidates seeds in-context examples for an LLM ensemble; proposals are
soft-verified, the top scorers are evaluated on hardware, and the fastest
correct kernel wins.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

from .evaluation import EvalBackend, EvalReport, evaluate_candidates
from .gateway import (
    PURPOSE_CUDA,
    PURPOSE_SUMMARIZER,
    LlmGateway,
    ParseError,
    SamplerSettings,
    TransportError,
    draw_ensemble_settings,
    parse_kernel_response,
)
from .prompts import PromptRegistry, fill
from .tasks import KernelCandidate, TaskSpec, normalize_kernel_name
from .verifier import Verdict, VerifierPrompt, default_verifier_prompts, score_candidate, select_top

logger = logging.getLogger(__name__)

CONTEXT_LEAST_TO_MOST = "least_to_most"
CONTEXT_BEST_ONLY = "best_only"
CONTEXT_RANDOM_K = "random_k"
CONTEXT_STRATEGIES = (CONTEXT_LEAST_TO_MOST, CONTEXT_BEST_ONLY, CONTEXT_RANDOM_K)

SORT_KEY_RUNTIME = "Runtime (ms)"

PROFILE_SUMMARY_BUDGET = 1500
PROFILE_ATTACHMENT_BUDGET = 4000


class NoCorrectKernels(RuntimeError):
    """Context construction needs at least one correct archive entry."""


class SeedIncorrect(RuntimeError):
    """The seed kernel failed evaluation on the target task."""


@dataclass(frozen=True, slots=True)
class GenerationConfig:
    """Knobs of the optimization loop."""

    generations: int = 10
    population: int = 8
    n_star: int = 4
    context_size: int = 5
    use_verifier: bool = True
    include_input_shapes: bool = False
    use_profile_summaries: bool = False
    sample_cuda_hints: bool = True
    context_strategy: str = CONTEXT_LEAST_TO_MOST
    sort_key: str = SORT_KEY_RUNTIME

    def __post_init__(self):
        if not 1 <= self.n_star <= self.population:
            raise ValueError("need 1 <= n_star <= population")
        if self.context_size < 1:
            raise ValueError("context_size must be >= 1")
        if self.context_strategy not in CONTEXT_STRATEGIES:
            raise ValueError(f"context_strategy must be one of {CONTEXT_STRATEGIES}")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if self.sort_key != SORT_KEY_RUNTIME:
            raise ValueError(f"unsupported sort key {self.sort_key!r}")


@dataclass(frozen=True, slots=True)
class EnsembleSpec:
    """Model pool and per-class sampling options for proposal drawing."""

    models: tuple[str, ...] = (
        "o4-mini",
        "claude-3-7-sonnet-20250219",
        "gemini-2.5-pro-preview-05-06",
        "gpt-4.1",
        "o3-2025-04-16",
    )
    temperatures: tuple[float, ...] = (0.0, 0.5, 0.75, 1.0)
    reasoning_efforts: tuple[str, ...] = ("auto", "high", "medium", "low")
    max_tokens: int = 8192
    reasoning_models: tuple[str, ...] | None = None


@dataclass(frozen=True, slots=True)
class HardwareInfo:
    """Environment descriptors shown in the optimization system prompt."""

    gpu_type: str = "H100"
    cuda_version: str = "12.4"
    cudnn_version: str = "8.9.7"


@dataclass
class Archive:
    """Append-only store of (candidate, report); entry 0 is the correct seed."""

    entries: list[tuple[KernelCandidate, EvalReport]] = field(default_factory=list)

    @classmethod
    def seeded(cls, seed: KernelCandidate, report: EvalReport) -> "Archive":
        if not report.correct:
            raise SeedIncorrect(f"seed kernel {seed.id} is not correct")
        return cls(entries=[(seed, report)])

    def append_all(self, new_entries: list[tuple[KernelCandidate, EvalReport]]) -> None:
        self.entries.extend(new_entries)

    def correct_entries(self) -> list[tuple[KernelCandidate, EvalReport]]:
        return [(c, r) for c, r in self.entries if r.correct]

    def max_generation(self) -> int:
        return max(c.generation for c, _ in self.entries) if self.entries else 0

    def best(self) -> tuple[KernelCandidate, EvalReport]:
        """Correct entry with minimum runtime; ties go to the earliest entry."""
        correct = self.correct_entries()
        if not correct:
            raise NoCorrectKernels("archive holds no correct entry")
        return min(correct, key=lambda cr: cr[1].runtime_ms)


def build_context(
    archive: Archive,
    k: int,
    strategy: str = CONTEXT_LEAST_TO_MOST,
    rng_seed: int = 0,
) -> list[tuple[KernelCandidate, EvalReport]]:
    """Pick up to k correct archive entries for in-context examples.

    least_to_most returns the k fastest ordered slowest-to-fastest so the
    prompt exposes an improvement gradient.
    """
    correct = archive.correct_entries()
    if not correct:
        raise NoCorrectKernels("cannot build context without a correct kernel")
    indexed = list(enumerate(correct))
    if strategy == CONTEXT_BEST_ONLY:
        best = min(indexed, key=lambda ie: (ie[1][1].runtime_ms, ie[0]))
        return [best[1]]
    if strategy == CONTEXT_RANDOM_K:
        rng = random.Random(rng_seed)
        picked = rng.sample(indexed, min(k, len(indexed)))
        return [entry for _, entry in picked]
    fastest = sorted(indexed, key=lambda ie: (ie[1][1].runtime_ms, ie[0]))[:k]
    ordered = sorted(fastest, key=lambda ie: (-ie[1][1].runtime_ms, ie[0]))
    return [entry for _, entry in ordered]


def _kernel_block(index: int, candidate: KernelCandidate, report: EvalReport) -> str:
    lines = [
        f"Example kernel {index}:",
        f"<name>\n{candidate.kernel_name}\n</name>",
        f"<description>\n{candidate.description}\n</description>",
        f"<cuda>\n{candidate.source}\n</cuda>",
        f"{SORT_KEY_RUNTIME}: {report.runtime_ms:.4f}",
    ]
    for baseline, value in sorted(report.speedup.items()):
        lines.append(f"Speedup vs {baseline}: {value:.3f}x")
    return "\n".join(lines)


def assemble_prompt(
    task: TaskSpec,
    context: list[tuple[KernelCandidate, EvalReport]],
    config: GenerationConfig,
    registry: PromptRegistry | None = None,
    hardware: HardwareInfo | None = None,
    hint: str | None = None,
    profile_summary: str | None = None,
) -> tuple[str, list[tuple[str, str]]]:
    """Build (system, messages) for one proposal sample."""
    if not context:
        raise ValueError("context must be non-empty")
    registry = registry or PromptRegistry()
    hardware = hardware or HardwareInfo()
    system = fill(
        registry.text("optimize_system"),
        direction=task.direction,
        operation=task.name,
        operation_info=task.operation_info,
        gpu_type=hardware.gpu_type,
        cuda_version=hardware.cuda_version,
        cudnn_version=hardware.cudnn_version,
    ).strip()
    if config.include_input_shapes:
        shape_lines = [
            f"  configuration {i}: " + " ".join(str(tuple(s)) for s in shapes)
            for i, shapes in enumerate(task.config.input_shapes)
        ]
        system += "\n\nInput shapes per argument:\n" + "\n".join(shape_lines)

    parts = [
        _kernel_block(i + 1, cand, rep) for i, (cand, rep) in enumerate(context)
    ]
    if hint is not None:
        parts.append(f"Optimization recommendation: {hint}")
    if profile_summary:
        parts.append("Profiling summary of the fastest kernel:\n" + profile_summary)
    parts.append(registry.text("optimize_iteration").strip())
    return system, [("user", "\n\n".join(parts))]


def summarize_profile(
    gateway: LlmGateway,
    profile: dict[str, str],
    settings: SamplerSettings,
    attachment_budget: int = PROFILE_ATTACHMENT_BUDGET,
    output_budget: int = PROFILE_SUMMARY_BUDGET,
) -> str:
    """One LLM call over the profiler attachments; empty string on failure."""
    if not profile:
        raise ValueError("no profile attachments to summarize")
    blocks = []
    for label in sorted(profile):
        text = profile[label]
        if len(text) > attachment_budget:
            text = text[:attachment_budget] + "\n...[truncated]"
        blocks.append(f"== {label} ==\n{text}")
    prompt = (
        "Summarize the profiling data below into concrete optimization "
        "guidance for the kernel author. Be brief.\n\n" + "\n\n".join(blocks)
    )
    try:
        exchange = gateway.sample(settings, "", [("user", prompt)], purpose=PURPOSE_SUMMARIZER)
    except TransportError:
        return ""
    return exchange.response.strip()[:output_budget]


RecorderFn = Callable[[int, int, KernelCandidate, "list[Verdict] | None", EvalReport], None]


def run_generation(
    archive: Archive,
    task: TaskSpec,
    config: GenerationConfig,
    ensemble: EnsembleSpec,
    gateway: LlmGateway,
    backend: EvalBackend,
    devices: list[str],
    rng_seed: int,
    verifier_prompts: dict[str, VerifierPrompt] | None = None,
    verifier_settings: SamplerSettings | None = None,
    summarizer_settings: SamplerSettings | None = None,
    registry: PromptRegistry | None = None,
    hardware: HardwareInfo | None = None,
    generation_index: int | None = None,
    recorder: RecorderFn | None = None,
) -> list[tuple[KernelCandidate, EvalReport]]:
    """One generation of the optimization loop; returns the new entries.

    Proposals that fail to parse score -1 and are never selected; everything
    that was evaluated is appended to the archive, correct or not.
    """
    registry = registry or PromptRegistry()
    g = archive.max_generation() + 1 if generation_index is None else generation_index
    n = config.population

    context = build_context(
        archive, config.context_size, config.context_strategy, rng_seed=rng_seed + 7919
    )
    context_ids = tuple(c.id for c, _ in context)

    settings_list = draw_ensemble_settings(
        list(ensemble.models),
        list(ensemble.temperatures),
        list(ensemble.reasoning_efforts),
        n,
        rng_seed,
        reasoning_models=set(ensemble.reasoning_models) if ensemble.reasoning_models else None,
        max_tokens=ensemble.max_tokens,
    )
    hint_rng = random.Random(rng_seed ^ 0x9E3779B9)
    hints: list[str | None] = [None] * n
    if config.sample_cuda_hints:
        hint_pool = registry.hint_list()
        hints = [hint_rng.choice(hint_pool) for _ in range(n)]

    profile_summary = None
    if config.use_profile_summaries:
        fastest = min(context, key=lambda cr: cr[1].runtime_ms)
        if fastest[1].profile:
            profile_summary = summarize_profile(
                gateway, fastest[1].profile, summarizer_settings or settings_list[0]
            )

    requests = []
    for i in range(n):
        system, messages = assemble_prompt(
            task,
            context,
            config,
            registry=registry,
            hardware=hardware,
            hint=hints[i],
            profile_summary=profile_summary,
        )
        requests.append((settings_list[i], system, messages))
    exchanges = gateway.sample_many(requests, purpose=PURPOSE_CUDA)

    candidates: list[KernelCandidate | None] = [None] * n
    scores = [-1] * n
    for i, result in enumerate(exchanges):
        if isinstance(result, Exception):
            logger.warning("sample %d failed: %s", i, result)
            continue
        try:
            parsed = parse_kernel_response(result.response)
        except ParseError as exc:
            logger.info("sample %d unparseable: %s", i, exc)
            continue
        candidates[i] = KernelCandidate(
            id=f"g{g}_s{i}",
            kernel_name=normalize_kernel_name(parsed.kernel_name),
            description=parsed.description,
            source=parsed.cuda_source,
            provenance=settings_list[i],
            generation=g,
            parent_ids=context_ids,
        )
        scores[i] = 0

    verdicts_by_index: dict[int, list[Verdict]] = {}
    if config.use_verifier:
        prompts = verifier_prompts or default_verifier_prompts(registry)
        v_settings = verifier_settings or SamplerSettings(
            model_id="azure-o4-mini", reasoning_effort="low", max_tokens=4096
        )
        for i, candidate in enumerate(candidates):
            if candidate is None:
                continue
            score, verdicts = score_candidate(
                gateway,
                candidate.source,
                task.operation_info,
                prompts,
                v_settings,
                registry=registry,
            )
            scores[i] = score
            verdicts_by_index[i] = verdicts
            candidates[i] = replace(candidate, verifier_score=score)

    selected = [i for i in select_top(scores, config.n_star) if scores[i] >= 0]
    to_eval = [candidates[i] for i in selected]
    if not to_eval:
        logger.info("generation %d: nothing selectable", g)
        return []

    reports = evaluate_candidates(to_eval, task, devices, backend)  # type: ignore[arg-type]
    new_entries = list(zip(to_eval, reports))  # type: ignore[arg-type]
    archive.append_all(new_entries)
    if recorder is not None:
        for i, (candidate, report) in zip(selected, new_entries):
            recorder(g, i, candidate, verdicts_by_index.get(i), report)
    return new_entries


@dataclass
class OptimizeResult:
    best: KernelCandidate
    best_report: EvalReport
    archive: Archive


def optimize(
    task: TaskSpec,
    seed_kernel: KernelCandidate,
    config: GenerationConfig,
    gateway: LlmGateway,
    backend: EvalBackend,
    devices: list[str],
    rng_seed: int = 0,
    ensemble: EnsembleSpec | None = None,
    run_dir: str | Path | None = None,
    verifier_prompts: dict[str, VerifierPrompt] | None = None,
    verifier_settings: SamplerSettings | None = None,
    summarizer_settings: SamplerSettings | None = None,
    registry: PromptRegistry | None = None,
    hardware: HardwareInfo | None = None,
) -> OptimizeResult:
    """Full optimization run; the seed must evaluate correct on the task."""
    registry = registry or PromptRegistry()
    ensemble = ensemble or EnsembleSpec()
    seed_report = evaluate_candidates([seed_kernel], task, devices[:1], backend)[0]
    if not seed_report.correct:
        raise SeedIncorrect(
            f"seed kernel failed: {seed_report.failure_status or 'unknown failure'}"
        )
    archive = Archive.seeded(seed_kernel, seed_report)

    writer = RunWriter(run_dir) if run_dir is not None else None
    if writer is not None:
        writer.write_run_manifest(task, config, ensemble, devices, rng_seed, backend, registry)
        writer.record(0, 0, seed_kernel, None, seed_report)

    for g in range(1, config.generations + 1):
        entries = run_generation(
            archive,
            task,
            config,
            ensemble,
            gateway,
            backend,
            devices,
            rng_seed=rng_seed * 100003 + g,
            verifier_prompts=verifier_prompts,
            verifier_settings=verifier_settings,
            summarizer_settings=summarizer_settings,
            registry=registry,
            hardware=hardware,
            generation_index=g,
            recorder=writer.record if writer is not None else None,
        )
        best_now = archive.best()[1].runtime_ms
        logger.info(
            "generation %d: %d evaluated, best runtime %.4f ms", g, len(entries), best_now
        )

    if writer is not None and gateway.ledger is not None:
        writer.write_ledger(gateway.ledger)
    best_candidate, best_report = archive.best()
    return OptimizeResult(best=best_candidate, best_report=best_report, archive=archive)


class RunWriter:
    """Persists the released-dataset run layout.

    run.json (config + seeds), per generation gen_{g}/cand_{i}.cu with
    report and verdict JSON files, and ledger.json at the end.
    """

    def __init__(self, run_dir: str | Path):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)

    def _dump(self, path: Path, payload) -> None:
        path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")

    def write_run_manifest(self, task, config, ensemble, devices, rng_seed, backend, registry) -> None:
        self._dump(
            self.run_dir / "run.json",
            {
                "task": task.name,
                "direction": task.direction,
                "config": asdict(config),
                "ensemble": asdict(ensemble),
                "devices": list(devices),
                "rng_seed": rng_seed,
                "backend": type(backend).__name__,
                "backend_seed": getattr(backend, "seed", None),
                "prompt_registry_version": registry.version(),
            },
        )

    def record(self, generation: int, sample_index: int, candidate, verdicts, report) -> None:
        gen_dir = self.run_dir / f"gen_{generation}"
        gen_dir.mkdir(exist_ok=True)
        stem = f"cand_{sample_index}"
        (gen_dir / f"{stem}.cu").write_text(candidate.source)
        payload = asdict(report)
        payload["kernel_name"] = candidate.kernel_name
        payload["description"] = candidate.description
        payload["candidate_generation"] = candidate.generation
        payload["parent_ids"] = list(candidate.parent_ids)
        payload["verifier_score"] = candidate.verifier_score
        self._dump(gen_dir / f"{stem}.report.json", payload)
        if verdicts is not None:
            self._dump(
                gen_dir / f"{stem}.verdicts.json",
                [
                    {"error_type": v.error_type, "passed": v.passed, "raw": v.raw}
                    for v in verdicts
                ],
            )

    def write_ledger(self, ledger) -> None:
        entries = sorted(ledger.entries, key=lambda e: (e.purpose, e.call_index))
        self._dump(
            self.run_dir / "ledger.json",
            {
                "total_dollars": ledger.total(),
                "by_purpose": ledger.total_by_purpose(),
                "entries": [
                    {
                        "purpose": e.purpose,
                        "model_id": e.model_id,
                        "prompt_tokens": e.usage.prompt_tokens,
                        "completion_tokens": e.usage.completion_tokens,
                        "dollars": e.dollars,
                        "call_index": e.call_index,
                    }
                    for e in entries
                ],
            },
        )
