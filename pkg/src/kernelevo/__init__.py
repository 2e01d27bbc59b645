"""Agentic CUDA kernel discovery: translation, soft-verification, and
evolutionary runtime optimization over a robust benchmark harness."""

from .tasks import (
    EvalCase,
    KernelCandidate,
    TaskConfig,
    TaskSpec,
    enumerate_eval_cases,
    load_task,
)
from .evaluation import (
    EvalCaseResult,
    EvalReport,
    check_allclose,
    classify_failure,
    compute_speedup,
    evaluate_candidates,
    summarize_runtime,
)
from .backends import MockBackend, SubprocessBackend
from .gateway import (
    CostLedger,
    LlmGateway,
    MockTransport,
    SamplerSettings,
    draw_ensemble_settings,
    parse_kernel_response,
    record_cost,
)
from .translator import TranslationFailure, TranslationSuccess, translate
from .verifier import (
    VerifierPrompt,
    parse_verdict,
    score_candidate,
    select_top,
    tune_prompt,
)
from .evolver import (
    Archive,
    EnsembleSpec,
    GenerationConfig,
    build_context,
    optimize,
    run_generation,
)
from .audit import AuditRow, TaskOutputStats, audit_task

__version__ = "0.1.0"

__all__ = [
    "Archive",
    "AuditRow",
    "CostLedger",
    "EnsembleSpec",
    "EvalCase",
    "EvalCaseResult",
    "EvalReport",
    "GenerationConfig",
    "KernelCandidate",
    "LlmGateway",
    "MockBackend",
    "MockTransport",
    "SamplerSettings",
    "SubprocessBackend",
    "TaskConfig",
    "TaskOutputStats",
    "TaskSpec",
    "TranslationFailure",
    "TranslationSuccess",
    "VerifierPrompt",
    "audit_task",
    "build_context",
    "check_allclose",
    "classify_failure",
    "compute_speedup",
    "draw_ensemble_settings",
    "enumerate_eval_cases",
    "evaluate_candidates",
    "load_task",
    "optimize",
    "parse_kernel_response",
    "parse_verdict",
    "record_cost",
    "run_generation",
    "score_candidate",
    "select_top",
    "summarize_runtime",
    "translate",
    "tune_prompt",
]
