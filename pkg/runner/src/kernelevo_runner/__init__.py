"""Subprocess evaluation worker for candidate CUDA kernels: compile, run the
correctness case product against the functional reference, time the steady
state, and stream results over a line protocol."""

from .execution import (
    CaseOutcome,
    TimingOutcome,
    collect_profiles,
    compile_and_load,
    measure_baselines,
    run_cases,
    run_timing,
)
from .reference import Reference, compare_outputs
from .server import RunnerConfig, serve

__version__ = "0.1.0"

__all__ = [
    "CaseOutcome",
    "Reference",
    "RunnerConfig",
    "TimingOutcome",
    "collect_profiles",
    "compare_outputs",
    "compile_and_load",
    "measure_baselines",
    "run_cases",
    "run_timing",
    "serve",
]
