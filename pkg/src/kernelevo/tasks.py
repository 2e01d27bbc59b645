"""Benchmark task definitions and the on-disk task directory layout.

A task directory holds a functional reference implementation plus a JSON
config per direction:

    tasks/mnist_cross_entropy/
        func_forward.py       # forward reference
        func_backward.py      # autograd reference
        config_forward.json
        config_backward.json
        forward.cu            # optional kernel fixture
        backward.cu           # optional kernel fixture
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from itertools import product
from pathlib import Path

FORWARD = "forward"
BACKWARD = "backward"
DIRECTIONS = (FORWARD, BACKWARD)

BASELINE_NATIVE = "native"
BASELINE_COMPILED = "compiled"
BASELINES = (BASELINE_NATIVE, BASELINE_COMPILED)

_NAME_RE = re.compile(r"^[a-z0-9_]+$")

_CONFIG_FIELDS = {
    "input_shapes",
    "init_seeds",
    "input_seeds",
    "atol",
    "rtol",
    "warmup_runs",
    "timed_runs",
    "baselines",
    "operation_info",
}


class MissingFile(FileNotFoundError):
    """A required task file is absent; the message names it."""


class MalformedConfig(ValueError):
    """A task config file has a bad or unknown field; names field and reason."""

    def __init__(self, fname: str, reason: str):
        super().__init__(f"{fname}: {reason}")
        self.field = fname
        self.reason = reason


@dataclass(frozen=True, slots=True)
class TaskConfig:
    """Evaluation grid and measurement parameters for one task direction.

    ``input_shapes`` is a list of shape configurations, each configuration a
    tuple of per-argument shapes.  The case product enumerates
    shapes x init_seeds x input_seeds.
    """

    input_shapes: tuple[tuple[tuple[int, ...], ...], ...]
    init_seeds: tuple[int, ...] = (0, 1, 2)
    input_seeds: tuple[int, ...] = (0, 1, 2)
    atol: float = 1e-5
    rtol: float = 1e-5
    warmup_runs: int = 25
    timed_runs: int = 2000
    baselines: tuple[str, ...] = (BASELINE_NATIVE,)

    def __post_init__(self):
        if not self.input_shapes:
            raise MalformedConfig("input_shapes", "must be non-empty")
        if not self.init_seeds:
            raise MalformedConfig("init_seeds", "must be non-empty")
        if not self.input_seeds:
            raise MalformedConfig("input_seeds", "must be non-empty")
        if not self.atol > 0:
            raise MalformedConfig("atol", "must be > 0")
        if self.rtol < 0:
            raise MalformedConfig("rtol", "must be >= 0")
        if self.warmup_runs < 0:
            raise MalformedConfig("warmup_runs", "must be >= 0")
        if self.timed_runs < 1:
            raise MalformedConfig("timed_runs", "must be >= 1")
        for b in self.baselines:
            if b not in BASELINES:
                raise MalformedConfig("baselines", f"unknown baseline {b!r}")


@dataclass(frozen=True, slots=True)
class TaskSpec:
    """One benchmark task: reference source plus its evaluation config."""

    name: str
    direction: str
    reference_source: str
    config: TaskConfig
    operation_info: str = ""

    def __post_init__(self):
        if not _NAME_RE.match(self.name):
            raise ValueError(f"task name {self.name!r} must be lowercase [a-z0-9_]")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        if not self.reference_source.strip():
            raise ValueError("reference_source must be non-empty")


@dataclass(frozen=True, slots=True)
class EvalCase:
    """One correctness case: a shape configuration under fixed seeds."""

    case_id: str
    shape_index: int
    shapes: tuple[tuple[int, ...], ...]
    init_seed: int
    input_seed: int


_KERNEL_NAME_RE = re.compile(r"^[a-z0-9_]+$")


def normalize_kernel_name(raw: str) -> str:
    """Coerce an LLM-suggested kernel name to lowercase/underscore form."""
    name = raw.strip().lower().replace(" ", "_").replace("-", "_")
    name = re.sub(r"[^a-z0-9_]", "", name)
    return name or "kernel"


@dataclass(frozen=True, slots=True)
class KernelCandidate:
    """One proposed kernel and the provenance that produced it.

    Generation 0 is reserved for the translated seed kernel.
    """

    id: str
    kernel_name: str
    description: str
    source: str
    provenance: object = None  # SamplerSettings; typed loosely to avoid a cycle
    generation: int = 0
    parent_ids: tuple[str, ...] = ()
    verifier_score: int | None = None

    def __post_init__(self):
        if not self.source.strip():
            raise ValueError("candidate source must be non-empty")
        if not _KERNEL_NAME_RE.match(self.kernel_name):
            raise ValueError(
                f"kernel_name {self.kernel_name!r} must be lowercase, no spaces"
            )
        if self.generation < 0:
            raise ValueError("generation must be >= 0")
        if self.verifier_score is not None and not -1 <= self.verifier_score <= 3:
            raise ValueError("verifier_score out of range")


def _shape_tuple(raw, fname: str) -> tuple[tuple[int, ...], ...]:
    if not isinstance(raw, (list, tuple)) or not raw:
        raise MalformedConfig(fname, "each shape configuration must be a non-empty list of shapes")
    shapes = []
    for shape in raw:
        if not isinstance(shape, (list, tuple)):
            raise MalformedConfig(fname, f"shape {shape!r} must be a list of ints")
        if not all(isinstance(d, int) and d > 0 for d in shape):
            raise MalformedConfig(fname, f"shape {shape!r} must contain positive ints")
        shapes.append(tuple(shape))
    return tuple(shapes)


def parse_config(data: dict, source_name: str = "config") -> tuple[TaskConfig, str]:
    """Build a TaskConfig from parsed JSON; unknown fields are rejected.

    Returns (config, operation_info); missing fields take their defaults.
    """
    if not isinstance(data, dict):
        raise MalformedConfig(source_name, "config root must be an object")
    unknown = set(data) - _CONFIG_FIELDS
    if unknown:
        raise MalformedConfig(sorted(unknown)[0], "unknown config field")
    if "input_shapes" not in data:
        raise MalformedConfig("input_shapes", "required field is missing")
    kwargs = {
        "input_shapes": tuple(
            _shape_tuple(cfg, "input_shapes") for cfg in data["input_shapes"]
        )
    }
    for key in ("init_seeds", "input_seeds"):
        if key in data:
            seeds = data[key]
            if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds):
                raise MalformedConfig(key, "must be a list of ints")
            kwargs[key] = tuple(seeds)
    for key in ("atol", "rtol"):
        if key in data:
            if not isinstance(data[key], (int, float)):
                raise MalformedConfig(key, "must be a number")
            kwargs[key] = float(data[key])
    for key in ("warmup_runs", "timed_runs"):
        if key in data:
            if not isinstance(data[key], int):
                raise MalformedConfig(key, "must be an int")
            kwargs[key] = data[key]
    if "baselines" in data:
        if not isinstance(data["baselines"], list):
            raise MalformedConfig("baselines", "must be a list")
        kwargs["baselines"] = tuple(data["baselines"])
    info = data.get("operation_info", "")
    if not isinstance(info, str):
        raise MalformedConfig("operation_info", "must be a string")
    return TaskConfig(**kwargs), info


def load_task(task_dir: str | Path, direction: str = FORWARD) -> TaskSpec:
    """Load one direction of a task directory into a validated TaskSpec."""
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    task_dir = Path(task_dir)
    if not task_dir.is_dir():
        raise MissingFile(f"task directory not found: {task_dir}")
    ref_path = task_dir / f"func_{direction}.py"
    cfg_path = task_dir / f"config_{direction}.json"
    if not ref_path.is_file():
        raise MissingFile(f"missing reference file: {ref_path}")
    if not cfg_path.is_file():
        raise MissingFile(f"missing config file: {cfg_path}")
    try:
        data = json.loads(cfg_path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedConfig(cfg_path.name, f"invalid JSON: {exc}") from exc
    config, info = parse_config(data, cfg_path.name)
    name = task_dir.name
    return TaskSpec(
        name=name,
        direction=direction,
        reference_source=ref_path.read_text(),
        config=config,
        operation_info=info or f"{name} ({direction} pass)",
    )


def enumerate_eval_cases(config: TaskConfig) -> list[EvalCase]:
    """Full case product: shapes outermost, input seeds innermost."""
    cases = []
    for (s_idx, shapes), (i_idx, init), (x_idx, inp) in product(
        enumerate(config.input_shapes),
        enumerate(config.init_seeds),
        enumerate(config.input_seeds),
    ):
        cases.append(
            EvalCase(
                case_id=f"s{s_idx}_i{i_idx}_x{x_idx}",
                shape_index=s_idx,
                shapes=shapes,
                init_seed=init,
                input_seed=inp,
            )
        )
    return cases
