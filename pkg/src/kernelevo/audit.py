"""Benchmark contamination audit: statistical flags over recorded task
outputs plus an LLM judgment of baseline efficiency.

Stats are ingested from recorded files so the auditor needs no tensor
runtime; an eval runner can produce them.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gateway import LlmGateway, SamplerSettings, TransportError
from .prompts import PromptRegistry, fill
from .verifier import parse_verdict

logger = logging.getLogger(__name__)

OUTPUT_RANGE_BOUND = 0.01
STD_THRESHOLD = 0.01
AXIS_STD_THRESHOLD = 0.01
INPUT_IMPACT_THRESHOLD = 0.01

FLAG_COLUMNS = (
    ("output_range", "Output Range"),
    ("output_std", "Output Std"),
    ("output_axes", "Output Axes"),
    ("input_impact", "Input Impact"),
    ("baseline_inefficient", "Baseline Inefficient"),
)


class TooFewSeeds(ValueError):
    """The flag needs more seed combinations than the stats recorded."""


@dataclass(frozen=True, eq=False)
class TaskOutputStats:
    """Recorded outputs per (init_seed, input_seed) plus the baseline source."""

    task_name: str
    outputs: dict[tuple[int, int], np.ndarray]
    baseline_source: str = ""

    def __post_init__(self):
        if not self.outputs:
            raise ValueError("stats must record at least one output")
        shapes = {arr.shape for arr in self.outputs.values()}
        if len(shapes) != 1:
            raise ValueError(f"recorded outputs disagree on shape: {shapes}")

    @property
    def init_seeds(self) -> list[int]:
        return sorted({init for init, _ in self.outputs})

    @property
    def input_seeds(self) -> list[int]:
        return sorted({inp for _, inp in self.outputs})

    @classmethod
    def from_file(cls, path: str | Path) -> "TaskOutputStats":
        data = json.loads(Path(path).read_text())
        shape = tuple(data["shape"])
        outputs = {}
        for record in data["outputs"]:
            arr = np.asarray(record["values"], dtype=np.float64).reshape(shape)
            outputs[(int(record["init_seed"]), int(record["input_seed"]))] = arr
        return cls(
            task_name=data["task"],
            outputs=outputs,
            baseline_source=data.get("baseline_source", ""),
        )


@dataclass(frozen=True, slots=True)
class AuditRow:
    task_name: str
    output_range: bool
    output_std: bool
    output_axes: bool
    input_impact: bool
    baseline_inefficient: bool

    @property
    def contaminated(self) -> bool:
        return (
            self.output_range
            or self.output_std
            or self.output_axes
            or self.input_impact
            or self.baseline_inefficient
        )


def _stacked(stats: TaskOutputStats) -> np.ndarray:
    keys = sorted(stats.outputs)
    return np.stack([stats.outputs[k] for k in keys])


def flag_output_range(stats: TaskOutputStats) -> bool:
    """Every element of every output strictly inside the narrow band."""
    stacked = _stacked(stats)
    return bool(np.all(np.abs(stacked) < OUTPUT_RANGE_BOUND))


def flag_output_std(stats: TaskOutputStats) -> bool:
    """Max positional std across all seed combinations below the threshold."""
    if len(stats.outputs) < 2:
        raise TooFewSeeds("output-std flag needs >= 2 seed combinations")
    positional_std = _stacked(stats).std(axis=0)
    return bool(positional_std.max() < STD_THRESHOLD)


def flag_axis_uniformity(stats: TaskOutputStats) -> bool:
    """Some axis along which the outputs are (near-)constant per slice."""
    first = next(iter(stats.outputs.values()))
    if first.ndim < 1:
        raise ValueError("outputs must have rank >= 1")
    stacked = _stacked(stats)  # leading axis runs over seed combinations
    for axis in range(first.ndim):
        per_slice_std = stacked.std(axis=axis + 1)
        if float(per_slice_std.mean()) < AXIS_STD_THRESHOLD:
            return True
    return False


def flag_input_impact(stats: TaskOutputStats) -> bool:
    """Outputs move less than the threshold across input seeds at fixed init."""
    groups = {}
    for (init, inp), arr in stats.outputs.items():
        groups.setdefault(init, []).append((inp, arr))
    usable = {init: arrs for init, arrs in groups.items() if len(arrs) >= 2}
    if not usable:
        raise TooFewSeeds("input-impact flag needs >= 2 input seeds for some init seed")
    for arrs in usable.values():
        stacked = np.stack([arr for _, arr in sorted(arrs)])
        if float(stacked.std(axis=0).max()) >= INPUT_IMPACT_THRESHOLD:
            return False
    return True


def judge_baseline_inefficiency(
    gateway: LlmGateway,
    baseline_source: str,
    settings: SamplerSettings,
    registry: PromptRegistry | None = None,
) -> bool:
    """LLM verdict on inherent baseline inefficiency; fails open.

    A transport failure must not flag a task, so the judge returns False
    when it cannot run.
    """
    if not baseline_source.strip():
        raise ValueError("baseline source must be non-empty")
    registry = registry or PromptRegistry()
    message = fill(
        registry.text("baseline_judge_instruction"), baseline_source=baseline_source
    )
    try:
        exchange = gateway.sample(
            settings,
            registry.text("baseline_judge_system").strip(),
            [("user", message)],
            purpose="verifier",
        )
    except TransportError:
        logger.warning("baseline judge transport failure; leaving task unflagged")
        return False
    return parse_verdict(exchange.response)


def audit_task(
    stats: TaskOutputStats,
    gateway: LlmGateway | None = None,
    settings: SamplerSettings | None = None,
    registry: PromptRegistry | None = None,
) -> AuditRow:
    """Run all five contamination checks over one task's recorded stats."""
    if len(stats.init_seeds) < 2 or len(stats.input_seeds) < 2:
        raise TooFewSeeds("a full audit needs >= 2 init seeds and >= 2 input seeds")
    baseline_flag = False
    if gateway is not None and settings is not None and stats.baseline_source.strip():
        baseline_flag = judge_baseline_inefficiency(
            gateway, stats.baseline_source, settings, registry
        )
    return AuditRow(
        task_name=stats.task_name,
        output_range=flag_output_range(stats),
        output_std=flag_output_std(stats),
        output_axes=flag_axis_uniformity(stats),
        input_impact=flag_input_impact(stats),
        baseline_inefficient=baseline_flag,
    )


def render_table(rows: list[AuditRow]) -> str:
    """Aligned text table, one row per task plus the flag columns."""
    headers = ["Task Name"] + [label for _, label in FLAG_COLUMNS] + ["Contaminated"]
    body = [
        [row.task_name]
        + [str(getattr(row, attr)) for attr, _ in FLAG_COLUMNS]
        + [str(row.contaminated)]
        for row in rows
    ]
    widths = [
        max(len(headers[i]), *(len(line[i]) for line in body)) if body else len(headers[i])
        for i in range(len(headers))
    ]
    def fmt(line):
        return " | ".join(cell.ljust(widths[i]) for i, cell in enumerate(line))
    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([fmt(headers), sep] + [fmt(line) for line in body])
