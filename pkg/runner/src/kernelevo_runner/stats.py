"""Recorded-statistics export: evaluates a task's reference across its seed
grid and writes the per-task stats file the contamination auditor ingests."""

from __future__ import annotations

import json
from pathlib import Path

from .reference import Reference, output_tensors


def load_task_dir(task_dir: str | Path, direction: str) -> tuple[str, dict]:
    task_dir = Path(task_dir)
    ref_path = task_dir / f"func_{direction}.py"
    cfg_path = task_dir / f"config_{direction}.json"
    if not ref_path.is_file():
        raise FileNotFoundError(f"missing reference file: {ref_path}")
    if not cfg_path.is_file():
        raise FileNotFoundError(f"missing config file: {cfg_path}")
    return ref_path.read_text(), json.loads(cfg_path.read_text())


def dump_stats(
    task_dir: str | Path,
    direction: str,
    out_path: str | Path,
    shape_index: int = 0,
    device: str = "cpu",
) -> Path:
    """Write the audit stats file for one task: flattened reference outputs
    per (init_seed, input_seed) on one shape configuration."""
    task_dir = Path(task_dir)
    source, config = load_task_dir(task_dir, direction)
    reference = Reference(source, direction)
    shapes = config["input_shapes"][shape_index]
    records = []
    shape = None
    for init_seed in config.get("init_seeds", [0, 1]):
        for input_seed in config.get("input_seeds", [0, 1]):
            args = reference.build_case(shapes, init_seed, input_seed, device)
            out = output_tensors(reference(*args))[0].detach().cpu()
            if shape is None:
                shape = list(out.shape)
            records.append(
                {
                    "init_seed": init_seed,
                    "input_seed": input_seed,
                    "values": out.double().flatten().tolist(),
                }
            )
    payload = {
        "task": task_dir.name,
        "shape": shape,
        "baseline_source": source,
        "outputs": records,
    }
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(payload, sort_keys=True) + "\n")
    return out_path
