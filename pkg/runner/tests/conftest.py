import json
from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parents[2]
TASKS_DIR = REPO_ROOT / "tasks"
FIXTURES = Path(__file__).parent / "fixtures"


def shipped_task_dirs() -> list[tuple[Path, str]]:
    """(task_dir, direction) pairs for every shipped fixture task."""
    pairs = []
    for task_dir in sorted(TASKS_DIR.iterdir()):
        if not task_dir.is_dir():
            continue
        for direction in ("forward", "backward"):
            if (task_dir / f"func_{direction}.py").is_file():
                pairs.append((task_dir, direction))
    return pairs


def load_task(task_dir: Path, direction: str) -> tuple[str, dict]:
    source = (task_dir / f"func_{direction}.py").read_text()
    config = json.loads((task_dir / f"config_{direction}.json").read_text())
    return source, config


def cases_from_config(config: dict) -> list[dict]:
    cases = []
    for s_idx, shapes in enumerate(config["input_shapes"]):
        for i_idx, init in enumerate(config["init_seeds"]):
            for x_idx, inp in enumerate(config["input_seeds"]):
                cases.append(
                    {
                        "case_id": f"s{s_idx}_i{i_idx}_x{x_idx}",
                        "shapes": shapes,
                        "init_seed": init,
                        "input_seed": inp,
                    }
                )
    return cases


def eval_request_payload(task_dir: Path, direction: str, source: str = "// unused",
                         baselines: list | None = None) -> dict:
    ref_source, config = load_task(task_dir, direction)
    return {
        "candidate_id": "cand",
        "kernel_name": "fixture",
        "source": source,
        "task_name": task_dir.name,
        "reference_source": ref_source,
        "direction": direction,
        "cases": cases_from_config(config),
        "atol": config.get("atol", 1e-5),
        "rtol": config.get("rtol", 1e-5),
        "warmup_runs": config.get("warmup_runs", 25),
        "timed_runs": config.get("timed_runs", 2000),
        "baselines": config.get("baselines", ["native"]) if baselines is None else baselines,
    }


@pytest.fixture(scope="session")
def linear_relu_forward():
    return load_task(TASKS_DIR / "mnist_linear_relu", "forward")
