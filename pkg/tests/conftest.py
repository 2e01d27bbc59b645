import json
from pathlib import Path

import pytest

from kernelevo.backends import MockBackend
from kernelevo.gateway import CostLedger, LlmGateway, MockTransport
from kernelevo.tasks import KernelCandidate, TaskConfig, TaskSpec

REPO_ROOT = Path(__file__).resolve().parents[1]
TASKS_DIR = REPO_ROOT / "tasks"

SMALL_SHAPES = (((4, 8), (2, 8), (2,)),)


@pytest.fixture
def task():
    """A small in-memory task; the mock backend never executes the source."""
    return TaskSpec(
        name="unit_linear",
        direction="forward",
        reference_source="def forward(x, w, b):\n    return relu(x @ w.T + b)\n",
        config=TaskConfig(
            input_shapes=SMALL_SHAPES,
            init_seeds=(0,),
            input_seeds=(0, 1),
            warmup_runs=2,
            timed_runs=5,
        ),
        operation_info="Fused linear + relu over small matrices.",
    )


@pytest.fixture
def mock_backend():
    return MockBackend(seed=0)


def make_candidate(source: str, cid: str = "c0", generation: int = 0, name: str = "kernel") -> KernelCandidate:
    return KernelCandidate(
        id=cid,
        kernel_name=name,
        description="test kernel",
        source=source,
        generation=generation,
    )


def make_gateway(scripts=None, responder=None, prices=None, retry_wait_s=0.0) -> LlmGateway:
    ledger = CostLedger(price_table=prices) if prices is not None else None
    return LlmGateway(
        MockTransport(scripts=scripts, responder=responder),
        ledger=ledger,
        retry_wait_s=retry_wait_s,
    )


def write_task_dir(root: Path, name: str = "toy_task", config: dict | None = None,
                   backward: bool = False) -> Path:
    task_dir = root / name
    task_dir.mkdir(parents=True)
    (task_dir / "func_forward.py").write_text(
        "def forward(x):\n    return x * 2\n"
    )
    cfg = {
        "input_shapes": [[[4, 4]]],
        "init_seeds": [0],
        "input_seeds": [0, 1],
    }
    if config:
        cfg.update(config)
    (task_dir / "config_forward.json").write_text(json.dumps(cfg))
    if backward:
        (task_dir / "func_backward.py").write_text(
            "def backward(g, x):\n    return g * 2\n"
        )
        (task_dir / "config_backward.json").write_text(json.dumps(cfg))
    return task_dir
