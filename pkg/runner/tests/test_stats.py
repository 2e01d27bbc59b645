import json

from kernelevo_runner.stats import dump_stats

from .conftest import TASKS_DIR


class TestDumpStats:
    def test_writes_seed_grid(self, tmp_path):
        out = dump_stats(TASKS_DIR / "layernorm", "forward", tmp_path / "layernorm.json")
        payload = json.loads(out.read_text())
        assert payload["task"] == "layernorm"
        config = json.loads((TASKS_DIR / "layernorm" / "config_forward.json").read_text())
        expected = len(config["init_seeds"]) * len(config["input_seeds"])
        assert len(payload["outputs"]) == expected
        size = 1
        for dim in payload["shape"]:
            size *= dim
        assert all(len(rec["values"]) == size for rec in payload["outputs"])
        assert payload["baseline_source"].strip()

    def test_deterministic(self, tmp_path):
        a = dump_stats(TASKS_DIR / "layernorm", "forward", tmp_path / "a.json")
        b = dump_stats(TASKS_DIR / "layernorm", "forward", tmp_path / "b.json")
        assert a.read_text() == b.read_text()
