"""Operator entry point wiring translation, optimization, evaluation,
verifier tuning, and the contamination audit into subcommands.

Exit codes: 0 success, 1 usage/config error, 2 translation exhausted,
3 seed kernel incorrect, 4 evaluation backend unavailable.
"""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import click

from . import audit as audit_mod
from . import evolver, translator, verifier
from .backends import MockBackend, SubprocessBackend
from .evaluation import BackendUnavailable, evaluate_candidates
from .gateway import (
    CostLedger,
    LlmGateway,
    MockTransport,
    OpenAICompatTransport,
    SamplerSettings,
    load_price_table,
)
from .prompts import PromptRegistry
from .tasks import KernelCandidate, MalformedConfig, MissingFile, load_task, normalize_kernel_name

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_TRANSLATION_EXHAUSTED = 2
EXIT_SEED_INCORRECT = 3
EXIT_BACKEND_UNAVAILABLE = 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class Manifest:
    """Run manifest written to the output directory on every exit path."""

    def __init__(self, out_dir: Path, command: str, config_snapshot: dict, seed: int, registry: PromptRegistry):
        self.out_dir = out_dir
        self.finalized = False
        self.payload = {
            "command": command,
            "config": config_snapshot,
            "rng_seed": seed,
            "prompt_registry_version": registry.version(),
            "started_at": _now(),
            "finished_at": None,
            "status": "running",
            "totals": {"proposals": 0, "evaluations": 0, "cost_dollars": 0.0},
        }

    def bump(self, *, proposals: int = 0, evaluations: int = 0, cost: float = 0.0) -> None:
        totals = self.payload["totals"]
        totals["proposals"] += proposals
        totals["evaluations"] += evaluations
        totals["cost_dollars"] += cost

    def finalize(self, status: str) -> None:
        self.finalized = True
        self.payload["status"] = status
        self.payload["finished_at"] = _now()
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / "manifest.json").write_text(
            json.dumps(self.payload, sort_keys=True, indent=2) + "\n"
        )


def _load_json_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise CliError(f"config file is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise CliError("config root must be a JSON object")
    return data


def _default_price_table() -> dict:
    text = resources.files("kernelevo").joinpath("data/prices.json").read_text()
    return {m: (float(r["prompt"]), float(r["completion"])) for m, r in json.loads(text).items()}


def _build_gateway(config: dict, needed_models: list[str]) -> LlmGateway:
    transport_cfg = config.get("transport")
    if transport_cfg is None:
        raise CliError("config must define a 'transport' section for LLM-backed commands")
    kind = transport_cfg.get("kind")
    if kind == "mock":
        fixture = transport_cfg.get("fixture")
        if fixture is None:
            raise CliError("mock transport requires a 'fixture' file")
        transport = MockTransport.from_file(fixture)
    elif kind == "openai":
        transport = OpenAICompatTransport(base_url=transport_cfg.get("base_url"))
    else:
        raise CliError(f"unknown transport kind {kind!r}")

    if "price_table" in config:
        prices = load_price_table(config["price_table"])
    else:
        prices = _default_price_table()
    ledger = None
    missing = [m for m in needed_models if m not in prices]
    if missing:
        logger.warning("no prices for %s; cost accounting disabled", missing)
    else:
        ledger = CostLedger(price_table=prices)
    return LlmGateway(transport, ledger=ledger, retry_wait_s=float(config.get("retry_wait_s", 0.5)))


def _build_backend(backend_name: str, runner_mode: str, mock_seed: int):
    if backend_name == "mock":
        return MockBackend(seed=mock_seed)
    if backend_name == "runner":
        return SubprocessBackend(mode=runner_mode)
    raise CliError(f"unknown backend {backend_name!r}")


def _parse_devices(devices: str) -> list[str]:
    parsed = [d.strip() for d in devices.split(",") if d.strip()]
    if not parsed:
        raise CliError("at least one device id is required")
    return parsed


def _sampler_from(config: dict, prefix: str = "", **defaults) -> SamplerSettings:
    def get(key, fallback):
        return config.get(prefix + key, fallback)

    return SamplerSettings(
        model_id=get("model", defaults.get("model", "o4-mini")),
        temperature=get("temperature", defaults.get("temperature")),
        reasoning_effort=get("reasoning_effort", defaults.get("reasoning_effort")),
        max_tokens=get("max_tokens", defaults.get("max_tokens", 16384)),
    )


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def cli(verbose: bool):
    """Agentic CUDA kernel translation, optimization, and benchmarking."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@cli.command("translate")
@click.option("--task", "task_dir", required=True, help="Task directory.")
@click.option("--direction", type=click.Choice(["forward", "backward"]), default="forward")
@click.option("--backend", "backend_name", type=click.Choice(["mock", "runner"]), default="mock")
@click.option("--runner-mode", default="cuda", help="Runner mode when --backend runner.")
@click.option("--devices", default="0", help="Comma-separated device ids.")
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--seed", default=0, type=int)
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--prompts", "prompts_dir", default=None, type=click.Path())
def cmd_translate(task_dir, direction, backend_name, runner_mode, devices, out_dir, seed, config_path, prompts_dir):
    """Translate a task's reference implementation into a correct kernel."""
    config = _load_json_config(config_path)
    registry = PromptRegistry(prompts_dir)
    manifest = Manifest(out_dir, "translate", config, seed, registry)
    try:
        task = load_task(task_dir, direction)
        settings = _sampler_from(config, model="o4-mini", reasoning_effort="high", max_tokens=16384)
        gateway = _build_gateway(config, [settings.model_id])
        backend = _build_backend(backend_name, runner_mode, seed)
        device = _parse_devices(devices)[0]
        outcome = translator.translate(
            task,
            gateway,
            backend,
            settings,
            max_generations=int(config.get("num_generations", 10)),
            registry=registry,
            device=device,
        )
        out_dir.mkdir(parents=True, exist_ok=True)
        state = outcome.state
        manifest.bump(
            proposals=state.generation,
            evaluations=sum(1 for a in state.attempts if a.report is not None),
            cost=gateway.ledger.total() if gateway.ledger else 0.0,
        )
        state_payload = {
            "attempts": [
                {
                    "parse_failure": a.parse_failure,
                    "correct": bool(a.report.correct) if a.report else None,
                    "error_summary": a.error_summary,
                }
                for a in state.attempts
            ],
            "generations_used": state.generation,
        }
        (out_dir / "translation_state.json").write_text(
            json.dumps(state_payload, sort_keys=True, indent=2) + "\n"
        )
        if isinstance(outcome, translator.TranslationFailure):
            manifest.finalize("translation_exhausted")
            click.echo(f"translation failed after {state.generation} generations", err=True)
            sys.exit(EXIT_TRANSLATION_EXHAUSTED)
        kernel_path = out_dir / f"{task.name}_{direction}.cu"
        kernel_path.write_text(outcome.candidate.source)
        manifest.finalize("ok")
        click.echo(f"translated kernel written to {kernel_path}")
    except CliError as exc:
        manifest.finalize("usage_error")
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.code)
    except (MissingFile, MalformedConfig) as exc:
        manifest.finalize("usage_error")
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    except BackendUnavailable as exc:
        manifest.finalize("backend_unavailable")
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_BACKEND_UNAVAILABLE)
    finally:
        if not manifest.finalized:
            manifest.finalize("crashed")


def _generation_config(config: dict, use_verifier: bool, hints: bool, shapes: bool, profiles: bool) -> evolver.GenerationConfig:
    try:
        return evolver.GenerationConfig(
            generations=int(config.get("num_generations", 10)),
            population=int(config.get("num_samples", 8)),
            n_star=int(config.get("num_eval_kernels", 4)),
            context_size=int(config.get("num_context_kernels", 5)),
            use_verifier=use_verifier,
            include_input_shapes=shapes,
            use_profile_summaries=profiles,
            sample_cuda_hints=hints,
            context_strategy=config.get("context_strategy", evolver.CONTEXT_LEAST_TO_MOST),
            sort_key=config.get("sort_by", evolver.SORT_KEY_RUNTIME),
        )
    except ValueError as exc:
        raise CliError(f"invalid optimization config: {exc}")


@cli.command("optimize")
@click.option("--task", "task_dir", required=True)
@click.option("--direction", type=click.Choice(["forward", "backward"]), default="forward")
@click.option("--seed-kernel", "seed_kernel_path", required=True, type=click.Path(path_type=Path))
@click.option("--backend", "backend_name", type=click.Choice(["mock", "runner"]), default="mock")
@click.option("--runner-mode", default="cuda")
@click.option("--devices", default="0")
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--seed", default=0, type=int)
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--prompts", "prompts_dir", default=None, type=click.Path())
@click.option("--verifier/--no-verifier", "use_verifier", default=True)
@click.option("--hints/--no-hints", "use_hints", default=True)
@click.option("--shapes-in-prompt", is_flag=True, default=False)
@click.option("--profile-summaries", is_flag=True, default=False)
def cmd_optimize(task_dir, direction, seed_kernel_path, backend_name, runner_mode, devices,
                 out_dir, seed, config_path, prompts_dir, use_verifier, use_hints,
                 shapes_in_prompt, profile_summaries):
    """Evolve a correct seed kernel toward lower runtime."""
    config = _load_json_config(config_path)
    registry = PromptRegistry(prompts_dir)
    manifest = Manifest(out_dir, "optimize", config, seed, registry)
    try:
        task = load_task(task_dir, direction)
        gen_config = _generation_config(config, use_verifier, use_hints, shapes_in_prompt, profile_summaries)
        ensemble = evolver.EnsembleSpec(
            models=tuple(config.get("models", evolver.EnsembleSpec().models)),
            temperatures=tuple(config.get("temperatures", (0.0, 0.5, 0.75, 1.0))),
            reasoning_efforts=tuple(config.get("reasoning_efforts", ("auto", "high", "medium", "low"))),
            max_tokens=int(config.get("max_tokens", 8192)),
        )
        verifier_settings = _sampler_from(
            config, prefix="verifier_", model="azure-o4-mini", reasoning_effort="low", max_tokens=4096
        )
        needed = list(ensemble.models) + [verifier_settings.model_id]
        gateway = _build_gateway(config, needed)
        backend = _build_backend(backend_name, runner_mode, seed)
        device_list = _parse_devices(devices)
        hardware = evolver.HardwareInfo(
            gpu_type=config.get("gpu_type", "H100"),
            cuda_version=config.get("cuda_version", "12.4"),
            cudnn_version=config.get("cudnn_version", "8.9.7"),
        )
        if not seed_kernel_path.is_file():
            raise CliError(f"seed kernel not found: {seed_kernel_path}")
        seed_kernel = KernelCandidate(
            id="seed",
            kernel_name=normalize_kernel_name(seed_kernel_path.stem),
            description="translated seed kernel",
            source=seed_kernel_path.read_text(),
            generation=0,
        )
        result = evolver.optimize(
            task,
            seed_kernel,
            gen_config,
            gateway,
            backend,
            device_list,
            rng_seed=seed,
            ensemble=ensemble,
            run_dir=out_dir / "run",
            verifier_settings=verifier_settings,
            registry=registry,
            hardware=hardware,
        )
        manifest.bump(
            proposals=gen_config.generations * gen_config.population,
            evaluations=len(result.archive.entries),
            cost=gateway.ledger.total() if gateway.ledger else 0.0,
        )
        manifest.finalize("ok")
        click.echo(f"best kernel: {result.best.id} ({result.best.kernel_name})")
        click.echo(f"runtime_ms: {result.best_report.runtime_ms:.4f}")
        for baseline, value in sorted(result.best_report.speedup.items()):
            click.echo(f"speedup vs {baseline}: {value:.3f}x")
    except CliError as exc:
        manifest.finalize("usage_error")
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.code)
    except (MissingFile, MalformedConfig) as exc:
        manifest.finalize("usage_error")
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    except evolver.SeedIncorrect as exc:
        manifest.finalize("seed_incorrect")
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_SEED_INCORRECT)
    except BackendUnavailable as exc:
        manifest.finalize("backend_unavailable")
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_BACKEND_UNAVAILABLE)
    finally:
        if not manifest.finalized:
            manifest.finalize("crashed")


@cli.command("eval")
@click.argument("kernels", nargs=-1, required=True, type=click.Path(path_type=Path))
@click.option("--task", "task_dir", required=True)
@click.option("--direction", type=click.Choice(["forward", "backward"]), default="forward")
@click.option("--backend", "backend_name", type=click.Choice(["mock", "runner"]), default="mock")
@click.option("--runner-mode", default="cuda")
@click.option("--devices", default="0")
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--seed", default=0, type=int)
def cmd_eval(kernels, task_dir, direction, backend_name, runner_mode, devices, out_dir, seed):
    """Evaluate kernel files against a task: correctness, runtime, speedups."""
    registry = PromptRegistry()
    manifest = Manifest(out_dir, "eval", {"kernels": [str(k) for k in kernels]}, seed, registry)
    try:
        task = load_task(task_dir, direction)
        backend = _build_backend(backend_name, runner_mode, seed)
        device_list = _parse_devices(devices)
        candidates = []
        for i, path in enumerate(kernels):
            if not path.is_file():
                raise CliError(f"kernel file not found: {path}")
            candidates.append(
                KernelCandidate(
                    id=f"k{i}",
                    kernel_name=normalize_kernel_name(path.stem),
                    description=f"kernel file {path.name}",
                    source=path.read_text(),
                )
            )
        reports = evaluate_candidates(candidates, task, device_list, backend)
        out_dir.mkdir(parents=True, exist_ok=True)
        payload = []
        for path, report in zip(kernels, reports):
            runtime = f"{report.runtime_ms:.4f}" if report.runtime_ms is not None else "-"
            speedups = " ".join(
                f"{b}={v:.3f}x" for b, v in sorted(report.speedup.items())
            ) or "-"
            click.echo(
                f"{path.name}: correct={report.correct} runtime_ms={runtime} {speedups}"
            )
            record = asdict(report)
            record["kernel_file"] = str(path)
            payload.append(record)
        (out_dir / "eval_reports.json").write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n"
        )
        manifest.bump(evaluations=len(reports))
        manifest.finalize("ok")
    except CliError as exc:
        manifest.finalize("usage_error")
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.code)
    except (MissingFile, MalformedConfig) as exc:
        manifest.finalize("usage_error")
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    except BackendUnavailable as exc:
        manifest.finalize("backend_unavailable")
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_BACKEND_UNAVAILABLE)
    finally:
        if not manifest.finalized:
            manifest.finalize("crashed")


@cli.command("audit")
@click.option("--stats", "stats_dir", required=True, type=click.Path(path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--seed", default=0, type=int)
@click.option("--config", "config_path", default=None, type=click.Path())
def cmd_audit(stats_dir, out_dir, seed, config_path):
    """Audit recorded task statistics for contamination."""
    config = _load_json_config(config_path)
    registry = PromptRegistry()
    manifest = Manifest(out_dir, "audit", config, seed, registry)
    try:
        if not stats_dir.is_dir():
            raise CliError(f"stats directory not found: {stats_dir}")
        gateway = None
        settings = None
        if "transport" in config:
            settings = _sampler_from(config, model="claude-3-7-sonnet-20250219", temperature=0.0)
            gateway = _build_gateway(config, [settings.model_id])
        rows = []
        for path in sorted(stats_dir.glob("*.json")):
            stats = audit_mod.TaskOutputStats.from_file(path)
            rows.append(audit_mod.audit_task(stats, gateway, settings, registry))
        if not rows:
            raise CliError(f"no stats files under {stats_dir}")
        click.echo(audit_mod.render_table(rows))
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "audit_rows.json").write_text(
            json.dumps(
                [dict(asdict(row), contaminated=row.contaminated) for row in rows],
                sort_keys=True,
                indent=2,
            )
            + "\n"
        )
        manifest.finalize("ok")
    except CliError as exc:
        manifest.finalize("usage_error")
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.code)
    except (ValueError, OSError) as exc:
        manifest.finalize("usage_error")
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    finally:
        if not manifest.finalized:
            manifest.finalize("crashed")


@cli.command("tune-verifier")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(path_type=Path))
@click.option("--error-type", type=click.Choice(list(verifier.ERROR_TYPES)), required=True)
@click.option("--generations", default=20, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--seed", default=0, type=int)
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--prompts", "prompts_dir", default=None, type=click.Path())
def cmd_tune_verifier(dataset_path, error_type, generations, out_dir, seed, config_path, prompts_dir):
    """Tune a verifier prompt pair against a labeled kernel dataset."""
    config = _load_json_config(config_path)
    registry = PromptRegistry(prompts_dir)
    manifest = Manifest(out_dir, "tune-verifier", config, seed, registry)
    try:
        if not dataset_path.is_file():
            raise CliError(f"dataset not found: {dataset_path}")
        dataset = verifier.LabeledKernelDataset.from_file(dataset_path)
        if dataset.error_type != error_type:
            raise CliError(
                f"dataset targets {dataset.error_type!r}, not {error_type!r}"
            )
        meta_settings = _sampler_from(config, model="o4-mini", reasoning_effort="high", max_tokens=16384)
        v_settings = _sampler_from(
            config, prefix="verifier_", model="azure-o4-mini", reasoning_effort="low", max_tokens=4096
        )
        gateway = _build_gateway(config, [meta_settings.model_id, v_settings.model_id])
        run = verifier.tune_prompt(
            gateway, error_type, dataset, meta_settings, v_settings,
            generations=generations, registry=registry,
        )
        out_dir.mkdir(parents=True, exist_ok=True)
        history = [
            {
                "accuracy": entry.accuracy,
                "error_summaries": entry.error_summaries,
                "system": entry.prompt.system if entry.prompt else None,
                "instruction": entry.prompt.instruction if entry.prompt else None,
            }
            for entry in run.history
        ]
        (out_dir / "tuning_history.json").write_text(
            json.dumps({"error_type": error_type, "best": run.best, "history": history},
                       sort_keys=True, indent=2) + "\n"
        )
        best_entry = run.history[run.best]
        if best_entry.prompt is not None:
            verifier.save_verifier_prompt(best_entry.prompt, out_dir)
        manifest.bump(cost=gateway.ledger.total() if gateway.ledger else 0.0)
        manifest.finalize("ok")
        click.echo(f"best accuracy {best_entry.accuracy:.3f} at generation {run.best}")
    except CliError as exc:
        manifest.finalize("usage_error")
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.code)
    except (ValueError, OSError, KeyError) as exc:
        manifest.finalize("usage_error")
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    finally:
        if not manifest.finalized:
            manifest.finalize("crashed")


def main(argv: list[str] | None = None) -> None:
    """Console entry point with the stable exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        sys.exit(EXIT_USAGE)
    except click.ClickException as exc:
        exc.show()
        sys.exit(EXIT_USAGE)
    except click.exceptions.Abort:
        sys.exit(EXIT_USAGE)


if __name__ == "__main__":
    main()
