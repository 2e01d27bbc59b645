"""Runner entry point.

Serve mode (default) speaks the line protocol over stdin/stdout:

    kernelevo-runner --mode cuda --device 0

Stats mode records reference outputs for the contamination auditor:

    kernelevo-runner --dump-stats --task tasks/layernorm --out stats/layernorm.json
"""

from __future__ import annotations

import argparse
import sys

from .server import MODE_CPU_REFERENCE, MODE_CUDA, RunnerConfig, serve
from .stats import dump_stats


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="kernelevo-runner")
    parser.add_argument("--mode", choices=[MODE_CUDA, MODE_CPU_REFERENCE], default=MODE_CUDA)
    parser.add_argument("--device", default="0")
    parser.add_argument("--compile-budget-s", type=float, default=120.0)
    parser.add_argument("--evaluate-budget-s", type=float, default=180.0)
    parser.add_argument("--dump-stats", action="store_true")
    parser.add_argument("--task", help="task directory (stats mode)")
    parser.add_argument("--direction", default="forward")
    parser.add_argument("--out", help="output stats file (stats mode)")
    args = parser.parse_args(argv)

    if args.dump_stats:
        if not args.task or not args.out:
            parser.error("--dump-stats requires --task and --out")
        path = dump_stats(args.task, args.direction, args.out)
        print(f"stats written to {path}", file=sys.stderr)
        return 0

    if args.mode == MODE_CUDA:
        import torch

        if not torch.cuda.is_available():
            print("cuda mode requires a visible GPU", file=sys.stderr)
            return 1

    config = RunnerConfig(
        mode=args.mode,
        device=args.device,
        compile_budget_s=args.compile_budget_s,
        evaluate_budget_s=args.evaluate_budget_s,
    )
    return serve(config)


if __name__ == "__main__":
    sys.exit(main())
