"""
RESPRECT command-line interface.

Subcommands:
    pretrain          demonstration-seeded SAC on the pretraining family
    train-residual    residual SAC on a frozen base (resprect or residual_plain)
    finetune          fine-tune a pretrained SAC checkpoint
    reptile-pretrain  Reptile meta-pretraining
    demo-collect      scripted demonstrations and their success rate
    evaluate          deterministic evaluation of a checkpoint
    speedup-report    timesteps-to-threshold ratio of two learning curves
    merge-curves      one comparison table from several runs

Every RunConfig key is available as --key-name. Exit codes: 0 success,
1 validation or configuration error, 2 runtime failure.
"""

import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import structlog

from services.resprect.app.core.config import RunConfig, load_config, settings
from services.resprect.app.harness.reporting import (
    load_curve,
    merge_curves,
    speedup_report,
    write_comparison,
)
from services.resprect.app.harness.runner import run_training, seed_batch
from shared.utils.exceptions import ConfigurationError, ResprectException, ValidationError
from shared.utils.logger import setup_logging

logger = structlog.get_logger()

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

# subcommand -> (implied defaults, allowed modes)
TRAINING_COMMANDS: Dict[str, tuple] = {
    "pretrain": ({"mode": "scratch", "task_family": "pretrain"}, ("scratch",)),
    "train-residual": ({"mode": "resprect"}, ("resprect", "residual_plain")),
    "finetune": ({"mode": "finetune"}, ("finetune",)),
    "reptile-pretrain": ({"mode": "reptile", "task_family": "pretrain"}, ("reptile",)),
    "demo-collect": ({"mode": "demo"}, ("demo",)),
    "evaluate": ({"mode": "eval"}, ("eval",)),
}


class CliParser(argparse.ArgumentParser):
    """Usage errors are validation errors (exit 1)."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="key = value config file")
    parser.add_argument("--seeds", type=str, default=None, help="comma-separated seeds for a batch of runs")
    group = parser.add_argument_group("run config overrides")
    for name, field in RunConfig.model_fields.items():
        group.add_argument(_flag(name), dest=f"cfg_{name}", default=None, metavar="VALUE", help=field.description)


def add_logging_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--log-level", default=None, help=f"default: {settings.LOG_LEVEL}")
    parser.add_argument("--log-format", choices=["json", "console"], default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(prog="resprect", description="Residual SAC with pretrained critics")
    sub = parser.add_subparsers(dest="command", required=True)

    for command in TRAINING_COMMANDS:
        p = sub.add_parser(command)
        add_config_flags(p)
        add_logging_flags(p)

    p = sub.add_parser("speedup-report")
    p.add_argument("--curve-a", type=Path, required=True, help="run dir or episodes.csv of the faster method")
    p.add_argument("--curve-b", type=Path, required=True, help="run dir or episodes.csv of the baseline")
    p.add_argument("--threshold", type=float, required=True)
    add_logging_flags(p)

    p = sub.add_parser("merge-curves")
    p.add_argument("--curve", action="append", default=[], metavar="NAME=PATH")
    p.add_argument("--flat", action="append", default=[], metavar="NAME=VALUE")
    p.add_argument("--output", type=Path, required=True)
    add_logging_flags(p)
    return parser


def _pairs(items: Sequence[str], option: str) -> List[tuple]:
    pairs = []
    for item in items:
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise ValidationError(f"{option} expects NAME=VALUE, got '{item}'", field=option)
        pairs.append((name, value))
    return pairs


def _parse_seeds(text: Optional[str]) -> Optional[List[int]]:
    if text is None:
        return None
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as e:
        raise ValidationError(f"Invalid --seeds value '{text}'", field="seeds") from e


def cmd_training(args: argparse.Namespace) -> int:
    defaults, allowed = TRAINING_COMMANDS[args.command]
    overrides: Dict[str, Any] = {
        key[len("cfg_"):]: value for key, value in vars(args).items() if key.startswith("cfg_")
    }
    config = load_config(args.config, overrides, defaults)
    if config.mode not in allowed:
        raise ConfigurationError(
            f"'{args.command}' runs mode {' or '.join(allowed)}, not '{config.mode}'", config_key="mode"
        )
    seeds = _parse_seeds(args.seeds)
    if seeds:
        for seed, run_dir in seed_batch(config, seeds).items():
            print(f"seed={seed} run_dir={run_dir}")
    else:
        print(run_training(config))
    return EXIT_OK


def cmd_speedup(args: argparse.Namespace) -> int:
    report = speedup_report(load_curve(args.curve_a), load_curve(args.curve_b), args.threshold)
    print(report.describe())
    return EXIT_OK


def cmd_merge(args: argparse.Namespace) -> int:
    curves = {name: load_curve(path) for name, path in _pairs(args.curve, "--curve")}
    flat = {}
    for name, value in _pairs(args.flat, "--flat"):
        try:
            flat[name] = float(value)
        except ValueError as e:
            raise ValidationError(f"--flat value for '{name}' is not a number", field="flat") from e
    print(write_comparison(merge_curves(curves, flat), args.output))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(settings.SERVICE_NAME, args.log_level or settings.LOG_LEVEL, args.log_format or settings.LOG_FORMAT)

    try:
        if args.command == "speedup-report":
            return cmd_speedup(args)
        if args.command == "merge-curves":
            return cmd_merge(args)
        return cmd_training(args)
    except (ValidationError, ConfigurationError) as e:
        logger.error("invalid_input", **e.to_dict())
        return EXIT_VALIDATION
    except ResprectException as e:
        logger.error("run_aborted", **e.to_dict())
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception("unexpected_error", error=str(e))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
