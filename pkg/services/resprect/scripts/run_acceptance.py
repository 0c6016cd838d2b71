"""
Acceptance Experiment Driver.

Runs the long experiments that are not part of the pytest suite:
    sanity   from-scratch SAC on the reach-only variant, success >= 0.9 within
             50k timesteps on at least 4 of 5 seeds
    speedup  RESPRECT vs plain residual vs scratch SAC on one held-out task,
             timesteps to a 0.6 moving-average success rate
    curves   one run per baseline merged into a single comparison table

Usage:
    python services/resprect/scripts/run_acceptance.py sanity --runs-dir runs/acceptance
    python services/resprect/scripts/run_acceptance.py speedup --task heldout_0 --pretrain-timesteps 200000
    python services/resprect/scripts/run_acceptance.py curves --task heldout_1
"""

import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "../../..")))

import argparse
import statistics
from pathlib import Path
from typing import Dict, List, Optional

import structlog

from services.resprect.app.core.config import RunConfig
from services.resprect.app.harness.reporting import (
    first_crossing,
    load_curve,
    merge_curves,
    summarize_success,
    write_comparison,
)
from services.resprect.app.harness.runner import FINAL_CHECKPOINT, SUMMARY, run_training
from shared.utils.helpers import deserialize_json

# Setup logging
structlog.configure(
    processors=[
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.processors.add_log_level,
        structlog.dev.ConsoleRenderer()
    ]
)
logger = structlog.get_logger()

SEEDS = (0, 1, 2, 3, 4)
SANITY_THRESHOLD = 0.9
SANITY_TIMESTEPS = 50_000
SPEEDUP_THRESHOLD = 0.6

# Desk scale: width 256 instead of the 2048-unit default
DESK_SCALE = {"hidden_units": 256}


def desk_config(**overrides) -> RunConfig:
    return RunConfig(**{**DESK_SCALE, **overrides})


def pretrain_base(runs_dir: Path, timesteps: int, seed: int = 0) -> Path:
    """Demonstration-seeded SAC on the pretraining family; returns the checkpoint path."""
    run_dir = run_training(desk_config(
        mode="scratch", task_family="pretrain", total_timesteps=timesteps,
        seed=seed, output_dir=runs_dir / "pretrained",
    ))
    return run_dir / FINAL_CHECKPOINT


def sanity(runs_dir: Path) -> bool:
    reached = []
    for seed in SEEDS:
        run_dir = run_training(desk_config(
            mode="scratch", reach_only=True, demo_episodes=0, total_timesteps=SANITY_TIMESTEPS,
            seed=seed, output_dir=runs_dir / "sanity" / f"seed{seed}",
        ))
        t = first_crossing(load_curve(run_dir), SANITY_THRESHOLD)
        logger.info(f"seed={seed} first timestep at {SANITY_THRESHOLD}: {t if t is not None else 'not reached'}")
        reached.append(t is not None)

    ok = sum(reached) >= 4
    if ok:
        logger.info(f"[OK] SAC SANITY: {sum(reached)}/5 seeds reached {SANITY_THRESHOLD}")
    else:
        logger.error(f"[FAIL] SAC SANITY: only {sum(reached)}/5 seeds reached {SANITY_THRESHOLD}")
    return ok


def _median_crossing(run_dirs: List[Path]) -> float:
    """Median timestep to the threshold; runs that never reach it count as infinite."""
    times = []
    for run_dir in run_dirs:
        t = first_crossing(load_curve(run_dir), SPEEDUP_THRESHOLD)
        times.append(float("inf") if t is None else float(t))
    return statistics.median(times)


def speedup(runs_dir: Path, task: str, pretrain_timesteps: int, timesteps: int) -> bool:
    base = pretrain_base(runs_dir, pretrain_timesteps)
    medians: Dict[str, float] = {}
    for mode in ("resprect", "residual_plain", "scratch"):
        dirs = []
        for seed in SEEDS:
            dirs.append(run_training(desk_config(
                mode=mode, task_family=task, total_timesteps=timesteps, seed=seed,
                base_checkpoint=base if mode != "scratch" else None,
                output_dir=runs_dir / "speedup" / f"{mode}-seed{seed}",
            )))
        medians[mode] = _median_crossing(dirs)
        logger.info(f"{mode}: median timestep to {SPEEDUP_THRESHOLD} = {medians[mode]}")

    ordered = medians["resprect"] < medians["residual_plain"] < medians["scratch"]
    margin = medians["resprect"] <= 0.5 * medians["scratch"]
    if ordered and margin:
        logger.info("[OK] SPEEDUP ORDERING: resprect < residual_plain < scratch with a 2x margin")
    else:
        logger.error(f"[FAIL] SPEEDUP ORDERING: ordered={ordered} margin={margin}")
    return ordered and margin


def _summary_rate(run_dir: Path) -> float:
    return float(deserialize_json((run_dir / SUMMARY).read_text())["success_rate"])


def curves(runs_dir: Path, task: str, pretrain_timesteps: int, timesteps: int, output: Optional[Path]) -> bool:
    base = pretrain_base(runs_dir, pretrain_timesteps)
    out = runs_dir / "curves"
    run_dirs: Dict[str, Path] = {}
    for name, mode in (("resprect", "resprect"), ("residual", "residual_plain"),
                       ("sac_demos", "scratch"), ("finetuning", "finetune")):
        run_dirs[name] = run_training(desk_config(
            mode=mode, task_family=task, total_timesteps=timesteps,
            base_checkpoint=base if mode != "scratch" else None, output_dir=out / name,
        ))

    meta = run_training(desk_config(
        mode="reptile", task_family="pretrain", total_timesteps=pretrain_timesteps, output_dir=out / "reptile-meta",
    ))
    run_dirs["reptile"] = run_training(desk_config(
        mode="finetune", task_family=task, total_timesteps=timesteps,
        base_checkpoint=meta / FINAL_CHECKPOINT, output_dir=out / "reptile",
    ))

    flat = {
        "pretrained": _summary_rate(run_training(desk_config(
            mode="eval", task_family=task, eval_checkpoint=base, output_dir=out / "pretrained",
        ))),
        "demonstrations": _summary_rate(run_training(desk_config(
            mode="demo", task_family=task, output_dir=out / "demonstrations",
        ))),
    }

    loaded = {name: load_curve(d) for name, d in run_dirs.items()}
    table = merge_curves(loaded, flat)
    path = write_comparison(table, output or out / "comparison.csv")
    logger.info(f"Comparison table written to {path}")
    logger.info("\n" + summarize_success(loaded).to_string(index=False))

    ok = table["series"].nunique() == 7
    for name in flat:
        ok = ok and table.loc[table["series"] == name, "success_rate_30"].nunique() == 1
    if ok:
        logger.info("[OK] CURVES: seven series, flat reference lines constant")
    else:
        logger.error("[FAIL] CURVES: comparison table is incomplete")
    return ok


def main():
    parser = argparse.ArgumentParser(description="Run RESPRECT acceptance experiments")
    parser.add_argument("experiment", choices=["sanity", "speedup", "curves"])
    parser.add_argument("--runs-dir", type=Path, default=Path("runs/acceptance"))
    parser.add_argument("--task", default="heldout_0", help="Held-out task family")
    parser.add_argument("--pretrain-timesteps", type=int, default=200_000)
    parser.add_argument("--timesteps", type=int, default=100_000, help="Timesteps per held-out run")
    parser.add_argument("--output", type=Path, default=None, help="Comparison CSV path (curves only)")
    args = parser.parse_args()

    logger.info("=" * 80)
    logger.info(f"Acceptance experiment: {args.experiment}")
    logger.info("=" * 80)

    if args.experiment == "sanity":
        ok = sanity(args.runs_dir)
    elif args.experiment == "speedup":
        ok = speedup(args.runs_dir, args.task, args.pretrain_timesteps, args.timesteps)
    else:
        ok = curves(args.runs_dir, args.task, args.pretrain_timesteps, args.timesteps, args.output)

    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
