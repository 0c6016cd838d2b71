"""
Determinism Verification Script.

Runs the same mode twice with the same config and seed through the CLI and
checks that the run logs and the final checkpoint are byte-identical.

Usage:
    python services/resprect/scripts/verify_determinism.py --subcommand pretrain --seed 42
    python services/resprect/scripts/verify_determinism.py --subcommand train-residual \
        --extra --base-checkpoint runs/pre/final.ckpt
"""

import sys
import os
REPO_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), "../../.."))
sys.path.insert(0, REPO_ROOT)

import argparse
import subprocess
import tempfile
from pathlib import Path
from typing import List

import structlog

# Setup logging
structlog.configure(
    processors=[
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.processors.add_log_level,
        structlog.dev.ConsoleRenderer()
    ]
)
logger = structlog.get_logger()

COMPARED_FILES = ("episodes.csv", "updates.csv", "eval.csv", "final.ckpt")

DESK_RUN = [
    "--hidden-units", "64", "--batch-size", "64", "--total-timesteps", "2000",
    "--learning-starts", "200", "--demo-episodes", "2",
]


def run_once(subcommand: str, seed: int, output_dir: Path, extra: List[str]) -> None:
    logger.info(f"Running {subcommand} (seed={seed}) into {output_dir}...")
    cmd = [
        sys.executable, "-m", "services.resprect.app.main", subcommand,
        *DESK_RUN, "--seed", str(seed), "--output-dir", str(output_dir), *extra,
    ]
    result = subprocess.run(cmd, capture_output=True, text=True, cwd=REPO_ROOT)
    if result.returncode != 0:
        logger.error(f"Run failed: {result.stderr}")
        raise RuntimeError(f"{subcommand} failed with exit code {result.returncode}")


def verify_determinism(subcommand: str, seed: int, extra: List[str]) -> bool:
    logger.info("=" * 80)
    logger.info(f"Determinism Verification for {subcommand}")
    logger.info("=" * 80)

    with tempfile.TemporaryDirectory() as tmp:
        first, second = Path(tmp) / "run1", Path(tmp) / "run2"
        run_once(subcommand, seed, first, extra)
        run_once(subcommand, seed, second, extra)

        mismatches = []
        for name in COMPARED_FILES:
            a, b = first / name, second / name
            if not a.exists() and not b.exists():
                continue
            same = a.exists() and b.exists() and a.read_bytes() == b.read_bytes()
            logger.info(f"  {name}: {'identical' if same else 'DIFFERENT'}")
            if not same:
                mismatches.append(name)

    if not mismatches:
        logger.info("[OK] DETERMINISM VERIFIED: run logs and checkpoint are byte-identical")
        return True
    logger.error(f"[FAIL] DETERMINISM FAILED: {', '.join(mismatches)} differ")
    return False


def main():
    parser = argparse.ArgumentParser(description="Verify run determinism")
    parser.add_argument("--subcommand", default="pretrain", help="resprect subcommand to run twice")
    parser.add_argument("--seed", type=int, default=42, help="Random seed")
    parser.add_argument("--extra", nargs=argparse.REMAINDER, default=[], help="Further flags for the subcommand")
    args = parser.parse_args()

    ok = verify_determinism(args.subcommand, args.seed, args.extra)
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
