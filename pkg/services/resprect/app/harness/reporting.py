"""
Learning-curve reports: speedup ratios and merged comparison tables.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

import pandas as pd

from services.resprect.app.harness.run_log import read_table
from services.resprect.app.schemas.run_log import EpisodeRow
from shared.utils.exceptions import ValidationError

NOT_REACHED = "not reached"
CURVE_COLUMN = "success_rate_30"


def first_crossing(curve: pd.DataFrame, threshold: float) -> Optional[int]:
    """First timestep whose moving-average success rate reaches threshold."""
    if CURVE_COLUMN not in curve.columns or "timestep" not in curve.columns:
        raise ValidationError(f"Curve needs 'timestep' and '{CURVE_COLUMN}' columns", field="curve")
    hits = curve.loc[curve[CURVE_COLUMN] >= threshold, "timestep"]
    return None if hits.empty else int(hits.iloc[0])


@dataclass(frozen=True)
class SpeedupReport:
    threshold: float
    timestep_a: Optional[int]
    timestep_b: Optional[int]
    ratio: float

    @property
    def reached(self) -> bool:
        return math.isfinite(self.ratio)

    def describe(self) -> str:
        ta = NOT_REACHED if self.timestep_a is None else str(self.timestep_a)
        tb = NOT_REACHED if self.timestep_b is None else str(self.timestep_b)
        ratio = f"{self.ratio:.4g}" if self.reached else NOT_REACHED
        return f"threshold={self.threshold} timestep_a={ta} timestep_b={tb} speedup={ratio}"


def speedup_report(curve_a: pd.DataFrame, curve_b: pd.DataFrame, threshold: float) -> SpeedupReport:
    """
    ratio = t_b / t_a where t_x is the first timestep curve x reaches threshold.

    The ratio is inf when only curve_b never reaches it and NaN when curve_a
    never does.

    Raises:
        ValidationError: threshold outside [0, 1]
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"Threshold {threshold} outside [0, 1]", field="threshold")
    t_a = first_crossing(curve_a, threshold)
    t_b = first_crossing(curve_b, threshold)
    if t_a is None:
        ratio = math.nan
    elif t_b is None:
        ratio = math.inf
    else:
        ratio = t_b / t_a if t_a > 0 else (1.0 if t_b == 0 else math.inf)
    return SpeedupReport(threshold, t_a, t_b, ratio)


def load_curve(path: Union[str, Path]) -> pd.DataFrame:
    """episodes.csv of a run directory (or the file itself)."""
    path = Path(path)
    if path.is_dir():
        path = path / EpisodeRow.FILENAME
    return read_table(path, EpisodeRow)


def merge_curves(
    curves: Mapping[str, pd.DataFrame], flat_lines: Optional[Mapping[str, float]] = None
) -> pd.DataFrame:
    """
    Long-format comparison table with columns (series, timestep, success_rate_30).

    Flat reference lines (Pre-Trained, Demonstrations) are emitted at the first
    and last timestep covered by the curves.
    """
    frames = [
        pd.DataFrame({
            "series": name,
            "timestep": curve["timestep"].astype("int64"),
            CURVE_COLUMN: curve[CURVE_COLUMN].astype("float64"),
        })
        for name, curve in curves.items()
    ]
    end = max((int(c["timestep"].max()) for c in curves.values() if len(c)), default=0)
    for name, value in (flat_lines or {}).items():
        if not 0.0 <= value <= 1.0:
            raise ValidationError(f"Reference line '{name}' outside [0, 1]", field=name)
        frames.append(pd.DataFrame({"series": name, "timestep": [0, end], CURVE_COLUMN: [value, value]}))
    frames = [f for f in frames if len(f)]
    if not frames:
        return pd.DataFrame(columns=["series", "timestep", CURVE_COLUMN])
    return pd.concat(frames, ignore_index=True)


def write_comparison(table: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format="%.9g", lineterminator="\n")
    return path


def summarize_success(curves: Dict[str, pd.DataFrame]) -> pd.DataFrame:
    """Final moving-average success rate and episode count per series."""
    rows = [
        {
            "series": name,
            "episodes": len(curve),
            "final_success_rate_30": float(curve[CURVE_COLUMN].iloc[-1]) if len(curve) else 0.0,
        }
        for name, curve in curves.items()
    ]
    return pd.DataFrame(rows, columns=["series", "episodes", "final_success_rate_30"])
