"""
Run logs - versioned CSV tables written through pandas.

Every file starts with a `# schema_version=N` line followed by the header;
readers skip comment lines. Rows are buffered and appended on flush.
"""

from pathlib import Path
from typing import Generic, List, Optional, Type, TypeVar, Union

import pandas as pd

from services.resprect.app.schemas.run_log import (
    SCHEMA_VERSION,
    EpisodeRow,
    EvalRow,
    UpdateRow,
    _Row,
)
from shared.utils.exceptions import DataIntegrityError, ValidationError

RowT = TypeVar("RowT", bound=_Row)

FLOAT_FORMAT = "%.9g"


class CsvTable(Generic[RowT]):
    """Append-only CSV table for one row schema."""

    def __init__(self, path: Path, row_type: Type[RowT], optional: bool = False):
        self.path = path
        self.row_type = row_type
        self.optional = optional
        self._pending: List[RowT] = []
        self._started = False
        self.rows_written = 0

    def append(self, row: RowT) -> None:
        self._pending.append(row)

    def flush(self) -> None:
        if not self._pending and (self._started or self.optional):
            return
        frame = pd.DataFrame(
            [r.model_dump() for r in self._pending], columns=list(self.row_type.columns())
        )
        with open(self.path, "a" if self._started else "w", encoding="utf-8", newline="") as f:
            if not self._started:
                f.write(f"# schema_version={SCHEMA_VERSION}\n")
            frame.to_csv(f, header=not self._started, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        self._started = True
        self.rows_written += len(self._pending)
        self._pending.clear()


def read_table(path: Union[str, Path], row_type: Type[_Row]) -> pd.DataFrame:
    """
    Read a run-log CSV and check its schema.

    Raises:
        DataIntegrityError: missing file, unsupported schema version or column mismatch
    """
    path = Path(path)
    if not path.is_file():
        raise DataIntegrityError(f"Run log not found: {path}", path=path)
    with open(path, encoding="utf-8") as f:
        first = f.readline().strip()
    if first != f"# schema_version={SCHEMA_VERSION}":
        raise DataIntegrityError(
            "Unsupported run log schema", path=path, details={"header": first}
        )
    frame = pd.read_csv(path, comment="#")
    expected = list(row_type.columns())
    if list(frame.columns) != expected:
        raise DataIntegrityError(
            "Run log columns do not match schema",
            path=path,
            details={"expected": expected, "found": list(frame.columns)},
        )
    return frame


class RunLog:
    """
    Episode, update and evaluation tables of one run directory.

    Episode timesteps must strictly increase.
    """

    def __init__(self, run_dir: Union[str, Path]):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.episodes: CsvTable[EpisodeRow] = CsvTable(self.run_dir / EpisodeRow.FILENAME, EpisodeRow)
        self.updates: CsvTable[UpdateRow] = CsvTable(self.run_dir / UpdateRow.FILENAME, UpdateRow)
        self.evals: CsvTable[EvalRow] = CsvTable(
            self.run_dir / EvalRow.FILENAME, EvalRow, optional=True
        )
        self._last_timestep: Optional[int] = None

    def log_episode(self, row: EpisodeRow) -> None:
        if self._last_timestep is not None and row.timestep <= self._last_timestep:
            raise ValidationError(
                f"Episode timestep {row.timestep} does not increase past {self._last_timestep}",
                field="timestep",
            )
        self._last_timestep = row.timestep
        self.episodes.append(row)

    def log_update(self, row: UpdateRow) -> None:
        self.updates.append(row)

    def log_eval(self, row: EvalRow) -> None:
        self.evals.append(row)

    def flush(self) -> None:
        self.episodes.flush()
        self.updates.flush()
        self.evals.flush()

    def close(self) -> None:
        self.flush()
