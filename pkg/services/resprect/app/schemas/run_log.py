"""
Run log row schemas.

Column order of every CSV follows field declaration order and is part of the
versioned schema.
"""

from typing import ClassVar, Tuple

from pydantic import BaseModel, ConfigDict, Field

SCHEMA_VERSION = 1


class _Row(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    @classmethod
    def columns(cls) -> Tuple[str, ...]:
        return tuple(cls.model_fields)


class EpisodeRow(_Row):
    """One finished training episode."""

    FILENAME: ClassVar[str] = "episodes.csv"

    timestep: int = Field(ge=0)
    episode: int = Field(ge=0)
    task: str
    outcome: str
    episode_return: float
    length: int = Field(ge=0)
    success: int = Field(ge=0, le=1)
    success_rate_30: float = Field(ge=0.0, le=1.0)


class UpdateRow(_Row):
    """Mean update metrics of one training iteration."""

    FILENAME: ClassVar[str] = "updates.csv"

    timestep: int = Field(ge=0)
    updates: int = Field(ge=0)
    critic1_loss: float
    critic2_loss: float
    actor_loss: float
    entropy: float
    alpha: float = Field(gt=0.0)


class EvalRow(_Row):
    """One deterministic evaluation episode."""

    FILENAME: ClassVar[str] = "eval.csv"

    timestep: int = Field(ge=0)
    episode: int = Field(ge=0)
    task: str
    outcome: str
    episode_return: float
    length: int = Field(ge=0)
    success: int = Field(ge=0, le=1)
