"""
Task schemas.
"""

from typing import Dict, Literal

from pydantic import BaseModel, ConfigDict, Field

from shared.utils.exceptions import ConfigurationError


class TaskSpec(BaseModel):
    """
    Object and episode-distribution parameters of one grasping task.

    Together with an episode seed, a TaskSpec fully determines an environment
    instance.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    shape: Literal["cylinder", "box"] = "cylinder"
    size: float = Field(gt=0, description="Radius (cylinder) or half-width (box)")
    height: float = Field(gt=0)
    mass: float = Field(gt=0, description="Mass analog; heavy objects need every finger")
    pose_seed: int = Field(default=0, ge=0, description="Initial-pose distribution seed")
    placement_range: float = Field(default=1.0, ge=0)
    grasp_generator: Literal["centroid", "jittered"] = "centroid"
    grasp_jitter: float = Field(default=0.3, ge=0)

    def to_config_text(self) -> str:
        """Render as `key = value` lines, the same format as run configs."""
        return "".join(f"{k} = {v}\n" for k, v in self.model_dump().items())

    @classmethod
    def from_config_text(cls, text: str) -> "TaskSpec":
        values: Dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigurationError(f"Line {lineno} is not `key = value`", details={"line": raw})
            values[key.strip()] = value.strip()
        return cls.model_validate(values)
