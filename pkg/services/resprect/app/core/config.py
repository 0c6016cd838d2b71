"""
RESPRECT Service Configuration.

Two layers:
- Settings: process-level knobs from environment variables / .env
- RunConfig: everything one experiment run needs, loaded from a flat
  `key = value` file (with `#` comments) and CLI overrides
"""

from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from services.resprect.app.engines.sac import SACHyperParams
from services.resprect.app.envs.objects import KNOWN_FAMILIES
from services.resprect.app.envs.grasp_env import EnvConfig
from shared.utils.exceptions import ConfigurationError, ValidationError
from shared.utils.helpers import generate_hash


class Settings(BaseSettings):
    """
    RESPRECT Service configuration settings.

    All settings can be overridden via environment variables.
    """

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    # ============================================
    # Service Configuration
    # ============================================
    SERVICE_NAME: str = "resprect"
    SERVICE_VERSION: str = "1.0.0"

    # ============================================
    # Run Storage
    # ============================================
    RUNS_DIR: Path = Field(default=Path("runs"), description="Default parent of run directories")

    # ============================================
    # Logging Configuration
    # ============================================
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: Literal["json", "console"] = "json"


Mode = Literal["scratch", "resprect", "residual_plain", "finetune", "reptile", "demo", "eval"]

MODES_NEEDING_BASE = ("resprect", "residual_plain", "finetune")


class RunConfig(BaseModel):
    """
    Hyperparameters, environment settings and experiment paths of one run.

    Defaults are the standard SAC/RESPRECT hyperparameters.
    """

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    # ============================================
    # SAC hyperparameters
    # ============================================
    optimizer: Literal["adam"] = "adam"
    learning_rate: float = Field(default=3e-4, gt=0)
    gamma: float = Field(default=0.99, ge=0.0, le=1.0)
    buffer_size: int = Field(default=1_000_000, gt=0)
    hidden_layers: int = Field(default=2, ge=2, le=2, description="Only two-hidden-layer MLPs exist")
    hidden_units: int = Field(default=2048, gt=0)
    batch_size: int = Field(default=256, gt=0)
    target_entropy: Optional[float] = Field(default=None, description="None resolves to -action_dim")
    nonlinearity: Literal["relu"] = "relu"
    tau: float = Field(default=0.005, gt=0.0, le=1.0)
    target_update_interval: int = Field(default=1, gt=0)
    gradient_steps: int = Field(default=10, ge=0)
    train_freq: int = Field(default=10, gt=0)
    total_timesteps: int = Field(default=1_000_000, ge=0)
    ent_coef_init: float = Field(default=0.01, gt=0)
    fixed_alpha: bool = False
    learning_starts: int = Field(default=1000, ge=0)

    # ============================================
    # Residual / baselines
    # ============================================
    residual_scale: float = Field(default=1.0, gt=0)
    baseline_gradient_steps: int = Field(default=1, ge=0)
    demo_episodes: int = Field(default=50, ge=0)
    reptile_eps: float = Field(default=0.1, gt=0.0, le=1.0)
    reptile_inner_steps: int = Field(default=1000, gt=0)

    # ============================================
    # Environment
    # ============================================
    num_fingers: int = Field(default=3, ge=2)
    max_steps: int = Field(default=100, gt=0)
    feature_noise: float = Field(default=0.01, ge=0)
    reach_only: bool = False
    reach_tolerance: float = Field(default=0.5, gt=0)
    task_family: str = "heldout_0"

    # ============================================
    # Experiment
    # ============================================
    mode: Mode = "scratch"
    seed: int = Field(default=0, ge=0)
    base_checkpoint: Optional[Path] = None
    eval_checkpoint: Optional[Path] = None
    output_dir: Optional[Path] = None
    eval_interval: int = Field(default=0, ge=0, description="Timesteps between periodic evals; 0 disables")
    eval_episodes: int = Field(default=100, gt=0)
    checkpoint_fraction: float = Field(default=0.1, gt=0.0, le=1.0)

    @field_validator("task_family")
    @classmethod
    def _check_task_family(cls, v: str) -> str:
        if v not in KNOWN_FAMILIES:
            raise ValueError(f"unknown task family '{v}' (known: {', '.join(KNOWN_FAMILIES)})")
        return v

    @model_validator(mode="after")
    def _check_paths(self) -> "RunConfig":
        if self.mode in MODES_NEEDING_BASE and self.base_checkpoint is None:
            raise ValueError(f"mode '{self.mode}' requires base_checkpoint")
        if self.mode == "eval" and self.eval_checkpoint is None:
            raise ValueError("mode 'eval' requires eval_checkpoint")
        return self

    # ============================================
    # Derived views
    # ============================================
    @property
    def action_dim(self) -> int:
        return self.env_config().action_dim

    def effective(self) -> "RunConfig":
        """Copy with derived values resolved (target_entropy = -action_dim)."""
        if self.target_entropy is not None:
            return self.model_copy()
        return self.model_copy(update={"target_entropy": -float(self.action_dim)})

    def env_config(self) -> EnvConfig:
        return EnvConfig(
            num_fingers=self.num_fingers,
            max_steps=self.max_steps,
            feature_noise=self.feature_noise,
            reach_only=self.reach_only,
            reach_tolerance=self.reach_tolerance,
        )

    def sac_hyperparams(self, gradient_steps: Optional[int] = None) -> SACHyperParams:
        return SACHyperParams(
            learning_rate=self.learning_rate,
            gamma=self.gamma,
            tau=self.tau,
            batch_size=self.batch_size,
            gradient_steps=self.gradient_steps if gradient_steps is None else gradient_steps,
            train_freq=self.train_freq,
            learning_starts=self.learning_starts,
            target_update_interval=self.target_update_interval,
            fixed_alpha=self.fixed_alpha,
        )

    def to_config_text(self) -> str:
        """Render in the `key = value` file format; the result loads back to an equal config."""
        lines = []
        for key, value in self.model_dump().items():
            if value is None:
                continue
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        """Hash of the effective config; the output directory does not count."""
        return generate_hash(self.effective().model_copy(update={"output_dir": None}).to_config_text())


# ============================================
# Loading
# ============================================

def parse_config_text(text: str, source: str = "<text>") -> Dict[str, str]:
    """Parse `key = value` lines; `#` starts a comment, blank lines are skipped."""
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigurationError(
                f"{source}:{lineno}: expected `key = value`", config_key=key or None
            )
        if key in values:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key '{key}'", config_key=key)
        values[key] = value.strip()
    return values


def build_config(values: Mapping[str, Any]) -> RunConfig:
    """Validate a flat mapping into a RunConfig, mapping pydantic errors to ours."""
    unknown = sorted(set(values) - set(RunConfig.model_fields))
    if unknown:
        raise ConfigurationError(f"Unknown config key(s): {', '.join(unknown)}", config_key=unknown[0])
    cleaned = {k: (None if isinstance(v, str) and v.lower() in ("", "none") else v) for k, v in values.items()}
    try:
        return RunConfig.model_validate(cleaned)
    except PydanticValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(p) for p in first.get("loc", ())) or None
        err = ValidationError(f"Invalid config: {first.get('msg')}", field=field)
        err.details["errors"] = [
            {"loc": list(x.get("loc", ())), "msg": x.get("msg")} for x in e.errors()
        ]
        raise err from e


def load_config(
    path: Optional[Union[str, Path]] = None,
    cli_overrides: Optional[Mapping[str, Any]] = None,
    defaults: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """
    Load a run config with precedence defaults <- file <- CLI.

    defaults sit between the model defaults and the file (e.g. the mode a
    CLI subcommand implies).

    Raises:
        ConfigurationError: missing file, malformed line, unknown or duplicate key
        ValidationError: a value fails type or range validation
    """
    values: Dict[str, Any] = dict(defaults or {})
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"Config file not found: {path}", config_key="config")
        values.update(parse_config_text(path.read_text(encoding="utf-8"), str(path)))
    for key, value in (cli_overrides or {}).items():
        if value is not None:
            values[key] = value
    return build_config(values)


settings = Settings()
