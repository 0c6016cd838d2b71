"""
Fine-tuning baseline.

The actor and critics start as copies of a pretrained plain SAC agent; the
entropy coefficient and optimizer states start fresh. Training is ordinary
SAC with baseline_gradient_steps gradient rounds per iteration.
"""

from typing import Mapping, Optional

import structlog

from services.resprect.app.engines.sac import AgentBundle, SACAgent, SACHyperParams
from services.resprect.app.engines.tensor_nn import ParamSet
from services.resprect.app.engines.trainer import OffPolicyTrainer
from services.resprect.app.exceptions import IncompatibleCheckpointError

logger = structlog.get_logger()


def finetune_init(
    base: Mapping[str, ParamSet],
    obs_dim: int,
    action_dim: int,
    hp: SACHyperParams,
    ent_coef_init: float = 0.01,
    target_entropy: Optional[float] = None,
) -> SACAgent:
    """
    Build a SAC agent whose actor and critics are copies of base.

    Raises:
        IncompatibleCheckpointError: base networks missing or not matching the
            environment dimensions
    """
    for name, in_dim, out_dim in (
        ("actor", obs_dim, 2 * action_dim),
        ("critic1", obs_dim + action_dim, 1),
        ("critic2", obs_dim + action_dim, 1),
    ):
        if name not in base:
            raise IncompatibleCheckpointError(f"Base checkpoint has no '{name}' network", network=name)
        arch = base[name].arch
        if arch.input_dim != in_dim or arch.output_dim != out_dim:
            raise IncompatibleCheckpointError(
                f"Base '{name}' does not fit the environment",
                network=name,
                expected_arch=f"in={in_dim} out={out_dim}",
                found_arch=base[name].arch_tag,
            )

    bundle = AgentBundle.create(
        base["actor"].copy(),
        base["critic1"].copy(),
        base["critic2"].copy(),
        hp.learning_rate,
        ent_coef_init,
        -float(action_dim) if target_entropy is None else target_entropy,
    )
    logger.info("finetune_initialized", actor=bundle.actor.arch_tag, gradient_steps=hp.gradient_steps)
    return SACAgent(bundle, obs_dim, action_dim, hp)


def finetune_iteration(trainer: OffPolicyTrainer) -> int:
    """One training iteration: train_freq env steps, then the configured gradient rounds."""
    return trainer.train_iteration()
