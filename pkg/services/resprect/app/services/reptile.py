"""
Reptile meta-pretraining for SAC.

Each outer iteration samples a task, clones the meta parameters into a fresh
SAC agent, runs K inner environment steps on a replay buffer pre-filled with
demonstrations of that task, and moves the meta parameters towards the
adapted ones:

    theta_meta <- theta_meta + eps * (theta_task - theta_meta)

for the actor and both critics.
"""

from dataclasses import dataclass, replace
from typing import Callable, Dict, Mapping, Optional

import numpy as np
import structlog

from services.resprect.app.core.seeding import SeedStreams
from services.resprect.app.engines.replay_buffer import ReplayBuffer
from services.resprect.app.engines.sac import SACAgent, SACHyperParams
from services.resprect.app.engines.tensor_nn import ParamSet
from services.resprect.app.engines.trainer import (
    EpisodeCallback,
    OffPolicyTrainer,
    SuccessWindow,
    UpdateCallback,
)
from services.resprect.app.envs.grasp_env import GraspEnv
from services.resprect.app.exceptions import DimensionError
from services.resprect.app.schemas.run_log import EpisodeRow
from services.resprect.app.schemas.task import TaskSpec
from services.resprect.app.services.finetune import finetune_init
from services.resprect.app.services.pretraining import collect_demonstrations
from shared.utils.exceptions import ValidationError

logger = structlog.get_logger()

META_NETWORKS = ("actor", "critic1", "critic2")

ParamCollection = Dict[str, ParamSet]


def reptile_outer_update(
    theta_meta: Mapping[str, ParamSet], theta_task: Mapping[str, ParamSet], eps: float
) -> ParamCollection:
    """
    Elementwise (1 - eps) * meta + eps * task, computed in float64.

    eps = 0 returns meta and eps = 1 returns task exactly.
    """
    if not 0.0 <= eps <= 1.0:
        raise ValidationError(f"Reptile step size {eps} outside [0, 1]", field="eps")
    if set(theta_meta) != set(theta_task):
        raise DimensionError(
            "Meta and task parameter collections differ",
            details={"meta": sorted(theta_meta), "task": sorted(theta_task)},
        )
    return {
        name: meta.zip_map(
            theta_task[name],
            lambda m, t: ((1.0 - eps) * m.astype(np.float64) + eps * t.astype(np.float64)).astype(m.dtype),
        )
        for name, meta in theta_meta.items()
    }


@dataclass(frozen=True)
class InnerLoopResult:
    index: int
    task: TaskSpec
    timesteps: int
    episodes: int
    theta_task: ParamCollection
    theta_meta: ParamCollection


InnerCallback = Callable[[InnerLoopResult], None]


def inner_hyperparams(hp: SACHyperParams) -> SACHyperParams:
    """Inner loops learn from the demo-prefilled buffer right away."""
    return replace(hp, learning_starts=0)


def inner_buffer_capacity(buffer_size: int, steps: int, demo_episodes: int, max_steps: int) -> int:
    """An inner loop never holds more than its own steps plus its demonstrations."""
    return min(buffer_size, max(1, steps + demo_episodes * max_steps))


def reptile_pretrain(
    theta_meta: Mapping[str, ParamSet],
    env: GraspEnv,
    streams: SeedStreams,
    sample_task: Callable[[np.random.Generator], TaskSpec],
    hp: SACHyperParams,
    total_timesteps: int,
    inner_steps: int,
    eps: float,
    demo_episodes: int,
    buffer_size: int,
    ent_coef_init: float = 0.01,
    target_entropy: Optional[float] = None,
    on_episode: Optional[EpisodeCallback] = None,
    on_update: Optional[UpdateCallback] = None,
    on_inner_complete: Optional[InnerCallback] = None,
) -> ParamCollection:
    """
    Run outer iterations until total_timesteps inner environment steps.

    Returns:
        Meta parameters for actor, critic1 and critic2
    """
    meta: ParamCollection = {k: theta_meta[k].copy() for k in META_NETWORKS}
    inner_hp = inner_hyperparams(hp)
    successes = SuccessWindow()
    offset_t, offset_ep, index = 0, 0, 0

    while offset_t < total_timesteps:
        task = sample_task(streams.task)
        agent = finetune_init(meta, env.obs_dim, env.action_dim, inner_hp, ent_coef_init, target_entropy)
        steps = min(inner_steps, total_timesteps - offset_t)
        capacity = inner_buffer_capacity(buffer_size, steps, demo_episodes, env.config.max_steps)
        buffer = ReplayBuffer(capacity, env.obs_dim, env.action_dim)
        collect_demonstrations(env, lambda _: task, demo_episodes, streams.demo, buffer, agent)

        def forward_episode(row: EpisodeRow, t0=offset_t, e0=offset_ep) -> None:
            rate = successes.add(bool(row.success))
            if on_episode:
                on_episode(row.model_copy(update={
                    "timestep": row.timestep + t0,
                    "episode": row.episode + e0,
                    "success_rate_30": rate,
                }))

        def forward_update(row, t0=offset_t) -> None:
            if on_update:
                on_update(row.model_copy(update={"timestep": row.timestep + t0}))

        trainer = OffPolicyTrainer(agent, env, buffer, streams, lambda _: task, forward_episode, forward_update)
        trainer.run(steps)

        theta_task = {k: agent.bundle.networks()[k] for k in META_NETWORKS}
        meta = reptile_outer_update(meta, theta_task, eps)
        logger.info("reptile_outer_step", index=index, task=task.name, timesteps=offset_t + trainer.timestep)
        if on_inner_complete:
            on_inner_complete(
                InnerLoopResult(index, task, trainer.timestep, trainer.episode, theta_task, meta)
            )
        offset_t += trainer.timestep
        offset_ep += trainer.episode
        index += 1
    return meta
