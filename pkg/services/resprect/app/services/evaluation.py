"""
Deterministic policy evaluation.
"""

from dataclasses import dataclass
from typing import Callable, List, Mapping, Sequence

import numpy as np
import pandas as pd
import structlog

from services.resprect.app.core.seeding import stream_rng
from services.resprect.app.engines.residual import ResidualComposer, residual_actor_input
from services.resprect.app.engines.sac import deterministic_action
from services.resprect.app.engines.tensor_nn import ParamSet
from services.resprect.app.envs.grasp_env import EpisodeOutcome, GraspEnv
from services.resprect.app.exceptions import IncompatibleCheckpointError
from services.resprect.app.schemas.run_log import EvalRow
from services.resprect.app.schemas.task import TaskSpec
from shared.utils.exceptions import ValidationError

logger = structlog.get_logger()

Policy = Callable[[np.ndarray], np.ndarray]


def policy_from_networks(networks: Mapping[str, ParamSet], residual_scale: float = 1.0) -> Policy:
    """
    Deterministic policy from checkpoint networks.

    Residual checkpoints carry the frozen base under "base/"; the executed
    action is then clip(a_pre + scale * a_rl, -1, 1).
    """
    if "actor" not in networks:
        raise IncompatibleCheckpointError("Checkpoint has no actor network", network="actor")
    actor = networks["actor"]
    if "base/actor" not in networks:
        return lambda obs: deterministic_action(actor, obs).astype(np.float32)

    base_actor = networks["base/actor"]
    composer = ResidualComposer(residual_scale)

    def residual_policy(obs: np.ndarray) -> np.ndarray:
        a_pre = deterministic_action(base_actor, obs)
        a_rl = deterministic_action(actor, residual_actor_input(obs, a_pre))
        total, _ = composer.compose(a_pre, a_rl)
        return total.astype(np.float32)

    return residual_policy


@dataclass(frozen=True)
class EvaluationResult:
    rows: List[EvalRow]

    @property
    def success_rate(self) -> float:
        return sum(r.success for r in self.rows) / len(self.rows)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.model_dump() for r in self.rows], columns=list(EvalRow.columns()))


def evaluation_seeds(seed: int, n_episodes: int) -> Sequence[int]:
    rng = stream_rng(seed, "eval")
    return [int(s) for s in rng.integers(0, 2**31 - 1, size=n_episodes)]


def evaluate(
    policy: Policy,
    env: GraspEnv,
    task: TaskSpec,
    n_episodes: int,
    seed: int,
    timestep: int = 0,
) -> EvaluationResult:
    """
    Roll out policy on n seeded episodes.

    Raises:
        ValidationError: n_episodes < 1
    """
    if n_episodes < 1:
        raise ValidationError("Evaluation needs at least one episode", field="n_episodes")
    rows = []
    for i, episode_seed in enumerate(evaluation_seeds(seed, n_episodes)):
        obs = env.reset(episode_seed, task).flat()
        total = 0.0
        outcome = EpisodeOutcome.RUNNING
        while not outcome.finished:
            observation, reward, outcome = env.step(policy(obs))
            obs = observation.flat()
            total += reward.total
        rows.append(
            EvalRow(
                timestep=timestep,
                episode=i,
                task=task.name,
                outcome=outcome.value,
                episode_return=total,
                length=env.world.step,
                success=int(outcome is EpisodeOutcome.SUCCESS),
            )
        )
    result = EvaluationResult(rows)
    logger.info("evaluation_finished", task=task.name, episodes=n_episodes, success_rate=result.success_rate)
    return result


def evaluate_pretrained(
    networks: Mapping[str, ParamSet],
    env: GraspEnv,
    task: TaskSpec,
    n_episodes: int = 100,
    seed: int = 0,
) -> float:
    """Success rate of a pretrained plain SAC policy; the Pre-Trained reference line."""
    return evaluate(policy_from_networks(networks), env, task, n_episodes, seed).success_rate
