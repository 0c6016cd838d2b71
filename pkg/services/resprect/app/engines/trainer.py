"""
Off-policy training loop.

Drives any agent exposing base_action / act / random_action / update through
the grasping environment: train_freq environment steps, then gradient_steps
gradient rounds once learning has started.
"""

from collections import deque
from dataclasses import dataclass
from typing import Callable, Deque, List, Optional, Tuple

import numpy as np
import structlog

from services.resprect.app.core.seeding import SeedStreams, episode_seed
from services.resprect.app.engines.replay_buffer import ReplayBuffer, Transition
from services.resprect.app.engines.residual import resprect_collect_step, resprect_update
from services.resprect.app.engines.sac import SACAgent, UpdateMetrics
from services.resprect.app.envs.grasp_env import EpisodeOutcome, GraspEnv
from services.resprect.app.schemas.run_log import EpisodeRow, UpdateRow
from services.resprect.app.schemas.task import TaskSpec

logger = structlog.get_logger()

SUCCESS_WINDOW = 30

TaskProvider = Callable[[int], TaskSpec]
EpisodeCallback = Callable[[EpisodeRow], None]
UpdateCallback = Callable[[UpdateRow], None]


class SuccessWindow:
    """Success rate over exactly the last min(window, episodes) outcomes."""

    def __init__(self, window: int = SUCCESS_WINDOW):
        self._recent: Deque[bool] = deque(maxlen=window)

    def add(self, success: bool) -> float:
        self._recent.append(bool(success))
        return self.rate

    @property
    def rate(self) -> float:
        if not self._recent:
            return 0.0
        return sum(self._recent) / len(self._recent)


@dataclass
class StepInfo:
    transition: Transition
    outcome: EpisodeOutcome


def make_transition(
    agent: SACAgent,
    env: GraspEnv,
    obs: np.ndarray,
    a_pre: np.ndarray,
    action: np.ndarray,
) -> Tuple[StepInfo, np.ndarray]:
    """Execute action and package the step; returns (info, next flat observation)."""
    observation, reward, outcome = env.step(action)
    next_obs = observation.flat()
    transition = Transition(
        obs=obs,
        action=np.asarray(action, dtype=np.float32),
        reward=reward.total,
        next_obs=next_obs,
        a_pre=a_pre,
        a_pre_next=agent.base_action(next_obs),
        done=outcome.terminal,
        truncated=outcome.truncated,
    )
    return StepInfo(transition, outcome), next_obs


class OffPolicyTrainer:
    """
    Collects experience with an agent and updates it from a replay buffer.

    Args:
        agent: SACAgent or ResidualAgent
        env: Environment instance owned by this trainer
        buffer: Replay buffer (may be pre-filled with demonstrations)
        streams: Seed streams; env drives episode seeds, noise drives
            exploration, replay drives batch sampling
        task_provider: Maps an episode index to the task to reset with
        on_episode / on_update: Row sinks (usually a RunLog)
    """

    def __init__(
        self,
        agent: SACAgent,
        env: GraspEnv,
        buffer: ReplayBuffer,
        streams: SeedStreams,
        task_provider: TaskProvider,
        on_episode: Optional[EpisodeCallback] = None,
        on_update: Optional[UpdateCallback] = None,
    ):
        self.agent = agent
        self.env = env
        self.buffer = buffer
        self.streams = streams
        self.task_provider = task_provider
        self.on_episode = on_episode
        self.on_update = on_update

        self.timestep = 0
        self.episode = 0
        self.successes = SuccessWindow()
        self._obs: Optional[np.ndarray] = None
        self._task: Optional[TaskSpec] = None
        self._return = 0.0
        self._length = 0

    @property
    def hp(self):
        return self.agent.hp

    def _start_episode(self) -> None:
        self._task = self.task_provider(self.episode)
        self._obs = self.env.reset(episode_seed(self.streams.env), self._task).flat()
        self._return = 0.0
        self._length = 0

    def collect_step(self) -> StepInfo:
        """One environment step; random actions until learning_starts."""
        if self._obs is None:
            self._start_episode()
        outcomes: List[EpisodeOutcome] = []

        def step_fn(action: np.ndarray):
            observation, reward, outcome = self.env.step(action)
            outcomes.append(outcome)
            return observation.flat(), reward.total, outcome.terminal, outcome.truncated

        transition = resprect_collect_step(
            self.agent, self._obs, step_fn, self.streams.noise,
            uniform=self.timestep < self.hp.learning_starts,
        )
        info = StepInfo(transition, outcomes[0])
        self.buffer.push(transition)
        self.timestep += 1
        self._return += transition.reward
        self._length += 1
        self._obs = transition.next_obs

        if info.outcome.finished:
            self._end_episode(info.outcome)
        return info

    def _end_episode(self, outcome: EpisodeOutcome) -> None:
        success = outcome is EpisodeOutcome.SUCCESS
        rate = self.successes.add(success)
        row = EpisodeRow(
            timestep=self.timestep,
            episode=self.episode,
            task=self._task.name,
            outcome=outcome.value,
            episode_return=self._return,
            length=self._length,
            success=int(success),
            success_rate_30=rate,
        )
        logger.debug(
            "training_episode_finished",
            timestep=self.timestep,
            episode=self.episode,
            outcome=outcome.value,
            success_rate_30=rate,
        )
        if self.on_episode:
            self.on_episode(row)
        self.episode += 1
        self._obs = None

    def ready_to_learn(self) -> bool:
        return (
            self.timestep >= self.hp.learning_starts
            and len(self.buffer) >= self.hp.batch_size
        )

    def gradient_rounds(self) -> List[UpdateMetrics]:
        metrics = list(resprect_update(self.agent, self.buffer, self.streams.replay, self.streams.noise))
        if metrics and self.on_update:
            self.on_update(
                UpdateRow(
                    timestep=self.timestep,
                    updates=self.agent.updates,
                    critic1_loss=float(np.mean([m.critic1_loss for m in metrics])),
                    critic2_loss=float(np.mean([m.critic2_loss for m in metrics])),
                    actor_loss=float(np.mean([m.actor_loss for m in metrics])),
                    entropy=float(np.mean([m.entropy for m in metrics])),
                    alpha=metrics[-1].alpha,
                )
            )
        return metrics

    def train_iteration(self, max_steps: Optional[int] = None) -> int:
        """
        Collect up to train_freq steps, then run the gradient rounds.

        Returns:
            Number of environment steps taken
        """
        n = self.hp.train_freq if max_steps is None else min(self.hp.train_freq, max_steps)
        for _ in range(n):
            self.collect_step()
        if self.ready_to_learn():
            self.gradient_rounds()
        return n

    def run(self, total_timesteps: int, on_iteration: Optional[Callable[["OffPolicyTrainer"], None]] = None) -> None:
        """Train until total_timesteps environment steps have been taken."""
        while self.timestep < total_timesteps:
            self.train_iteration(total_timesteps - self.timestep)
            if on_iteration:
                on_iteration(self)
