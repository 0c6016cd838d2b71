"""
Demonstrations and demonstration-seeded SAC pretraining.

collect_demonstrations rolls out the scripted policy; gpayn_pretrain fills
the replay buffer with those transitions before the first learning step and
then trains plain SAC.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import pandas as pd
import structlog

from services.resprect.app.core.seeding import SeedStreams, episode_seed
from services.resprect.app.engines.replay_buffer import ReplayBuffer
from services.resprect.app.engines.sac import SACAgent
from services.resprect.app.engines.trainer import (
    EpisodeCallback,
    OffPolicyTrainer,
    TaskProvider,
    UpdateCallback,
    make_transition,
)
from services.resprect.app.envs.demo_policy import scripted_demo_policy
from services.resprect.app.envs.grasp_env import EpisodeOutcome, GraspEnv
from services.resprect.app.exceptions import StateError

logger = structlog.get_logger()


@dataclass(frozen=True)
class DemoEpisode:
    episode: int
    task: str
    seed: int
    outcome: str
    length: int
    episode_return: float


@dataclass
class DemoReport:
    episodes: List[DemoEpisode] = field(default_factory=list)

    @property
    def transitions(self) -> int:
        return sum(e.length for e in self.episodes)

    @property
    def success_rate(self) -> float:
        if not self.episodes:
            return 0.0
        return sum(e.outcome == EpisodeOutcome.SUCCESS.value for e in self.episodes) / len(self.episodes)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [e.__dict__ for e in self.episodes],
            columns=["episode", "task", "seed", "outcome", "length", "episode_return"],
        )


def collect_demonstrations(
    env: GraspEnv,
    task_provider: TaskProvider,
    n_episodes: int,
    rng: np.random.Generator,
    buffer: Optional[ReplayBuffer] = None,
    agent: Optional[SACAgent] = None,
) -> DemoReport:
    """
    Roll out the scripted policy for n_episodes.

    When a buffer is given, every transition is pushed; agent supplies the
    base actions stored alongside (zeros for plain SAC).
    """
    if buffer is not None and agent is None:
        raise StateError("Filling a replay buffer needs the agent that will train on it", component="demonstrations")
    report = DemoReport()
    for i in range(n_episodes):
        task = task_provider(i)
        seed = episode_seed(rng)
        obs = env.reset(seed, task).flat()
        total = 0.0
        outcome = EpisodeOutcome.RUNNING
        while not outcome.finished:
            action = scripted_demo_policy(obs, env.world, env.config)
            if agent is not None:
                a_pre = agent.base_action(obs)
                info, obs = make_transition(agent, env, obs, a_pre, action)
                outcome = info.outcome
                total += info.transition.reward
                if buffer is not None:
                    buffer.push(info.transition)
            else:
                observation, reward, outcome = env.step(action)
                obs = observation.flat()
                total += reward.total
        report.episodes.append(
            DemoEpisode(i, task.name, seed, outcome.value, env.world.step, total)
        )
    logger.info(
        "demonstrations_collected",
        episodes=n_episodes,
        transitions=report.transitions,
        success_rate=report.success_rate,
    )
    return report


def gpayn_pretrain(
    agent: SACAgent,
    env: GraspEnv,
    buffer: ReplayBuffer,
    streams: SeedStreams,
    task_provider: TaskProvider,
    total_timesteps: int,
    demo_episodes: int,
    on_episode: Optional[EpisodeCallback] = None,
    on_update: Optional[UpdateCallback] = None,
    on_iteration: Optional[Callable[[OffPolicyTrainer], None]] = None,
) -> DemoReport:
    """
    Prefill the buffer with demo_episodes scripted episodes, then train SAC.

    Demonstration steps are not counted as training timesteps.
    """
    report = collect_demonstrations(env, task_provider, demo_episodes, streams.demo, buffer, agent)
    logger.info("replay_prefilled", transitions=len(buffer))
    trainer = OffPolicyTrainer(agent, env, buffer, streams, task_provider, on_episode, on_update)
    trainer.run(total_timesteps, on_iteration)
    return report
