"""
Toy grasping environment, object families and the scripted demonstrator
"""

from .grasp_env import EnvConfig, EpisodeOutcome, GraspEnv, Observation, RewardComponents
from .objects import object_sampler

__all__ = [
    "EnvConfig",
    "EpisodeOutcome",
    "GraspEnv",
    "Observation",
    "RewardComponents",
    "object_sampler",
]
