"""
Learning engines for RESPRECT Service
"""

from .replay_buffer import ReplayBuffer, Transition
from .residual import PretrainedPolicy, ResidualAgent
from .sac import AgentBundle, SACAgent, SACHyperParams
from .trainer import OffPolicyTrainer

__all__ = [
    "AgentBundle",
    "OffPolicyTrainer",
    "PretrainedPolicy",
    "ReplayBuffer",
    "ResidualAgent",
    "SACAgent",
    "SACHyperParams",
    "Transition",
]
