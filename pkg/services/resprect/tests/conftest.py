"""
Pytest configuration and fixtures for RESPRECT Service tests.
"""

import sys
import os
import pytest
import numpy as np

# Add project root to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "../../..")))

from services.resprect.app.core.config import RunConfig
from services.resprect.app.engines.replay_buffer import ReplayBuffer, Transition
from services.resprect.app.engines.residual import PretrainedPolicy
from services.resprect.app.engines.sac import AgentBundle, SACHyperParams
from services.resprect.app.engines.tensor_nn import MLPArch, ParamSet, init_mlp, mlp_forward
from services.resprect.app.envs.grasp_env import EnvConfig, GraspEnv
from services.resprect.app.envs.objects import HELDOUT_TASKS


# ============================================
# Random generators
# ============================================

@pytest.fixture
def rng():
    """Fresh seed-0 generator per test."""
    return np.random.default_rng(0)


# ============================================
# Tiny networks
# ============================================

TINY_OBS = 5
TINY_ACTION = 2
TINY_HIDDEN = 8


def kink_free_inputs(params: ParamSet, rng: np.random.Generator, n: int, margin: float = 1e-2, tries: int = 200,
                     tail=None):
    """
    Draw n inputs whose hidden pre-activations all stay at least `margin`
    away from zero, so central differences never straddle a ReLU kink.

    tail, when given, fixes the last input columns of every row.
    """
    accepted = []
    for _ in range(tries):
        x = rng.standard_normal((1, params.arch.input_dim))
        if tail is not None:
            x[0, -len(tail):] = tail
        if mlp_forward(params, x).min_preactivation_margin() >= margin:
            accepted.append(x[0])
            if len(accepted) == n:
                return np.stack(accepted)
    raise RuntimeError("Could not find inputs away from ReLU kinks")


@pytest.fixture
def tiny_arch():
    return MLPArch(TINY_OBS, TINY_HIDDEN, 1)


@pytest.fixture
def tiny_net(tiny_arch, rng):
    return init_mlp(tiny_arch, rng)


@pytest.fixture
def tiny_bundle():
    """Float32 SAC bundle on a 5-dim observation and 2-dim action."""
    return AgentBundle.initialize(
        TINY_OBS, TINY_OBS + TINY_ACTION, TINY_ACTION, TINY_HIDDEN, np.random.default_rng(0)
    )


@pytest.fixture
def tiny_base():
    """Frozen pretrained policy with tiny shapes and a non-trivial actor head."""
    bundle = AgentBundle.initialize(
        TINY_OBS, TINY_OBS + TINY_ACTION, TINY_ACTION, TINY_HIDDEN, np.random.default_rng(42)
    )
    return PretrainedPolicy.from_networks(bundle.networks(), TINY_OBS, TINY_ACTION)


@pytest.fixture
def hp():
    return SACHyperParams(batch_size=4, gradient_steps=1, train_freq=5, learning_starts=0)


def make_transition(rng: np.random.Generator, obs_dim: int = TINY_OBS, action_dim: int = TINY_ACTION,
                    done: bool = False, truncated: bool = False, reward=None) -> Transition:
    return Transition(
        obs=rng.standard_normal(obs_dim).astype(np.float32),
        action=rng.uniform(-1, 1, action_dim).astype(np.float32),
        reward=float(rng.standard_normal()) if reward is None else float(reward),
        next_obs=rng.standard_normal(obs_dim).astype(np.float32),
        a_pre=np.zeros(action_dim, dtype=np.float32),
        a_pre_next=np.zeros(action_dim, dtype=np.float32),
        done=done,
        truncated=truncated,
    )


def batch_of(transitions):
    buffer = ReplayBuffer(len(transitions), len(transitions[0].obs), len(transitions[0].action))
    for t in transitions:
        buffer.push(t)
    return buffer.contents()


def linear_regime_critic(arch: MLPArch, rng):
    """Float64 critic with large positive hidden biases so no ReLU is ever inactive."""
    params = init_mlp(arch, rng, dtype=np.float64)
    entries = {k: np.array(v, copy=True) for k, v in params.items()}
    entries["fc1.bias"] += 10.0
    entries["fc2.bias"] += 50.0
    return type(params)(entries, params.arch_tag)


def shifted_head(params, offset: float):
    entries = {k: np.array(v, copy=True) for k, v in params.items()}
    entries["head.bias"] += offset
    return type(params)(entries, params.arch_tag)


@pytest.fixture
def filled_buffer(rng):
    buffer = ReplayBuffer(32, TINY_OBS, TINY_ACTION)
    for _ in range(16):
        buffer.push(make_transition(rng))
    return buffer


# ============================================
# Environment
# ============================================

@pytest.fixture
def env_config():
    return EnvConfig()


@pytest.fixture
def env(env_config):
    return GraspEnv(env_config)


@pytest.fixture
def centered_task():
    """Held-out cylinder with centroid grasps; the canonical demo object."""
    return HELDOUT_TASKS["heldout_0"]


# ============================================
# Run configs
# ============================================

@pytest.fixture
def make_run_config(tmp_path):
    """Factory for desk-sized run configs writing below tmp_path."""

    def _make(**overrides) -> RunConfig:
        values = dict(
            hidden_units=8,
            batch_size=8,
            buffer_size=2000,
            total_timesteps=40,
            learning_starts=10,
            train_freq=10,
            gradient_steps=1,
            demo_episodes=1,
            max_steps=20,
            eval_episodes=2,
            reptile_inner_steps=20,
            output_dir=tmp_path / "run",
        )
        values.update(overrides)
        return RunConfig(**values)

    return _make
