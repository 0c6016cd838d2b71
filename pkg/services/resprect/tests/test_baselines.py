"""
Tests for demonstrations, fine-tuning, Reptile and evaluation.
"""

from dataclasses import replace

import numpy as np
import pytest

from services.resprect.app.core.seeding import SeedStreams
from services.resprect.app.engines.replay_buffer import ReplayBuffer
from services.resprect.app.engines.residual import PretrainedPolicy, ResidualAgent
from services.resprect.app.engines.sac import AgentBundle, SACAgent, SACHyperParams
from services.resprect.app.engines.tensor_nn import MLPArch, init_mlp, scalar_param
from services.resprect.app.engines.trainer import OffPolicyTrainer
from services.resprect.app.envs.grasp_env import EnvConfig, GraspEnv
from services.resprect.app.envs.objects import HELDOUT_TASKS
from services.resprect.app.exceptions import DimensionError, IncompatibleCheckpointError, StateError
from services.resprect.app.services.evaluation import (
    evaluate,
    evaluate_pretrained,
    evaluation_seeds,
    policy_from_networks,
)
from services.resprect.app.services.finetune import finetune_init, finetune_iteration
from services.resprect.app.services.pretraining import collect_demonstrations, gpayn_pretrain
from services.resprect.app.services.reptile import (
    META_NETWORKS,
    inner_buffer_capacity,
    inner_hyperparams,
    reptile_outer_update,
    reptile_pretrain,
)
from shared.utils.exceptions import ValidationError

OBS_DIM = EnvConfig().obs_dim
ACTION_DIM = EnvConfig().action_dim


@pytest.fixture
def small_hp():
    return SACHyperParams(batch_size=8, gradient_steps=1, train_freq=10, learning_starts=0)


@pytest.fixture
def env_base():
    """Plain SAC networks sized for the default grasping environment."""
    return AgentBundle.initialize(OBS_DIM, OBS_DIM + ACTION_DIM, ACTION_DIM, 8, np.random.default_rng(11)).networks()


def heldout_0(_episode=None):
    return HELDOUT_TASKS["heldout_0"]


def filled(value: float) -> dict:
    arch = MLPArch(2, 3, 1)
    params = init_mlp(arch, np.random.default_rng(0))
    return {"actor": params.map(lambda t: np.full_like(t, value))}


# ============================================
# Demonstrations
# ============================================

@pytest.mark.integration
class TestDemonstrations:

    def test_scripted_policy_grasps_the_centered_cylinder(self, env):
        report = collect_demonstrations(env, heldout_0, 3, np.random.default_rng(0))
        assert report.success_rate == 1.0
        assert len(report.frame()) == 3
        assert all(e.length < 100 for e in report.episodes)

    def test_buffer_needs_an_agent(self, env):
        with pytest.raises(StateError):
            collect_demonstrations(env, heldout_0, 1, np.random.default_rng(0), ReplayBuffer(10, OBS_DIM, ACTION_DIM))

    def test_prefill_stores_every_transition(self, env, small_hp):
        agent = SACAgent.create(OBS_DIM, ACTION_DIM, 8, np.random.default_rng(0), small_hp)
        buffer = ReplayBuffer(1000, OBS_DIM, ACTION_DIM)
        report = collect_demonstrations(env, heldout_0, 2, np.random.default_rng(0), buffer, agent)
        assert len(buffer) == report.transitions
        stored = buffer.contents()
        assert not np.any(stored.a_pre)
        assert stored.done.sum() == 2

    def test_gpayn_trains_after_prefill(self, small_hp):
        env = GraspEnv(EnvConfig(max_steps=100))
        streams = SeedStreams(0)
        agent = SACAgent.create(OBS_DIM, ACTION_DIM, 8, streams.init, small_hp)
        buffer = ReplayBuffer(1000, OBS_DIM, ACTION_DIM)
        report = gpayn_pretrain(agent, env, buffer, streams, heldout_0, 20, 1)
        assert len(buffer) == report.transitions + 20
        assert agent.updates == 2


# ============================================
# Fine-tuning
# ============================================

@pytest.mark.unit
class TestFinetune:

    def test_starts_from_copies_of_the_base(self, env_base, small_hp):
        agent = finetune_init(env_base, OBS_DIM, ACTION_DIM, small_hp)
        assert agent.bundle.actor.bit_equal(env_base["actor"])
        assert agent.bundle.critic1.bit_equal(env_base["critic1"])
        assert agent.bundle.target2.bit_equal(env_base["critic2"])
        assert agent.bundle.actor["fc1.weight"] is not env_base["actor"]["fc1.weight"]
        assert agent.bundle.alpha == pytest.approx(0.01, rel=1e-6)
        assert agent.bundle.actor_opt.step == 0

    def test_missing_network(self, env_base, small_hp):
        partial = {k: v for k, v in env_base.items() if k != "critic1"}
        with pytest.raises(IncompatibleCheckpointError):
            finetune_init(partial, OBS_DIM, ACTION_DIM, small_hp)

    def test_wrong_environment(self, env_base, small_hp):
        with pytest.raises(IncompatibleCheckpointError):
            finetune_init(env_base, OBS_DIM + 5, ACTION_DIM + 1, small_hp)

    def test_iteration_steps_and_trains(self, env_base, small_hp):
        agent = finetune_init(env_base, OBS_DIM, ACTION_DIM, small_hp)
        env = GraspEnv(EnvConfig(max_steps=20))
        trainer = OffPolicyTrainer(agent, env, ReplayBuffer(100, OBS_DIM, ACTION_DIM), SeedStreams(0), heldout_0)
        assert finetune_iteration(trainer) == 10
        assert agent.updates == 1
        assert not agent.bundle.actor.bit_equal(env_base["actor"])


# ============================================
# Reptile
# ============================================

@pytest.mark.unit
class TestReptileOuterUpdate:

    def test_zero_step_keeps_meta(self):
        meta, task = filled(0.3), filled(0.7)
        assert reptile_outer_update(meta, task, 0.0)["actor"].bit_equal(meta["actor"])

    def test_unit_step_takes_task(self):
        meta, task = filled(0.3), filled(0.7)
        assert reptile_outer_update(meta, task, 1.0)["actor"].bit_equal(task["actor"])

    def test_small_step_example(self):
        updated = reptile_outer_update(filled(0.0), filled(1.0), 0.1)
        assert updated["actor"]["head.bias"][0] == pytest.approx(0.1)

    def test_half_step_lies_between(self, rng):
        arch = MLPArch(3, 4, 2)
        meta = {"actor": init_mlp(arch, rng)}
        task = {"actor": init_mlp(arch, rng)}
        mid = reptile_outer_update(meta, task, 0.5)["actor"]
        for name in mid:
            lo = np.minimum(meta["actor"][name], task["actor"][name])
            hi = np.maximum(meta["actor"][name], task["actor"][name])
            assert np.all((lo <= mid[name]) & (mid[name] <= hi))

    def test_linear_in_step_size(self, rng):
        arch = MLPArch(3, 4, 2)
        meta = {"actor": init_mlp(arch, rng)}
        task = {"actor": init_mlp(arch, rng)}
        updated = reptile_outer_update(meta, task, 0.25)["actor"]
        for name in updated:
            expected = meta["actor"][name] + 0.25 * (task["actor"][name] - meta["actor"][name])
            np.testing.assert_allclose(updated[name], expected, rtol=1e-6, atol=1e-7)

    def test_step_size_range(self):
        with pytest.raises(ValidationError):
            reptile_outer_update(filled(0.0), filled(1.0), 1.5)

    def test_mismatched_collections(self):
        with pytest.raises(DimensionError):
            reptile_outer_update(filled(0.0), {"critic1": filled(1.0)["actor"]}, 0.5)

    def test_inner_loops_learn_immediately(self, small_hp):
        assert inner_hyperparams(replace(small_hp, learning_starts=500)).learning_starts == 0

    def test_inner_buffer_capacity(self):
        assert inner_buffer_capacity(1_000_000, 1000, 50, 100) == 6000
        assert inner_buffer_capacity(200, 1000, 50, 100) == 200
        assert inner_buffer_capacity(1_000_000, 0, 0, 100) == 1


@pytest.mark.integration
def test_reptile_pretrain_runs_outer_iterations(env_base, small_hp):
    env = GraspEnv(EnvConfig(max_steps=20))
    results, episodes = [], []
    meta = reptile_pretrain(
        env_base, env, SeedStreams(0), lambda rng: HELDOUT_TASKS["heldout_0"], small_hp,
        total_timesteps=40, inner_steps=20, eps=0.1, demo_episodes=1, buffer_size=200,
        on_episode=episodes.append, on_inner_complete=results.append,
    )
    assert tuple(meta) == META_NETWORKS
    assert [r.index for r in results] == [0, 1]
    assert [r.timesteps for r in results] == [20, 20]
    assert not meta["actor"].bit_equal(env_base["actor"])
    assert [row.timestep for row in episodes] == [20, 40]


@pytest.mark.integration
def test_reptile_inner_buffers_are_capped(env_base, small_hp, mocker):
    buffers = mocker.patch("services.resprect.app.services.reptile.ReplayBuffer", wraps=ReplayBuffer)
    reptile_pretrain(
        env_base, GraspEnv(EnvConfig(max_steps=20)), SeedStreams(0), lambda rng: HELDOUT_TASKS["heldout_0"],
        small_hp, total_timesteps=30, inner_steps=20, eps=0.1, demo_episodes=1, buffer_size=1_000_000,
    )
    assert [c.args[0] for c in buffers.call_args_list] == [40, 30]


# ============================================
# Evaluation
# ============================================

@pytest.mark.integration
class TestEvaluation:

    def test_needs_one_episode(self, env, env_base):
        with pytest.raises(ValidationError):
            evaluate(policy_from_networks(env_base), env, heldout_0(), 0, 0)

    def test_repeatable(self, env_base):
        env = GraspEnv(EnvConfig(max_steps=20))
        policy = policy_from_networks(env_base)
        a = evaluate(policy, env, heldout_0(), 3, seed=5)
        b = evaluate(policy, env, heldout_0(), 3, seed=5)
        assert a.rows == b.rows
        assert len(a.frame()) == 3
        assert 0.0 <= a.success_rate <= 1.0

    def test_seeds_are_stable(self):
        assert evaluation_seeds(3, 4) == evaluation_seeds(3, 4)
        assert len(evaluation_seeds(3, 10)) == 10

    def test_policy_needs_an_actor(self):
        with pytest.raises(IncompatibleCheckpointError):
            policy_from_networks({"log_alpha": scalar_param("log_alpha", 0.0)})

    def test_fresh_residual_policy_matches_base(self, env_base, small_hp, rng):
        base = PretrainedPolicy.from_networks(env_base, OBS_DIM, ACTION_DIM)
        agent = ResidualAgent.create(base, 8, rng, small_hp)
        residual = policy_from_networks(agent.networks())
        plain = policy_from_networks(env_base)
        obs = rng.standard_normal(OBS_DIM).astype(np.float32)
        assert residual(obs).tobytes() == plain(obs).tobytes()

    def test_pretrained_reference_line(self, env_base):
        env = GraspEnv(EnvConfig(max_steps=20))
        rate = evaluate_pretrained(env_base, env, heldout_0(), n_episodes=2)
        assert 0.0 <= rate <= 1.0
