"""
Residual policy engine.

A frozen pretrained SAC policy proposes a_pre; a trainable residual SAC agent
observes [s || a_pre] and outputs a_rl. The environment executes
clip(a_pre + scale * a_rl, -1, 1). The residual critics always score the
composed action, which is what lets them start from the pretrained critics.
"""

from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple

import numpy as np
import structlog

from services.resprect.app.engines.replay_buffer import ReplayBuffer, Transition
from services.resprect.app.engines.sac import (
    AgentBundle,
    SACAgent,
    SACHyperParams,
    UpdateMetrics,
    deterministic_action,
)
from services.resprect.app.engines.tensor_nn import (
    AdamState,
    MLPArch,
    ParamSet,
    Tensor,
    init_mlp,
)
from services.resprect.app.exceptions import (
    DimensionError,
    IncompatibleCheckpointError,
    StateError,
)

logger = structlog.get_logger()


class ResidualComposer:
    """a_total = clip(a_pre + scale * a_rl, -1, 1), gradient masked where clipped."""

    def __init__(self, scale: float = 1.0):
        self.scale = float(scale)

    def actor_input(self, obs: Tensor, a_pre: Tensor) -> Tensor:
        return residual_actor_input(obs, a_pre)

    def compose(self, a_pre: Tensor, a_agent: Tensor) -> Tuple[Tensor, Tensor]:
        raw = np.asarray(a_pre) + self.scale * np.asarray(a_agent)
        inside = (raw >= -1.0) & (raw <= 1.0)
        return np.clip(raw, -1.0, 1.0), self.scale * inside.astype(raw.dtype)


def residual_actor_input(obs: Tensor, a_pre: Tensor) -> Tensor:
    """[s || a_pre] for a single vector or a batch of rows."""
    obs = np.asarray(obs)
    a_pre = np.asarray(a_pre)
    if a_pre.size == 0:
        raise DimensionError("Residual actor input needs a base action", actual=a_pre.shape)
    if obs.ndim != a_pre.ndim or obs.shape[:-1] != a_pre.shape[:-1]:
        raise DimensionError(
            "Observation and base action are not aligned",
            details={"obs": list(obs.shape), "a_pre": list(a_pre.shape)},
        )
    return np.concatenate([obs, a_pre.astype(obs.dtype)], axis=-1)


def compose_action(a_pre: Tensor, a_rl: Tensor, scale: float = 1.0) -> Tensor:
    total, _ = ResidualComposer(scale).compose(a_pre, a_rl)
    return total


# ============================================
# Frozen base policy
# ============================================

@dataclass(frozen=True)
class PretrainedPolicy:
    """Read-only actor and critics of a pretrained plain SAC agent."""

    actor: ParamSet
    critic1: ParamSet
    critic2: ParamSet
    obs_dim: int
    action_dim: int

    def __post_init__(self):
        actor_arch = self.actor.arch
        if actor_arch.input_dim != self.obs_dim or actor_arch.output_dim != 2 * self.action_dim:
            raise IncompatibleCheckpointError(
                "Pretrained actor does not match the environment",
                network="actor",
                expected_arch=f"in={self.obs_dim} out={2 * self.action_dim}",
                found_arch=self.actor.arch_tag,
            )
        for name, critic in (("critic1", self.critic1), ("critic2", self.critic2)):
            arch = critic.arch
            if arch.input_dim != self.obs_dim + self.action_dim or arch.output_dim != 1:
                raise IncompatibleCheckpointError(
                    "Pretrained critic does not match the environment",
                    network=name,
                    expected_arch=f"in={self.obs_dim + self.action_dim} out=1",
                    found_arch=critic.arch_tag,
                )

    @classmethod
    def from_networks(cls, networks: Dict[str, ParamSet], obs_dim: int, action_dim: int) -> "PretrainedPolicy":
        missing = [k for k in ("actor", "critic1", "critic2") if k not in networks]
        if missing:
            raise IncompatibleCheckpointError(f"Pretrained policy is missing {missing}")
        return cls(
            actor=networks["actor"].frozen(),
            critic1=networks["critic1"].frozen(),
            critic2=networks["critic2"].frozen(),
            obs_dim=obs_dim,
            action_dim=action_dim,
        )

    def networks(self) -> Dict[str, ParamSet]:
        return {"actor": self.actor, "critic1": self.critic1, "critic2": self.critic2}


def base_action(base: PretrainedPolicy, obs: Tensor) -> Tensor:
    """Deterministic tanh(mean) of the frozen pretrained actor."""
    return deterministic_action(base.actor, obs)


# ============================================
# Critic warm start
# ============================================

def warm_start_critics(base: PretrainedPolicy, bundle: AgentBundle) -> AgentBundle:
    """
    Copy the pretrained critics into the residual critics and their targets.

    The residual actor is left untouched and every optimizer moment is
    reset to zero.
    """
    for name, ours, theirs in (
        ("critic1", bundle.critic1, base.critic1),
        ("critic2", bundle.critic2, base.critic2),
    ):
        if ours.arch_tag != theirs.arch_tag:
            raise IncompatibleCheckpointError(
                "Residual critic architecture differs from the pretrained critic",
                network=name,
                expected_arch=ours.arch_tag,
                found_arch=theirs.arch_tag,
            )
    lr = bundle.critic1_opt.lr
    warmed = replace(
        bundle,
        critic1=base.critic1.copy(),
        critic2=base.critic2.copy(),
        target1=base.critic1.copy(),
        target2=base.critic2.copy(),
        actor_opt=AdamState.zeros_like(bundle.actor, bundle.actor_opt.lr),
        critic1_opt=AdamState.zeros_like(base.critic1, lr),
        critic2_opt=AdamState.zeros_like(base.critic2, lr),
        alpha_opt=AdamState.zeros_like(bundle.log_alpha, bundle.alpha_opt.lr),
    )
    logger.info("critics_warm_started", arch=base.critic1.arch_tag)
    return warmed


# ============================================
# Agent
# ============================================

class ResidualAgent(SACAgent):
    """
    Residual SAC agent on top of a frozen pretrained policy.

    With warm_start the agent is RESPRECT; without it, plain residual RL with
    freshly initialized critics.
    """

    kind = "residual"

    def __init__(
        self,
        bundle: AgentBundle,
        base: PretrainedPolicy,
        hp: SACHyperParams,
        residual_scale: float = 1.0,
        warm_started: bool = False,
    ):
        super().__init__(bundle, base.obs_dim, base.action_dim, hp)
        self.base = base
        self.composer = ResidualComposer(residual_scale)
        self.warm_started = warm_started

    @classmethod
    def create(
        cls,
        base: PretrainedPolicy,
        hidden_dim: int,
        rng: np.random.Generator,
        hp: SACHyperParams,
        ent_coef_init: float = 0.01,
        target_entropy: Optional[float] = None,
        residual_scale: float = 1.0,
        warm_start: bool = True,
    ) -> "ResidualAgent":
        """
        Build a residual agent.

        The residual actor starts with a zero output head, so its first
        deterministic action is exactly zero. Residual critics share the
        pretrained critic architecture.
        """
        d = base.action_dim
        actor = init_mlp(MLPArch(base.obs_dim + d, hidden_dim, 2 * d), rng, zero_head=True)
        critic_arch = base.critic1.arch
        critic1 = init_mlp(critic_arch, rng)
        critic2 = init_mlp(critic_arch, rng)
        bundle = AgentBundle.create(
            actor,
            critic1,
            critic2,
            hp.learning_rate,
            ent_coef_init,
            -float(d) if target_entropy is None else target_entropy,
        )
        if warm_start:
            bundle = warm_start_critics(base, bundle)
        return cls(bundle, base, hp, residual_scale, warm_started=warm_start)

    @property
    def residual_scale(self) -> float:
        return self.composer.scale

    def base_action(self, obs: Tensor) -> Tensor:
        return base_action(self.base, obs).astype(np.float32)

    def networks(self) -> Dict[str, ParamSet]:
        nets = dict(self.bundle.networks())
        for name, params in self.base.networks().items():
            nets[f"base/{name}"] = params
        return nets


def resprect_collect_step(
    agent: SACAgent,
    obs: Tensor,
    step_fn,
    rng: np.random.Generator,
    deterministic: bool = False,
    uniform: bool = False,
) -> Transition:
    """
    One interaction step; a plain SAC agent contributes a zero a_pre.

    step_fn maps a total action to (next_obs, reward, done, truncated); the
    returned transition carries a_pre for both obs and next_obs. uniform
    draws the agent action uniformly instead of from the policy (warm-up
    before learning starts).
    """
    a_pre = agent.base_action(obs)
    if uniform:
        a_total = agent.random_action(obs, a_pre, rng)
    else:
        a_total, _ = agent.act(obs, a_pre, rng, deterministic)
    next_obs, reward, done, truncated = step_fn(a_total)
    next_obs = np.asarray(next_obs, dtype=np.float32)
    return Transition(
        obs=np.asarray(obs, dtype=np.float32),
        action=np.asarray(a_total, dtype=np.float32),
        reward=float(reward),
        next_obs=next_obs,
        a_pre=a_pre,
        a_pre_next=agent.base_action(next_obs),
        done=bool(done),
        truncated=bool(truncated),
    )


def resprect_update(
    agent: SACAgent,
    buffer: ReplayBuffer,
    rng: np.random.Generator,
    noise_rng: Optional[np.random.Generator] = None,
) -> Tuple[UpdateMetrics, ...]:
    """
    Run agent.hp.gradient_steps gradient rounds on uniform replay batches.

    rng draws the batches; noise_rng (rng when omitted) draws the policy noise.
    """
    if len(buffer) == 0:
        raise StateError("Cannot update from an empty replay buffer", component="replay_buffer")
    noise_rng = rng if noise_rng is None else noise_rng
    batch_size = min(agent.hp.batch_size, len(buffer))
    return tuple(
        agent.update(buffer.sample(batch_size, rng), noise_rng)
        for _ in range(agent.hp.gradient_steps)
    )
