"""
Soft Actor-Critic engine.

Implements:
- Squashed-Gaussian actor head with tanh change-of-variables correction
- Twin critics with Polyak-averaged targets
- Automatic entropy-coefficient tuning on log_alpha
- SACAgent: the gradient-round schedule (critic -> actor -> alpha -> targets)

Every update function takes an ActionComposer. The direct composer gives
plain SAC; the residual composer (engines/residual.py) reuses the same code
with actor inputs [s || a_pre] and critics scored on the composed action.
"""

from dataclasses import dataclass, replace
from typing import Dict, Optional, Protocol, Tuple

import numpy as np

from services.resprect.app.engines.replay_buffer import Batch
from services.resprect.app.engines.tensor_nn import (
    AdamState,
    ForwardPass,
    MLPArch,
    ParamSet,
    Tensor,
    adam_step,
    init_mlp,
    mlp_backward,
    mlp_forward,
    scalar_param,
)
from services.resprect.app.exceptions import DimensionError, NumericError
from shared.utils.exceptions import ValidationError


LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
TANH_EPS = 1e-6
HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


# ============================================
# Hyperparameters and metrics
# ============================================

@dataclass(frozen=True)
class SACHyperParams:
    """The update-schedule subset of RunConfig consumed by the agents."""

    learning_rate: float = 3e-4
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 256
    gradient_steps: int = 10
    train_freq: int = 10
    learning_starts: int = 1000
    target_update_interval: int = 1
    fixed_alpha: bool = False


@dataclass(frozen=True)
class UpdateMetrics:
    critic1_loss: float
    critic2_loss: float
    actor_loss: float
    entropy: float
    alpha: float


# ============================================
# Action composition
# ============================================

class ActionComposer(Protocol):
    """Maps the agent's own action to the action the critics and the env see."""

    def actor_input(self, obs: Tensor, a_pre: Tensor) -> Tensor:
        ...

    def compose(self, a_pre: Tensor, a_agent: Tensor) -> Tuple[Tensor, Tensor]:
        """Return (a_total, elementwise d a_total / d a_agent)."""
        ...


class DirectComposer:
    """Plain SAC: the agent's action is the executed action."""

    def actor_input(self, obs: Tensor, a_pre: Tensor) -> Tensor:
        return obs

    def compose(self, a_pre: Tensor, a_agent: Tensor) -> Tuple[Tensor, Tensor]:
        return a_agent, np.ones_like(a_agent)


DIRECT = DirectComposer()


# ============================================
# Squashed Gaussian policy
# ============================================

def squashed_gaussian_sample(mean, log_std, noise) -> Tuple[Tensor, Tensor]:
    """
    Reparameterized tanh-Gaussian sample.

    action = tanh(mean + exp(log_std) * noise)
    log_prob = sum_i N(noise_i) log-density - log_std_i - log(1 - action_i^2 + 1e-6)

    Works on a single vector (returns a scalar log_prob) or a batch of rows.
    """
    mean = np.asarray(mean)
    log_std = np.clip(np.asarray(log_std), LOG_STD_MIN, LOG_STD_MAX)
    noise = np.asarray(noise, dtype=mean.dtype)
    if not (mean.shape == log_std.shape == noise.shape):
        raise DimensionError(
            "mean, log_std and noise must share a shape",
            details={"mean": mean.shape, "log_std": log_std.shape, "noise": noise.shape},
        )
    for name, arr in (("mean", mean), ("log_std", log_std), ("noise", noise)):
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"Non-finite {name} in policy sample", operation="squashed_gaussian_sample")
    u = mean + np.exp(log_std) * noise
    action = np.tanh(u)
    gauss = -0.5 * noise * noise - log_std - HALF_LOG_2PI
    log_prob = np.sum(gauss - np.log(1.0 - action * action + TANH_EPS), axis=-1)
    return action, log_prob


@dataclass
class PolicySample:
    """Everything the actor backward pass needs from one sampling pass."""

    fwd: ForwardPass
    raw_log_std: Tensor
    log_std: Tensor
    noise: Tensor
    action: Tensor
    log_prob: Tensor


def _split_head(actor: ParamSet, actor_input: Tensor) -> Tuple[ForwardPass, Tensor, Tensor]:
    fwd = mlp_forward(actor, np.atleast_2d(actor_input))
    d = fwd.output.shape[1] // 2
    return fwd, fwd.output[:, :d], fwd.output[:, d:]


def policy_sample(actor: ParamSet, actor_input: Tensor, noise: Tensor) -> PolicySample:
    fwd, mean, raw_log_std = _split_head(actor, actor_input)
    noise = np.atleast_2d(np.asarray(noise, dtype=actor.dtype))
    action, log_prob = squashed_gaussian_sample(mean, raw_log_std, noise)
    log_std = np.clip(raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
    return PolicySample(fwd, raw_log_std, log_std, noise, action, log_prob)


def policy_backward(
    actor: ParamSet, sample: PolicySample, d_action: Tensor, d_log_prob: Tensor
) -> ParamSet:
    """
    Chain dL/d(action) and dL/d(log_prob) back to the actor parameters.

    d_action has shape (B, D); d_log_prob has shape (B,).
    """
    a = sample.action
    g_lp = d_log_prob[:, None]
    d_a = d_action + g_lp * (2.0 * a / (1.0 - a * a + TANH_EPS))
    d_u = d_a * (1.0 - a * a)
    d_mean = d_u
    d_log_std = d_u * sample.noise * np.exp(sample.log_std) - g_lp
    in_range = (sample.raw_log_std >= LOG_STD_MIN) & (sample.raw_log_std <= LOG_STD_MAX)
    d_log_std = d_log_std * in_range
    upstream = np.concatenate([d_mean, d_log_std], axis=1)
    grads, _ = mlp_backward(actor, sample.fwd, upstream)
    return grads


def deterministic_action(actor: ParamSet, obs: Tensor) -> Tensor:
    """Evaluation-time action tanh(mean); no sampling."""
    obs = np.asarray(obs)
    _, mean, _ = _split_head(actor, obs)
    action = np.tanh(mean)
    return action[0] if obs.ndim == 1 else action


# ============================================
# Agent state
# ============================================

@dataclass(frozen=True)
class AgentBundle:
    """Actor, twin critics, twin targets, entropy coefficient and optimizer states."""

    actor: ParamSet
    critic1: ParamSet
    critic2: ParamSet
    target1: ParamSet
    target2: ParamSet
    log_alpha: ParamSet
    target_entropy: float
    actor_opt: AdamState
    critic1_opt: AdamState
    critic2_opt: AdamState
    alpha_opt: AdamState

    def __post_init__(self):
        if self.target1.arch_tag != self.critic1.arch_tag or self.target2.arch_tag != self.critic2.arch_tag:
            raise DimensionError("Target networks must match their critics")

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha["log_alpha"][0]))

    @classmethod
    def create(
        cls,
        actor: ParamSet,
        critic1: ParamSet,
        critic2: ParamSet,
        learning_rate: float = 3e-4,
        ent_coef_init: float = 0.01,
        target_entropy: float = -1.0,
    ) -> "AgentBundle":
        """Assemble a bundle; targets start as exact copies, optimizers at zero."""
        if ent_coef_init <= 0:
            raise ValidationError("Initial entropy coefficient must be positive", field="ent_coef_init")
        log_alpha = scalar_param("log_alpha", float(np.log(ent_coef_init)))
        return cls(
            actor=actor,
            critic1=critic1,
            critic2=critic2,
            target1=critic1.copy(),
            target2=critic2.copy(),
            log_alpha=log_alpha,
            target_entropy=float(target_entropy),
            actor_opt=AdamState.zeros_like(actor, learning_rate),
            critic1_opt=AdamState.zeros_like(critic1, learning_rate),
            critic2_opt=AdamState.zeros_like(critic2, learning_rate),
            alpha_opt=AdamState.zeros_like(log_alpha, learning_rate),
        )

    @classmethod
    def initialize(
        cls,
        actor_input_dim: int,
        critic_input_dim: int,
        action_dim: int,
        hidden_dim: int,
        rng: np.random.Generator,
        learning_rate: float = 3e-4,
        ent_coef_init: float = 0.01,
        target_entropy: Optional[float] = None,
        zero_actor_head: bool = False,
    ) -> "AgentBundle":
        actor = init_mlp(MLPArch(actor_input_dim, hidden_dim, 2 * action_dim), rng, zero_head=zero_actor_head)
        critic_arch = MLPArch(critic_input_dim, hidden_dim, 1)
        critic1 = init_mlp(critic_arch, rng)
        critic2 = init_mlp(critic_arch, rng)
        return cls.create(
            actor,
            critic1,
            critic2,
            learning_rate,
            ent_coef_init,
            -float(action_dim) if target_entropy is None else target_entropy,
        )

    def networks(self) -> Dict[str, ParamSet]:
        """Named ParamSets in checkpoint order."""
        return {
            "actor": self.actor,
            "critic1": self.critic1,
            "critic2": self.critic2,
            "target1": self.target1,
            "target2": self.target2,
            "log_alpha": self.log_alpha,
        }


# ============================================
# Losses and updates
# ============================================

def _q_value(critic: ParamSet, obs: Tensor, action: Tensor) -> Tuple[ForwardPass, Tensor]:
    fwd = mlp_forward(critic, np.concatenate([obs, action], axis=1))
    return fwd, fwd.output[:, 0]


def critic_target(
    batch: Batch,
    bundle: AgentBundle,
    gamma: float,
    noise: Tensor,
    composer: ActionComposer = DIRECT,
) -> Tensor:
    """
    Soft Bellman target y = r + gamma * (1 - done) * (min target Q(s', a') - alpha * log pi(a'|s')).

    a' is sampled from the current actor; truncated transitions bootstrap.
    """
    if len(batch) == 0:
        raise ValidationError("Critic target needs a non-empty batch", field="batch")
    next_input = composer.actor_input(batch.next_obs, batch.a_pre_next)
    sample = policy_sample(bundle.actor, next_input, noise)
    next_total, _ = composer.compose(batch.a_pre_next, sample.action)
    _, q1 = _q_value(bundle.target1, batch.next_obs, next_total)
    _, q2 = _q_value(bundle.target2, batch.next_obs, next_total)
    soft_value = np.minimum(q1, q2) - bundle.alpha * sample.log_prob
    return batch.reward + gamma * (1.0 - batch.done) * soft_value


def critic_loss_and_grads(
    critic: ParamSet, obs: Tensor, action: Tensor, y: Tensor
) -> Tuple[float, ParamSet]:
    """Mean squared error of one critic against fixed targets."""
    fwd, q = _q_value(critic, obs, action)
    resid = q - y
    loss = float(np.mean(resid * resid))
    upstream = (2.0 * resid / resid.shape[0])[:, None]
    grads, _ = mlp_backward(critic, fwd, upstream)
    return loss, grads


def critic_update(
    bundle: AgentBundle,
    batch: Batch,
    gamma: float,
    noise: Tensor,
    composer: ActionComposer = DIRECT,
) -> Tuple[AgentBundle, float, float]:
    """One Adam step on each critic towards the shared soft target; targets untouched."""
    y = critic_target(batch, bundle, gamma, noise, composer)
    loss1, g1 = critic_loss_and_grads(bundle.critic1, batch.obs, batch.action, y)
    loss2, g2 = critic_loss_and_grads(bundle.critic2, batch.obs, batch.action, y)
    c1, o1 = adam_step(bundle.critic1, g1, bundle.critic1_opt)
    c2, o2 = adam_step(bundle.critic2, g2, bundle.critic2_opt)
    return replace(bundle, critic1=c1, critic2=c2, critic1_opt=o1, critic2_opt=o2), loss1, loss2


def actor_loss_and_grads(
    actor: ParamSet,
    critic1: ParamSet,
    critic2: ParamSet,
    obs: Tensor,
    a_pre: Tensor,
    noise: Tensor,
    alpha: float,
    composer: ActionComposer = DIRECT,
) -> Tuple[float, ParamSet, Tensor]:
    """
    SAC actor objective: mean(alpha * log pi(a|s) - min_i Q_i(s, compose(a_pre, a))).

    Returns:
        (loss, actor gradients, per-sample log-probs of the agent's own action)
    """
    sample = policy_sample(actor, composer.actor_input(obs, a_pre), noise)
    a_total, jac = composer.compose(a_pre, sample.action)
    f1, q1 = _q_value(critic1, obs, a_total)
    f2, q2 = _q_value(critic2, obs, a_total)
    first = q1 <= q2
    min_q = np.where(first, q1, q2)
    n = min_q.shape[0]
    loss = float(np.mean(alpha * sample.log_prob - min_q))

    obs_dim = obs.shape[1]
    w1 = first.astype(critic1.dtype)
    _, dx1 = mlp_backward(critic1, f1, (-w1 / n)[:, None])
    _, dx2 = mlp_backward(critic2, f2, (-(1.0 - w1) / n)[:, None])
    d_total = dx1[:, obs_dim:] + dx2[:, obs_dim:]
    d_action = d_total * jac
    d_log_prob = np.full(n, alpha / n, dtype=actor.dtype)
    grads = policy_backward(actor, sample, d_action, d_log_prob)
    return loss, grads, sample.log_prob


def actor_update(
    bundle: AgentBundle,
    batch: Batch,
    noise: Tensor,
    composer: ActionComposer = DIRECT,
) -> Tuple[AgentBundle, float, float, Tensor]:
    """One Adam step on the actor only."""
    loss, grads, log_prob = actor_loss_and_grads(
        bundle.actor, bundle.critic1, bundle.critic2,
        batch.obs, batch.a_pre, noise, bundle.alpha, composer,
    )
    actor, opt = adam_step(bundle.actor, grads, bundle.actor_opt)
    mean_entropy = float(-np.mean(log_prob))
    return replace(bundle, actor=actor, actor_opt=opt), loss, mean_entropy, log_prob


def alpha_loss_and_grads(
    log_alpha: ParamSet, log_probs: Tensor, target_entropy: float
) -> Tuple[float, ParamSet]:
    """Temperature loss -mean(log_alpha * (log pi + target_entropy))."""
    gap = np.asarray(log_probs, dtype=np.float64) + target_entropy
    value = float(log_alpha["log_alpha"][0])
    loss = float(-np.mean(value * gap))
    grad = np.array([-np.mean(gap)], dtype=log_alpha.dtype)
    return loss, ParamSet({"log_alpha": grad}, log_alpha.arch_tag)


def alpha_update(bundle: AgentBundle, batch_log_probs: Tensor) -> AgentBundle:
    """One Adam step on log_alpha; alpha is always exp(log_alpha) > 0."""
    _, grads = alpha_loss_and_grads(bundle.log_alpha, batch_log_probs, bundle.target_entropy)
    log_alpha, opt = adam_step(bundle.log_alpha, grads, bundle.alpha_opt)
    return replace(bundle, log_alpha=log_alpha, alpha_opt=opt)


def soft_update(online: ParamSet, target: ParamSet, tau: float) -> ParamSet:
    """Polyak average target' = (1 - tau) * target + tau * online."""
    if not 0.0 < tau <= 1.0:
        raise ValidationError(f"tau must be in (0, 1], got {tau}", field="tau")
    return target.zip_map(online, lambda t, o: ((1.0 - tau) * t + tau * o).astype(t.dtype))


# ============================================
# Agent
# ============================================

class SACAgent:
    """
    Plain SAC agent (scratch training, fine-tuning, Reptile inner loops).

    Exposes the interface the trainer drives: base_action, act,
    random_action, update and networks.
    """

    kind = "sac"

    def __init__(self, bundle: AgentBundle, obs_dim: int, action_dim: int, hp: SACHyperParams):
        self.bundle = bundle
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.hp = hp
        self.composer: ActionComposer = DIRECT
        self.updates = 0

    @classmethod
    def create(
        cls,
        obs_dim: int,
        action_dim: int,
        hidden_dim: int,
        rng: np.random.Generator,
        hp: SACHyperParams,
        ent_coef_init: float = 0.01,
        target_entropy: Optional[float] = None,
    ) -> "SACAgent":
        bundle = AgentBundle.initialize(
            obs_dim, obs_dim + action_dim, action_dim, hidden_dim, rng,
            hp.learning_rate, ent_coef_init, target_entropy,
        )
        return cls(bundle, obs_dim, action_dim, hp)

    def base_action(self, obs: Tensor) -> Tensor:
        return np.zeros(self.action_dim, dtype=np.float32)

    def act(
        self, obs: Tensor, a_pre: Tensor, rng: np.random.Generator, deterministic: bool = False
    ) -> Tuple[Tensor, Tensor]:
        """Return (a_total, a_agent) for one observation."""
        actor_input = self.composer.actor_input(obs[None, :], a_pre[None, :])
        if deterministic:
            a_agent = deterministic_action(self.bundle.actor, actor_input)[0]
        else:
            noise = rng.standard_normal((1, self.action_dim))
            a_agent = policy_sample(self.bundle.actor, actor_input, noise).action[0]
        a_total, _ = self.composer.compose(a_pre, a_agent)
        return a_total.astype(np.float32), a_agent.astype(np.float32)

    def random_action(self, obs: Tensor, a_pre: Tensor, rng: np.random.Generator) -> Tensor:
        a_agent = rng.uniform(-1.0, 1.0, size=self.action_dim)
        a_total, _ = self.composer.compose(a_pre, a_agent)
        return a_total.astype(np.float32)

    def update(self, batch: Batch, rng: np.random.Generator) -> UpdateMetrics:
        """One gradient round: critics, actor, temperature, then target smoothing."""
        b = self.bundle
        noise = rng.standard_normal((len(batch), self.action_dim))
        b, loss1, loss2 = critic_update(b, batch, self.hp.gamma, noise, self.composer)
        noise = rng.standard_normal((len(batch), self.action_dim))
        b, actor_loss, entropy, log_prob = actor_update(b, batch, noise, self.composer)
        if not self.hp.fixed_alpha:
            b = alpha_update(b, log_prob)
        self.updates += 1
        if self.updates % self.hp.target_update_interval == 0:
            b = replace(
                b,
                target1=soft_update(b.critic1, b.target1, self.hp.tau),
                target2=soft_update(b.critic2, b.target2, self.hp.tau),
            )
        self.bundle = b
        return UpdateMetrics(loss1, loss2, actor_loss, entropy, b.alpha)

    def networks(self) -> Dict[str, ParamSet]:
        return self.bundle.networks()
