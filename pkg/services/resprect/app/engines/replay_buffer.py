"""
Replay buffer - fixed-capacity ring storage of transitions with uniform sampling.
"""

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from services.resprect.app.exceptions import DimensionError, StateError
from shared.utils.exceptions import ValidationError

FloatArray = npt.NDArray[np.float32]


@dataclass(frozen=True)
class Transition:
    """
    One environment step.

    action is the total action sent to the environment; a_pre / a_pre_next are
    the base-policy actions at obs / next_obs (zeros for non-residual agents).
    done marks genuine terminals only, truncated marks timeouts.
    """

    obs: FloatArray
    action: FloatArray
    reward: float
    next_obs: FloatArray
    a_pre: FloatArray
    a_pre_next: FloatArray
    done: bool
    truncated: bool

    def __post_init__(self):
        if self.done and self.truncated:
            raise ValidationError("Transition cannot be both done and truncated", field="done")
        if np.any(np.abs(self.action) > 1.0):
            raise ValidationError("Transition action outside [-1, 1]", field="action")


@dataclass(frozen=True)
class Batch:
    """Column-stacked transitions, one row per sampled element."""

    obs: FloatArray
    action: FloatArray
    reward: FloatArray
    next_obs: FloatArray
    a_pre: FloatArray
    a_pre_next: FloatArray
    done: FloatArray
    truncated: FloatArray
    seq: npt.NDArray[np.int64]

    def __len__(self) -> int:
        return int(self.reward.shape[0])


class ReplayBuffer:
    """
    Ring buffer of transitions.

    Once full, the oldest entry is overwritten. Every push is stamped with a
    monotonically increasing sequence number so eviction order is observable.
    """

    def __init__(self, capacity: int, obs_dim: int, action_dim: int):
        if capacity <= 0:
            raise ValidationError("Replay capacity must be positive", field="capacity")
        self.capacity = capacity
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.size = 0
        self.cursor = 0
        self.pushed = 0

        self._obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self._next_obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self._action = np.zeros((capacity, action_dim), dtype=np.float32)
        self._a_pre = np.zeros((capacity, action_dim), dtype=np.float32)
        self._a_pre_next = np.zeros((capacity, action_dim), dtype=np.float32)
        self._reward = np.zeros(capacity, dtype=np.float32)
        self._done = np.zeros(capacity, dtype=np.float32)
        self._truncated = np.zeros(capacity, dtype=np.float32)
        self._seq = np.zeros(capacity, dtype=np.int64)

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition) -> None:
        for name, vec, dim in (
            ("obs", t.obs, self.obs_dim),
            ("next_obs", t.next_obs, self.obs_dim),
            ("action", t.action, self.action_dim),
            ("a_pre", t.a_pre, self.action_dim),
            ("a_pre_next", t.a_pre_next, self.action_dim),
        ):
            if np.shape(vec) != (dim,):
                raise DimensionError(
                    f"Transition field '{name}' has wrong length", expected=[dim], actual=np.shape(vec)
                )
        i = self.cursor
        self._obs[i] = t.obs
        self._next_obs[i] = t.next_obs
        self._action[i] = t.action
        self._a_pre[i] = t.a_pre
        self._a_pre_next[i] = t.a_pre_next
        self._reward[i] = t.reward
        self._done[i] = float(t.done)
        self._truncated[i] = float(t.truncated)
        self._seq[i] = self.pushed

        self.pushed += 1
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        """Uniform sample with replacement over the current contents."""
        if self.size == 0:
            raise StateError("Cannot sample from an empty replay buffer", component="replay_buffer")
        if n <= 0 or n > self.size:
            raise ValidationError(
                f"Sample size {n} must be in [1, {self.size}]", field="n"
            )
        idx = rng.integers(0, self.size, size=n)
        return self.gather(idx)

    def gather(self, idx: npt.NDArray[np.int64]) -> Batch:
        return Batch(
            obs=self._obs[idx],
            action=self._action[idx],
            reward=self._reward[idx],
            next_obs=self._next_obs[idx],
            a_pre=self._a_pre[idx],
            a_pre_next=self._a_pre_next[idx],
            done=self._done[idx],
            truncated=self._truncated[idx],
            seq=self._seq[idx],
        )

    def contents(self) -> Batch:
        """All stored transitions, oldest first."""
        if self.size < self.capacity:
            order = np.arange(self.size)
        else:
            order = (np.arange(self.capacity) + self.cursor) % self.capacity
        return self.gather(order)

    def stats(self) -> dict:
        return {"size": self.size, "capacity": self.capacity, "pushed": self.pushed}
