"""
Tests for the replay ring buffer.
"""

import numpy as np
import pytest

from services.resprect.app.engines.replay_buffer import ReplayBuffer, Transition
from services.resprect.app.exceptions import DimensionError, StateError
from shared.utils.exceptions import ValidationError

from .conftest import make_transition

# chi-square critical value, 9 degrees of freedom, p = 0.01
CHI2_CRIT_DF9_P01 = 21.666


def tagged(i: int) -> Transition:
    return Transition(
        obs=np.full(2, i, dtype=np.float32),
        action=np.zeros(1, dtype=np.float32),
        reward=float(i),
        next_obs=np.full(2, i + 1, dtype=np.float32),
        a_pre=np.zeros(1, dtype=np.float32),
        a_pre_next=np.zeros(1, dtype=np.float32),
        done=False,
        truncated=False,
    )


@pytest.mark.unit
class TestTransition:

    def test_done_and_truncated_exclusive(self, rng):
        with pytest.raises(ValidationError):
            make_transition(rng, done=True, truncated=True)

    def test_action_bounds(self):
        with pytest.raises(ValidationError):
            Transition(
                obs=np.zeros(2), action=np.array([1.5]), reward=0.0, next_obs=np.zeros(2),
                a_pre=np.zeros(1), a_pre_next=np.zeros(1), done=False, truncated=False,
            )


@pytest.mark.unit
class TestReplayBuffer:

    def test_capacity_must_be_positive(self):
        with pytest.raises(ValidationError):
            ReplayBuffer(0, 2, 1)

    def test_overwrites_oldest_when_full(self):
        buffer = ReplayBuffer(3, 2, 1)
        for i in (1, 2, 3, 4):
            buffer.push(tagged(i))
        contents = buffer.contents()
        assert len(buffer) == 3
        assert contents.reward.tolist() == [2.0, 3.0, 4.0]
        assert contents.seq.tolist() == [1, 2, 3]

    def test_size_never_exceeds_capacity(self):
        buffer = ReplayBuffer(5, 2, 1)
        for i in range(23):
            buffer.push(tagged(i))
            assert len(buffer) <= 5
        assert buffer.stats() == {"size": 5, "capacity": 5, "pushed": 23}

    def test_fifo_eviction_by_sequence_number(self):
        buffer = ReplayBuffer(4, 2, 1)
        for i in range(10):
            buffer.push(tagged(i))
        assert buffer.contents().seq.tolist() == [6, 7, 8, 9]

    def test_push_sample_preserves_fields_bit_exactly(self, rng):
        buffer = ReplayBuffer(1, 5, 2)
        t = make_transition(rng, done=True)
        buffer.push(t)
        batch = buffer.sample(1, rng)
        assert batch.obs[0].tobytes() == t.obs.tobytes()
        assert batch.next_obs[0].tobytes() == t.next_obs.tobytes()
        assert batch.action[0].tobytes() == t.action.tobytes()
        assert batch.reward[0] == np.float32(t.reward)
        assert batch.done[0] == 1.0
        assert batch.truncated[0] == 0.0

    def test_sample_from_empty_buffer(self, rng):
        with pytest.raises(StateError):
            ReplayBuffer(4, 2, 1).sample(1, rng)

    def test_sample_larger_than_size(self, rng):
        buffer = ReplayBuffer(4, 2, 1)
        buffer.push(tagged(0))
        with pytest.raises(ValidationError):
            buffer.sample(2, rng)

    def test_push_rejects_wrong_lengths(self, rng):
        buffer = ReplayBuffer(4, 3, 2)
        with pytest.raises(DimensionError):
            buffer.push(make_transition(rng, obs_dim=5, action_dim=2))

    def test_sampling_is_uniform(self):
        buffer = ReplayBuffer(10, 2, 1)
        for i in range(10):
            buffer.push(tagged(i))
        batch = buffer.sample(100_000, np.random.default_rng(0))
        counts = np.bincount(batch.reward.astype(int), minlength=10)
        expected = 100_000 / 10
        chi2 = float(np.sum((counts - expected) ** 2 / expected))
        assert chi2 < CHI2_CRIT_DF9_P01

    def test_same_seed_same_batches(self, filled_buffer):
        a = filled_buffer.sample(8, np.random.default_rng(3))
        b = filled_buffer.sample(8, np.random.default_rng(3))
        assert a.seq.tolist() == b.seq.tolist()
