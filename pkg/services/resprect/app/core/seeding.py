"""
Seed management.

One master seed derives an independent generator per concern by hashing
"<master>:<stream>", so adding draws to one stream never shifts another.
"""

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from shared.utils.helpers import generate_hash

STREAMS = ("env", "init", "replay", "noise", "eval", "demo", "task")


def derive_seed(master: int, stream: str) -> int:
    """64-bit seed for a named stream."""
    digest = generate_hash(f"{int(master)}:{stream}", algorithm="sha256")
    return int(digest[:16], 16)


def stream_rng(master: int, stream: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, stream))


@dataclass
class SeedStreams:
    """Named generators derived from one master seed."""

    master: int
    _rngs: Dict[str, np.random.Generator] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for name in STREAMS:
            self._rngs[name] = stream_rng(self.master, name)

    def __getitem__(self, name: str) -> np.random.Generator:
        return self._rngs[name]

    @property
    def env(self) -> np.random.Generator:
        return self._rngs["env"]

    @property
    def init(self) -> np.random.Generator:
        return self._rngs["init"]

    @property
    def replay(self) -> np.random.Generator:
        return self._rngs["replay"]

    @property
    def noise(self) -> np.random.Generator:
        return self._rngs["noise"]

    @property
    def eval(self) -> np.random.Generator:
        return self._rngs["eval"]

    @property
    def demo(self) -> np.random.Generator:
        return self._rngs["demo"]

    @property
    def task(self) -> np.random.Generator:
        return self._rngs["task"]


def episode_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**31 - 1))
