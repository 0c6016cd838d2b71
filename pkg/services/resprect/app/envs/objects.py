"""
Object sampler - pretraining distribution and held-out target objects.

The pretraining family draws shape parameters from broad ranges. Each
held-out object is a fixed parameter vector lying outside those ranges in at
least one coordinate, so adaptation always faces an unseen object.
"""

from typing import Dict, Tuple

import numpy as np

from services.resprect.app.exceptions import UnknownTaskFamilyError
from services.resprect.app.schemas.task import TaskSpec

PRETRAIN_FAMILY = "pretrain"

PRETRAIN_RANGES: Dict[str, Tuple[float, float]] = {
    "size": (0.8, 1.6),
    "height": (1.5, 3.0),
    "mass": (0.2, 1.0),
}

HELDOUT_TASKS: Dict[str, TaskSpec] = {
    "heldout_0": TaskSpec(name="heldout_0", shape="cylinder", size=2.0, height=2.2, mass=0.6),
    "heldout_1": TaskSpec(name="heldout_1", shape="box", size=1.2, height=3.6, mass=0.5),
    "heldout_2": TaskSpec(name="heldout_2", shape="cylinder", size=1.1, height=2.0, mass=1.5),
    "heldout_3": TaskSpec(
        name="heldout_3", shape="box", size=0.6, height=1.2, mass=0.3, grasp_generator="jittered"
    ),
    "heldout_4": TaskSpec(name="heldout_4", shape="cylinder", size=1.8, height=1.2, mass=0.4),
    "heldout_5": TaskSpec(
        name="heldout_5", shape="box", size=1.7, height=2.4, mass=1.2, grasp_generator="jittered"
    ),
    "heldout_6": TaskSpec(name="heldout_6", shape="cylinder", size=0.7, height=3.4, mass=0.8),
}

KNOWN_FAMILIES = (PRETRAIN_FAMILY, *HELDOUT_TASKS)


def object_sampler(family: str, rng: np.random.Generator) -> TaskSpec:
    """
    Draw a TaskSpec from a family.

    Args:
        family: "pretrain" or one of the held-out names (heldout_0 ... heldout_6)
        rng: Generator used only by the pretrain family

    Raises:
        UnknownTaskFamilyError: family is not known
    """
    if family in HELDOUT_TASKS:
        return HELDOUT_TASKS[family]
    if family != PRETRAIN_FAMILY:
        raise UnknownTaskFamilyError(family, KNOWN_FAMILIES)

    shape = "cylinder" if rng.random() < 0.5 else "box"
    size = float(rng.uniform(*PRETRAIN_RANGES["size"]))
    height = float(rng.uniform(*PRETRAIN_RANGES["height"]))
    mass = float(rng.uniform(*PRETRAIN_RANGES["mass"]))
    generator = "centroid" if rng.random() < 0.5 else "jittered"
    return TaskSpec(
        name=PRETRAIN_FAMILY,
        shape=shape,
        size=size,
        height=height,
        mass=mass,
        pose_seed=int(rng.integers(0, 2**31 - 1)),
        grasp_generator=generator,
    )


def outside_pretrain_ranges(task: TaskSpec) -> Tuple[str, ...]:
    """Names of the coordinates in which a task leaves the pretraining ranges."""
    return tuple(
        key
        for key, (lo, hi) in PRETRAIN_RANGES.items()
        if not lo <= getattr(task, key) <= hi
    )
