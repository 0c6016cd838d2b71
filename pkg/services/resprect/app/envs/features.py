"""
Feature frames and Flare temporal stacking.

The feature frame stands in for a visual embedding: a low-dimensional,
deterministic descriptor of the hand-object geometry plus seeded observation
noise.
"""

import numpy as np
import numpy.typing as npt

from services.resprect.app.exceptions import DimensionError

FloatArray = npt.NDArray[np.floating]

# [dx, dy, dz to grasp height, size, height] + one gap per finger
BASE_FEATURES = 5


def feature_length(num_fingers: int) -> int:
    return BASE_FEATURES + num_fingers


def flare_stack(f_t: FloatArray, f_tm1: FloatArray, f_tm2: FloatArray) -> FloatArray:
    """[f_t || f_t - f_{t-1} || f_{t-1} - f_{t-2}]"""
    f_t, f_tm1, f_tm2 = (np.asarray(f) for f in (f_t, f_tm1, f_tm2))
    if not (f_t.shape == f_tm1.shape == f_tm2.shape) or f_t.ndim != 1:
        raise DimensionError(
            "Flare frames must be equal-length vectors",
            details={"shapes": [list(f.shape) for f in (f_t, f_tm1, f_tm2)]},
        )
    return np.concatenate([f_t, f_t - f_tm1, f_tm1 - f_tm2])


def frame_noise(noise_key: int, step: int, length: int, sigma: float) -> FloatArray:
    """Observation noise for one frame, a pure function of (episode key, step)."""
    if sigma == 0.0:
        return np.zeros(length)
    return np.random.default_rng([noise_key, step]).normal(0.0, sigma, size=length)
