"""
Toy multi-fingered grasping environment.

A planar hand with F fingers hovers above an object resting on a table. The
hand moves in (x, y, z, theta) and closes its fingers radially; a finger tip
touches the object when its tip circle intersects the object boundary. Two
opposing contacts (or every finger, for heavy objects) close the grasp, after
which raising the hand raises the object.

Observation flattening order (length 21 + 5F with L = 5 + F):
    [ flare features (3L) | tactile (F) | effector x, y, z, theta (4) |
      finger joints (F) | object position estimate (2) ]
"""

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt
import pandas as pd
import structlog

from services.resprect.app.envs.features import feature_length, flare_stack, frame_noise
from services.resprect.app.exceptions import DimensionError, StateError
from services.resprect.app.schemas.task import TaskSpec
from shared.utils.exceptions import ValidationError

logger = structlog.get_logger()

FloatArray = npt.NDArray[np.floating]

NUM_POSE = 4
NUM_ESTIMATE = 2


class Phase(str, Enum):
    APPROACH = "approach"
    CLOSING = "closing"
    LIFTING = "lifting"


class EpisodeOutcome(str, Enum):
    RUNNING = "running"
    SUCCESS = "success"
    FAIL_DISPLACED = "fail_displaced"
    FAIL_WORKSPACE = "fail_workspace"
    TIMEOUT = "timeout"

    @property
    def finished(self) -> bool:
        return self is not EpisodeOutcome.RUNNING

    @property
    def is_failure(self) -> bool:
        return self in (EpisodeOutcome.FAIL_DISPLACED, EpisodeOutcome.FAIL_WORKSPACE)

    @property
    def terminal(self) -> bool:
        """Genuine terminal: no bootstrapping past this step."""
        return self in (
            EpisodeOutcome.SUCCESS,
            EpisodeOutcome.FAIL_DISPLACED,
            EpisodeOutcome.FAIL_WORKSPACE,
        )

    @property
    def truncated(self) -> bool:
        return self is EpisodeOutcome.TIMEOUT


@dataclass(frozen=True)
class EnvConfig:
    """Environment geometry, limits and reward constants."""

    num_fingers: int = 3
    max_steps: int = 100
    feature_noise: float = 0.01
    reach_only: bool = False
    reach_tolerance: float = 0.5

    # per-step action caps
    max_translation: float = 0.2
    max_rotation: float = 0.1
    max_joint_delta: float = 0.1

    # hand geometry
    open_radius: float = 3.0
    closed_radius: float = 0.3
    tip_radius: float = 0.15

    # episode generation
    pregrasp_distance: float = 5.0
    pose_noise: float = 0.05
    estimate_noise: float = 0.05

    # limits and thresholds
    workspace_half_width: float = 10.0
    workspace_height: float = 25.0
    success_lift: float = 10.0
    displacement_limit: float = 3.0
    heavy_mass: float = 1.0

    # reward weights
    w_dist: float = 0.1
    w_contact: float = 0.3
    w_height: float = 0.6
    success_bonus: float = 10.0
    failure_penalty: float = -1.0

    def __post_init__(self):
        if self.num_fingers < 2:
            raise ValidationError("At least two fingers are needed", field="num_fingers")
        if self.max_steps <= 0:
            raise ValidationError("max_steps must be positive", field="max_steps")
        if self.feature_noise < 0:
            raise ValidationError("feature_noise must be non-negative", field="feature_noise")
        if not 0 < self.closed_radius < self.open_radius:
            raise ValidationError("Finger radii must satisfy 0 < closed < open", field="closed_radius")

    @property
    def action_dim(self) -> int:
        return NUM_POSE + self.num_fingers

    @property
    def feature_dim(self) -> int:
        return feature_length(self.num_fingers)

    @property
    def obs_dim(self) -> int:
        return 3 * self.feature_dim + self.num_fingers + NUM_POSE + self.num_fingers + NUM_ESTIMATE

    @property
    def action_scale(self) -> FloatArray:
        return np.array(
            [self.max_translation] * 3 + [self.max_rotation] + [self.max_joint_delta] * self.num_fingers
        )


# ============================================
# State
# ============================================

@dataclass(frozen=True)
class Observation:
    features: FloatArray
    tactile: FloatArray
    effector: FloatArray
    joints: FloatArray
    estimate: FloatArray

    def flat(self) -> npt.NDArray[np.float32]:
        return np.concatenate(
            [self.features, self.tactile, self.effector, self.joints, self.estimate]
        ).astype(np.float32)


@dataclass(frozen=True)
class RewardComponents:
    r_dist: float
    r_contact: float
    r_height: float
    r_terminal: float
    total: float


@dataclass
class GraspWorld:
    """Mutable simulation state of one episode."""

    task: TaskSpec
    effector: FloatArray          # x, y, z, theta
    joints: FloatArray            # F closures in [0, 1]
    object_xy: FloatArray
    object_start_xy: FloatArray
    object_yaw: float
    lift: float
    grasp_pose: FloatArray        # x, y, z, theta
    estimate: FloatArray
    initial_distance: float
    noise_key: int
    phase: Phase = Phase.APPROACH
    step: int = 0
    outcome: EpisodeOutcome = EpisodeOutcome.RUNNING
    history: List[FloatArray] = field(default_factory=list)

    @property
    def displacement(self) -> float:
        return float(np.linalg.norm(self.object_xy - self.object_start_xy))

    @property
    def grasp_height(self) -> float:
        return self.lift + 0.5 * self.task.height


# ============================================
# Geometry
# ============================================

def signed_distance(task: TaskSpec, object_xy: FloatArray, object_yaw: float, points: FloatArray) -> FloatArray:
    """Planar signed distance from points (N, 2) to the object outline; negative inside."""
    rel = np.atleast_2d(points) - object_xy
    if task.shape == "cylinder":
        return np.linalg.norm(rel, axis=1) - task.size
    c, s = np.cos(object_yaw), np.sin(object_yaw)
    local = np.stack([c * rel[:, 0] + s * rel[:, 1], -s * rel[:, 0] + c * rel[:, 1]], axis=1)
    d = np.abs(local) - task.size
    outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
    inside = np.minimum(np.max(d, axis=1), 0.0)
    return outside + inside


def finger_radius(joints: FloatArray, config: EnvConfig) -> FloatArray:
    return config.open_radius - (config.open_radius - config.closed_radius) * np.asarray(joints)


def fingertips(effector: FloatArray, joints: FloatArray, config: EnvConfig) -> FloatArray:
    """Tip centers (F, 2); finger i points along theta + 2*pi*i/F."""
    angles = effector[3] + 2.0 * np.pi * np.arange(config.num_fingers) / config.num_fingers
    radius = finger_radius(joints, config)
    return effector[:2] + radius[:, None] * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def tip_gaps(world: GraspWorld, config: EnvConfig, effector=None, joints=None) -> FloatArray:
    effector = world.effector if effector is None else effector
    joints = world.joints if joints is None else joints
    tips = fingertips(effector, joints, config)
    return signed_distance(world.task, world.object_xy, world.object_yaw, tips)


def within_object_height(world: GraspWorld, z: float) -> bool:
    return world.lift <= z <= world.lift + world.task.height


def contact_mask(world: GraspWorld, config: EnvConfig) -> npt.NDArray[np.bool_]:
    """Finger i touches when its tip circle intersects the object boundary."""
    if config.reach_only or not within_object_height(world, world.effector[2]):
        return np.zeros(config.num_fingers, dtype=bool)
    return np.abs(tip_gaps(world, config)) <= config.tip_radius


def grasp_closed(world: GraspWorld, config: EnvConfig) -> bool:
    """
    Two contacts at least 90 degrees apart around the object center, or
    every finger when the object is heavy.
    """
    touching = contact_mask(world, config)
    required = config.num_fingers if world.task.mass > config.heavy_mass else 2
    if touching.sum() < required:
        return False
    tips = fingertips(world.effector, world.joints, config)[touching] - world.object_xy
    norms = np.linalg.norm(tips, axis=1, keepdims=True)
    dirs = tips / np.maximum(norms, 1e-9)
    cosines = dirs @ dirs.T
    upper = np.triu_indices(len(dirs), k=1)
    return bool(np.any(cosines[upper] <= 0.0))


# ============================================
# Features and reward
# ============================================

def env_feature_frame(world: GraspWorld, config: EnvConfig) -> FloatArray:
    """
    Geometric descriptor of length 5 + F.

    [object x - hand x, object y - hand y, grasp height - hand z, size, height,
     signed gap per finger tip] plus observation noise keyed on (episode, step).
    """
    descriptor = np.concatenate([
        [
            world.object_xy[0] - world.effector[0],
            world.object_xy[1] - world.effector[1],
            world.grasp_height - world.effector[2],
            world.task.size,
            world.task.height,
        ],
        tip_gaps(world, config),
    ])
    return descriptor + frame_noise(world.noise_key, world.step, descriptor.size, config.feature_noise)


def distance_to_estimate(world: GraspWorld) -> float:
    target = np.array([world.estimate[0], world.estimate[1], world.grasp_pose[2]])
    return float(np.linalg.norm(world.effector[:3] - target))


def reward_compute(world: GraspWorld, config: EnvConfig) -> RewardComponents:
    d0 = world.initial_distance
    r_dist = 1.0 - min(distance_to_estimate(world) / d0, 1.0) if d0 > 0 else 1.0
    r_contact = float(contact_mask(world, config).sum()) / config.num_fingers
    r_height = min(world.lift / config.success_lift, 1.0)
    if world.outcome is EpisodeOutcome.SUCCESS:
        r_terminal = config.success_bonus
    elif world.outcome.is_failure:
        r_terminal = config.failure_penalty
    else:
        r_terminal = 0.0
    total = (
        config.w_dist * r_dist
        + config.w_contact * r_contact
        + config.w_height * r_height
        + r_terminal
    )
    return RewardComponents(r_dist, r_contact, r_height, r_terminal, float(total))


# ============================================
# Environment
# ============================================

class GraspEnv:
    """
    Deterministic grasping MDP.

    reset(episode_seed, task) fully determines the episode together with the
    action sequence.
    """

    def __init__(self, config: Optional[EnvConfig] = None):
        self.config = config or EnvConfig()
        self.world: Optional[GraspWorld] = None
        self._trace: List[Dict[str, Any]] = []

    @property
    def obs_dim(self) -> int:
        return self.config.obs_dim

    @property
    def action_dim(self) -> int:
        return self.config.action_dim

    # --- episode lifecycle ---
    def reset(self, episode_seed: int, task: TaskSpec) -> Observation:
        cfg = self.config
        if episode_seed < 0:
            raise ValidationError("Episode seed must be non-negative", field="episode_seed")
        corner = task.size * (np.sqrt(2.0) if task.shape == "box" else 1.0)
        if corner + cfg.tip_radius >= cfg.open_radius:
            raise ValidationError(
                f"Object '{task.name}' does not fit inside the open hand", field="size"
            )
        if task.height >= cfg.workspace_height:
            raise ValidationError(f"Object '{task.name}' is taller than the workspace", field="height")

        rng = np.random.default_rng([task.pose_seed, int(episode_seed)])
        object_xy = rng.uniform(-task.placement_range, task.placement_range, size=2)
        object_yaw = float(rng.uniform(0.0, 2.0 * np.pi))
        grasp_xy = object_xy.copy()
        if task.grasp_generator == "jittered":
            grasp_xy = grasp_xy + rng.normal(0.0, task.grasp_jitter, size=2)
        grasp_pose = np.array(
            [grasp_xy[0], grasp_xy[1], 0.5 * task.height, rng.uniform(-np.pi, np.pi)]
        )
        offset = np.array([0.0, 0.0, cfg.pregrasp_distance, 0.0])
        effector = grasp_pose + offset + rng.uniform(-cfg.pose_noise, cfg.pose_noise, size=NUM_POSE)
        estimate = object_xy + rng.normal(0.0, cfg.estimate_noise, size=2)
        noise_key = int(rng.integers(0, 2**63 - 1))

        world = GraspWorld(
            task=task,
            effector=effector,
            joints=np.zeros(cfg.num_fingers),
            object_xy=object_xy,
            object_start_xy=object_xy.copy(),
            object_yaw=object_yaw,
            lift=0.0,
            grasp_pose=grasp_pose,
            estimate=estimate,
            initial_distance=0.0,
            noise_key=noise_key,
        )
        world.initial_distance = distance_to_estimate(world)
        frame = env_feature_frame(world, cfg)
        world.history = [frame, frame.copy(), frame.copy()]
        self.world = world
        self._trace = []
        self._record(None, None)
        return self._observe()

    def step(self, action) -> Tuple[Observation, RewardComponents, EpisodeOutcome]:
        world = self._require_running()
        cfg = self.config
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (cfg.action_dim,):
            raise DimensionError("Action has wrong length", expected=[cfg.action_dim], actual=action.shape)
        if not np.all(np.isfinite(action)) or np.any(np.abs(action) > 1.0):
            raise ValidationError("Action components must lie in [-1, 1]", field="action")

        delta = action * cfg.action_scale
        world.step += 1
        held_before = grasp_closed(world, cfg)
        proposed = world.effector + delta[:NUM_POSE]

        if not self._inside_workspace(proposed):
            world.outcome = EpisodeOutcome.FAIL_WORKSPACE
            return self._finish_step(action)

        world.effector = proposed
        if cfg.reach_only:
            world.joints = np.clip(world.joints + delta[NUM_POSE:], 0.0, 1.0)
        else:
            self._move_object(world, delta, held_before)
            self._move_fingers(world, delta[NUM_POSE:])
            if grasp_closed(world, cfg):
                world.phase = Phase.LIFTING
            else:
                world.lift = 0.0
                world.phase = Phase.CLOSING if contact_mask(world, cfg).any() else Phase.APPROACH

        world.outcome = self._classify(world)
        return self._finish_step(action)

    # --- dynamics ---
    def _inside_workspace(self, pose: FloatArray) -> bool:
        cfg = self.config
        return bool(
            np.all(np.abs(pose[:2]) <= cfg.workspace_half_width)
            and 0.0 <= pose[2] <= cfg.workspace_height
        )

    def _move_object(self, world: GraspWorld, delta: FloatArray, held: bool) -> None:
        """Held objects follow the hand; otherwise touching tips drag the object laterally."""
        cfg = self.config
        if held:
            world.object_xy = world.object_xy + delta[:2]
            world.lift = max(0.0, world.lift + delta[2])
            return
        if not np.any(delta[:2]) or not within_object_height(world, world.effector[2]):
            return
        if np.any(tip_gaps(world, cfg) <= cfg.tip_radius):
            world.object_xy = world.object_xy + delta[:2]

    def _move_fingers(self, world: GraspWorld, joint_delta: FloatArray) -> None:
        """Closing fingers stop at the object surface instead of passing into it."""
        cfg = self.config
        proposed = np.clip(world.joints + joint_delta, 0.0, 1.0)
        if within_object_height(world, world.effector[2]):
            gaps = tip_gaps(world, cfg, joints=proposed)
            blocked = (proposed > world.joints) & (gaps < -cfg.tip_radius)
            proposed = np.where(blocked, world.joints, proposed)
        world.joints = proposed

    def _classify(self, world: GraspWorld) -> EpisodeOutcome:
        cfg = self.config
        if cfg.reach_only:
            gap = np.linalg.norm(world.effector[:3] - world.grasp_pose[:3])
            if gap <= cfg.reach_tolerance:
                return EpisodeOutcome.SUCCESS
        elif world.phase is Phase.LIFTING and world.lift >= cfg.success_lift:
            return EpisodeOutcome.SUCCESS
        if world.displacement > cfg.displacement_limit:
            return EpisodeOutcome.FAIL_DISPLACED
        if world.step >= cfg.max_steps:
            return EpisodeOutcome.TIMEOUT
        return EpisodeOutcome.RUNNING

    def _finish_step(self, action: FloatArray) -> Tuple[Observation, RewardComponents, EpisodeOutcome]:
        world = self.world
        frame = env_feature_frame(world, self.config)
        world.history = [frame, world.history[0], world.history[1]]
        reward = reward_compute(world, self.config)
        self._record(action, reward)
        if world.outcome.finished:
            logger.debug(
                "episode_finished",
                task=world.task.name,
                outcome=world.outcome.value,
                steps=world.step,
                lift=round(world.lift, 4),
            )
        return self._observe(), reward, world.outcome

    # --- observation ---
    def _observe(self) -> Observation:
        world = self.world
        return Observation(
            features=flare_stack(*world.history),
            tactile=contact_mask(world, self.config).astype(np.float64),
            effector=world.effector.copy(),
            joints=world.joints.copy(),
            estimate=world.estimate.copy(),
        )

    def observation(self) -> Observation:
        if self.world is None:
            raise StateError("Environment has not been reset", component="grasp_env")
        return self._observe()

    def _require_running(self) -> GraspWorld:
        if self.world is None:
            raise StateError("Environment has not been reset", component="grasp_env")
        if self.world.outcome.finished:
            raise StateError(
                "Episode already finished",
                component="grasp_env",
                details={"outcome": self.world.outcome.value},
            )
        return self.world

    # --- traces ---
    def _record(self, action: Optional[FloatArray], reward: Optional[RewardComponents]) -> None:
        world = self.world
        row: Dict[str, Any] = {
            "step": world.step,
            "x": world.effector[0],
            "y": world.effector[1],
            "z": world.effector[2],
            "theta": world.effector[3],
            "object_x": world.object_xy[0],
            "object_y": world.object_xy[1],
            "lift": world.lift,
            "contacts": int(contact_mask(world, self.config).sum()),
            "phase": world.phase.value,
            "reward": reward.total if reward is not None else 0.0,
            "outcome": world.outcome.value,
        }
        for i, q in enumerate(world.joints):
            row[f"joint_{i}"] = q
        if action is not None:
            for i, a in enumerate(action):
                row[f"action_{i}"] = a
        self._trace.append(row)

    def trace_frame(self) -> pd.DataFrame:
        """Per-step trace of the current episode, step 0 being the reset state."""
        return pd.DataFrame(self._trace)

    def export_trace(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.trace_frame().to_csv(path, index=False, float_format="%.9g")
        return path
