"""
Scripted demonstration policy.

Uses the privileged world state (true object pose and grasp pose): align over
the grasp pose, descend to grasp height, close every finger until the grasp
holds, then lift. Its imperfections (jittered grasp poses on small objects,
box corners) are what the demonstrations baseline measures.
"""

import numpy as np

from services.resprect.app.envs.grasp_env import EnvConfig, GraspWorld, NUM_POSE, grasp_closed

ALIGN_TOLERANCE = 0.02
HEIGHT_TOLERANCE = 0.05


def scripted_demo_policy(obs, world: GraspWorld, config: EnvConfig) -> np.ndarray:
    """Action in [-1, 1]^(4+F) for the current world state; obs is unused."""
    fingers = config.num_fingers
    action = np.zeros(NUM_POSE + fingers)

    if grasp_closed(world, config):
        action[2] = 1.0
        action[NUM_POSE:] = 1.0
        return action

    xy_error = world.grasp_pose[:2] - world.effector[:2]
    z_error = world.grasp_height - world.effector[2]
    if config.reach_only:
        z_error = world.grasp_pose[2] - world.effector[2]

    if np.linalg.norm(xy_error) > ALIGN_TOLERANCE or abs(z_error) > HEIGHT_TOLERANCE:
        action[:2] = np.clip(xy_error / config.max_translation, -1.0, 1.0)
        action[2] = np.clip(z_error / config.max_translation, -1.0, 1.0)
        action[NUM_POSE:] = -1.0
        return action

    action[NUM_POSE:] = 1.0
    return action
