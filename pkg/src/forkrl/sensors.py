"""
Heterogeneous sensing over a WorldState.

  - LiDAR: N_scan beams around the forklift centre, bearing 0 = heading,
    counter-clockwise positive; ranges capped at r_max; carried cargo is invisible
  - semantic image: egocentric C x H x W binary raster, forklift on the centre
    pixel with the heading pointing up (row 0 is ahead), channels
    (racks + obstacles, cargo, goal slot)
  - ego state: speeds, fork height and polar coordinates of the active goal
  - pose error: carried cargo (or fork tip) in the goal slot's frame
"""
import math
from dataclasses import dataclass

import numpy as np

from .config import EnvConfig
from .geometry import (Pose2D, points_in_aabbs, points_in_circles, points_in_obbs,
                       ray_aabbs, ray_circles, ray_obbs)
from .sim import WorldState, fork_tip

N_CHANNELS = 3


@dataclass(frozen=True, eq=False)
class LidarScan:
    ranges: np.ndarray


@dataclass(frozen=True, eq=False)
class SemanticImage:
    pixels: np.ndarray  # (C, H, W), channel-first for the conv stack


@dataclass(frozen=True)
class EgoState:
    v: float
    omega: float
    h: float
    goal_dist: float
    goal_bearing: float


@dataclass(frozen=True)
class PoseError:
    dx: float
    dy: float
    dtheta: float
    h: float

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dtheta, self.h])


@dataclass(frozen=True, eq=False)
class Observation:
    lidar: LidarScan
    image: SemanticImage
    ego: EgoState
    pose_error: PoseError


# ------------------------------- helpers ------------------------------------ #

def _obstacle_circles(state: WorldState) -> np.ndarray:
    if not state.dyn_obstacles:
        return np.zeros((0, 3))
    return np.array([[o.pose.x, o.pose.y, o.radius] for o in state.dyn_obstacles])


def _cargo_boxes(state: WorldState, cfg: EnvConfig, include_carried: bool) -> np.ndarray:
    half = cfg.cargo_size / 2
    rows = [[c.pose.x, c.pose.y, c.pose.theta, half, half] for c in state.cargo
            if include_carried or c.id != state.forklift.carrying]
    return np.array(rows) if rows else np.zeros((0, 5))


def beam_directions(theta: float, n: int) -> np.ndarray:
    ang = theta + 2.0 * math.pi * np.arange(n) / n
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


# ------------------------------- LiDAR -------------------------------------- #

def raycast_lidar(state: WorldState, cfg: EnvConfig) -> LidarScan:
    spec = cfg.sensors
    pose = state.forklift.pose
    dirs = beam_directions(pose.theta, spec.n_scan)
    racks = np.asarray(state.racks, dtype=float).reshape(-1, 4)
    t = np.minimum.reduce([
        ray_aabbs(pose.x, pose.y, dirs, racks),
        ray_circles(pose.x, pose.y, dirs, _obstacle_circles(state)),
        ray_obbs(pose.x, pose.y, dirs, _cargo_boxes(state, cfg, include_carried=False)),
    ])
    return LidarScan(np.minimum(t, spec.r_max))


# ------------------------------- semantic image ----------------------------- #

def pixel_centres(pose: Pose2D, size: int, window: float) -> tuple[np.ndarray, np.ndarray]:
    """World coordinates of every pixel centre of the egocentric raster."""
    cell = window / size
    idx = np.arange(size) + 0.5
    forward = (size / 2 - idx)[:, None] * cell * np.ones((1, size))
    left = np.ones((size, 1)) * (size / 2 - idx)[None, :] * cell
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    return pose.x + c * forward - s * left, pose.y + s * forward + c * left


def render_semantic_image(state: WorldState, cfg: EnvConfig) -> SemanticImage:
    spec = cfg.sensors
    px, py = pixel_centres(state.forklift.pose, spec.image_size, spec.image_window)
    racks = np.asarray(state.racks, dtype=float).reshape(-1, 4)
    img = np.zeros((N_CHANNELS, spec.image_size, spec.image_size))
    img[0] = points_in_aabbs(px, py, racks) | points_in_circles(px, py, _obstacle_circles(state))
    img[1] = points_in_obbs(px, py, _cargo_boxes(state, cfg, include_carried=True))
    slot = state.goal_slot.pose
    half = cfg.cargo_size / 2
    img[2] = points_in_obbs(px, py, np.array([[slot.x, slot.y, slot.theta, half, half]]))
    return SemanticImage(img)


# ------------------------------- ego / pose error --------------------------- #

def ego_state(state: WorldState, goal: Pose2D | None) -> EgoState:
    fk = state.forklift
    if goal is None:
        return EgoState(fk.v, fk.omega, fk.h, 0.0, 0.0)
    dist = fk.pose.distance_to(goal)
    bearing = fk.pose.bearing_to(goal.x, goal.y) if dist > 0 else 0.0
    return EgoState(fk.v, fk.omega, fk.h, dist, bearing)


def pose_error(state: WorldState, cfg: EnvConfig) -> PoseError:
    carried = state.carried_cargo()
    ref = carried.pose if carried is not None else fork_tip(state.forklift.pose, cfg)
    rel = ref.relative_to(state.goal_slot.pose)
    return PoseError(rel.x, rel.y, rel.theta, state.forklift.h)


def observe(state: WorldState, cfg: EnvConfig, goal: Pose2D | None = None) -> Observation:
    return Observation(raycast_lidar(state, cfg), render_semantic_image(state, cfg),
                       ego_state(state, goal), pose_error(state, cfg))
