import math
from dataclasses import replace

import numpy as np
import pytest

from forkrl.geometry import Pose2D
from forkrl.sensors import ego_state, observe, pose_error, raycast_lidar, render_semantic_image
from forkrl.sim import Action, goal_approach_pose, reset, step


def _placed_at(settings, pose, phase='departure', seed=0):
    s = reset(settings.env, seed, phase)
    return replace(s, forklift=replace(s.forklift, pose=pose))


def test_lidar_ranges(settings):
    s = _placed_at(settings, Pose2D(2.0, 3.0, 0.0))
    scan = raycast_lidar(s, settings.env)
    n = settings.env.sensors.n_scan
    assert scan.ranges.shape == (n,)
    assert scan.ranges[n // 2] == pytest.approx(2.0)       # wall behind
    assert scan.ranges[3 * n // 4] == pytest.approx(3.0)   # wall to the right
    assert scan.ranges[0] == pytest.approx(settings.env.sensors.r_max)
    assert np.all(scan.ranges <= settings.env.sensors.r_max)


def test_lidar_ignores_carried_cargo(settings):
    s = reset(settings.env, 4, 'placement')
    scan = raycast_lidar(s, settings.env)
    # the cargo sits on the fork tip straight ahead
    assert scan.ranges[0] > settings.env.forklift.fork_reach + settings.env.cargo_size


def test_semantic_image_sees_rack_ahead(settings):
    s = _placed_at(settings, Pose2D(9.0, 5.5, math.pi / 2))
    img = render_semantic_image(s, settings.env).pixels
    size = settings.env.sensors.image_size
    assert img.shape == (3, size, size)
    assert img[0, 9, size // 2] == 1.0
    assert img[0, size - 4, size // 2] == 0.0
    assert set(np.unique(img)) <= {0.0, 1.0}


def test_ego_state_polar_goal(settings):
    s = _placed_at(settings, Pose2D(2.0, 3.0, 0.0))
    ego = ego_state(s, Pose2D(2.0, 5.0))
    assert ego.goal_dist == pytest.approx(2.0)
    assert ego.goal_bearing == pytest.approx(math.pi / 2)
    assert ego_state(s, None).goal_dist == 0.0


def test_pose_error_in_slot_frame(settings):
    env = settings.env
    s = _placed_at(settings, goal_approach_pose(env), 'placement')
    s, _ = step(s, Action(), env)
    err = pose_error(s, env)
    assert (err.dx, err.dy, err.dtheta) == pytest.approx((-env.approach_offset, 0.0, 0.0), abs=1e-9)
    assert err.h == pytest.approx(env.pick_height)


def test_observe_bundles_all_streams(settings):
    s = reset(settings.env, 1)
    obs = observe(s, settings.env, Pose2D(5.0, 5.0))
    assert obs.lidar.ranges.shape == (settings.env.sensors.n_scan,)
    assert obs.image.pixels.shape[0] == 3
    assert obs.ego.goal_dist > 0
    assert obs.pose_error.as_array().shape == (4,)
