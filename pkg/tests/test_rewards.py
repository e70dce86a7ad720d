from dataclasses import replace

import pytest

from forkrl.geometry import Pose2D
from forkrl.rewards import (RewardNormalizer, RunningStats, d_target, normalize, phase_reward, pick_errors,
                            place_reward_terms, reciprocal_reward, reward_nav, reward_pick, reward_place)
from forkrl.sim import StepEvents, pick_pose, reset

NO_EVENTS = StepEvents(False, False, False, False, False)


@pytest.fixture
def world(settings):
    return reset(settings.env, 0)


def moved(state, pose, **kw):
    return replace(state, forklift=replace(state.forklift, pose=pose, **kw))


@pytest.mark.parametrize('d, placed, collided, want', [
    (0.95, False, False, 1.0),
    (0.05, False, False, 10.0),
    (0.0, True, False, 70.0),
    (0.95, False, True, -99.0),
])
def test_place_reward_terms(settings, d, placed, collided, want):
    assert place_reward_terms(d, placed, collided, settings.rewards) == pytest.approx(want)


def test_reciprocal_reward_grows_as_error_shrinks(settings):
    rs = [reciprocal_reward(d, settings.rewards) for d in (1.0, 0.5, 0.1, 0.01, 0.0)]
    assert rs == sorted(rs)
    assert rs[-1] == pytest.approx(1.0 / settings.rewards.eps_stab)


def test_d_target_weights_heading(settings):
    cfg = settings.rewards
    assert d_target(Pose2D(3, 4, 0), Pose2D(0, 0, 0), cfg) == pytest.approx(5.0)
    assert d_target(Pose2D(0, 0, 1.0), Pose2D(0, 0, 0), cfg) == pytest.approx(cfg.w_ang)


def test_nav_reward_pays_progress(settings, world):
    prev = moved(world, Pose2D(2, 2, 0))
    nxt = moved(world, Pose2D(3, 2, 0))
    goal = Pose2D(10, 2, 0)
    cfg = settings.rewards
    assert reward_nav(prev, nxt, goal, NO_EVENTS, cfg) == pytest.approx(cfg.w_prog - cfg.w_time)
    assert reward_nav(nxt, prev, goal, NO_EVENTS, cfg) == pytest.approx(-cfg.w_prog - cfg.w_time)


def test_nav_reward_penalizes_jerk_and_collision(settings, world):
    cfg = settings.rewards
    prev = moved(world, Pose2D(2, 2, 0))
    jerky = moved(world, Pose2D(2, 2, 0), v=0.5, omega=-0.5)
    goal = Pose2D(10, 2, 0)
    assert reward_nav(prev, jerky, goal, NO_EVENTS, cfg) == pytest.approx(-cfg.w_smooth - cfg.w_time)
    hit = replace(NO_EVENTS, collided=True)
    assert reward_nav(prev, prev, goal, hit, cfg) == pytest.approx(-cfg.w_coll - cfg.w_time)


def test_pick_reward_at_the_pick_pose(settings, world):
    at_pick = moved(world, pick_pose(world.target_cargo().pose, settings.env))
    dist, align = pick_errors(at_pick, settings.env)
    assert dist == pytest.approx(0.0, abs=1e-9) and align == pytest.approx(0.0, abs=1e-9)
    cfg = settings.rewards
    assert reward_pick(at_pick, NO_EVENTS, cfg, settings.env) == pytest.approx(-cfg.w_time)
    clamped = replace(NO_EVENTS, clamp_succeeded=True)
    assert reward_pick(at_pick, clamped, cfg, settings.env) == pytest.approx(cfg.pick_bonus - cfg.w_time)
    failed = replace(NO_EVENTS, clamp_failed=True)
    assert reward_pick(at_pick, failed, cfg, settings.env) == pytest.approx(-cfg.pick_fail_penalty - cfg.w_time)


def test_place_reward_uses_recorded_error_on_placement(settings):
    state = reset(settings.env, 0, 'placement')
    placed = replace(state, placed=True, place_error=0.0)
    events = replace(NO_EVENTS, placed=True)
    cfg = settings.rewards
    assert reward_place(placed, events, cfg) == pytest.approx(1.0 / cfg.eps_stab + cfg.r_success)
    d = d_target(state.target_cargo().pose, state.goal_slot.pose, cfg)
    assert reward_place(state, NO_EVENTS, cfg) == pytest.approx(reciprocal_reward(d, cfg))


def test_phase_reward_dispatch(settings, world):
    goal = Pose2D(10, 2, 0)
    env, cfg = settings.env, settings.rewards
    assert phase_reward('departure', world, world, NO_EVENTS, goal, cfg, env) == pytest.approx(-cfg.w_time)
    assert phase_reward('search_pick', world, world, NO_EVENTS, None, cfg, env) == \
        reward_pick(world, NO_EVENTS, cfg, env)
    with pytest.raises(ValueError):
        phase_reward('done', world, world, NO_EVENTS, None, cfg, env)


def test_running_stats_welford():
    stats = RunningStats()
    for x in (1.0, 2.0, 3.0, 4.0):
        stats = stats.update(x)
    assert stats.count == 4
    assert stats.mean == pytest.approx(2.5)
    assert stats.variance == pytest.approx(5.0 / 3.0)


def test_normalize_modes_and_clip():
    stats = RunningStats().update(0.0)
    out, stats2 = normalize(stats, 2.0)
    assert stats2.count == 2
    assert out == pytest.approx(2.0 / 2.0 ** 0.5, rel=1e-6)
    centred, _ = normalize(stats, 2.0, mode='mean_variance')
    assert centred == pytest.approx(1.0 / 2.0 ** 0.5, rel=1e-6)
    zeros = RunningStats()
    for _ in range(200):
        zeros = zeros.update(0.0)
    clipped, _ = normalize(zeros, 1.0, clip=10.0)
    assert clipped == 10.0


def test_normalizer_keeps_experts_apart(settings):
    norm = RewardNormalizer(settings.rewards)
    for r in (1.0, 2.0, 3.0):
        norm('navigation', r)
    norm('picking', 100.0)
    assert norm.stats['navigation'].count == 3
    assert norm.stats['picking'].count == 1
    assert norm.stats['picking'].mean == 100.0
