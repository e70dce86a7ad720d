"""Phase rewards, the placement distance metric and per-expert reward scaling."""
import math
from dataclasses import dataclass

from .config import EnvConfig, RewardConfig
from .geometry import Pose2D, wrap_angle
from .sim import StepEvents, WorldState, fork_tip, target_distance

NAV_PHASES = ('departure', 'transport')


def d_target(pose: Pose2D, goal: Pose2D, cfg: RewardConfig) -> float:
    return target_distance(pose, goal, cfg.w_ang)


def reciprocal_reward(d: float, cfg: RewardConfig) -> float:
    return cfg.lambda_prec / (d + cfg.eps_stab)


def place_reward_terms(d: float, placed: bool, collided: bool, cfg: RewardConfig) -> float:
    r = reciprocal_reward(d, cfg)
    if placed:
        r += cfg.r_success
    if collided:
        r -= cfg.w_coll
    return r


def reward_place(state: WorldState, events: StepEvents, cfg: RewardConfig) -> float:
    if events.placed and state.place_error is not None:
        d = state.place_error
    else:
        d = d_target(state.target_cargo().pose, state.goal_slot.pose, cfg)
    return place_reward_terms(d, events.placed, events.collided, cfg)


def reward_nav(prev: WorldState, state: WorldState, goal: Pose2D, events: StepEvents, cfg: RewardConfig) -> float:
    p0, p1 = prev.forklift, state.forklift
    progress = p0.pose.distance_to(goal) - p1.pose.distance_to(goal)
    jerk = abs(p1.v - p0.v) + abs(p1.omega - p0.omega)
    r = cfg.w_prog * progress - cfg.w_smooth * jerk - cfg.w_time
    if events.collided:
        r -= cfg.w_coll
    return r


def pick_errors(state: WorldState, env: EnvConfig) -> tuple[float, float]:
    """(fork tip to cargo distance, heading error to the cargo)."""
    fk = state.forklift
    cargo = state.target_cargo().pose
    tip = fork_tip(fk.pose, env)
    return math.hypot(cargo.x - tip.x, cargo.y - tip.y), abs(wrap_angle(fk.pose.theta - cargo.theta))


def reward_pick(state: WorldState, events: StepEvents, cfg: RewardConfig, env: EnvConfig) -> float:
    dist, align = pick_errors(state, env)
    r = -cfg.w_dist * dist - cfg.w_align * align - cfg.w_time
    if events.clamp_succeeded:
        r += cfg.pick_bonus
    if events.clamp_failed:
        r -= cfg.pick_fail_penalty
    if events.collided:
        r -= cfg.w_coll
    return r


def phase_reward(phase: str, prev: WorldState, state: WorldState, events: StepEvents,
                 goal: Pose2D | None, cfg: RewardConfig, env: EnvConfig) -> float:
    if phase in NAV_PHASES:
        return reward_nav(prev, state, goal, events, cfg)
    if phase == 'search_pick':
        return reward_pick(state, events, cfg, env)
    if phase == 'placement':
        return reward_place(state, events, cfg)
    raise ValueError(f"no reward defined for absorbing phase {phase}")


# ------------------------------- normalization ------------------------------ #

@dataclass(frozen=True)
class RunningStats:
    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count >= 2 else 0.0

    def update(self, x: float) -> "RunningStats":
        n = self.count + 1
        delta = x - self.mean
        mean = self.mean + delta / n
        return RunningStats(n, mean, self.m2 + delta * (x - mean))


def normalize(stats: RunningStats, r: float, mode: str = 'variance', clip: float = 10.0) -> tuple[float, RunningStats]:
    stats = stats.update(r)
    if stats.count < 2:
        out = r
    else:
        centred = r - stats.mean if mode == 'mean_variance' else r
        out = centred / math.sqrt(stats.variance + 1e-8)
    return max(-clip, min(clip, out)), stats


class RewardNormalizer:
    """One independent RunningStats per expert."""

    def __init__(self, cfg: RewardConfig):
        self.cfg = cfg
        self.stats: dict[str, RunningStats] = {}

    def __call__(self, expert: str, r: float) -> float:
        out, self.stats[expert] = normalize(self.stats.get(expert, RunningStats()), r,
                                            self.cfg.norm_mode, self.cfg.norm_clip)
        return out
