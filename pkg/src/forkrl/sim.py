"""
Deterministic 2D top-down warehouse world.

Everything here is a frozen value: `reset` builds a WorldState from (config, seed),
`step` returns a new WorldState plus the StepEvents it produced. All randomness is
drawn at reset from a per-episode generator; stepping never consumes entropy, so
identical (config, seed, action sequence) triples give identical trajectories.
"""
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .config import EnvConfig
from .errors import ConfigError, StepOnTerminalError
from .geometry import (Pose2D, obb_overlaps_aabb, obb_overlaps_circle,
                       point_rect_distance, wrap_angle)

log = logging.getLogger(__name__)

WALL_THICKNESS = 0.2
CARGO_ID = 0


# ------------------------------- types -------------------------------------- #

@dataclass(frozen=True)
class Action:
    v_cmd: float = 0.0
    omega_cmd: float = 0.0
    h_dot: float = 0.0
    clamp_trigger: bool = False

    def clipped(self, cfg: EnvConfig) -> "Action":
        fk = cfg.forklift
        return Action(float(np.clip(self.v_cmd, -fk.v_max, fk.v_max)),
                      float(np.clip(self.omega_cmd, -fk.omega_max, fk.omega_max)),
                      float(np.clip(self.h_dot, -fk.h_dot_max, fk.h_dot_max)),
                      bool(self.clamp_trigger))

    def as_list(self) -> list:
        return [self.v_cmd, self.omega_cmd, self.h_dot, bool(self.clamp_trigger)]

    @classmethod
    def from_seq(cls, v) -> "Action":
        return cls(float(v[0]), float(v[1]), float(v[2]), bool(v[3]))


@dataclass(frozen=True)
class ForkliftState:
    pose: Pose2D
    v: float = 0.0
    omega: float = 0.0
    h: float = 0.0
    clamped: bool = False
    carrying: int | None = None


@dataclass(frozen=True)
class Cargo:
    id: int
    pose: Pose2D
    mass: float


@dataclass(frozen=True)
class DynObstacle:
    pose: Pose2D
    velocity: tuple[float, float]
    radius: float


@dataclass(frozen=True)
class Zone:
    pose: Pose2D
    tol: float

    def contains(self, pose: Pose2D) -> bool:
        return self.pose.distance_to(pose) <= self.tol


@dataclass(frozen=True)
class EnvParams:
    cargo_mass: float
    friction_coeff: float
    obstacle_seed: int
    start_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    cargo_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    clamp_fault: bool = False


@dataclass(frozen=True)
class StepEvents:
    collided: bool = False
    clamp_succeeded: bool = False
    clamp_failed: bool = False
    placed: bool = False
    timed_out: bool = False


@dataclass(frozen=True)
class WorldState:
    forklift: ForkliftState
    cargo: tuple[Cargo, ...]
    racks: tuple[tuple[float, float, float, float], ...]
    dyn_obstacles: tuple[DynObstacle, ...]
    start_zone: Zone
    transfer_zone: Zone
    goal_zone: Zone
    goal_slot: Zone
    params: EnvParams
    t: int = 0
    carry_offset: Pose2D | None = None
    clamp_attempts: int = 0
    place_error: float | None = None
    collided: bool = False
    placed: bool = False
    timed_out: bool = False

    @property
    def terminal(self) -> bool:
        return self.collided or self.placed or self.timed_out

    def carried_cargo(self) -> Cargo | None:
        cid = self.forklift.carrying
        if cid is None:
            return None
        return next(c for c in self.cargo if c.id == cid)

    def target_cargo(self) -> Cargo:
        return self.cargo[0]


# ------------------------------- derived poses ------------------------------ #

def pick_pose(cargo_pose: Pose2D, cfg: EnvConfig) -> Pose2D:
    """Forklift pose that puts the fork tip on the cargo centre, aligned with it."""
    return cargo_pose.advance(-cfg.forklift.fork_reach)


def transfer_pose(cargo_pose: Pose2D, cfg: EnvConfig) -> Pose2D:
    return pick_pose(cargo_pose, cfg).advance(-cfg.pick_offset)


def goal_approach_pose(cfg: EnvConfig) -> Pose2D:
    slot = Pose2D(*cfg.goal_slot)
    return slot.advance(-(cfg.approach_offset + cfg.forklift.fork_reach))


def fork_tip(pose: Pose2D, cfg: EnvConfig) -> Pose2D:
    return pose.advance(cfg.forklift.fork_reach)


def wall_rects(cfg: EnvConfig) -> tuple:
    if not cfg.walls:
        return ()
    w, h = cfg.arena
    t = WALL_THICKNESS
    return ((-t, -t, w + t, 0.0), (-t, h, w + t, h + t),
            (-t, 0.0, 0.0, h), (w, 0.0, w + t, h))


def target_distance(pose: Pose2D, goal: Pose2D, w_ang: float) -> float:
    return math.hypot(pose.x - goal.x, pose.y - goal.y) + w_ang * abs(wrap_angle(pose.theta - goal.theta))


# ------------------------------- collision ---------------------------------- #

def _box_hits(pose: Pose2D, hl: float, hw: float, racks, obstacles) -> bool:
    reach = math.hypot(hl, hw)
    for rect in racks:
        if point_rect_distance(pose.x, pose.y, rect) >= reach:
            continue
        if obb_overlaps_aabb(pose, hl, hw, rect):
            return True
    for ob in obstacles:
        if obb_overlaps_circle(pose, hl, hw, ob.pose.x, ob.pose.y, ob.radius):
            return True
    return False


def collides(pose: Pose2D, cfg: EnvConfig, racks, obstacles=(), carried: Pose2D | None = None) -> bool:
    """Forklift footprint (and carried cargo, if any) against racks and obstacles."""
    fk = cfg.forklift
    if _box_hits(pose, fk.length / 2, fk.width / 2, racks, obstacles):
        return True
    if carried is not None:
        half = cfg.cargo_size / 2
        return _box_hits(carried, half, half, racks, obstacles)
    return False


# ------------------------------- kinematics --------------------------------- #

def integrate_kinematics(pose: Pose2D, v: float, omega: float, dt: float) -> Pose2D:
    return Pose2D(pose.x + v * math.cos(pose.theta) * dt,
                  pose.y + v * math.sin(pose.theta) * dt,
                  pose.theta + omega * dt)


def _advance_obstacle(ob: DynObstacle, region, dt: float) -> DynObstacle:
    x = ob.pose.x + ob.velocity[0] * dt
    y = ob.pose.y + ob.velocity[1] * dt
    vx, vy = ob.velocity
    lo_x, lo_y = region[0] + ob.radius, region[1] + ob.radius
    hi_x, hi_y = region[2] - ob.radius, region[3] - ob.radius
    if x < lo_x:
        x, vx = 2 * lo_x - x, -vx
    elif x > hi_x:
        x, vx = 2 * hi_x - x, -vx
    if y < lo_y:
        y, vy = 2 * lo_y - y, -vy
    elif y > hi_y:
        y, vy = 2 * hi_y - y, -vy
    return DynObstacle(Pose2D(x, y, math.atan2(vy, vx)), (vx, vy), ob.radius)


def drive_gain(params: EnvParams, cfg: EnvConfig) -> float:
    return float(np.clip(params.friction_coeff / cfg.nominal_friction, 0.85, 1.0))


def lift_gain(params: EnvParams, cfg: EnvConfig) -> float:
    return float(np.clip(cfg.nominal_mass / params.cargo_mass, 0.6, 1.0))


# ------------------------------- reset -------------------------------------- #

def _spawn_obstacles(cfg: EnvConfig, seed: int) -> tuple[DynObstacle, ...]:
    spec = cfg.obstacles
    rng = np.random.default_rng(seed)
    xmin, ymin, xmax, ymax = spec.region
    out = []
    for _ in range(spec.count):
        x = rng.uniform(xmin + spec.radius, max(xmin + spec.radius, xmax - spec.radius))
        y = rng.uniform(ymin + spec.radius, max(ymin + spec.radius, ymax - spec.radius))
        speed = rng.uniform(*spec.speed)
        heading = rng.uniform(-math.pi, math.pi)
        vel = (speed * math.cos(heading), speed * math.sin(heading))
        out.append(DynObstacle(Pose2D(x, y, heading), vel, spec.radius))
    return tuple(out)


def _jitter(rng: np.random.Generator, spec: tuple[float, float]) -> tuple[float, float, float]:
    pos, ang = spec
    return (float(rng.uniform(-pos, pos)), float(rng.uniform(-pos, pos)), float(rng.uniform(-ang, ang)))


def sample_params(cfg: EnvConfig, rng: np.random.Generator) -> EnvParams:
    rnd = cfg.randomization
    return EnvParams(
        cargo_mass=float(rng.uniform(*rnd.cargo_mass)),
        friction_coeff=float(rng.uniform(*rnd.friction)),
        start_offset=_jitter(rng, rnd.start_jitter),
        cargo_offset=_jitter(rng, rnd.cargo_jitter),
        obstacle_seed=int(rng.integers(0, 2**31)),
        clamp_fault=bool(rng.random() < cfg.clamp_fault_prob),
    )


def _check_layout(cfg: EnvConfig, racks, poses: dict[str, Pose2D]) -> None:
    for name, pose in poses.items():
        if collides(pose, cfg, racks):
            raise ConfigError(f"env: {name} pose {pose.as_list()} overlaps rack geometry")


def reset(cfg: EnvConfig, seed: int, start_phase: str = 'departure') -> WorldState:
    """
    Build the initial world for one episode.

    start_phase selects a sub-task start: 'departure' (start zone, empty forks),
    'search_pick' (at the transfer zone), 'transport' (at the pick pose with the
    cargo already clamped) or 'placement' (at the goal approach pose, loaded).
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    params = sample_params(cfg, rng)
    racks = tuple(cfg.racks) + wall_rects(cfg)

    cx, cy, cth = cfg.cargo_spawn
    ox, oy, oth = params.cargo_offset
    cargo_pose = Pose2D(cx + ox, cy + oy, cth + oth)
    start = Pose2D(*cfg.start_zone)
    approach = goal_approach_pose(cfg)
    transfer = transfer_pose(cargo_pose, cfg)
    _check_layout(cfg, racks, {
        'start_zone': start,
        'transfer_zone': transfer_pose(Pose2D(*cfg.cargo_spawn), cfg),
        'pick': pick_pose(Pose2D(*cfg.cargo_spawn), cfg),
        'goal_approach': approach,
    })

    anchors = {'departure': start, 'search_pick': transfer,
               'transport': pick_pose(cargo_pose, cfg), 'placement': approach}
    phase = str(start_phase)
    if phase not in anchors:
        raise ConfigError(f"unsupported start phase {start_phase!r}")
    dx, dy, dth = params.start_offset
    anchor = anchors[phase]
    pose = Pose2D(anchor.x + dx, anchor.y + dy, anchor.theta + dth)

    forklift = ForkliftState(pose=pose)
    carry_offset = None
    if phase in ('transport', 'placement'):
        carry_offset = Pose2D(cfg.forklift.fork_reach, 0.0, 0.0)
        cargo_pose = pose.compose(carry_offset)
        forklift = replace(forklift, h=cfg.pick_height, clamped=True, carrying=CARGO_ID)

    state = WorldState(
        forklift=forklift,
        cargo=(Cargo(CARGO_ID, cargo_pose, params.cargo_mass),),
        racks=racks,
        dyn_obstacles=_spawn_obstacles(cfg, params.obstacle_seed),
        start_zone=Zone(start, cfg.zone_tol),
        transfer_zone=Zone(transfer, cfg.zone_tol),
        goal_zone=Zone(approach, cfg.zone_tol),
        goal_slot=Zone(Pose2D(*cfg.goal_slot), cfg.place_tol),
        params=params,
        carry_offset=carry_offset,
    )
    log.debug("reset seed=%d phase=%s mass=%.1f friction=%.2f fault=%s",
              seed, phase, params.cargo_mass, params.friction_coeff, params.clamp_fault)
    return state


# ------------------------------- clamp / release ---------------------------- #

def clamp_eligible(state: WorldState, cfg: EnvConfig) -> Cargo | None:
    """The cargo the fork could grab right now, if the tolerances allow it."""
    fk = state.forklift
    tip = fork_tip(fk.pose, cfg)
    tol = cfg.clamp
    for c in state.cargo:
        if math.hypot(c.pose.x - tip.x, c.pose.y - tip.y) > tol.d_clamp:
            continue
        if abs(wrap_angle(fk.pose.theta - c.pose.theta)) > tol.theta_clamp:
            continue
        if abs(fk.h - cfg.pick_height) > tol.h_band:
            continue
        return c
    return None


def try_clamp(state: WorldState, cfg: EnvConfig) -> tuple[WorldState, bool, bool]:
    """Returns (new state, succeeded, failed)."""
    attempts = state.clamp_attempts + 1
    target = clamp_eligible(state, cfg)
    faulted = state.params.clamp_fault and state.clamp_attempts == 0
    if target is None or faulted:
        return replace(state, clamp_attempts=attempts), False, True
    fk = replace(state.forklift, clamped=True, carrying=target.id)
    offset = target.pose.relative_to(state.forklift.pose)
    return replace(state, forklift=fk, carry_offset=offset, clamp_attempts=attempts), True, False


def release_error(state: WorldState, cfg: EnvConfig) -> float:
    carried = state.carried_cargo()
    if carried is None:
        return math.inf
    return target_distance(carried.pose, state.goal_slot.pose, cfg.w_ang)


def try_release(state: WorldState, cfg: EnvConfig) -> tuple[WorldState, bool]:
    """Lower the cargo into the slot. Returns (new state, placed); refusals keep the clamp."""
    d = release_error(state, cfg)
    if d > cfg.place_tol or abs(state.forklift.h - cfg.slot_height) > cfg.clamp.h_band:
        return state, False
    fk = replace(state.forklift, clamped=False, carrying=None)
    return replace(state, forklift=fk, carry_offset=None, placed=True, place_error=d), True


# ------------------------------- step --------------------------------------- #

def step(state: WorldState, action: Action, cfg: EnvConfig, dt: float | None = None) -> tuple[WorldState, StepEvents]:
    if state.terminal:
        raise StepOnTerminalError(f"step called on terminal state at t={state.t}")
    dt = cfg.dt if dt is None else dt
    a = action.clipped(cfg)
    fk = state.forklift
    loaded = fk.carrying is not None

    drive = drive_gain(state.params, cfg) if loaded else 1.0
    lift = lift_gain(state.params, cfg) if loaded else 1.0
    v, omega = a.v_cmd * drive, a.omega_cmd * drive
    pose = integrate_kinematics(fk.pose, v, omega, dt)
    h = float(np.clip(fk.h + a.h_dot * lift * dt, 0.0, cfg.forklift.h_max))

    region = cfg.obstacles.region
    obstacles = tuple(_advance_obstacle(o, region, dt) for o in state.dyn_obstacles)

    cargo = state.cargo
    carried_pose = None
    if loaded:
        carried_pose = pose.compose(state.carry_offset)
        cargo = tuple(replace(c, pose=carried_pose) if c.id == fk.carrying else c for c in cargo)

    nxt = replace(state, forklift=replace(fk, pose=pose, v=v, omega=omega, h=h),
                  cargo=cargo, dyn_obstacles=obstacles, t=state.t + 1)

    collided = collides(pose, cfg, nxt.racks, obstacles, carried_pose)
    succeeded = failed = placed = False
    if collided:
        nxt = replace(nxt, collided=True)
    elif a.clamp_trigger:
        if loaded:
            nxt, placed = try_release(nxt, cfg)
            failed = not placed
        else:
            nxt, succeeded, failed = try_clamp(nxt, cfg)

    timed_out = not (collided or placed) and nxt.t >= cfg.t_max
    if timed_out:
        nxt = replace(nxt, timed_out=True)
    return nxt, StepEvents(collided, succeeded, failed, placed, timed_out)


# ------------------------------- serialization ------------------------------ #

def state_to_dict(state: WorldState) -> dict:
    fk = state.forklift
    return {
        't': state.t,
        'forklift': {'pose': fk.pose.as_list(), 'v': fk.v, 'omega': fk.omega, 'h': fk.h,
                     'clamped': fk.clamped, 'carrying': fk.carrying},
        'cargo': [{'id': c.id, 'pose': c.pose.as_list(), 'mass': c.mass} for c in state.cargo],
        'racks': [list(r) for r in state.racks],
        'dyn_obstacles': [{'pose': o.pose.as_list(), 'velocity': list(o.velocity), 'radius': o.radius}
                          for o in state.dyn_obstacles],
        'zones': {name: {'pose': z.pose.as_list(), 'tol': z.tol}
                  for name, z in (('start', state.start_zone), ('transfer', state.transfer_zone),
                                  ('goal', state.goal_zone), ('slot', state.goal_slot))},
        'params': {'cargo_mass': state.params.cargo_mass,
                   'friction_coeff': state.params.friction_coeff,
                   'obstacle_seed': state.params.obstacle_seed,
                   'start_offset': list(state.params.start_offset),
                   'cargo_offset': list(state.params.cargo_offset),
                   'clamp_fault': state.params.clamp_fault},
        'carry_offset': state.carry_offset.as_list() if state.carry_offset else None,
        'clamp_attempts': state.clamp_attempts,
        'place_error': state.place_error,
        'collided': state.collided,
        'placed': state.placed,
        'timed_out': state.timed_out,
    }


def state_from_dict(d: dict) -> WorldState:
    f = d['forklift']
    z = d['zones']
    p = d['params']

    def zone(k):
        return Zone(Pose2D.from_seq(z[k]['pose']), float(z[k]['tol']))

    return WorldState(
        forklift=ForkliftState(Pose2D.from_seq(f['pose']), float(f['v']), float(f['omega']),
                               float(f['h']), bool(f['clamped']), f['carrying']),
        cargo=tuple(Cargo(int(c['id']), Pose2D.from_seq(c['pose']), float(c['mass'])) for c in d['cargo']),
        racks=tuple(tuple(float(x) for x in r) for r in d['racks']),
        dyn_obstacles=tuple(DynObstacle(Pose2D.from_seq(o['pose']), tuple(o['velocity']), float(o['radius']))
                            for o in d['dyn_obstacles']),
        start_zone=zone('start'),
        transfer_zone=zone('transfer'),
        goal_zone=zone('goal'),
        goal_slot=zone('slot'),
        params=EnvParams(float(p['cargo_mass']), float(p['friction_coeff']), int(p['obstacle_seed']),
                         tuple(p['start_offset']), tuple(p['cargo_offset']), bool(p['clamp_fault'])),
        t=int(d['t']),
        carry_offset=Pose2D.from_seq(d['carry_offset']) if d['carry_offset'] else None,
        clamp_attempts=int(d['clamp_attempts']),
        place_error=d['place_error'],
        collided=bool(d['collided']),
        placed=bool(d['placed']),
        timed_out=bool(d['timed_out']),
    )
