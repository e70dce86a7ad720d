"""
Rule-based expert controllers: the demonstrator behind the BC dataset and the
Rule-Based baseline.

  - navigation: 8-connected A* over an inflated occupancy grid, tracked with
    pure pursuit (one plan per phase, replanned on large deviations)
  - pick / place: line-following servo on the target axis with proportional
    lift control; the trigger fires once a conservative bound on the true
    clamp (or release) error is inside tolerance
"""
import heapq
import logging
import math
from collections import deque
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .config import EnvConfig, HeuristicGains, Settings
from .errors import NoPathError
from .geometry import Pose2D
from .planner import PlannerPhase, PlannerStatus
from .sensors import PoseError
from .sim import Action, WorldState, pick_pose

log = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
_MOVES = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1))


# ------------------------------- occupancy grid ----------------------------- #

@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    resolution: float
    occupied: np.ndarray  # (height, width) bool, indexed [iy, ix]

    @property
    def width(self) -> int:
        return self.occupied.shape[1]

    @property
    def height(self) -> int:
        return self.occupied.shape[0]

    def in_bounds(self, cell: tuple[int, int]) -> bool:
        ix, iy = cell
        return 0 <= ix < self.width and 0 <= iy < self.height

    def is_free(self, cell: tuple[int, int]) -> bool:
        return self.in_bounds(cell) and not self.occupied[cell[1], cell[0]]

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        ix = min(max(int(math.floor(x / self.resolution)), 0), self.width - 1)
        iy = min(max(int(math.floor(y / self.resolution)), 0), self.height - 1)
        return ix, iy

    def centre(self, cell: tuple[int, int]) -> tuple[float, float]:
        return (cell[0] + 0.5) * self.resolution, (cell[1] + 0.5) * self.resolution

    @classmethod
    def from_racks(cls, racks, arena: tuple[float, float], resolution: float, inflation: float) -> "OccupancyGrid":
        """Cells whose centre lies within `inflation` of any rack (walls included)."""
        nx = int(math.ceil(arena[0] / resolution))
        ny = int(math.ceil(arena[1] / resolution))
        xs = (np.arange(nx) + 0.5) * resolution
        ys = (np.arange(ny) + 0.5) * resolution
        occ = np.zeros((ny, nx), dtype=bool)
        for xmin, ymin, xmax, ymax in racks:
            dx = np.maximum.reduce([xmin - xs, np.zeros_like(xs), xs - xmax])
            dy = np.maximum.reduce([ymin - ys, np.zeros_like(ys), ys - ymax])
            occ |= np.hypot(dy[:, None], dx[None, :]) < inflation
        return cls(resolution, occ)


@lru_cache(maxsize=16)
def occupancy_grid(racks: tuple, arena: tuple[float, float], resolution: float, inflation: float) -> OccupancyGrid:
    log.debug("building occupancy grid res=%.2f inflation=%.2f", resolution, inflation)
    return OccupancyGrid.from_racks(racks, arena, resolution, inflation)


# ------------------------------- A* ----------------------------------------- #

def octile(a: tuple[int, int], b: tuple[int, int]) -> float:
    dx, dy = abs(a[0] - b[0]), abs(a[1] - b[1])
    return (dx + dy) + (SQRT2 - 2.0) * min(dx, dy)


def path_cost(path: list[tuple[int, int]]) -> float:
    return sum(math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(path, path[1:]))


def astar_plan(grid: OccupancyGrid, start: tuple[int, int], goal: tuple[int, int]) -> list[tuple[int, int]]:
    """
    Shortest 8-connected path from start to goal (both cells, inclusive).

    Diagonal moves may not cut a blocked corner. Ties in the open set break on
    (f, h, flat cell index) so the result is deterministic.
    """
    start, goal = tuple(start), tuple(goal)
    if not grid.is_free(start):
        raise NoPathError(f"start cell {start} is blocked or out of bounds")
    if not grid.is_free(goal):
        raise NoPathError(f"goal cell {goal} is blocked or out of bounds")

    w, h = grid.width, grid.height
    blocked = grid.occupied.ravel().tolist()

    def index(c):
        return c[1] * w + c[0]

    g_score = {start: 0.0}
    came_from = {}
    closed = set()
    h0 = octile(start, goal)
    open_set = [(h0, h0, index(start), start)]

    while open_set:
        _, _, _, current = heapq.heappop(open_set)
        if current in closed:
            continue
        if current == goal:
            path = [current]
            while current in came_from:
                current = came_from[current]
                path.append(current)
            return path[::-1]
        closed.add(current)
        cx, cy = current
        for sx, sy in _MOVES:
            nx, ny = cx + sx, cy + sy
            if not (0 <= nx < w and 0 <= ny < h) or blocked[ny * w + nx]:
                continue
            if sx and sy and (blocked[cy * w + nx] or blocked[ny * w + cx]):
                continue
            nb = (nx, ny)
            if nb in closed:
                continue
            tentative = g_score[current] + (SQRT2 if sx and sy else 1.0)
            if tentative < g_score.get(nb, math.inf):
                came_from[nb] = current
                g_score[nb] = tentative
                hn = octile(nb, goal)
                heapq.heappush(open_set, (tentative + hn, hn, ny * w + nx, nb))

    raise NoPathError(f"no path from {start} to {goal}")


def nearest_free(grid: OccupancyGrid, cell: tuple[int, int]) -> tuple[int, int]:
    """Breadth-first search outward from `cell` for the closest free cell."""
    cell = grid.cell_of(*grid.centre(cell))
    if grid.is_free(cell):
        return cell
    seen = {cell}
    queue = deque([cell])
    while queue:
        cx, cy = queue.popleft()
        for sx, sy in _MOVES:
            nb = (cx + sx, cy + sy)
            if nb in seen or not grid.in_bounds(nb):
                continue
            if grid.is_free(nb):
                return nb
            seen.add(nb)
            queue.append(nb)
    raise NoPathError("occupancy grid has no free cell")


# ------------------------------- tracking ----------------------------------- #

def pure_pursuit(pose: Pose2D, path: np.ndarray, lookahead: float, k_omega: float = 2.0,
                 v_max: float = 1.0, omega_max: float = 1.0) -> tuple[float, float]:
    """(v, omega) steering towards the first path point at least `lookahead` past the nearest one."""
    path = np.asarray(path, dtype=float).reshape(-1, 2)
    if len(path) == 0:
        raise ValueError("pure_pursuit needs a non-empty path")
    dist = np.hypot(path[:, 0] - pose.x, path[:, 1] - pose.y)
    nearest = int(np.argmin(dist))
    ahead = np.nonzero(dist[nearest:] >= lookahead)[0]
    target = path[nearest + ahead[0]] if len(ahead) else path[-1]

    d_end = float(dist[-1])
    if d_end < 1e-6:
        return 0.0, 0.0
    alpha = pose.bearing_to(target[0], target[1])
    omega = float(np.clip(k_omega * alpha, -omega_max, omega_max))
    v = v_max * max(0.0, math.cos(alpha)) * min(1.0, d_end / lookahead)
    return v, omega


@dataclass(frozen=True)
class ServoTolerance:
    """Trigger region: hypot(dx, dy) + lever * |dtheta| <= dist, |dtheta| <= heading, |dh| <= height."""
    dist: float
    heading: float
    height: float
    lever: float = 0.0

    def contains(self, err: PoseError) -> bool:
        return (math.hypot(err.dx, err.dy) + self.lever * abs(err.dtheta) <= self.dist
                and abs(err.dtheta) <= self.heading and abs(err.h) <= self.height)


def servo_align(err: PoseError, gains: HeuristicGains, tol: ServoTolerance) -> Action:
    """
    Proportional alignment to a target pose.

    `err` is the target expressed in the forklift frame (dx forward, dy left,
    dtheta heading offset) and err.h is the remaining fork height change. The
    forklift follows the line through the target along its heading, steering on
    a carrot `servo_lookahead` ahead of its projection and blending into pure
    heading alignment over the last lookahead distance.
    """
    h_dot = gains.k_h * err.h
    if tol.contains(err):
        return Action(0.0, 0.0, 0.0, True)
    c, s = math.cos(err.dtheta), math.sin(err.dtheta)
    remaining = err.dx * c + err.dy * s
    if remaining <= 0.0:
        v = max(gains.k_v * remaining, -gains.servo_v_max)
        return Action(v, gains.k_theta * err.dtheta, h_dot, False)

    along = min(gains.servo_lookahead - remaining, 0.0)
    px, py = err.dx + along * c, err.dy + along * s
    bearing = math.atan2(py, px) if math.hypot(px, py) > 1e-9 else 0.0
    w = min(1.0, remaining / gains.servo_lookahead)
    omega = gains.k_theta * (w * bearing + (1.0 - w) * err.dtheta)
    v = min(gains.k_v * remaining, gains.servo_v_max) * max(0.0, math.cos(bearing))
    return Action(v, omega, h_dot, False)


def pick_tolerance(env: EnvConfig, gains: HeuristicGains) -> ServoTolerance:
    m = gains.clamp_margin
    return ServoTolerance(m * env.clamp.d_clamp, m * env.clamp.theta_clamp, m * env.clamp.h_band,
                          lever=env.forklift.fork_reach)


def place_tolerance(env: EnvConfig, gains: HeuristicGains, carry_offset: Pose2D) -> ServoTolerance:
    lever = math.hypot(carry_offset.x, carry_offset.y) + env.w_ang
    return ServoTolerance(gains.release_tol, math.pi, gains.clamp_margin * env.clamp.h_band, lever=lever)


# ------------------------------- expert set --------------------------------- #

STALL_STEPS = 20
BACKOFF_DISTANCE = 0.8
BACKOFF_SPEED = 0.3
REPLAN_DEVIATION = 1.0


class HeuristicExperts:
    """
    Planner-driven rule-based controller. Keeps one path per (phase, retry)
    and restarts its memory whenever the episode clock goes backwards.
    """

    def __init__(self, settings: Settings):
        self.settings = settings
        self.env = settings.env
        self.gains = settings.heuristics
        self.reset()

    def reset(self) -> None:
        self._key = None
        self._path: np.ndarray | None = None
        self._last_t = -1
        self._stalled = 0
        self._backing_off = False

    def act(self, status: PlannerStatus, state: WorldState, rng: np.random.Generator | None = None) -> Action:
        if state.t <= self._last_t:
            self.reset()
        self._last_t = state.t
        phase = PlannerPhase(status.phase)
        key = (phase, status.retry_count)
        if key != self._key:
            self._key, self._path = key, None
            self._stalled, self._backing_off = 0, False

        if phase in (PlannerPhase.DEPARTURE, PlannerPhase.TRANSPORT):
            action = self._navigate(status.goal, state)
        elif phase == PlannerPhase.SEARCH_PICK:
            target = pick_pose(state.target_cargo().pose, self.env)
            action = self._servo(state, target, self.env.pick_height, pick_tolerance(self.env, self.gains))
        elif phase == PlannerPhase.PLACEMENT and state.carry_offset is not None:
            target = state.goal_slot.pose.compose(state.carry_offset.inverse())
            tol = place_tolerance(self.env, self.gains, state.carry_offset)
            action = self._servo(state, target, self.env.slot_height, tol)
        else:
            action = Action()
        return action.clipped(self.env)

    # navigation

    def grid_for(self, state: WorldState) -> OccupancyGrid:
        loaded = state.forklift.carrying is not None
        inflation = self.gains.loaded_inflation if loaded else self.gains.inflation
        return occupancy_grid(tuple(state.racks), tuple(self.env.arena), self.gains.grid_resolution, inflation)

    def _plan(self, state: WorldState, goal: Pose2D) -> np.ndarray:
        grid = self.grid_for(state)
        pose = state.forklift.pose
        try:
            start = nearest_free(grid, grid.cell_of(pose.x, pose.y))
            cells = astar_plan(grid, start, nearest_free(grid, grid.cell_of(goal.x, goal.y)))
        except NoPathError as e:
            log.warning("t=%d no path to %s: %s", state.t, goal.as_list(), e)
            return np.zeros((0, 2))
        pts = np.array([grid.centre(c) for c in cells] + [(goal.x, goal.y)])
        log.debug("t=%d planned %d cells to %s", state.t, len(cells), goal.as_list())
        return pts

    def _navigate(self, goal: Pose2D | None, state: WorldState) -> Action:
        if goal is None:
            return Action()
        pose = state.forklift.pose
        if self._path is not None and len(self._path):
            deviation = np.min(np.hypot(self._path[:, 0] - pose.x, self._path[:, 1] - pose.y))
            if deviation > REPLAN_DEVIATION:
                self._path = None
        if self._path is None:
            self._path = self._plan(state, goal)
        if not len(self._path):
            return Action()
        fk = self.env.forklift
        v, omega = pure_pursuit(pose, self._path, self.gains.lookahead, self.gains.k_omega,
                                fk.v_max, fk.omega_max)
        return Action(v, omega, 0.0, False)

    # manipulation

    def _servo(self, state: WorldState, target: Pose2D, h_target: float, tol: ServoTolerance) -> Action:
        fk = state.forklift
        rel = target.relative_to(fk.pose)
        err = PoseError(rel.x, rel.y, rel.theta, h_target - fk.h)
        if self._backing_off:
            remaining = rel.x * math.cos(rel.theta) + rel.y * math.sin(rel.theta)
            if remaining < BACKOFF_DISTANCE:
                return Action(-BACKOFF_SPEED, self.gains.k_theta * rel.theta, self.gains.k_h * err.h, False)
            self._backing_off = False
            log.debug("t=%d back-off complete, re-approaching", state.t)

        action = servo_align(err, self.gains, tol)
        idle = abs(action.v_cmd) < 0.01 and abs(action.omega_cmd) < 0.01 and abs(action.h_dot) < 0.005
        self._stalled = self._stalled + 1 if idle and not action.clamp_trigger else 0
        if self._stalled > STALL_STEPS:
            log.debug("t=%d servo stalled outside tolerance, backing off", state.t)
            self._stalled, self._backing_off = 0, True
        return action
