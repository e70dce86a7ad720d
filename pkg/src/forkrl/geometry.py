"""
Planar geometry shared by the simulator, the sensors and the heuristic stack.

Conventions:
  - angles are radians wrapped to (-pi, pi]
  - rectangles (racks, walls) are axis-aligned [xmin, ymin, xmax, ymax]
  - oriented boxes (forklift body, cargo) are (pose, half_length, half_width),
    length measured along the heading
  - ray helpers are vectorized over N rays and return +inf where nothing is hit
"""
import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    w = math.remainder(a, TWO_PI)
    return math.pi if w <= -math.pi else w


def wrap_angles(a: np.ndarray) -> np.ndarray:
    w = np.remainder(np.asarray(a, dtype=float) + math.pi, TWO_PI) - math.pi
    return np.where(w <= -math.pi, math.pi, w)


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'x', float(self.x))
        object.__setattr__(self, 'y', float(self.y))
        object.__setattr__(self, 'theta', wrap_angle(float(self.theta)))

    def compose(self, local: "Pose2D") -> "Pose2D":
        """World pose of `local`, expressed in this pose's frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2D(self.x + c * local.x - s * local.y,
                      self.y + s * local.x + c * local.y,
                      self.theta + local.theta)

    def relative_to(self, frame: "Pose2D") -> "Pose2D":
        """This pose expressed in `frame`'s coordinates."""
        c, s = math.cos(frame.theta), math.sin(frame.theta)
        dx, dy = self.x - frame.x, self.y - frame.y
        return Pose2D(c * dx + s * dy, -s * dx + c * dy, self.theta - frame.theta)

    def inverse(self) -> "Pose2D":
        return Pose2D(0.0, 0.0, 0.0).relative_to(self)

    def advance(self, distance: float) -> "Pose2D":
        return Pose2D(self.x + distance * math.cos(self.theta),
                      self.y + distance * math.sin(self.theta), self.theta)

    def distance_to(self, other: "Pose2D") -> float:
        return math.hypot(other.x - self.x, other.y - self.y)

    def bearing_to(self, x: float, y: float) -> float:
        return wrap_angle(math.atan2(y - self.y, x - self.x) - self.theta)

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.theta]

    @classmethod
    def from_seq(cls, v) -> "Pose2D":
        return cls(float(v[0]), float(v[1]), float(v[2]))


# ------------------------------- overlap tests ------------------------------ #

def obb_corners(pose: Pose2D, half_length: float, half_width: float) -> np.ndarray:
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    local = np.array([[half_length, half_width], [half_length, -half_width],
                      [-half_length, -half_width], [-half_length, half_width]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([pose.x, pose.y])


def obb_overlaps_aabb(pose: Pose2D, half_length: float, half_width: float, rect) -> bool:
    """Separating-axis test; touching boundaries do not count as overlap."""
    corners = obb_corners(pose, half_length, half_width)
    xmin, ymin, xmax, ymax = rect
    if corners[:, 0].max() <= xmin or corners[:, 0].min() >= xmax:
        return False
    if corners[:, 1].max() <= ymin or corners[:, 1].min() >= ymax:
        return False
    rect_pts = np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]])
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    for axis, half in ((np.array([c, s]), half_length), (np.array([-s, c]), half_width)):
        centre = axis @ np.array([pose.x, pose.y])
        proj = rect_pts @ axis
        if proj.max() <= centre - half or proj.min() >= centre + half:
            return False
    return True


def obb_overlaps_circle(pose: Pose2D, half_length: float, half_width: float,
                        cx: float, cy: float, radius: float) -> bool:
    local = Pose2D(cx, cy).relative_to(pose)
    nx = min(max(local.x, -half_length), half_length)
    ny = min(max(local.y, -half_width), half_width)
    return math.hypot(local.x - nx, local.y - ny) < radius


def point_rect_distance(x: float, y: float, rect) -> float:
    xmin, ymin, xmax, ymax = rect
    dx = max(xmin - x, 0.0, x - xmax)
    dy = max(ymin - y, 0.0, y - ymax)
    return math.hypot(dx, dy)


# ------------------------------- point membership --------------------------- #

def points_in_aabbs(px: np.ndarray, py: np.ndarray, rects: np.ndarray) -> np.ndarray:
    if len(rects) == 0:
        return np.zeros(np.shape(px), dtype=bool)
    px, py = px[..., None], py[..., None]
    inside = (px >= rects[:, 0]) & (px <= rects[:, 2]) & (py >= rects[:, 1]) & (py <= rects[:, 3])
    return inside.any(axis=-1)


def points_in_circles(px: np.ndarray, py: np.ndarray, circles: np.ndarray) -> np.ndarray:
    if len(circles) == 0:
        return np.zeros(np.shape(px), dtype=bool)
    dx = px[..., None] - circles[:, 0]
    dy = py[..., None] - circles[:, 1]
    return (dx * dx + dy * dy <= circles[:, 2] ** 2).any(axis=-1)


def points_in_obbs(px: np.ndarray, py: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """boxes: rows of (x, y, theta, half_length, half_width)."""
    if len(boxes) == 0:
        return np.zeros(np.shape(px), dtype=bool)
    dx = px[..., None] - boxes[:, 0]
    dy = py[..., None] - boxes[:, 1]
    c, s = np.cos(boxes[:, 2]), np.sin(boxes[:, 2])
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    return ((np.abs(lx) <= boxes[:, 3]) & (np.abs(ly) <= boxes[:, 4])).any(axis=-1)


# ------------------------------- ray casting -------------------------------- #

def _axis_interval(o, d, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Entry and exit parameters along one axis; a parallel ray is inside forever or never."""
    parallel = np.abs(d) < 1e-12
    step = np.where(parallel, 1.0, d)
    t1, t2 = (lo - o) / step, (hi - o) / step
    inside = (o >= lo) & (o <= hi)
    near = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    far = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    return near, far


def _slab(ox, oy, dx, dy, xmin, ymin, xmax, ymax) -> np.ndarray:
    nx, fx = _axis_interval(ox, dx, xmin, xmax)
    ny, fy = _axis_interval(oy, dy, ymin, ymax)
    t_near = np.maximum(nx, ny)
    hit = np.minimum(fx, fy) >= np.maximum(t_near, 0.0)
    return np.where(hit, np.maximum(t_near, 0.0), np.inf)


def ray_aabbs(ox: float, oy: float, dirs: np.ndarray, rects: np.ndarray) -> np.ndarray:
    if len(rects) == 0:
        return np.full(len(dirs), np.inf)
    t = _slab(ox, oy, dirs[:, :1], dirs[:, 1:], rects[:, 0], rects[:, 1], rects[:, 2], rects[:, 3])
    return t.min(axis=1)


def ray_circles(ox: float, oy: float, dirs: np.ndarray, circles: np.ndarray) -> np.ndarray:
    if len(circles) == 0:
        return np.full(len(dirs), np.inf)
    fx = ox - circles[:, 0]
    fy = oy - circles[:, 1]
    b = dirs[:, :1] * fx + dirs[:, 1:] * fy
    c = fx * fx + fy * fy - circles[:, 2] ** 2
    disc = b * b - c
    with np.errstate(invalid='ignore'):
        t = -b - np.sqrt(disc)
    t = np.where((disc >= 0) & (t >= 0), t, np.inf)
    t = np.where(c <= 0, 0.0, t)
    return t.min(axis=1)


def ray_obbs(ox: float, oy: float, dirs: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    if len(boxes) == 0:
        return np.full(len(dirs), np.inf)
    c, s = np.cos(boxes[:, 2]), np.sin(boxes[:, 2])
    rx, ry = ox - boxes[:, 0], oy - boxes[:, 1]
    lox, loy = c * rx + s * ry, -s * rx + c * ry
    ldx = c * dirs[:, :1] + s * dirs[:, 1:]
    ldy = -s * dirs[:, :1] + c * dirs[:, 1:]
    hl, hw = boxes[:, 3], boxes[:, 4]
    t = _slab(lox, loy, ldx, ldy, -hl, -hw, hl, hw)
    return t.min(axis=1)
