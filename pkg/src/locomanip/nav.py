"""Long-range navigation: A* over the occupancy grid, RDP simplification,
and closed-loop waypoint tracking emitting base commands.

Grid path costs are tracked as exact (straight, diagonal) step counts so the
float cost 1*straights + sqrt(2)*diagonals is reproducible and comparable
against an independent shortest-path oracle without accumulation error.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import InvalidEndpoint, NoPathError
from .geometry import (
    Bounds,
    CameraIntrinsics,
    CameraPose,
    DepthImage,
    GridIndex,
    OccupancyGrid,
    build_grid,
    lift_depth,
    lift_pixel,
    wrap_angle,
)

_SQRT2 = math.sqrt(2.0)

# WaypointSequence: (N, 2) float array of planar points, start to goal.
WaypointSequence = np.ndarray


@dataclass(frozen=True)
class BaseCommand:
    """Locomotion command: forward velocity, yaw rate, target base height."""

    v_x: float
    omega_y: float
    h: float


@dataclass(frozen=True)
class BaseLimits:
    v_max: float = 0.8
    omega_max: float = 1.5
    h_min: float = 0.42
    h_max: float = 0.80

    def clamp(self, cmd: BaseCommand) -> BaseCommand:
        return BaseCommand(
            float(np.clip(cmd.v_x, -self.v_max, self.v_max)),
            float(np.clip(cmd.omega_y, -self.omega_max, self.omega_max)),
            float(np.clip(cmd.h, self.h_min, self.h_max)),
        )


@dataclass(frozen=True)
class NavParams:
    """Scenario-configurable navigation parameters ("nav" section)."""

    cell_size: float = 0.05
    height_thresh: float = 0.10
    robot_radius: float = 0.30
    safety_margin: float = 0.15
    rdp_epsilon: float = 0.075  # 1.5 * cell_size
    goal_clear_cells: int = 2
    k_v: float = 0.8
    k_omega: float = 1.5
    theta_gate: float = 0.5
    r_arrive: float = 0.10
    bounds_pad: float = 0.60
    route_margin: float = 2.5  # lateral detour room around origin and goal
    limits: BaseLimits = field(default_factory=BaseLimits)

    @property
    def inflate_radius(self) -> float:
        return self.robot_radius + self.safety_margin

    @classmethod
    def from_dict(cls, d: dict) -> "NavParams":
        d = dict(d)
        lim = d.pop("limits", None)
        params = cls(**d) if d else cls()
        if lim:
            params = replace(params, limits=BaseLimits(**lim))
        return params


@dataclass(frozen=True)
class GridPath:
    """8-connected, collision-free cell path with exact step counts."""

    cells: tuple[GridIndex, ...]
    straights: int
    diagonals: int

    @property
    def cost(self) -> float:
        return self.straights + self.diagonals * _SQRT2


def _neighbors(grid: OccupancyGrid, idx: GridIndex):
    """8-connected successors; diagonal steps are blocked when either
    orthogonal neighbor is occupied (no corner cutting)."""
    occ = grid.cells
    cols, rows = grid.cols, grid.rows
    i, j = idx
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        ni, nj = i + di, j + dj
        if 0 <= ni < cols and 0 <= nj < rows and not occ[ni, nj]:
            yield GridIndex(ni, nj), False
    for di, dj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        ni, nj = i + di, j + dj
        if not (0 <= ni < cols and 0 <= nj < rows) or occ[ni, nj]:
            continue
        if occ[i + di, j] or occ[i, j + dj]:
            continue
        yield GridIndex(ni, nj), True


def _octile(a: GridIndex, b: GridIndex) -> float:
    di, dj = abs(a.i - b.i), abs(a.j - b.j)
    return abs(di - dj) + min(di, dj) * _SQRT2


def astar(grid: OccupancyGrid, start: GridIndex, goal: GridIndex) -> GridPath:
    """Minimum-cost 8-connected path (straight 1, diagonal sqrt(2)) with an
    octile heuristic.

    Raises InvalidEndpoint for out-of-bounds/occupied endpoints and
    NoPathError when start and goal are disconnected.
    """
    start, goal = GridIndex(*start), GridIndex(*goal)
    for name, idx in (("start", start), ("goal", goal)):
        if not grid.in_bounds(idx):
            raise InvalidEndpoint(f"{name} {idx} out of bounds")
        if grid.is_occupied(idx):
            raise InvalidEndpoint(f"{name} {idx} is occupied")

    g_best: dict[GridIndex, tuple[int, int]] = {start: (0, 0)}
    came: dict[GridIndex, GridIndex] = {}
    counter = 0
    open_heap = [(_octile(start, goal), counter, start, (0, 0))]
    closed: set[GridIndex] = set()

    while open_heap:
        _, _, cur, (s, d) = heapq.heappop(open_heap)
        if cur in closed:
            continue
        closed.add(cur)
        if cur == goal:
            cells = [cur]
            while cur != start:
                cur = came[cur]
                cells.append(cur)
            cells.reverse()
            return GridPath(tuple(cells), s, d)
        for nxt, diag in _neighbors(grid, cur):
            if nxt in closed:
                continue
            ng = (s, d + 1) if diag else (s + 1, d)
            ng_val = ng[0] + ng[1] * _SQRT2
            prev = g_best.get(nxt)
            if prev is not None and prev[0] + prev[1] * _SQRT2 <= ng_val:
                continue
            g_best[nxt] = ng
            came[nxt] = cur
            counter += 1
            heapq.heappush(open_heap, (ng_val + _octile(nxt, goal), counter, nxt, ng))
    raise NoPathError(f"no path from {start} to {goal}")


def _point_segment_dist(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return float(np.hypot(*(p - a)))
    t = float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.hypot(*(p - (a + t * ab))))


def rdp_simplify(points: np.ndarray, epsilon: float) -> np.ndarray:
    """Ramer-Douglas-Peucker polyline simplification.

    Keeps a subset of the input including both endpoints; every removed point
    lies within `epsilon` of the segment joining its bracketing survivors
    (point-to-segment distance, so the guarantee holds for the polyline too).
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if pts.shape[0] < 2:
        raise ValueError("need at least two points")
    keep = np.zeros(pts.shape[0], dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, pts.shape[0] - 1)]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        a, b = pts[lo], pts[hi]
        best, best_k = -1.0, -1
        for k in range(lo + 1, hi):
            dist = _point_segment_dist(pts[k], a, b)
            if dist > best:
                best, best_k = dist, k
        if best > epsilon:
            keep[best_k] = True
            stack.append((lo, best_k))
            stack.append((best_k, hi))
    return pts[keep]


@dataclass(frozen=True)
class TrackStep:
    command: BaseCommand
    active_index: int
    finished: bool


def track_step(pose, waypoints: WaypointSequence, active_index: int,
               h_nominal: float, params: NavParams | None = None) -> TrackStep:
    """One proportional-control tick toward the active waypoint.

    Yaw rate is k_omega * heading error; forward speed is k_v * distance,
    gated to zero while |heading error| > theta_gate; waypoints advance once
    the pose is within r_arrive. Commands respect the configured limits.
    """
    p = params or NavParams()
    wps = np.asarray(waypoints, dtype=float).reshape(-1, 2)
    n = wps.shape[0]
    if not (0 <= active_index <= n):
        raise ValueError(f"active_index {active_index} invalid for {n} waypoints")
    idx = active_index
    while idx < n and math.hypot(wps[idx, 0] - pose.x, wps[idx, 1] - pose.y) <= p.r_arrive:
        idx += 1
    if idx >= n:
        cmd = p.limits.clamp(BaseCommand(0.0, 0.0, h_nominal))
        return TrackStep(cmd, n, True)
    dx, dy = wps[idx, 0] - pose.x, wps[idx, 1] - pose.y
    dist = math.hypot(dx, dy)
    err = wrap_angle(math.atan2(dy, dx) - pose.yaw)
    omega = p.k_omega * err
    v = 0.0 if abs(err) > p.theta_gate else p.k_v * dist
    cmd = p.limits.clamp(BaseCommand(v, omega, h_nominal))
    return TrackStep(cmd, idx, False)


def inflate_grid(grid: OccupancyGrid, radius: float) -> OccupancyGrid:
    """Dilate occupancy by a disk of metric `radius` (in cell-center metric):
    a cell becomes occupied iff some occupied cell center lies within
    `radius` of its center."""
    out = grid.copy()
    if radius < grid.cell_size or grid.occupied_count() == 0:
        return out
    dist = ndimage.distance_transform_edt(~grid.cells,
                                          sampling=grid.cell_size)
    out.cells = dist <= radius
    return out


def clear_disk(grid: OccupancyGrid, center: GridIndex, cells_radius: int) -> None:
    """In-place: free all cells within `cells_radius` cells of `center`."""
    for di in range(-cells_radius, cells_radius + 1):
        for dj in range(-cells_radius, cells_radius + 1):
            if di * di + dj * dj > cells_radius * cells_radius:
                continue
            idx = GridIndex(center.i + di, center.j + dj)
            if grid.in_bounds(idx):
                grid.cells[idx.i, idx.j] = False


def plan_navigation(depth: DepthImage, intr: CameraIntrinsics, cam: CameraPose,
                    u_target: tuple[int, int],
                    params: NavParams | None = None) -> WaypointSequence:
    """Full pipeline: lift depth, build and inflate the grid, clear the goal
    disk (the target's own points otherwise occupy the goal cell), run A*
    from the robot origin, and RDP-simplify the cell-center polyline.

    Returns base-frame waypoints ending at the goal cell center. The robot's
    own cell is treated as free: inflation from nearby returns cannot block
    the cell the robot is already standing on.
    """
    p = params or NavParams()
    points = lift_depth(depth, intr, cam)
    target, _ = lift_pixel(u_target, depth, intr, cam)
    # Grid covers the origin-to-goal route box with detour margin; far-away
    # returns (distant ground, walls off-route) are irrelevant to the plan.
    pad = p.inflate_radius + p.bounds_pad + p.route_margin
    bounds = Bounds(min(0.0, target.x) - pad, min(0.0, target.y) - pad,
                    max(0.0, target.x) + pad, max(0.0, target.y) + pad)
    grid = build_grid(points, p.cell_size, p.height_thresh, bounds)
    planning = inflate_grid(grid, p.inflate_radius)
    goal_idx = planning.index_of(target.x, target.y)
    start_idx = planning.index_of(0.0, 0.0)
    clear_disk(planning, goal_idx, p.goal_clear_cells)
    clear_disk(planning, start_idx, 1)
    path = astar(planning, start_idx, goal_idx)
    centers = np.array([planning.center_of(c) for c in path.cells])
    return rdp_simplify(centers, p.rdp_epsilon)
