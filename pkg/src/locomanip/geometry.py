"""Frames, depth lifting, ground projection, and occupancy-grid construction.

Conventions used throughout the toolkit:

* base frame: x forward, y left, z up, z = 0 on the ground plane under the
  robot; all planners work here.
* camera frame: x right, y down, z along the optical axis (pinhole, no
  distortion); neck pitch is positive looking down.
* occupancy grids are axis-aligned in their origin frame; a point belongs to
  the cell of its floor-divided index, so boundary points tie-break towards
  the lower cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, InvalidTargetDepth


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    return ((a - math.pi) % (-2.0 * math.pi)) + math.pi


@dataclass(frozen=True)
class Vec3:
    """A 3D point/vector in meters."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError(f"Vec3 components must be finite, got {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def from_array(cls, a) -> "Vec3":
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class Pose2D:
    """Planar pose (x, y, yaw); yaw stored normalized to (-pi, pi]."""

    x: float
    y: float
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def transform_to_world(self, xy: np.ndarray) -> np.ndarray:
        """Map points (N,2) from this pose's local frame to the parent frame."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return np.atleast_2d(xy) @ rot.T + np.array([self.x, self.y])

    def transform_to_local(self, xy: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return (np.atleast_2d(xy) - np.array([self.x, self.y])) @ rot


@dataclass(frozen=True)
class CameraIntrinsics:
    """Ideal pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Row-major metric depth; non-positive values mark invalid pixels."""

    values: np.ndarray  # shape (height, width), meters

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("depth values must be a 2D array")
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_flat(cls, data, width: int, height: int) -> "DepthImage":
        a = np.asarray(data, dtype=float)
        if a.size != width * height:
            raise ValueError(
                f"data length {a.size} does not equal width*height {width * height}"
            )
        return cls(a.reshape(height, width))

    def at(self, u: int, v: int) -> float:
        """Depth at pixel column u, row v."""
        return float(self.values[v, u])


# Fixed axis remap from camera (x right, y down, z forward) to base
# (x forward, y left, z up) at zero neck pitch/yaw.
_R_CAM_TO_BASE0 = np.array([
    [0.0, 0.0, 1.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
])


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CameraPose:
    """Camera mounted on a 2-DoF neck above a planar base.

    `position` is the optical center in the base frame. `pitch` is positive
    looking down, `yaw` positive turning left (about base z). `base_pose` and
    `base_height` locate the base in the world for world-frame queries.
    """

    position: Vec3
    pitch: float
    yaw: float
    base_pose: Pose2D
    base_height: float

    def rotation_to_base(self) -> np.ndarray:
        """3x3 rotation taking camera-frame vectors to the base frame."""
        return _rot_z(self.yaw) @ _rot_y(self.pitch) @ _R_CAM_TO_BASE0

    def cam_to_base(self, pts: np.ndarray) -> np.ndarray:
        """Transform camera-frame points (N,3) or (3,) to the base frame."""
        rot = self.rotation_to_base()
        p = np.atleast_2d(np.asarray(pts, dtype=float))
        out = p @ rot.T + self.position.as_array()
        return out[0] if np.asarray(pts).ndim == 1 else out

    def base_to_cam(self, pts: np.ndarray) -> np.ndarray:
        rot = self.rotation_to_base()
        p = np.atleast_2d(np.asarray(pts, dtype=float))
        out = (p - self.position.as_array()) @ rot
        return out[0] if np.asarray(pts).ndim == 1 else out

    def base_to_world(self, pts: np.ndarray) -> np.ndarray:
        """Transform base-frame points (N,3) or (3,) to the world frame."""
        p = np.atleast_2d(np.asarray(pts, dtype=float))
        xy = self.base_pose.transform_to_world(p[:, :2])
        out = np.column_stack([xy, p[:, 2]])
        return out[0] if np.asarray(pts).ndim == 1 else out

    def world_to_base(self, pts: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(pts, dtype=float))
        xy = self.base_pose.transform_to_local(p[:, :2])
        out = np.column_stack([xy, p[:, 2]])
        return out[0] if np.asarray(pts).ndim == 1 else out


class GridIndex(NamedTuple):
    """Integer cell coordinates: i along grid x, j along grid y."""

    i: int
    j: int


class Bounds(NamedTuple):
    """Axis-aligned ground rectangle in meters."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float


@dataclass(eq=False)
class OccupancyGrid:
    """Binary ground-plane occupancy, cells indexed [i, j] with i along x."""

    cell_size: float
    origin: Pose2D
    cols: int
    rows: int
    cells: np.ndarray  # bool, shape (cols, rows)

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell size must be positive")
        c = np.asarray(self.cells, dtype=bool)
        if c.shape != (self.cols, self.rows):
            raise ValueError(
                f"cells shape {c.shape} does not match (cols, rows)="
                f"({self.cols}, {self.rows})"
            )
        self.cells = c

    @classmethod
    def empty(cls, cell_size: float, origin: Pose2D, cols: int, rows: int) -> "OccupancyGrid":
        return cls(cell_size, origin, cols, rows,
                   np.zeros((cols, rows), dtype=bool))

    def index_of(self, x: float, y: float) -> GridIndex:
        """Cell containing (x, y); floor-divided, may be out of bounds."""
        local = self.origin.transform_to_local(np.array([[x, y]]))[0]
        return GridIndex(int(math.floor(local[0] / self.cell_size)),
                         int(math.floor(local[1] / self.cell_size)))

    def center_of(self, idx: GridIndex) -> tuple[float, float]:
        local = np.array([[(idx.i + 0.5) * self.cell_size,
                           (idx.j + 0.5) * self.cell_size]])
        x, y = self.origin.transform_to_world(local)[0]
        return float(x), float(y)

    def in_bounds(self, idx: GridIndex) -> bool:
        return 0 <= idx.i < self.cols and 0 <= idx.j < self.rows

    def is_occupied(self, idx: GridIndex) -> bool:
        return bool(self.cells[idx.i, idx.j])

    def occupied_count(self) -> int:
        return int(self.cells.sum())

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.cell_size, self.origin, self.cols, self.rows,
                             self.cells.copy())


def backproject_pixel(u: float, v: float, depth: float,
                      intr: CameraIntrinsics) -> np.ndarray:
    """Pinhole backprojection of one pixel to the camera frame."""
    return np.array([
        (u - intr.cx) * depth / intr.fx,
        (v - intr.cy) * depth / intr.fy,
        depth,
    ])


def lift_depth(depth: DepthImage, intr: CameraIntrinsics,
               cam: CameraPose) -> np.ndarray:
    """Lift a depth map to a base-frame point set, one row per valid pixel.

    Returns an (N, 3) array ordered row-major over valid pixels. Pixels with
    non-positive depth are skipped.
    """
    if (depth.width, depth.height) != (intr.width, intr.height):
        raise DimensionError(
            f"depth {depth.width}x{depth.height} does not match intrinsics "
            f"{intr.width}x{intr.height}"
        )
    z = depth.values
    valid = z > 0.0
    if not valid.any():
        return np.zeros((0, 3))
    vs, us = np.nonzero(valid)
    zz = z[vs, us]
    pts_cam = np.column_stack([
        (us - intr.cx) * zz / intr.fx,
        (vs - intr.cy) * zz / intr.fy,
        zz,
    ])
    return cam.cam_to_base(pts_cam)


def build_grid(points: np.ndarray, cell_size: float, height_thresh: float,
               bounds: Bounds) -> OccupancyGrid:
    """Occupancy grid over `bounds`: a cell is occupied iff it contains a
    point with z above `height_thresh`. Points outside the bounds are ignored.
    """
    if cell_size <= 0:
        raise ValueError("cell size must be positive")
    if bounds.x_max <= bounds.x_min or bounds.y_max <= bounds.y_min:
        raise ValueError(f"degenerate bounds {bounds}")
    cols = int(math.ceil((bounds.x_max - bounds.x_min) / cell_size))
    rows = int(math.ceil((bounds.y_max - bounds.y_min) / cell_size))
    grid = OccupancyGrid.empty(cell_size, Pose2D(bounds.x_min, bounds.y_min), cols, rows)
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0:
        return grid
    above = pts[pts[:, 2] > height_thresh]
    if above.shape[0] == 0:
        return grid
    i = np.floor((above[:, 0] - bounds.x_min) / cell_size).astype(int)
    j = np.floor((above[:, 1] - bounds.y_min) / cell_size).astype(int)
    keep = (i >= 0) & (i < cols) & (j >= 0) & (j < rows)
    grid.cells[i[keep], j[keep]] = True
    return grid


def lift_pixel(u: tuple[int, int], depth: DepthImage, intr: CameraIntrinsics,
               cam: CameraPose, grid: OccupancyGrid | None = None
               ) -> tuple[Vec3, GridIndex | None]:
    """Lift one pixel (col, row) to a base-frame point and, when a grid is
    supplied, its containing cell."""
    col, row = int(u[0]), int(u[1])
    if (depth.width, depth.height) != (intr.width, intr.height):
        raise DimensionError("depth dimensions do not match intrinsics")
    if not (0 <= col < depth.width and 0 <= row < depth.height):
        raise ValueError(f"pixel {u} outside {depth.width}x{depth.height} image")
    z = depth.at(col, row)
    if z <= 0.0:
        raise InvalidTargetDepth(f"no valid depth at pixel ({col}, {row})")
    point = Vec3.from_array(cam.cam_to_base(backproject_pixel(col, row, z, intr)))
    idx = grid.index_of(point.x, point.y) if grid is not None else None
    return point, idx


def project_point(p_base: np.ndarray, intr: CameraIntrinsics,
                  cam: CameraPose) -> tuple[float, float] | None:
    """Project a base-frame point to pixel coordinates; None if behind the
    camera or outside the image."""
    p_cam = cam.base_to_cam(np.asarray(p_base, dtype=float))
    if p_cam[2] <= 1e-9:
        return None
    u = intr.fx * p_cam[0] / p_cam[2] + intr.cx
    v = intr.fy * p_cam[1] / p_cam[2] + intr.cy
    if not (0 <= u < intr.width and 0 <= v < intr.height):
        return None
    return float(u), float(v)
