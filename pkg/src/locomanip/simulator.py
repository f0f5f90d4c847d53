"""Deterministic 2.5D kinematic world: per-pixel ray/box depth rendering,
exact-arc base integration, rate-limited joint tracking, collision latching,
and the ground-truth grasp check.

Base integration uses the closed-form unicycle arc over each dt (not forward
Euler): constant-command circles then close exactly, and straight-line
segments integrate without drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .brain import Feedback, ViewpointAdjust
from .geometry import CameraPose, DepthImage, Pose2D, Vec3, project_point
from .kinematics import default_arm, default_hand, neutral_arm_pose
from .nav import BaseCommand
from .reach import fit_offset_model
from .scenario import Box, Scenario


@dataclass
class SimState:
    tick: int = 0
    base: Pose2D = field(default_factory=lambda: Pose2D(0.0, 0.0, 0.0))
    height: float = 0.72
    neck_pitch: float = 0.35
    neck_yaw: float = 0.0
    arm_q: np.ndarray = field(default_factory=neutral_arm_pose)
    hand_q: np.ndarray = field(default_factory=lambda: np.zeros(6))
    object_positions: dict = field(default_factory=dict)
    attached: str | None = None
    attach_offset: np.ndarray | None = None
    manipulation_target: str | None = None
    collided: bool = False
    grasp_attempts: int = 0
    sim_steps: int = 0


@dataclass(frozen=True)
class ArmCommand:
    targets: np.ndarray


@dataclass(frozen=True)
class HandCommand:
    targets: np.ndarray


@dataclass(frozen=True)
class NeckCommand:
    pitch: float
    yaw: float


class Simulator:
    """One scenario's isolated state machine."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.params = scenario.sim
        self.arm = default_arm()
        self.hand = default_hand()
        self.leg = scenario.leg
        self.z0 = scenario.start_height
        self.offset_model = fit_offset_model(self.leg, self.z0,
                                             scenario.reach.offset_samples)
        self.state = SimState(
            base=scenario.robot_start,
            height=scenario.start_height,
            neck_pitch=self.params.default_neck_pitch,
            object_positions={o.id: o.position_array.copy()
                              for o in scenario.all_objects()},
        )
        self._check_collisions()

    # ---------------------------------------------------------------- frames

    def camera_pose(self) -> CameraPose:
        s = self.state
        return CameraPose(
            position=Vec3(self.params.mount_forward, 0.0,
                          s.height + self.params.mount_up),
            pitch=s.neck_pitch,
            yaw=s.neck_yaw,
            base_pose=s.base,
            base_height=s.height,
        )

    def shoulder_base(self) -> np.ndarray:
        """Shoulder position in the (ground-anchored) base frame."""
        h = self.state.height
        return np.array([self.leg.shoulder_forward(h), 0.0,
                         self.leg.shoulder_above_ground(h)])

    def shoulder_world(self) -> np.ndarray:
        sb = self.shoulder_base()
        xy = self.state.base.transform_to_world(sb[None, :2])[0]
        return np.array([xy[0], xy[1], sb[2]])

    def base_to_world(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        xy = self.state.base.transform_to_world(p[None, :2])[0]
        return np.array([xy[0], xy[1], p[2]])

    def world_to_base(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        xy = self.state.base.transform_to_local(p[None, :2])[0]
        return np.array([xy[0], xy[1], p[2]])

    def world_to_shoulder(self, p: np.ndarray) -> np.ndarray:
        return self.world_to_base(p) - self.shoulder_base()

    def shoulder_to_world(self, p: np.ndarray) -> np.ndarray:
        return self.base_to_world(np.asarray(p, dtype=float) + self.shoulder_base())

    def ee_world(self) -> np.ndarray:
        pos, _ = self.arm.fk(self.state.arm_q)
        return self.shoulder_to_world(pos)

    def ee_pose_world(self):
        """(position, Rotation) of the end-effector in the world frame."""
        from scipy.spatial.transform import Rotation

        pos, rot = self.arm.fk(self.state.arm_q)
        yaw = Rotation.from_euler("z", self.state.base.yaw)
        return self.shoulder_to_world(pos), yaw * rot

    # ------------------------------------------------------------- rendering

    def _render_boxes(self) -> list[Box]:
        boxes = list(self.scenario.boxes)
        for obj in self.scenario.all_objects():
            pos = self.state.object_positions[obj.id]
            boxes.append(obj.as_box(pos))
        return boxes

    def render_depth(self) -> DepthImage:
        """Nearest-hit z-depth per pixel: scene boxes, objects at their
        current positions, and the ground plane; misses are invalid (0)."""
        intr = self.scenario.intrinsics
        cam = self.camera_pose()
        rot = cam.rotation_to_base()
        us, vs = np.meshgrid(np.arange(intr.width), np.arange(intr.height))
        dirs_cam = np.stack([(us - intr.cx) / intr.fx,
                             (vs - intr.cy) / intr.fy,
                             np.ones_like(us, dtype=float)], axis=-1)
        dirs_base = dirs_cam @ rot.T
        yaw = self.state.base.yaw
        c, s = math.cos(yaw), math.sin(yaw)
        rot_w = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        dirs = dirs_base @ rot_w.T
        origin_base = cam.position.as_array()
        origin = self.base_to_world(origin_base)

        eps = 1e-9
        t_best = np.full(us.shape, np.inf)
        # Ground plane z = 0.
        dz = dirs[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_ground = np.where(dz < -eps, -origin[2] / dz, np.inf)
        t_best = np.minimum(t_best, np.where(t_ground > eps, t_ground, np.inf))
        # Axis-aligned boxes, slab method.
        for box in self._render_boxes():
            lo = box.center_array - box.half
            hi = box.center_array + box.half
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = 1.0 / dirs
                t1 = (lo - origin) * inv
                t2 = (hi - origin) * inv
            # NaN axes (ray parallel, origin on the slab plane) drop out of
            # the nan-aware reductions, i.e. they never constrain the hit.
            tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
            tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
            hit = (tmax >= tmin) & (tmin > eps)
            t_best = np.where(hit, np.minimum(t_best, tmin), t_best)

        depth = np.where(np.isfinite(t_best) & (t_best <= self.params.far_clip),
                         t_best, 0.0)
        if self.params.depth_noise_std > 0.0:
            rng = np.random.default_rng(
                (self.scenario.seed, self.state.tick, 0x0D3))
            noise = rng.normal(0.0, self.params.depth_noise_std, depth.shape)
            depth = np.where(depth > 0.0, np.maximum(depth + noise, 1e-3), 0.0)
        return DepthImage(depth)

    # ----------------------------------------------------------- observation

    def project_world_point(self, p_world: np.ndarray):
        intr = self.scenario.intrinsics
        cam = self.camera_pose()
        return project_point(self.world_to_base(p_world), intr, cam)

    def ray_clear(self, p_world: np.ndarray, exclude_ids: set[str]) -> bool:
        """True when the camera-to-point segment misses every box and every
        object not excluded."""
        origin = self.base_to_world(self.camera_pose().position.as_array())
        d = np.asarray(p_world, dtype=float) - origin
        dist = float(np.linalg.norm(d))
        if dist < 1e-9:
            return True
        boxes = list(self.scenario.boxes)
        for obj in self.scenario.all_objects():
            if obj.id in exclude_ids:
                continue
            boxes.append(obj.as_box(self.state.object_positions[obj.id]))
        eps = 1e-9
        for box in boxes:
            lo = box.center_array - box.half - origin
            hi = box.center_array + box.half - origin
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = np.where(np.abs(d) > eps, lo / d, np.where(lo <= 0, -np.inf, np.inf))
                t2 = np.where(np.abs(d) > eps, hi / d, np.where(hi >= 0, np.inf, -np.inf))
            tmin = float(np.max(np.minimum(t1, t2)))
            tmax = float(np.min(np.maximum(t1, t2)))
            if tmax >= max(tmin, eps) and tmin < dist - 1e-6:
                return False
        return True

    def object_visible(self, obj_id: str) -> bool:
        """Frustum test plus unoccluded-ray test for an object's center."""
        if obj_id == self.state.attached:
            return False
        p = self.state.object_positions[obj_id]
        if self.project_world_point(p) is None:
            return False
        exclude = {obj_id}
        if self.state.attached:
            exclude.add(self.state.attached)
        return self.ray_clear(p, exclude)

    def pixel_of_object(self, obj_id: str, depth: DepthImage):
        """Integer pixel whose rendered depth actually belongs to the object;
        scans a 3x3 neighborhood around the projection. None if not found."""
        p = self.state.object_positions[obj_id]
        proj = self.project_world_point(p)
        if proj is None:
            return None
        extent = next(o.extent for o in self.scenario.all_objects()
                      if o.id == obj_id)
        cam_origin = self.base_to_world(self.camera_pose().position.as_array())
        expected = float(np.linalg.norm(p - cam_origin))
        u0, v0 = int(round(proj[0])), int(round(proj[1]))
        for du, dv in ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1),
                       (1, 1), (1, -1), (-1, 1), (-1, -1)):
            u, v = u0 + du, v0 + dv
            if not (0 <= u < depth.width and 0 <= v < depth.height):
                continue
            z = depth.at(u, v)
            if z > 0 and abs(z - expected) <= extent + 0.08:
                return u, v
        return None

    def pixel_of_ground_point(self, p_world: np.ndarray, depth: DepthImage):
        """Pixel seeing the ground at/near a world point, or None."""
        p = np.array([p_world[0], p_world[1], 0.0])
        proj = self.project_world_point(p)
        if proj is None:
            return None
        u, v = int(round(proj[0])), int(round(proj[1]))
        if not (0 <= u < depth.width and 0 <= v < depth.height):
            return None
        z = depth.at(u, v)
        if z <= 0:
            return None
        cam_origin = self.base_to_world(self.camera_pose().position.as_array())
        expected = float(np.linalg.norm(p - cam_origin))
        if abs(z - expected) > 0.12:
            return None
        return u, v

    # ------------------------------------------------------------ collisions

    def _base_collides(self, x: float, y: float) -> bool:
        r = self.params.robot_radius
        for box in self.scenario.boxes:
            z_lo, z_hi = box.z_interval()
            if z_hi < 0.0 or z_lo > self.params.collision_band:
                continue
            if box.footprint_distance(x, y) <= r:
                return True
        return False

    def _arm_points_world(self) -> np.ndarray:
        """Joint origins, tip, and link midpoints, lifted to the world frame."""
        pts = self.arm.joint_positions(self.state.arm_q)  # shoulder frame
        mids = 0.5 * (pts[:-1] + pts[1:])
        pts = np.vstack([pts, mids]) + self.shoulder_base()
        xy = self.state.base.transform_to_world(pts[:, :2])
        return np.column_stack([xy, pts[:, 2]])

    def _arm_collides(self) -> bool:
        pts = self._arm_points_world()
        active = {self.state.manipulation_target, self.state.attached,
                  self.scenario.target.id}
        boxes = list(self.scenario.boxes)
        for obj in self.scenario.occluders:
            if obj.id in active:
                continue
            boxes.append(obj.as_box(self.state.object_positions[obj.id]))
        for box in boxes:
            for p in pts:
                if box.contains(p):
                    return True
        return False

    def _check_collisions(self) -> None:
        if self.state.collided:
            return
        if self._base_collides(self.state.base.x, self.state.base.y):
            self.state.collided = True
        elif self._arm_collides():
            self.state.collided = True

    # ------------------------------------------------------------ integration

    def step_sim(self, cmd, dt: float | None = None) -> SimState:
        """Advance one tick under a base/arm/hand/neck command. The collision
        flag latches; an attached object follows the end-effector."""
        dt = self.params.dt if dt is None else dt
        if dt <= 0:
            raise ValueError("dt must be positive")
        s = self.state
        if isinstance(cmd, BaseCommand):
            x, y, yaw = s.base.x, s.base.y, s.base.yaw
            if abs(cmd.omega_y) < 1e-12:
                x += cmd.v_x * math.cos(yaw) * dt
                y += cmd.v_x * math.sin(yaw) * dt
                yaw2 = yaw
            else:
                yaw2 = yaw + cmd.omega_y * dt
                radius = cmd.v_x / cmd.omega_y
                x += radius * (math.sin(yaw2) - math.sin(yaw))
                y -= radius * (math.cos(yaw2) - math.cos(yaw))
            s.base = Pose2D(x, y, yaw2)
            # First-order height tracking toward the commanded h.
            alpha = 1.0 - math.exp(-dt / self.params.tau_height)
            s.height = s.height + (cmd.h - s.height) * alpha
        elif isinstance(cmd, ArmCommand):
            limit = self.params.arm_rate * dt
            delta = np.clip(np.asarray(cmd.targets, dtype=float) - s.arm_q,
                            -limit, limit)
            s.arm_q = self.arm.clamp(s.arm_q + delta)
        elif isinstance(cmd, HandCommand):
            limit = self.params.arm_rate * dt
            delta = np.clip(np.asarray(cmd.targets, dtype=float) - s.hand_q,
                            -limit, limit)
            s.hand_q = self.hand.clamp(s.hand_q + delta)
        elif isinstance(cmd, NeckCommand):
            s.neck_pitch = float(np.clip(cmd.pitch, *self.params.neck_pitch_limits))
            s.neck_yaw = float(np.clip(cmd.yaw, *self.params.neck_yaw_limits))
        else:
            raise TypeError(f"unsupported command {type(cmd)!r}")
        if s.attached is not None:
            s.object_positions[s.attached] = self.ee_world() + s.attach_offset
        s.sim_steps += 1
        self._check_collisions()
        return s

    def apply_viewpoint(self, adj: ViewpointAdjust) -> bool:
        """Apply a quantized viewpoint decision; returns True when the base
        moved (the memory bank must then drop stale images)."""
        s = self.state
        s.neck_pitch = float(np.clip(s.neck_pitch + adj.neck_dpitch,
                                     *self.params.neck_pitch_limits))
        s.neck_yaw = float(np.clip(s.neck_yaw + adj.neck_dyaw,
                                   *self.params.neck_yaw_limits))
        if not adj.moves_base:
            return False
        yaw = s.base.yaw + adj.base_dyaw
        c, sn = math.cos(s.base.yaw), math.sin(s.base.yaw)
        x = s.base.x + c * adj.base_dx - sn * adj.base_dy
        y = s.base.y + sn * adj.base_dx + c * adj.base_dy
        s.base = Pose2D(x, y, yaw)
        s.height = float(np.clip(s.height + adj.base_dheight,
                                 self.leg.z_min, self.leg.z_max))
        if s.attached is not None:
            s.object_positions[s.attached] = self.ee_world() + s.attach_offset
        self._check_collisions()
        return True

    # ----------------------------------------------------------------- grasp

    def attempt_grasp(self, object_id: str | None = None) -> Feedback:
        """Ground-truth grasp check: the EE must be within r_grasp of the
        object center and the center within eta*L of the shoulder. A
        scenario fault can force the episode's first attempt to miss."""
        obj_id = object_id or self.scenario.target.id
        s = self.state
        attempt = s.grasp_attempts
        s.grasp_attempts += 1
        obj = s.object_positions[obj_id]
        ee = self.ee_world()
        dist = float(np.linalg.norm(obj - ee))
        shoulder_dist = float(np.linalg.norm(obj - self.shoulder_world()))
        w = self.scenario.reach.weights
        measured = {
            "distance_to_target": dist,
            "shoulder_distance": shoulder_dist,
            "reach_bound": w.reach_bound,
        }
        if self.scenario.fault_first_grasp and attempt == 0:
            return Feedback("", "failure", "injected miss: gripper slipped",
                            measured)
        if dist > self.params.r_grasp:
            return Feedback("", "failure",
                            f"end-effector {dist:.3f} m from object", measured)
        if shoulder_dist > w.reach_bound + 1e-9:
            return Feedback("", "failure",
                            f"object outside reach bound "
                            f"({shoulder_dist:.3f} > {w.reach_bound:.3f})",
                            measured)
        s.attached = obj_id
        s.attach_offset = obj - ee
        return Feedback("", "success", "grasped", measured)

    def release(self) -> None:
        self.state.attached = None
        self.state.attach_offset = None
