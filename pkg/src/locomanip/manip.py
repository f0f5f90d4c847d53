"""Upper-body generation: keypoint lifting, the four post-grasp primitives
(push / pull / place / rotate), damped-least-squares IK, sequential
trajectory conversion, and fingertip retargeting for the dexterous hand."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation, Slerp

from .errors import (
    DegenerateDirection,
    IKFailure,
    InvalidKeypointDepth,
    InvalidTargetDepth,
)
from .geometry import CameraIntrinsics, CameraPose, DepthImage, Vec3, lift_pixel
from .kinematics import ArmModel, HandModel


@dataclass(frozen=True, eq=False)
class Pose6D:
    """Position plus unit quaternion (scalar-last, scipy convention)."""

    position: Vec3
    orientation: np.ndarray  # (4,) x, y, z, w

    def __post_init__(self):
        q = np.asarray(self.orientation, dtype=float).reshape(4)
        n = float(np.linalg.norm(q))
        if not math.isfinite(n) or abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {n} too far from 1")
        object.__setattr__(self, "orientation", q / n)

    @classmethod
    def from_rotation(cls, position, rot: Rotation) -> "Pose6D":
        pos = position if isinstance(position, Vec3) else Vec3.from_array(position)
        return cls(pos, rot.as_quat())

    def rotation(self) -> Rotation:
        return Rotation.from_quat(self.orientation)

    def position_array(self) -> np.ndarray:
        return self.position.as_array()


class PrimitiveKind(str, Enum):
    PUSH = "push"
    PULL = "pull"
    PLACE = "place"
    ROTATE = "rotate"


_REQUIRED_KEYPOINTS = {
    PrimitiveKind.PUSH: ("contact",),
    PrimitiveKind.PULL: ("contact",),
    PrimitiveKind.PLACE: ("place_target",),
    PrimitiveKind.ROTATE: ("grasp", "pivot"),
}


@dataclass(frozen=True)
class Keypoint:
    label: str
    pixel: tuple[int, int]  # (col, row)


@dataclass(frozen=True)
class PrimitiveRequest:
    """Semantic 2D keypoints plus the parameters of the selected primitive."""

    kind: PrimitiveKind
    keypoints: tuple[Keypoint, ...]
    distance: float = 0.0           # push/pull travel, meters
    direction: tuple[float, float, float] | None = None  # intended EE motion
    angle: float = 0.0              # rotate, radians
    axis: tuple[float, float, float] | None = None

    def __post_init__(self):
        labels = {k.label for k in self.keypoints}
        missing = [lb for lb in _REQUIRED_KEYPOINTS[self.kind] if lb not in labels]
        if missing:
            raise ValueError(f"{self.kind.value} primitive missing keypoints {missing}")


@dataclass(frozen=True, eq=False)
class EEPoseSequence:
    """Timed 6-DoF end-effector targets; always opens with an align phase."""

    samples: tuple[tuple[float, Pose6D], ...]
    phases: tuple[str, ...]

    def __post_init__(self):
        if len(self.samples) != len(self.phases) or not self.samples:
            raise ValueError("samples and phases must be non-empty and aligned")
        times = [t for t, _ in self.samples]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("sample times must be strictly increasing")
        if self.phases[0] != "align":
            raise ValueError("sequence must begin with an align phase")

    def positions(self) -> np.ndarray:
        return np.array([p.position_array() for _, p in self.samples])

    def end_pose(self) -> Pose6D:
        return self.samples[-1][1]

    def phase_samples(self, phase: str) -> list[tuple[float, Pose6D]]:
        return [s for s, ph in zip(self.samples, self.phases) if ph == phase]


@dataclass(frozen=True)
class ManipParams:
    """Scenario "manip" section."""

    n_align: int = 8
    n_execute: int = 20
    approach_offset: float = 0.08
    hover_height: float = 0.10
    sample_dt: float = 0.25
    dq_max: float = 0.1
    ik_pos_tol: float = 1e-3
    ik_ori_tol: float = math.radians(0.5)
    ik_damping: float = 0.05
    ik_max_iters: int = 300

    @classmethod
    def from_dict(cls, d: dict) -> "ManipParams":
        return cls(**d)


def lift_keypoints(req: PrimitiveRequest, depth: DepthImage,
                   intr: CameraIntrinsics, cam: CameraPose) -> list[Vec3]:
    """One base-frame point per request keypoint, in request order."""
    out = []
    for kp in req.keypoints:
        try:
            point, _ = lift_pixel(kp.pixel, depth, intr, cam)
        except (InvalidTargetDepth, ValueError) as exc:
            raise InvalidKeypointDepth(kp.label, str(exc)) from exc
        out.append(point)
    return out


def _unit(v, err="zero-length direction") -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3)
    n = float(np.linalg.norm(a))
    if n < 1e-12:
        raise DegenerateDirection(err)
    return a / n


def _lerp_slerp(p0: np.ndarray, q0: Rotation, p1: np.ndarray, q1: Rotation,
                ts: np.ndarray) -> list[Pose6D]:
    if np.allclose(q0.as_quat(), q1.as_quat()) or np.allclose(q0.as_quat(), -q1.as_quat()):
        rots = [q0] * len(ts)
    else:
        slerp = Slerp([0.0, 1.0], Rotation.concatenate([q0, q1]))
        rots = list(slerp(ts))
    return [Pose6D.from_rotation(p0 + (p1 - p0) * t, r) for t, r in zip(ts, rots)]


def generate_primitive(kind: PrimitiveKind, keypoints3d: dict[str, Vec3],
                       request: PrimitiveRequest, current_ee: Pose6D,
                       params: ManipParams | None = None,
                       grasped_object_position: Vec3 | None = None
                       ) -> EEPoseSequence:
    """Build the timed EE pose sequence for one primitive.

    The align phase interpolates from the current pose to the primitive's
    start pose (contact approach for push/pull, grasp keypoint for rotate,
    pre-place hover for place). The execute phase then applies the
    primitive's kinematic rule:

    * push: translate +u*distance from the align end, u = request.direction.
    * pull: with u = -direction the EE translates -u*distance, i.e. along the
      requested motion direction; the approach offset -u*0.08 lands in front
      of the handle.
    * place: final position = place_target + (current EE - grasped object),
      orientation preserved.
    * rotate: the EE orbits the pivot keypoint by `angle` about `axis`,
      co-rotating its orientation.
    """
    p = params or ManipParams()
    cur_pos = current_ee.position_array()
    cur_rot = current_ee.rotation()

    if kind in (PrimitiveKind.PUSH, PrimitiveKind.PULL):
        if request.direction is None:
            raise DegenerateDirection("push/pull needs a direction")
        motion = _unit(request.direction)
        u = motion if kind is PrimitiveKind.PUSH else -motion
        contact = keypoints3d["contact"].as_array()
        align_end = contact - u * p.approach_offset
        align_rot = cur_rot
        sign = 1.0 if kind is PrimitiveKind.PUSH else -1.0
        displacement = sign * u * request.distance
        exec_end = align_end + displacement
    elif kind is PrimitiveKind.PLACE:
        if grasped_object_position is None:
            raise ValueError("place primitive needs the grasped object position")
        target = keypoints3d["place_target"].as_array()
        offset = cur_pos - grasped_object_position.as_array()
        exec_end = target + offset
        align_end = exec_end + np.array([0.0, 0.0, p.hover_height])
        align_rot = cur_rot
    elif kind is PrimitiveKind.ROTATE:
        if request.axis is None:
            raise DegenerateDirection("rotate needs an axis")
        axis = _unit(request.axis, "zero-length rotation axis")
        align_end = keypoints3d["grasp"].as_array()
        align_rot = cur_rot
        pivot = keypoints3d["pivot"].as_array()
    else:  # pragma: no cover - enum is exhaustive
        raise ValueError(f"unknown primitive {kind}")

    ts = np.linspace(0.0, 1.0, max(2, p.n_align))
    align_poses = _lerp_slerp(cur_pos, cur_rot, align_end, align_rot, ts)
    samples = [(k * p.sample_dt, pose) for k, pose in enumerate(align_poses)]
    phases = ["align"] * len(align_poses)
    t_next = len(align_poses) * p.sample_dt

    exec_poses: list[Pose6D]
    if kind in (PrimitiveKind.PUSH, PrimitiveKind.PULL):
        if abs(request.distance) < 1e-12:
            exec_poses = [Pose6D.from_rotation(align_end, align_rot)]
        else:
            fr = np.linspace(0.0, 1.0, p.n_execute + 1)[1:]
            exec_poses = [
                Pose6D.from_rotation(align_end + displacement * f, align_rot)
                for f in fr
            ]
            exec_poses[-1] = Pose6D.from_rotation(exec_end, align_rot)
    elif kind is PrimitiveKind.PLACE:
        fr = np.linspace(0.0, 1.0, p.n_execute + 1)[1:]
        exec_poses = [
            Pose6D.from_rotation(align_end + (exec_end - align_end) * f, align_rot)
            for f in fr
        ]
        # Exact offset preservation at the final sample.
        exec_poses[-1] = Pose6D.from_rotation(exec_end, align_rot)
    else:  # rotate
        arm0 = align_end - pivot
        exec_poses = []
        for k in range(1, p.n_execute + 1):
            rk = Rotation.from_rotvec(axis * (request.angle * k / p.n_execute))
            exec_poses.append(Pose6D.from_rotation(pivot + rk.apply(arm0),
                                                   rk * align_rot))

    for k, pose in enumerate(exec_poses):
        samples.append((t_next + k * p.sample_dt, pose))
        phases.append("execute")
    return EEPoseSequence(tuple(samples), tuple(phases))


def _pose_errors(arm: ArmModel, q: np.ndarray, target: Pose6D):
    pos, rot = arm.fk(q)
    e_p = target.position_array() - pos
    e_o = (target.rotation() * rot.inv()).as_rotvec()
    return e_p, e_o


def _dls_from_seed(arm: ArmModel, target: Pose6D, seed: np.ndarray,
                   params: ManipParams, position_only: bool):
    q = arm.clamp(seed)
    lam = params.ik_damping
    best = (math.inf, math.inf, q)

    def errors(qv):
        e_p, e_o = _pose_errors(arm, qv, target)
        return e_p, e_o, float(np.linalg.norm(e_p)), float(np.linalg.norm(e_o))

    e_p, e_o, pe, oe = errors(q)
    for _ in range(params.ik_max_iters):
        if pe + oe < best[0] + best[1]:
            best = (pe, oe, q.copy())
        if pe <= params.ik_pos_tol and (position_only or oe <= params.ik_ori_tol):
            return q, pe, oe
        # Cap the step target so distant goals do not destabilize the update.
        e_p_step = e_p if pe <= 0.15 else e_p * (0.15 / pe)
        e_o_step = e_o if oe <= 0.5 else e_o * (0.5 / oe)
        jac = arm.jacobian(q)
        if position_only:
            jac = jac[:3]
            err = e_p_step
        else:
            err = np.concatenate([e_p_step, e_o_step])
        # Levenberg-style damping: retry a rejected step with more damping,
        # relax it again after accepted steps.
        accepted = False
        for _ in range(8):
            jjt = jac @ jac.T + lam * lam * np.eye(jac.shape[0])
            dq = jac.T @ np.linalg.solve(jjt, err)
            q_try = arm.clamp(q + dq)
            e_p2, e_o2, pe2, oe2 = errors(q_try)
            if pe2 + 0.2 * oe2 < pe + 0.2 * oe - 1e-15:
                q, e_p, e_o, pe, oe = q_try, e_p2, e_o2, pe2, oe2
                lam = max(lam * 0.4, 1e-5)
                accepted = True
                break
            lam = min(lam * 5.0, 20.0)
        if not accepted:
            break
    return None, best[0], best[1]


def solve_ik(arm: ArmModel, target: Pose6D, seed: np.ndarray,
             params: ManipParams | None = None,
             position_only: bool = False) -> np.ndarray:
    """Damped-least-squares IK from `seed`, joints clamped to limits each
    iteration; deterministic given (target, seed).

    Succeeds at <= 1 mm position error and <= 0.5 deg orientation error
    (position only when requested). If the iteration stalls from the caller's
    seed, a small fixed ladder of fallback seeds is tried before raising
    IKFailure with the best residual seen.
    """
    p = params or ManipParams()
    seed = np.asarray(seed, dtype=float)
    if seed.shape[0] != arm.dof:
        raise ValueError(f"seed has {seed.shape[0]} values, arm has {arm.dof}")

    ladder = [seed, arm.mid()]
    ladder += _scored_restarts(arm, target, position_only, count=4)

    best_pe, best_oe = math.inf, math.inf
    for s in ladder:
        q, pe, oe = _dls_from_seed(arm, target, s, p, position_only)
        if q is not None:
            return q
        if pe + oe < best_pe + best_oe:
            best_pe, best_oe = pe, oe

    # Last resort for limit-locked poses: bounded trust-region least squares
    # warm-started from a position-only solve. Still deterministic.
    q = _trf_fallback(arm, target, seed, p, position_only)
    if q is not None:
        return q
    raise IKFailure(best_pe, best_oe)


def _trf_fallback(arm: ArmModel, target: Pose6D, seed: np.ndarray,
                  params: ManipParams, position_only: bool):
    tp = target.position_array()
    tr = target.rotation()

    def resid(qv):
        pos, rot = arm.fk(qv)
        e_p = tp - pos
        if position_only:
            return e_p
        return np.concatenate([e_p, 0.3 * (tr * rot.inv()).as_rotvec()])

    warm_starts = []
    if not position_only:
        for s in [seed, arm.mid()] + _scored_restarts(arm, target, False, 4):
            q1, _, _ = _dls_from_seed(arm, target, s, params, True)
            if q1 is not None:
                warm_starts.append(q1)
    warm_starts += [arm.clamp(seed), arm.mid()]
    warm_starts += _scored_restarts(arm, target, position_only, 4)

    for x0 in warm_starts:
        res = least_squares(resid, x0, bounds=(arm.lower, arm.upper),
                            method="trf", xtol=1e-14, ftol=1e-14, gtol=1e-14,
                            max_nfev=400)
        pos, rot = arm.fk(res.x)
        pe = float(np.linalg.norm(pos - tp))
        oe = float(np.linalg.norm((tr * rot.inv()).as_rotvec()))
        if pe <= params.ik_pos_tol and (position_only or oe <= params.ik_ori_tol):
            return arm.clamp(res.x)
    return None


def _scored_restarts(arm: ArmModel, target: Pose6D, position_only: bool,
                     count: int, samples: int = 256) -> list[np.ndarray]:
    """Deterministic coarse seeding: FK-score a pseudo-random batch of
    configurations (seeded from the target pose) and keep the best few."""
    digest = np.round(np.concatenate([target.position_array(),
                                      target.orientation]), 9).tobytes()
    rng = np.random.default_rng(np.frombuffer(digest, dtype=np.uint8))
    qs = rng.uniform(arm.lower, arm.upper, size=(samples, arm.dof))
    scores = np.empty(samples)
    tp = target.position_array()
    tr = target.rotation()
    for k, qv in enumerate(qs):
        pos, rot = arm.fk(qv)
        err = float(np.linalg.norm(tp - pos))
        if not position_only:
            err += 0.3 * float(np.linalg.norm((tr * rot.inv()).as_rotvec()))
        scores[k] = err
    order = np.argsort(scores, kind="stable")[:count]
    return [qs[i] for i in order]


def trajectory_to_joints(arm: ArmModel, seq: EEPoseSequence, seed: np.ndarray,
                         params: ManipParams | None = None) -> np.ndarray:
    """Sequential IK with warm starts; consecutive outputs are kept within
    dq_max per joint by densifying the pose sequence where needed.

    Returns an (M, dof) joint trajectory, M >= len(seq.samples). IK failures
    carry the index of the offending sample.
    """
    p = params or ManipParams()
    out: list[np.ndarray] = []
    q = arm.clamp(np.asarray(seed, dtype=float))

    def solve_at(pose: Pose6D, warm: np.ndarray, index: int) -> np.ndarray:
        try:
            return solve_ik(arm, pose, warm, p)
        except IKFailure as exc:
            raise IKFailure(exc.position_error, exc.orientation_error,
                            sample_index=index) from exc

    def extend(q_from: np.ndarray, pose_from: Pose6D, pose_to: Pose6D,
               index: int, depth: int) -> list[np.ndarray]:
        q_to = solve_at(pose_to, q_from, index)
        if np.max(np.abs(q_to - q_from)) <= p.dq_max:
            return [q_to]
        if depth >= 12:
            raise IKFailure(0.0, 0.0, sample_index=index)
        p0, p1 = pose_from.position_array(), pose_to.position_array()
        mid_pose = _lerp_slerp(p0, pose_from.rotation(), p1, pose_to.rotation(),
                               np.array([0.5]))[0]
        first = extend(q_from, pose_from, mid_pose, index, depth + 1)
        second = extend(first[-1], mid_pose, pose_to, index, depth + 1)
        return first + second

    prev_pose: Pose6D | None = None
    for idx, (_, pose) in enumerate(seq.samples):
        if prev_pose is None:
            q = solve_at(pose, q, idx)
            out.append(q)
        else:
            chunk = extend(q, prev_pose, pose, idx, 0)
            out.extend(chunk)
            q = chunk[-1]
        prev_pose = pose
    return np.array(out)


@dataclass(frozen=True)
class RetargetRequest:
    """Reference human fingertip positions, one per hand finger, in the same
    frame as the hand palm."""

    fingertips: np.ndarray  # (K, 3)

    def __post_init__(self):
        f = np.asarray(self.fingertips, dtype=float)
        if f.ndim != 2 or f.shape[1] != 3 or not np.all(np.isfinite(f)):
            raise ValueError("fingertips must be a finite (K, 3) array")
        object.__setattr__(self, "fingertips", f)


@dataclass(frozen=True)
class RetargetResult:
    joints: np.ndarray
    residual: float                 # sum of squared fingertip errors, m^2
    start_residuals: tuple[float, ...]
    run_residuals: tuple[float, ...]


def retarget_fingertips(hand: HandModel, req: RetargetRequest,
                        max_iters: int = 80) -> RetargetResult:
    """Align hand fingertips with the reference fingertips.

    Damped Gauss-Newton over all hand joints from 5 deterministic starts
    (open, half-closed, closed, two mid-grasps); steps are only accepted when
    they reduce the cost, so the result can never be worse than the best
    converged start. The wrist is assumed fixed by the grasp approach.
    """
    if req.fingertips.shape[0] != hand.finger_count:
        raise ValueError(
            f"request has {req.fingertips.shape[0]} fingertips, "
            f"hand has {hand.finger_count} fingers")
    targets = req.fingertips

    def cost(q: np.ndarray) -> float:
        diff = hand.fingertips(q) - targets
        return float(np.sum(diff * diff))

    lo, hi = hand.lower, hand.upper
    span = hi - lo
    starts = [lo.copy(), lo + 0.5 * span, hi.copy(),
              lo + 0.25 * span, lo + 0.75 * span]

    start_residuals, run_residuals, solutions = [], [], []
    for q0 in starts:
        q = q0.copy()
        c = cost(q)
        start_residuals.append(c)
        lam = 1e-6
        for _ in range(max_iters):
            r = (hand.fingertips(q) - targets).reshape(-1)
            jac = hand.fingertip_jacobian(q)
            accepted = False
            for _ in range(8):
                dq = np.linalg.solve(jac.T @ jac + lam * np.eye(hand.dof),
                                     -jac.T @ r)
                q_try = hand.clamp(q + dq)
                c_try = cost(q_try)
                if c_try < c:
                    q, c = q_try, c_try
                    lam = max(lam * 0.3, 1e-9)
                    accepted = True
                    break
                lam *= 5.0
            if not accepted or c < 1e-16:
                break
        run_residuals.append(c)
        solutions.append(q)

    best = int(np.argmin(run_residuals))
    return RetargetResult(solutions[best], run_residuals[best],
                          tuple(start_residuals), tuple(run_residuals))
