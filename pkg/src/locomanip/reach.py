"""Short-range base placement: choose horizontal translation and height
change that bring the target inside a safe fraction of arm reach.

The solver minimizes

    lam1*|dd|^2 + lam2*dz^2 + lam3*|p_obj - p_shoulder|^2

subject to |p_obj - p_shoulder| <= eta*L and box bounds on (dd, dz), where
p_obj is the target re-expressed in the adjusted base frame (pure
translation) and p_shoulder follows the sampled shoulder-offset table.
Weights are normalized to unit sum internally, so scaling all three by a
common constant cannot change the argmin. Each multistart runs a projected
quasi-Newton (L-BFGS-B on a smoothly penalized objective, warm-started at
increasing penalty), then is projected onto the constraint surface along the
shoulder-to-object ray.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .fileio import load_offset_csv, save_offset_csv
from .geometry import Vec3, wrap_angle
from .kinematics import LegModel
from .nav import BaseCommand, BaseLimits

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OffsetModel:
    """Sampled shoulder-offset table z -> (dx, dz), linearly interpolated.

    dz is stored in the adjusted-base-frame convention (shoulder height above
    ground minus the height change relative to z0), which makes the solver's
    distance term equal the physical shoulder-to-object distance.
    """

    zs: np.ndarray
    dxs: np.ndarray
    dzs: np.ndarray
    order: int = 1

    def __post_init__(self):
        zs = np.asarray(self.zs, dtype=float)
        if zs.ndim != 1 or zs.size < 2 or np.any(np.diff(zs) <= 0):
            raise ValueError("sample heights must be strictly increasing")
        if self.order != 1:
            raise ValueError("only linear interpolation (order=1) is supported")
        object.__setattr__(self, "zs", zs)
        object.__setattr__(self, "dxs", np.asarray(self.dxs, dtype=float))
        object.__setattr__(self, "dzs", np.asarray(self.dzs, dtype=float))
        if self.dxs.shape != zs.shape or self.dzs.shape != zs.shape:
            raise ValueError("column lengths disagree")

    @property
    def z_lo(self) -> float:
        return float(self.zs[0])

    @property
    def z_hi(self) -> float:
        return float(self.zs[-1])

    def query(self, z: float) -> tuple[float, float]:
        """(dx, dz) at height z, clamped to the table range."""
        if z < self.z_lo or z > self.z_hi:
            log.debug("offset model query %.3f clamped to [%.3f, %.3f]",
                      z, self.z_lo, self.z_hi)
            z = min(max(z, self.z_lo), self.z_hi)
        return (float(np.interp(z, self.zs, self.dxs)),
                float(np.interp(z, self.zs, self.dzs)))

    def query_with_derivative(self, z: float):
        """(dx, dz, ddx/dz, ddz/dz); derivatives are zero outside the range."""
        if z <= self.z_lo or z >= self.z_hi:
            dx, dz = self.query(z)
            return dx, dz, 0.0, 0.0
        k = int(np.searchsorted(self.zs, z, side="right") - 1)
        k = min(k, self.zs.size - 2)
        span = self.zs[k + 1] - self.zs[k]
        t = (z - self.zs[k]) / span
        return (
            float(self.dxs[k] + t * (self.dxs[k + 1] - self.dxs[k])),
            float(self.dzs[k] + t * (self.dzs[k + 1] - self.dzs[k])),
            float((self.dxs[k + 1] - self.dxs[k]) / span),
            float((self.dzs[k + 1] - self.dzs[k]) / span),
        )

    @classmethod
    def from_csv(cls, path: str | Path) -> "OffsetModel":
        rows = load_offset_csv(path)
        zs, dxs, dzs = zip(*rows)
        return cls(np.array(zs), np.array(dxs), np.array(dzs))

    def to_csv(self, path: str | Path) -> None:
        save_offset_csv(zip(self.zs, self.dxs, self.dzs), path)


def fit_offset_model(leg: LegModel, z0: float, n_samples: int = 41) -> OffsetModel:
    """Sample the kinematic leg model over its height range into a table."""
    if n_samples < 2:
        raise ValueError("need at least two samples")
    zs = np.linspace(leg.z_min, leg.z_max, n_samples)
    dxs, dzs = zip(*(leg.shoulder_in_adjusted_frame(float(z), z0) for z in zs))
    return OffsetModel(zs, np.array(dxs), np.array(dzs))


@dataclass(frozen=True)
class SolverWeights:
    """Objective weights and reach geometry for the base-placement solver."""

    lam1: float = 1.0
    lam2: float = 2.0
    lam3: float = 0.5
    eta: float = 0.8
    arm_length: float = 0.60
    z0: float = 0.72

    def __post_init__(self):
        if min(self.lam1, self.lam2, self.lam3) < 0:
            raise ValueError("weights must be non-negative")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must be in (0, 1]")
        if self.arm_length <= 0:
            raise ValueError("arm length must be positive")

    @property
    def reach_bound(self) -> float:
        return self.eta * self.arm_length

    @classmethod
    def from_dict(cls, d: dict) -> "SolverWeights":
        return cls(**d)


@dataclass(frozen=True)
class ReachAdjustment:
    """Solver output: horizontal translation, height change, and diagnostics."""

    delta_d: np.ndarray  # (2,)
    delta_z: float
    feasible: bool
    objective: float
    min_achievable_distance: float | None = None


@dataclass(frozen=True)
class ReachParams:
    """Scenario "reach" section: weights plus solver bounds."""

    weights: SolverWeights = field(default_factory=SolverWeights)
    dd_bound: float = 1.0
    offset_samples: int = 41
    plan_eta_factor: float = 0.9  # oracle-side shrink applied on top of eta

    @classmethod
    def from_dict(cls, d: dict) -> "ReachParams":
        d = dict(d)
        w = d.pop("weights", None)
        params = cls(**d) if d else cls()
        if w:
            params = replace(params, weights=SolverWeights.from_dict(w))
        return params


def shoulder_position(delta_z: float, model: OffsetModel, z0: float) -> Vec3:
    """Shoulder position in the adjusted base frame: [dx(z0+dz), 0, dz(z0+dz)]."""
    dx, dz = model.query(z0 + delta_z)
    return Vec3(dx, 0.0, dz)


def object_in_adjusted_frame(p_t: Vec3, delta_d: np.ndarray,
                             delta_z: float) -> Vec3:
    """Target re-expressed after a pure (dd, dz) base translation."""
    dd = np.asarray(delta_d, dtype=float).reshape(2)
    return Vec3(p_t.x - dd[0], p_t.y - dd[1], p_t.z - delta_z)


def _distance_and_grad(x: np.ndarray, p_t: Vec3, model: OffsetModel, z0: float):
    """Shoulder-to-object distance, its gradient wrt (ddx, ddy, dz), and the
    residual vector."""
    ddx, ddy, dz = x
    sx, sz, dsx, dsz = model.query_with_derivative(z0 + dz)
    r = np.array([p_t.x - ddx - sx, p_t.y - ddy, p_t.z - dz - sz])
    dist = float(np.linalg.norm(r))
    if dist < 1e-12:
        return dist, np.zeros(3), r
    # dr/dx columns: d/ddx = (-1,0,0); d/ddy = (0,-1,0); d/ddz = (-dsx,0,-1-dsz)
    grad = np.array([
        -r[0],
        -r[1],
        -dsx * r[0] - (1.0 + dsz) * r[2],
    ]) / dist
    return dist, grad, r


def _project_feasible(x: np.ndarray, p_t: Vec3, w: SolverWeights,
                      model: OffsetModel, box) -> np.ndarray | None:
    """Pull x onto the constraint surface along the shoulder-to-object ray;
    returns None when the box prevents feasibility."""
    bound = w.reach_bound * (1.0 - 1e-12)
    x = x.copy()
    for _ in range(25):
        dist, _, r = _distance_and_grad(x, p_t, model, w.z0)
        if dist <= w.reach_bound:
            return x
        shift = (dist - bound) * (r / dist)
        x[0] += shift[0]
        x[1] += shift[1]
        x[2] += shift[2]
        x = np.clip(x, [b[0] for b in box], [b[1] for b in box])
    dist, _, _ = _distance_and_grad(x, p_t, model, w.z0)
    return x if dist <= w.reach_bound + 1e-9 else None


def solve_adjustment(p_t: Vec3, w: SolverWeights, model: OffsetModel,
                     dd_bound: float = 1.0) -> ReachAdjustment:
    """Best (dd, dz) under the reach constraint, or an infeasible report.

    Deterministic: 9 fixed starts, lowest true objective wins, ties broken
    lexicographically on (dd_x, dd_y, dz).
    """
    z_span = (model.z_lo - w.z0, model.z_hi - w.z0)
    box = [(-dd_bound, dd_bound), (-dd_bound, dd_bound),
           (min(z_span[0], 0.0), max(z_span[1], 0.0))]
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])

    def true_objective(x: np.ndarray) -> float:
        dist, _, _ = _distance_and_grad(x, p_t, model, w.z0)
        return (w.lam1 * (x[0] ** 2 + x[1] ** 2) + w.lam2 * x[2] ** 2
                + w.lam3 * dist ** 2)

    origin = np.zeros(3)
    dist0, _, _ = _distance_and_grad(origin, p_t, model, w.z0)
    if w.lam3 == 0.0 and dist0 <= w.reach_bound + 1e-12:
        # All objective terms vanish at zero adjustment: exact global optimum.
        return ReachAdjustment(np.zeros(2), 0.0, True, 0.0)

    lam_sum = w.lam1 + w.lam2 + w.lam3
    if lam_sum == 0.0:
        proj = _project_feasible(origin, p_t, w, model, box)
        if proj is None:
            d_min, _ = _min_distance(p_t, w, model, box)
            return ReachAdjustment(np.zeros(2), 0.0, False, math.inf, d_min)
        return ReachAdjustment(proj[:2], float(proj[2]), True, 0.0)
    l1, l2, l3 = w.lam1 / lam_sum, w.lam2 / lam_sum, w.lam3 / lam_sum

    def penalized(x: np.ndarray, mu: float):
        dist, dgrad, _ = _distance_and_grad(x, p_t, model, w.z0)
        viol = max(0.0, dist - w.reach_bound)
        f = (l1 * (x[0] ** 2 + x[1] ** 2) + l2 * x[2] ** 2 + l3 * dist ** 2
             + mu * viol ** 2)
        g = np.array([2 * l1 * x[0], 2 * l1 * x[1], 2 * l2 * x[2]])
        g += (2 * l3 * dist + 2 * mu * viol) * dgrad
        return f, g

    sx0, _ = model.query(w.z0)
    toward = np.clip(np.array([0.5 * (p_t.x - sx0), 0.5 * p_t.y, 0.0]), lo, hi)
    starts = [
        origin,
        np.array([0.5 * dd_bound, 0.0, 0.0]),
        np.array([-0.5 * dd_bound, 0.0, 0.0]),
        np.array([0.0, 0.5 * dd_bound, 0.0]),
        np.array([0.0, -0.5 * dd_bound, 0.0]),
        np.array([0.0, 0.0, 0.5 * box[2][0]]),
        np.array([0.0, 0.0, 0.5 * box[2][1]]),
        toward,
        np.array([toward[0], toward[1], 0.5 * box[2][0]]),
    ]

    def norm_objective_grad(x: np.ndarray):
        dist, dgrad, _ = _distance_and_grad(x, p_t, model, w.z0)
        f = l1 * (x[0] ** 2 + x[1] ** 2) + l2 * x[2] ** 2 + l3 * dist ** 2
        g = np.array([2 * l1 * x[0], 2 * l1 * x[1], 2 * l2 * x[2]])
        g += 2 * l3 * dist * dgrad
        return f, g

    def polish(x: np.ndarray) -> np.ndarray:
        """Quasi-Newton refinement of the true constrained problem from an
        already-feasible point, re-projected afterwards so Eq.-3 feasibility
        is exact."""
        constraint = {
            "type": "ineq",
            "fun": lambda v: w.reach_bound
            - _distance_and_grad(v, p_t, model, w.z0)[0],
            "jac": lambda v: -_distance_and_grad(v, p_t, model, w.z0)[1],
        }
        with warnings.catch_warnings():
            # SLSQP emits a benign warning when its line search pokes
            # outside the box before clipping.
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(norm_objective_grad, x, jac=True, method="SLSQP",
                           bounds=box, constraints=[constraint],
                           options={"ftol": 1e-14, "maxiter": 200})
        proj = _project_feasible(res.x, p_t, w, model, box)
        candidates = [x] if proj is None else [x, proj]
        return min(candidates, key=lambda v: norm_objective_grad(v)[0])

    projected: list[np.ndarray] = []
    for x0 in starts:
        x = np.clip(x0, lo, hi)
        for mu in (1e2, 1e6):
            res = minimize(penalized, x, args=(mu,), jac=True,
                           method="L-BFGS-B", bounds=box,
                           options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 400})
            x = res.x
        for cand in (x, np.clip(x0, lo, hi)):
            proj = _project_feasible(cand, p_t, w, model, box)
            if proj is not None:
                projected.append(proj)

    # Polish each distinct basin only once.
    unique: list[np.ndarray] = []
    for proj in projected:
        if not any(np.max(np.abs(proj - u)) < 1e-7 for u in unique):
            unique.append(proj)
    candidates = []
    for proj in unique:
        proj = polish(proj)
        candidates.append((true_objective(proj), float(proj[0]),
                           float(proj[1]), float(proj[2])))

    if not candidates:
        d_min, _ = _min_distance(p_t, w, model, box)
        log.info("reach solver infeasible: min achievable distance %.3f > %.3f",
                 d_min, w.reach_bound)
        return ReachAdjustment(np.zeros(2), 0.0, False, math.inf, d_min)

    obj, ddx, ddy, dz = min(candidates)
    return ReachAdjustment(np.array([ddx, ddy]), dz, True, obj)


def _min_distance(p_t: Vec3, w: SolverWeights, model: OffsetModel, box):
    """Smallest achievable shoulder-to-object distance within the box."""
    def f(x):
        dist, dgrad, _ = _distance_and_grad(x, p_t, model, w.z0)
        return dist ** 2, 2 * dist * dgrad

    best, best_x = math.inf, np.zeros(3)
    for x0 in (np.zeros(3),
               np.array([0.5 * (p_t.x), 0.5 * p_t.y, 0.0]),
               np.array([0.0, 0.0, 0.5 * (box[2][0] + box[2][1])])):
        x0 = np.clip(x0, [b[0] for b in box], [b[1] for b in box])
        res = minimize(f, x0, jac=True, method="L-BFGS-B", bounds=box,
                       options={"ftol": 1e-15, "gtol": 1e-12})
        d = math.sqrt(max(res.fun, 0.0))
        if d < best:
            best, best_x = d, res.x
    return best, best_x


def adjustment_to_commands(adj: ReachAdjustment, limits: BaseLimits,
                           p_t: Vec3 | None = None, z0: float = 0.72,
                           dt: float = 0.05, settle_time: float = 1.5,
                           height_rate: float = 0.25) -> list[BaseCommand]:
    """Turn-drive-turn schedule realizing a feasible adjustment.

    Rotates toward dd, drives |dd|, then re-faces the object (its original
    base-frame position if given, else the original heading). The height
    command ramps linearly from z0 to z0+dz over the motion and is then held
    through a settle tail so the first-order height tracker converges.
    """
    if not adj.feasible:
        raise ValueError("cannot schedule an infeasible adjustment")
    dd = np.asarray(adj.delta_d, dtype=float).reshape(2)
    dist = float(np.hypot(dd[0], dd[1]))
    heading = math.atan2(dd[1], dd[0]) if dist > 1e-9 else 0.0
    if p_t is not None:
        final_yaw = math.atan2(p_t.y - dd[1], p_t.x - dd[0])
    else:
        final_yaw = 0.0

    def turn(angle: float) -> list[tuple[float, float]]:
        angle = wrap_angle(angle)
        if abs(angle) < 1e-9:
            return []
        n = max(1, math.ceil(abs(angle) / (0.9 * limits.omega_max * dt)))
        return [(0.0, angle / (n * dt))] * n

    def drive(d: float) -> list[tuple[float, float]]:
        if d < 1e-9:
            return []
        n = max(1, math.ceil(d / (0.9 * limits.v_max * dt)))
        return [(d / (n * dt), 0.0)] * n

    motion = (turn(heading) if dist > 1e-9 else [])
    motion += drive(dist)
    motion += turn(final_yaw - (heading if dist > 1e-9 else 0.0))
    n_height = math.ceil(abs(adj.delta_z) / (height_rate * dt))
    while len(motion) < n_height:
        motion.append((0.0, 0.0))

    h_final = z0 + adj.delta_z
    n = len(motion)
    commands = [
        limits.clamp(BaseCommand(v, om, z0 + adj.delta_z * (k + 1) / n))
        for k, (v, om) in enumerate(motion)
    ]
    n_settle = max(1, math.ceil(settle_time / dt))
    commands += [limits.clamp(BaseCommand(0.0, 0.0, h_final))] * n_settle
    return commands
