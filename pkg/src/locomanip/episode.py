"""Episode orchestration: the ground-truth world view, the scripted oracle
decision provider, agent executors wiring planner decisions to the planning
modules and the simulator, clearance grading, and episode reports."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation

from . import brain as brain_mod
from .brain import (
    Abort,
    BrainParams,
    Done,
    Feedback,
    InvokeAgent,
    MemoryBank,
    PlannerState,
    SubTask,
    ViewpointAdjust,
    decision_to_json,
)
from .errors import LocomanipError, ProviderError
from .geometry import Pose2D, Vec3, lift_pixel, wrap_angle
from .manip import (
    Keypoint,
    Pose6D,
    PrimitiveKind,
    PrimitiveRequest,
    generate_primitive,
    solve_ik,
    trajectory_to_joints,
)
from .nav import plan_navigation, track_step
from .reach import adjustment_to_commands, solve_adjustment
from .scenario import Scenario, reachable_height_band
from .simulator import ArmCommand, Simulator


@dataclass(frozen=True)
class ClearanceGrade:
    """Trajectory grading by minimum obstacle clearance."""

    category: str  # Appropriate | Inappropriate | Fail
    min_clearance: float


def grade_clearance(traj, scenario: Scenario,
                    bands: tuple[float, float] | None = None,
                    robot_radius: float | None = None,
                    step: float = 0.01) -> ClearanceGrade:
    """Grade a planar trajectory: Fail when the robot disk touches a box
    (clearance <= 0), Appropriate when the minimum clearance lies inside the
    configured band, Inappropriate otherwise (excessively close or far).

    Clearance is the 2D distance from the densely interpolated trajectory to
    the nearest static box footprint, minus the robot radius.
    """
    pts = np.asarray([(p.x, p.y) if isinstance(p, Pose2D) else tuple(p)
                      for p in traj], dtype=float)
    if pts.size == 0:
        raise ValueError("trajectory must be non-empty")
    lo, hi = bands if bands is not None else scenario.sim.clearance_bands
    r = scenario.sim.robot_radius if robot_radius is None else robot_radius

    dense = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        seg = float(np.hypot(*(b - a)))
        n = max(1, int(math.ceil(seg / step)))
        for k in range(1, n + 1):
            dense.append(a + (b - a) * (k / n))
    dense = np.asarray(dense)

    min_c = math.inf
    for box in scenario.boxes:
        for p in dense:
            min_c = min(min_c, box.footprint_distance(p[0], p[1]) - r)
    if min_c <= 0.0:
        return ClearanceGrade("Fail", min_c)
    if lo <= min_c <= hi:
        return ClearanceGrade("Appropriate", min_c)
    return ClearanceGrade("Inappropriate", min_c)


@dataclass
class EpisodeReport:
    family: str
    difficulty: str
    seed: int
    goal: str
    success: bool
    collision: bool
    decisions: int
    sim_steps: int
    subtask_outcomes: list[dict] = field(default_factory=list)
    min_clearance: float | None = None
    clearance_grade: str | None = None
    abort_reason: str = ""
    wall_time_s: float = 0.0

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "family": self.family,
            "difficulty": self.difficulty,
            "seed": self.seed,
            "goal": self.goal,
            "success": self.success,
            "collision": self.collision,
            "decisions": self.decisions,
            "sim_steps": self.sim_steps,
            "subtask_outcomes": self.subtask_outcomes,
            "min_clearance": self.min_clearance,
            "clearance_grade": self.clearance_grade,
            "abort_reason": self.abort_reason,
        }
        if include_timing:
            out["wall_time_s"] = self.wall_time_s
        return out

    def canonical_json(self) -> str:
        """Deterministic serialization: wall time excluded by design."""
        return json.dumps(self.to_dict(include_timing=False), sort_keys=True,
                          indent=2) + "\n"

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


class WorldView:
    """Ground-truth scene access handed to the oracle provider."""

    def __init__(self, sim: Simulator, scenario: Scenario):
        self.sim = sim
        self.scenario = scenario
        self.observation = None  # current DepthImage, set per decision tick

    def object_position(self, obj_id: str) -> np.ndarray:
        return self.sim.state.object_positions[obj_id]

    def robot_xy(self) -> np.ndarray:
        return np.array([self.sim.state.base.x, self.sim.state.base.y])

    def planar_distance_to(self, obj_id: str) -> float:
        p = self.object_position(obj_id)
        return float(np.hypot(*(p[:2] - self.robot_xy())))

    def visible(self, obj_id: str) -> bool:
        return self.sim.object_visible(obj_id)

    def pixel_of(self, obj_id: str):
        if self.observation is None:
            return None
        return self.sim.pixel_of_object(obj_id, self.observation)

    def pixel_of_ground(self, p_world) -> tuple[int, int] | None:
        if self.observation is None:
            return None
        return self.sim.pixel_of_ground_point(np.asarray(p_world, float),
                                              self.observation)


class OracleProvider:
    """Scripted decision provider using simulator ground truth.

    Decomposition follows scenario-declared templates (occluded targets get
    an occluder-removal chain before the target chain); decide() adjusts the
    viewpoint whenever the active sub-task's referent is not visible and
    otherwise invokes the sub-task's agent with pixel-level parameters
    computed from the current observation.
    """

    tracks_subtasks = True

    def __init__(self, view: WorldView, params: BrainParams | None = None):
        self.view = view
        self.params = params or view.scenario.brain

    # ------------------------------------------------------------ decompose

    def decompose(self, goal: str) -> list[SubTask]:
        scn = self.view.scenario
        p = self.params
        tasks: list[SubTask] = []
        counter = 0

        def add(description: str, agent: str, **parameters) -> None:
            nonlocal counter
            counter += 1
            tasks.append(SubTask(f"t{counter}", description, agent, parameters))

        blocking = self._blocking_occluder()
        position = self.view.robot_xy()

        if blocking is not None:
            add(f"locate the {blocking}", "viewpoint", object_id=blocking)
            occ_xy = self.view.object_position(blocking)[:2]
            if float(np.hypot(*(occ_xy - position))) > p.nav_skip_dist:
                add(f"navigate to the {blocking}", "navigation",
                    object_id=blocking, standoff=p.occluder_standoff)
                position = self._predicted_standoff(occ_xy, position,
                                                    p.occluder_standoff)
            add(f"adjust base to reach the {blocking}", "reach_solver",
                object_id=blocking)
            add(f"grasp the {blocking}", "grasp", object_id=blocking)
            add(f"place the {blocking} aside", "post_grasp_primitive",
                object_id=blocking, kind="place")
            position = occ_xy  # reach drives roughly to the occluder

        tgt = scn.target.id
        tgt_xy = self.view.object_position(tgt)[:2]
        if float(np.hypot(*(tgt_xy - position))) > p.nav_skip_dist:
            add(f"navigate to the {tgt}", "navigation", object_id=tgt,
                standoff=p.standoff)
        add(f"adjust base to reach the {tgt}", "reach_solver", object_id=tgt)
        add(f"grasp the {tgt}", "grasp", object_id=tgt)
        return tasks

    def _predicted_standoff(self, obj_xy, from_xy, standoff) -> np.ndarray:
        d = obj_xy - from_xy
        n = float(np.hypot(*d))
        if n < 1e-9:
            return obj_xy
        return obj_xy - d / n * standoff

    def _blocking_occluder(self) -> str | None:
        scn = self.view.scenario
        target = scn.target
        tp = self.view.object_position(target.id)
        if self.view.sim.ray_clear(tp, {target.id}):
            return None
        for occ in scn.occluders:
            if not self.view.sim.ray_clear(tp, {target.id, occ.id}):
                continue
            return occ.id
        # Several occluders stack up; remove the nearest one first.
        if scn.occluders:
            cam = self.view.robot_xy()
            return min(scn.occluders,
                       key=lambda o: float(np.hypot(
                           *(self.view.object_position(o.id)[:2] - cam)))).id
        return None

    # --------------------------------------------------------------- decide

    def decide(self, state: PlannerState, bank: MemoryBank):
        st = state.active_subtask()
        if st is None:
            return Done()
        oid = st.parameters.get("object_id")
        agent = st.agent

        if agent == "viewpoint":
            if self.view.visible(oid):
                return InvokeAgent("viewpoint", {"object_id": oid})
            return self._viewpoint_toward(self.view.object_position(oid))

        if agent == "navigation":
            if not self.view.visible(oid):
                return self._viewpoint_toward(self.view.object_position(oid))
            standoff = float(st.parameters.get("standoff", self.params.standoff))
            obj_xy = self.view.object_position(oid)[:2]
            spot = self._predicted_standoff(obj_xy, self.view.robot_xy(), standoff)
            pixel = self.view.pixel_of_ground(spot)
            if pixel is None:
                return self._viewpoint_toward(np.array([spot[0], spot[1], 0.0]))
            return InvokeAgent("navigation",
                               {"object_id": oid, "pixel": list(pixel)})

        if agent in ("reach_solver", "grasp"):
            pixel = self.view.pixel_of(oid) if self.view.visible(oid) else None
            if pixel is None:
                return self._viewpoint_toward(self.view.object_position(oid))
            extent = next((o.extent for o in self.view.scenario.all_objects()
                           if o.id == oid), 0.06)
            # Aim past the visible face to the body center.
            return InvokeAgent(agent, {"object_id": oid, "pixel": list(pixel),
                                       "approach_depth": extent / 2.0})

        if agent == "post_grasp_primitive":
            spot = self._place_spot(oid)
            pixel = self.view.pixel_of_ground(spot[:2])
            if pixel is None:
                return self._viewpoint_toward(np.array([spot[0], spot[1], 0.0]))
            return InvokeAgent("post_grasp_primitive",
                               {"object_id": oid, "kind": "place",
                                "pixel": list(pixel),
                                "release_height": float(spot[2])})
        raise ProviderError(f"oracle cannot dispatch agent {agent!r}")

    def _place_spot(self, obj_id: str) -> np.ndarray:
        """Release point for the carried object: swing it about the shoulder
        vertical axis (preserving the comfortable reach distance) to a side
        that clears the target line of sight. The object is released at its
        carried height; nothing falls in this kinematic world."""
        sim = self.view.sim
        scn = self.view.scenario
        obj = self.view.object_position(obj_id)
        shoulder = sim.shoulder_world()
        extent = next((o.extent for o in scn.all_objects() if o.id == obj_id),
                      0.1)
        cam = sim.base_to_world(sim.camera_pose().position.as_array())
        tgt = self.view.object_position(scn.target.id)
        arm_xy = obj[:2] - shoulder[:2]

        def swung(theta: float) -> np.ndarray:
            c, s = math.cos(theta), math.sin(theta)
            rot = np.array([[c, -s], [s, c]])
            xy = shoulder[:2] + rot @ arm_xy
            return np.array([xy[0], xy[1], obj[2]])

        candidates = [swung(t) for t in (0.9, -0.9, 1.2, -1.2, 0.6, -0.6)]
        for spot in candidates:
            if float(np.hypot(*(spot[:2] - tgt[:2]))) < 0.40:
                continue
            if _segment_distance_2d(cam[:2], tgt[:2], spot[:2]) \
                    < extent / 2.0 + 0.12:
                continue
            return spot
        return candidates[0]

    def _viewpoint_toward(self, p_world: np.ndarray) -> ViewpointAdjust:
        """One quantized neck/base step reducing the bearing or elevation
        error to the point; backs the base up as a last resort."""
        sim = self.view.sim
        p = self.params
        s = sim.state
        cam_origin = sim.base_to_world(sim.camera_pose().position.as_array())
        d = np.asarray(p_world, dtype=float) - cam_origin
        horiz = float(np.hypot(d[0], d[1]))
        yaw_err = wrap_angle(math.atan2(d[1], d[0]) - s.base.yaw - s.neck_yaw)
        desired_pitch = math.atan2(-d[2], horiz) if horiz > 1e-9 else 0.0
        pitch_err = desired_pitch - s.neck_pitch

        dyaw = dpitch = base_dyaw = 0.0
        if abs(yaw_err) > p.neck_step / 2:
            step = math.copysign(p.neck_step, yaw_err)
            lo, hi = sim.params.neck_yaw_limits
            if lo <= s.neck_yaw + step <= hi:
                dyaw = step
            else:
                base_dyaw = math.copysign(p.base_yaw_step, yaw_err)
        if abs(pitch_err) > p.neck_step / 2:
            lo, hi = sim.params.neck_pitch_limits
            step = math.copysign(p.neck_step, pitch_err)
            if lo <= s.neck_pitch + step <= hi:
                dpitch = step
        if dyaw == 0.0 and dpitch == 0.0 and base_dyaw == 0.0:
            # Centered yet still not visible: back up for a wider view.
            return ViewpointAdjust(base_dx=-p.base_trans_step)
        return ViewpointAdjust(neck_dpitch=dpitch, neck_dyaw=dyaw,
                               base_dyaw=base_dyaw)

    # ------------------------------------------------------------ replanning

    def on_failure(self, state: PlannerState, fb: Feedback) -> list[SubTask]:
        """Prepend a base re-adjustment when the failure reports the target
        outside the reach bound (Fig.-3 style recovery)."""
        measured = fb.measured
        shoulder = measured.get("shoulder_distance")
        bound = measured.get("reach_bound")
        if shoulder is None or bound is None or shoulder <= bound:
            return []
        try:
            failed = state.find(fb.subtask_id)
        except LocomanipError:
            return []
        oid = failed.parameters.get("object_id")
        if oid is None or failed.agent == "reach_solver":
            return []
        return [SubTask(state.fresh_id(),
                        f"re-adjust base toward the {oid}", "reach_solver",
                        {"object_id": oid})]


@dataclass
class ExecResult:
    feedback: Feedback
    base_moved: bool = False


def _segment_distance_2d(a: np.ndarray, b: np.ndarray, p: np.ndarray) -> float:
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0.0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.hypot(*(p - (a + t * ab))))


def _aim_point(sim: Simulator, p_t: Vec3, approach_depth: float) -> Vec3:
    """Push a lifted surface point along the camera ray toward the body
    center by the requested depth (base frame)."""
    if approach_depth <= 0.0:
        return p_t
    cam = sim.camera_pose().position.as_array()
    d = p_t.as_array() - cam
    n = float(np.linalg.norm(d))
    if n < 1e-9:
        return p_t
    return Vec3.from_array(p_t.as_array() + d / n * approach_depth)


def _fail(st_id: str, detail: str, measured: dict | None = None) -> ExecResult:
    return ExecResult(Feedback(st_id, "failure", detail, measured or {}))


def _exec_navigation(sim: Simulator, st_id: str, params: dict, obs,
                     traj: list) -> ExecResult:
    scn = sim.scenario
    pixel = tuple(params["pixel"])
    cam = sim.camera_pose()
    try:
        wps_base = plan_navigation(obs, scn.intrinsics, cam, pixel, scn.nav)
    except (LocomanipError, ValueError) as exc:
        return _fail(st_id, f"navigation planning failed: {exc}")
    wps_world = sim.state.base.transform_to_world(wps_base)
    idx = 0
    moved = False
    for _ in range(scn.sim.step_limit):
        tr = track_step(sim.state.base, wps_world, idx, sim.z0, scn.nav)
        idx = tr.active_index
        if tr.finished:
            break
        sim.step_sim(tr.command)
        moved = True
        traj.append((sim.state.base.x, sim.state.base.y))
        if sim.state.collided:
            return ExecResult(Feedback(st_id, "failure",
                                       "collision during navigation"), True)
    else:
        return ExecResult(Feedback(st_id, "failure",
                                   "waypoint tracking exceeded step limit"),
                          moved)
    final = wps_world[-1]
    dist = float(np.hypot(final[0] - sim.state.base.x,
                          final[1] - sim.state.base.y))
    return ExecResult(Feedback(st_id, "success", "arrived",
                               {"final_distance": dist}), moved)


def _exec_reach(sim: Simulator, st_id: str, params: dict, obs,
                traj: list) -> ExecResult:
    scn = sim.scenario
    pixel = tuple(params["pixel"])
    cam = sim.camera_pose()
    try:
        p_t, _ = lift_pixel(pixel, obs, scn.intrinsics, cam)
    except (LocomanipError, ValueError) as exc:
        return _fail(st_id, f"cannot lift target pixel: {exc}")
    p_t = _aim_point(sim, p_t, float(params.get("approach_depth", 0.0)))
    w = scn.reach.weights
    w_plan = replace(w, eta=w.eta * scn.reach.plan_eta_factor)
    adj = solve_adjustment(p_t, w_plan, sim.offset_model, scn.reach.dd_bound)
    if not adj.feasible:
        return _fail(st_id, "no feasible base adjustment",
                     {"shoulder_distance": adj.min_achievable_distance or 0.0,
                      "reach_bound": w.reach_bound})
    commands = adjustment_to_commands(adj, scn.nav.limits, p_t=p_t, z0=sim.z0,
                                      dt=scn.sim.dt)
    for cmd in commands:
        sim.step_sim(cmd)
        traj.append((sim.state.base.x, sim.state.base.y))
        if sim.state.collided:
            return ExecResult(Feedback(st_id, "failure",
                                       "collision during base adjustment"),
                              True)
    oid = params.get("object_id", scn.target.id)
    obj = sim.state.object_positions[oid]
    shoulder_dist = float(np.linalg.norm(obj - sim.shoulder_world()))
    return ExecResult(Feedback(st_id, "success", "base adjusted",
                               {"shoulder_distance": shoulder_dist,
                                "reach_bound": w.reach_bound}),
                      base_moved=bool(commands))


def _exec_grasp(sim: Simulator, st_id: str, params: dict, obs,
                state: PlannerState) -> ExecResult:
    scn = sim.scenario
    oid = params.get("object_id", scn.target.id)
    pixel = tuple(params["pixel"])
    cam = sim.camera_pose()
    try:
        p_t, _ = lift_pixel(pixel, obs, scn.intrinsics, cam)
    except (LocomanipError, ValueError) as exc:
        return _fail(st_id, f"cannot lift grasp pixel: {exc}")
    p_t = _aim_point(sim, p_t, float(params.get("approach_depth", 0.0)))
    sim.state.manipulation_target = oid
    target_world = sim.base_to_world(p_t.as_array())
    target_shoulder = sim.world_to_shoulder(target_world)
    _, cur_rot = sim.arm.fk(sim.state.arm_q)
    pose = Pose6D.from_rotation(target_shoulder, cur_rot)
    obj = sim.state.object_positions[oid]
    measured = {
        "shoulder_distance": float(np.linalg.norm(obj - sim.shoulder_world())),
        "reach_bound": scn.reach.weights.reach_bound,
    }
    try:
        q_goal = solve_ik(sim.arm, pose, sim.state.arm_q, scn.manip,
                          position_only=True)
    except LocomanipError as exc:
        return _fail(st_id, f"grasp IK failed: {exc}", measured)
    for _ in range(scn.sim.step_limit):
        if float(np.max(np.abs(sim.state.arm_q - q_goal))) < 1e-9:
            break
        sim.step_sim(ArmCommand(q_goal))
        if sim.state.collided:
            return _fail(st_id, "collision while reaching for the object",
                         measured)
    fb = sim.attempt_grasp(oid)
    if fb.outcome == "success":
        state.grasp_context = {
            "object_id": oid,
            "object_position": [float(v) for v in
                                sim.state.object_positions[oid]],
            "ee_position": [float(v) for v in sim.ee_world()],
        }
    return ExecResult(Feedback(st_id, fb.outcome, fb.detail, fb.measured))


def _exec_place(sim: Simulator, st_id: str, params: dict, obs,
                state: PlannerState) -> ExecResult:
    scn = sim.scenario
    oid = params.get("object_id")
    ctx = state.grasp_context
    if not ctx or ctx.get("object_id") != oid or sim.state.attached != oid:
        return _fail(st_id, "no grasped object to place")
    pixel = tuple(params["pixel"])
    cam = sim.camera_pose()
    try:
        ground, _ = lift_pixel(pixel, obs, scn.intrinsics, cam)
    except (LocomanipError, ValueError) as exc:
        return _fail(st_id, f"cannot lift place pixel: {exc}")
    extent = next((o.extent for o in scn.all_objects() if o.id == oid), 0.1)
    spot_world = sim.base_to_world(ground.as_array())
    release_z = float(params.get("release_height", extent / 2.0))
    place_target = np.array([spot_world[0], spot_world[1], release_z])

    ee_pos, ee_rot = sim.ee_pose_world()
    current = Pose6D.from_rotation(ee_pos, ee_rot)
    request = PrimitiveRequest(PrimitiveKind.PLACE,
                               (Keypoint("place_target", pixel),))
    seq = generate_primitive(
        PrimitiveKind.PLACE, {"place_target": Vec3.from_array(place_target)},
        request, current, scn.manip,
        grasped_object_position=Vec3(*ctx["object_position"]))

    yaw_inv = Rotation.from_euler("z", -sim.state.base.yaw)
    samples = tuple(
        (t, Pose6D.from_rotation(sim.world_to_shoulder(p.position_array()),
                                 yaw_inv * p.rotation()))
        for t, p in seq.samples)
    seq_shoulder = replace(seq, samples=samples)
    try:
        qtraj = trajectory_to_joints(sim.arm, seq_shoulder, sim.state.arm_q,
                                     scn.manip)
    except LocomanipError as exc:
        return _fail(st_id, f"place trajectory IK failed: {exc}")

    for q in qtraj:
        sim.step_sim(ArmCommand(q))
        if sim.state.collided:
            return _fail(st_id, "collision while placing")
    sim.release()
    placed = sim.state.object_positions[oid]
    err = float(np.hypot(placed[0] - place_target[0],
                         placed[1] - place_target[1]))
    # Withdraw along the known-good path, then hand the exemption back.
    for q in qtraj[::-1]:
        sim.step_sim(ArmCommand(q))
        if sim.state.collided:
            return _fail(st_id, "collision while withdrawing")
    sim.state.manipulation_target = None
    if err > 0.05:
        return _fail(st_id, f"object landed {err:.3f} m off the spot",
                     {"place_error": err})
    return ExecResult(Feedback(st_id, "success", "placed",
                               {"place_error": err}))


def execute_agent(sim: Simulator, decision: InvokeAgent, st_id: str, obs,
                  traj: list, state: PlannerState) -> ExecResult:
    try:
        if decision.agent == "navigation":
            return _exec_navigation(sim, st_id, decision.parameters, obs, traj)
        if decision.agent == "reach_solver":
            return _exec_reach(sim, st_id, decision.parameters, obs, traj)
        if decision.agent == "grasp":
            return _exec_grasp(sim, st_id, decision.parameters, obs, state)
        if decision.agent == "post_grasp_primitive":
            return _exec_place(sim, st_id, decision.parameters, obs, state)
        if decision.agent == "viewpoint":
            return ExecResult(Feedback(st_id, "success", "located"))
        return _fail(st_id, f"no executor for agent {decision.agent!r}")
    except LocomanipError as exc:
        # Module errors become sub-task failures, never crashes.
        return _fail(st_id, f"{type(exc).__name__}: {exc}")


def run_episode(scenario: Scenario, provider_factory=None,
                log_sink: list | None = None) -> EpisodeReport:
    """Run the perception-planning-control loop until Done or Abort.

    `provider_factory(view)` builds the decision provider; the default is the
    scripted oracle. Success requires plan completion with zero collisions.
    When `log_sink` is given, the memory bank's (command, feedback) text log
    is appended to it for inspection.
    """
    t0 = time.perf_counter()
    sim = Simulator(scenario)
    view = WorldView(sim, scenario)
    provider = (provider_factory(view) if provider_factory is not None
                else OracleProvider(view))
    bank = MemoryBank()
    traj: list = [(sim.state.base.x, sim.state.base.y)]

    try:
        state = PlannerState.from_goal(scenario.goal, provider)
    except ProviderError as exc:
        return _finalize(scenario, sim, None, traj,
                         abort_reason=f"decompose failed: {exc}", t0=t0)

    while True:
        obs = sim.render_depth()
        bank.archive_observation(obs, sim.camera_pose(), sim.state.tick)
        view.observation = obs
        try:
            decision = brain_mod.step(state, bank, provider, scenario.brain)
        except ProviderError as exc:
            state.status = "aborted"
            state.abort_reason = f"provider error: {exc}"
            bank.log(decision_to_json(Abort(state.abort_reason)), "")
            break
        if isinstance(decision, (Done, Abort)):
            bank.log(decision_to_json(decision), "")
            break
        if isinstance(decision, ViewpointAdjust):
            moved = sim.apply_viewpoint(decision)
            if moved:
                bank.notify_base_moved(sim.state.tick)
            bank.log(decision_to_json(decision), "")
            sim.state.tick += 1
            continue
        # InvokeAgent
        active = state.active_subtask()
        st_id = active.id if active is not None else "t?"
        result = execute_agent(sim, decision, st_id, obs, traj, state)
        if result.base_moved:
            bank.notify_base_moved(sim.state.tick)
        bank.log(decision_to_json(decision), result.feedback.to_json())
        if provider.tracks_subtasks:
            brain_mod.handle_feedback(state, result.feedback, provider,
                                      scenario.brain)
        sim.state.tick += 1

    if log_sink is not None:
        log_sink.extend(bank.text_log)
    return _finalize(scenario, sim, state, traj, state.abort_reason, t0,
                     bank=bank)


def _finalize(scenario: Scenario, sim: Simulator, state, traj,
              abort_reason: str, t0: float, bank=None) -> EpisodeReport:
    done = state is not None and state.status == "done"
    collided = sim.state.collided
    min_c = None
    grade = None
    if scenario.boxes:
        g = grade_clearance(traj, scenario)
        min_c, grade = g.min_clearance, g.category
    outcomes = ([st.to_dict() for st in state.subtasks]
                if state is not None else [])
    return EpisodeReport(
        family=scenario.family,
        difficulty=scenario.difficulty,
        seed=scenario.seed,
        goal=scenario.goal,
        success=bool(done and not collided),
        collision=bool(collided),
        decisions=state.decisions_taken if state is not None else 0,
        sim_steps=sim.state.sim_steps,
        subtask_outcomes=outcomes,
        min_clearance=min_c,
        clearance_grade=grade,
        abort_reason=abort_reason,
        wall_time_s=time.perf_counter() - t0,
    )


def scenario_solvable(scn: Scenario) -> bool:
    """Generator self-check mirroring the episode pipeline."""
    try:
        w = scn.reach.weights
        band = reachable_height_band(
            scn.leg, w.reach_bound * scn.reach.plan_eta_factor, margin=0.05)
        if not band[0] <= scn.target.position[2] <= band[1]:
            return False
        for occ in scn.occluders:
            if not band[0] <= occ.position[2] <= band[1]:
                return False

        sim = Simulator(scn)
        if sim.state.collided:
            return False
        sx, sy = scn.robot_start.x, scn.robot_start.y
        for box in scn.boxes:
            if box.footprint_distance(sx, sy) < 0.9:
                return False
            if box.footprint_distance(*scn.target.position[:2]) < 1.3:
                return False

        obs = sim.render_depth()
        view = WorldView(sim, scn)
        view.observation = obs

        if scn.occluders:
            tp = np.asarray(scn.target.position, dtype=float)
            if sim.ray_clear(tp, {scn.target.id}):
                return False  # family premise: the target starts occluded
            # Removing the primary occluder alone must reveal the target
            # (decoys may not also block it).
            occ = scn.occluders[0]
            if not sim.ray_clear(tp, {scn.target.id, occ.id}):
                return False
            if not sim.object_visible(occ.id) or view.pixel_of(occ.id) is None:
                return False
        else:
            if not sim.object_visible(scn.target.id):
                return False

        # Navigation dry-run when the episode will actually navigate.
        first_obj = (scn.occluders[0] if scn.occluders else scn.target)
        standoff = (scn.brain.occluder_standoff if scn.occluders
                    else scn.brain.standoff)
        obj_xy = np.asarray(first_obj.position[:2])
        start_xy = np.array([sx, sy])
        dist = float(np.hypot(*(obj_xy - start_xy)))
        if dist <= scn.brain.nav_skip_dist and view.pixel_of(first_obj.id) is None:
            # The first invocation lifts this object's pixel directly; when
            # navigating first, the object only needs a pixel at close range.
            return False
        if dist > scn.brain.nav_skip_dist:
            spot = obj_xy - (obj_xy - start_xy) / dist * standoff
            pixel = sim.pixel_of_ground_point(spot, obs)
            if pixel is None:
                return False
            wps = plan_navigation(obs, scn.intrinsics, sim.camera_pose(),
                                  pixel, scn.nav)
            wps_world = sim.state.base.transform_to_world(wps)
            if scn.boxes and not _corridor_clear(
                    wps_world, scn, scn.sim.robot_radius + 0.22):
                return False
            tail = np.vstack([wps_world[-1], obj_xy])
            if scn.boxes and not _corridor_clear(
                    tail, scn, scn.sim.robot_radius + 0.12):
                return False
        return True
    except (LocomanipError, ValueError):
        return False


def _corridor_clear(pts: np.ndarray, scn: Scenario, clearance: float) -> bool:
    dense = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, int(math.ceil(float(np.hypot(*(b - a))) / 0.02)))
        for k in range(1, n + 1):
            dense.append(a + (b - a) * (k / n))
    for p in dense:
        for box in scn.boxes:
            if box.footprint_distance(p[0], p[1]) < clearance:
                return False
    return True
