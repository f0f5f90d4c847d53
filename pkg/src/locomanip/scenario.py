"""Scenario schema (versioned JSON) and the seeded benchmark generator for
the five task families, each with an easy and a hard mode.

Generation is rejection-sampled: a layout is kept only if an internal
solvability check passes (reach band covers the target height, the rendered
start view yields a clear A* corridor, required objects are visible). The
seed fully determines the generated content.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .brain import BrainParams
from .errors import GenerationError
from .geometry import CameraIntrinsics, Pose2D
from .kinematics import LegModel, default_leg
from .manip import ManipParams
from .nav import NavParams
from .reach import ReachParams

FAMILIES = ("heights", "positions", "heights_positions", "obstacles", "occlusion")
DIFFICULTIES = ("easy", "hard")

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Box:
    """Axis-aligned static obstacle: center and full extents, meters."""

    center: tuple[float, float, float]
    extents: tuple[float, float, float]

    @property
    def half(self) -> np.ndarray:
        return np.asarray(self.extents, dtype=float) / 2.0

    @property
    def center_array(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)

    def footprint_distance(self, x: float, y: float) -> float:
        """2D distance from a point to the box's ground rectangle."""
        hx, hy = self.extents[0] / 2.0, self.extents[1] / 2.0
        dx = max(abs(x - self.center[0]) - hx, 0.0)
        dy = max(abs(y - self.center[1]) - hy, 0.0)
        return math.hypot(dx, dy)

    def z_interval(self) -> tuple[float, float]:
        hz = self.extents[2] / 2.0
        return self.center[2] - hz, self.center[2] + hz

    def contains(self, p: np.ndarray, pad: float = 0.0) -> bool:
        d = np.abs(np.asarray(p, dtype=float) - self.center_array)
        return bool(np.all(d <= self.half + pad))


@dataclass
class SceneObject:
    """Small manipulable cube: the grasp target or a removable occluder."""

    id: str
    position: tuple[float, float, float]
    extent: float
    removable: bool = False

    @property
    def position_array(self) -> np.ndarray:
        return np.asarray(self.position, dtype=float)

    def as_box(self, position: np.ndarray | None = None) -> Box:
        pos = self.position if position is None else tuple(float(v) for v in position)
        return Box(pos, (self.extent, self.extent, self.extent))


@dataclass(frozen=True)
class SimParams:
    """Scenario "sim" section: integration, camera mount, grasp check."""

    dt: float = 0.05
    robot_radius: float = 0.30
    r_grasp: float = 0.06
    far_clip: float = 30.0
    tau_height: float = 0.25
    arm_rate: float = 2.0
    neck_pitch_limits: tuple[float, float] = (-1.2, 1.2)
    neck_yaw_limits: tuple[float, float] = (-2.0, 2.0)
    default_neck_pitch: float = 0.35
    mount_forward: float = 0.08
    mount_up: float = 0.55
    collision_band: float = 1.5
    depth_noise_std: float = 0.0  # default-off Gaussian depth noise
    clearance_bands: tuple[float, float] = (0.2, 1.0)
    step_limit: int = 20000

    @classmethod
    def from_dict(cls, d: dict) -> "SimParams":
        d = dict(d)
        for key in ("neck_pitch_limits", "neck_yaw_limits", "clearance_bands"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=70.0, fy=70.0, cx=64.0, cy=48.0,
                            width=128, height=96)


@dataclass
class Scenario:
    family: str
    difficulty: str
    seed: int
    goal: str
    target: SceneObject
    boxes: list[Box] = field(default_factory=list)
    occluders: list[SceneObject] = field(default_factory=list)
    robot_start: Pose2D = field(default_factory=lambda: Pose2D(0.0, 0.0, 0.0))
    start_height: float = 0.72
    intrinsics: CameraIntrinsics = field(default_factory=default_intrinsics)
    nav: NavParams = field(default_factory=NavParams)
    reach: ReachParams = field(default_factory=ReachParams)
    manip: ManipParams = field(default_factory=ManipParams)
    brain: BrainParams = field(default_factory=BrainParams)
    sim: SimParams = field(default_factory=SimParams)
    leg: LegModel = field(default_factory=default_leg)
    fault_first_grasp: bool = False

    def all_objects(self) -> list[SceneObject]:
        return [self.target] + list(self.occluders)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "family": self.family,
            "difficulty": self.difficulty,
            "seed": self.seed,
            "goal": self.goal,
            "target": {"id": self.target.id, "position": list(self.target.position),
                       "extent": self.target.extent},
            "boxes": [{"center": list(b.center), "extents": list(b.extents)}
                      for b in self.boxes],
            "occluders": [{"id": o.id, "position": list(o.position),
                           "extent": o.extent, "removable": True}
                          for o in self.occluders],
            "robot_start": {"x": self.robot_start.x, "y": self.robot_start.y,
                            "yaw": self.robot_start.yaw},
            "start_height": self.start_height,
            "camera": {"fx": self.intrinsics.fx, "fy": self.intrinsics.fy,
                       "cx": self.intrinsics.cx, "cy": self.intrinsics.cy,
                       "width": self.intrinsics.width,
                       "height": self.intrinsics.height},
            "nav": _params_dict(self.nav, NavParams()),
            "reach": _reach_dict(self.reach),
            "manip": _params_dict(self.manip, ManipParams()),
            "brain": _params_dict(self.brain, BrainParams()),
            "sim": _params_dict(self.sim, SimParams()),
            "leg": {"thigh": self.leg.thigh, "shank": self.leg.shank,
                    "torso": self.leg.torso, "lean_gain": self.leg.lean_gain,
                    "z_min": self.leg.z_min, "z_max": self.leg.z_max,
                    "shoulder_forward_offset": self.leg.shoulder_forward_offset},
            "fault_first_grasp": self.fault_first_grasp,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        if d.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported scenario schema {d.get('schema')!r}")
        t = d["target"]
        cam = d["camera"]
        return cls(
            family=d["family"],
            difficulty=d["difficulty"],
            seed=int(d["seed"]),
            goal=d["goal"],
            target=SceneObject(t["id"], tuple(t["position"]), float(t["extent"])),
            boxes=[Box(tuple(b["center"]), tuple(b["extents"]))
                   for b in d.get("boxes", [])],
            occluders=[SceneObject(o["id"], tuple(o["position"]),
                                   float(o["extent"]), removable=True)
                       for o in d.get("occluders", [])],
            robot_start=Pose2D(d["robot_start"]["x"], d["robot_start"]["y"],
                               d["robot_start"]["yaw"]),
            start_height=float(d.get("start_height", 0.72)),
            intrinsics=CameraIntrinsics(cam["fx"], cam["fy"], cam["cx"],
                                        cam["cy"], int(cam["width"]),
                                        int(cam["height"])),
            nav=NavParams.from_dict(d.get("nav", {})),
            reach=ReachParams.from_dict(d.get("reach", {})),
            manip=ManipParams.from_dict(d.get("manip", {})),
            brain=BrainParams.from_dict(d.get("brain", {})),
            sim=SimParams.from_dict(d.get("sim", {})),
            leg=LegModel(**d["leg"]) if "leg" in d else default_leg(),
            fault_first_grasp=bool(d.get("fault_first_grasp", False)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _params_dict(params, defaults) -> dict:
    """Only the fields that differ from defaults, keeping files small."""
    out = {}
    for name in params.__dataclass_fields__:
        val = getattr(params, name)
        if val != getattr(defaults, name):
            if hasattr(val, "__dataclass_fields__"):
                val = _params_dict(val, type(val)())
            elif isinstance(val, tuple):
                val = list(val)
            out[name] = val
    return out


def _reach_dict(params: ReachParams) -> dict:
    out = _params_dict(params, ReachParams())
    return out


def reachable_height_band(leg: LegModel, eta_l: float,
                          margin: float = 0.05) -> tuple[float, float]:
    """Ground heights graspable for some base height in the leg's range."""
    lo = leg.shoulder_above_ground(leg.z_min) - eta_l + margin
    hi = leg.shoulder_above_ground(leg.z_max) + eta_l - margin
    return lo, hi


def generate_scenario(family: str, difficulty: str, seed: int) -> Scenario:
    """Seeded sampling within family-specific ranges; layouts that fail the
    internal solvability check are rejected and resampled."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    if difficulty not in DIFFICULTIES:
        raise ValueError(f"unknown difficulty {difficulty!r}")
    rng = random.Random(f"{family}:{difficulty}:{seed}")
    for _ in range(300):
        scn = _sample(family, difficulty, seed, rng)
        if check_solvable(scn):
            return scn
    raise GenerationError(
        f"could not generate a solvable {family}/{difficulty} scenario "
        f"for seed {seed} within the rejection budget")


def _sample(family: str, difficulty: str, seed: int,
            rng: random.Random) -> Scenario:
    hard = difficulty == "hard"
    leg = default_leg()
    shoulder_std = leg.shoulder_above_ground(0.72)

    def target_at(dist: float, bearing: float, z: float) -> SceneObject:
        return SceneObject("target", (dist * math.cos(bearing),
                                      dist * math.sin(bearing), z), 0.06)

    boxes: list[Box] = []
    occluders: list[SceneObject] = []

    if family == "heights":
        z = rng.uniform(0.1, 1.6) if hard else rng.uniform(0.4, 1.2)
        target = target_at(rng.uniform(0.70, 0.95), rng.uniform(-0.15, 0.15), z)
    elif family == "positions":
        dist = rng.uniform(2.0, 5.0) if hard else rng.uniform(0.8, 2.0)
        z = shoulder_std + rng.uniform(-0.30, 0.30)
        target = target_at(dist, rng.uniform(-0.45, 0.45), z)
    elif family == "heights_positions":
        if hard:  # union of the hard ranges
            z = rng.uniform(0.1, 1.6)
            dist = rng.uniform(0.8, 5.0)
        else:  # intersection of the easy ranges
            z = rng.uniform(0.4, 1.2)
            dist = rng.uniform(0.8, 2.0)
        target = target_at(dist, rng.uniform(-0.45, 0.45), z)
    elif family == "obstacles":
        dist = rng.uniform(3.0, 5.0) if hard else rng.uniform(2.4, 3.5)
        z = shoulder_std + rng.uniform(-0.25, 0.25)
        bearing = rng.uniform(-0.35, 0.35)
        target = target_at(dist, bearing, z)
        count = rng.randint(3, 5) if hard else 1
        for _ in range(count):
            for _ in range(25):  # placement must clear the start and target
                along = rng.uniform(0.35, 0.75)
                lateral = rng.uniform(-1.4, 1.4)
                cx = target.position[0] * along - lateral * math.sin(bearing)
                cy = target.position[1] * along + lateral * math.cos(bearing)
                sx, sy = rng.uniform(0.25, 0.5), rng.uniform(0.25, 0.5)
                hgt = rng.uniform(0.4, 0.8)
                box = Box((cx, cy, hgt / 2.0), (sx, sy, hgt))
                if box.footprint_distance(0.0, 0.0) < 0.95:
                    continue
                if box.footprint_distance(*target.position[:2]) < 1.35:
                    continue
                boxes.append(box)
                break
    else:  # occlusion
        dist = rng.uniform(1.5, 2.4) if hard else rng.uniform(1.5, 2.0)
        z = shoulder_std + rng.uniform(-0.20, 0.20)
        bearing = rng.uniform(-0.30, 0.30)
        target = target_at(dist, bearing, z)
        if hard:
            size = rng.uniform(0.12, 0.18)
            ahead = rng.uniform(0.32, 0.45)
        else:
            size, ahead = 0.15, 0.38  # the fixed easy-mode occluder
        tpos = target.position_array
        cam_guess = np.array([0.08, 0.0, 1.27])
        ray = tpos - cam_guess
        occ = tpos - ray / np.linalg.norm(ray) * ahead
        occluders.append(SceneObject("occluder1", tuple(occ), size,
                                     removable=True))
        if hard and rng.random() < 0.5:
            side = 1.0 if rng.random() < 0.5 else -1.0
            decoy = (occ[0], occ[1] + side * rng.uniform(0.7, 1.0), occ[2])
            occluders.append(SceneObject("occluder2", decoy,
                                         rng.uniform(0.10, 0.16),
                                         removable=True))

    return Scenario(
        family=family, difficulty=difficulty, seed=seed,
        goal=f"pick up the {target.id}",
        target=target, boxes=boxes, occluders=occluders,
        leg=leg,
    )


def check_solvable(scn: Scenario) -> bool:
    """Generator self-check mirroring the episode pipeline: reach band,
    start-view visibility, and (with obstacles) a clear rendered-grid A*
    corridor verified against the ground-truth boxes."""
    from . import episode  # local import: episode builds on this module

    return episode.scenario_solvable(scn)
