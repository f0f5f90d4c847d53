"""Serial-chain kinematics: forward kinematics, geometric jacobians, and the
arm / dexterous-hand / squatting-leg models used across the toolkit.

Models load from and save to a JSON kinematics file: each joint carries a
parent transform (xyz + quaternion, scalar-last), a rotation axis in its own
frame, and limits in radians.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

_IDENTITY_QUAT = (0.0, 0.0, 0.0, 1.0)


def _axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    t = 1.0 - c
    return np.array([
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [x * y * t + z * s, c + y * y * t, y * z * t - x * s],
        [x * z * t - y * s, y * z * t + x * s, c + z * z * t],
    ])


@dataclass(frozen=True)
class JointSpec:
    """One revolute joint: fixed parent transform then rotation about `axis`."""

    name: str
    origin_xyz: tuple[float, float, float]
    origin_quat: tuple[float, float, float, float] = _IDENTITY_QUAT  # x,y,z,w
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    lower: float = -math.pi
    upper: float = math.pi

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError(f"joint {self.name}: limits not well-ordered")
        a = np.asarray(self.axis, dtype=float)
        n = np.linalg.norm(a)
        if n < 1e-12:
            raise ValueError(f"joint {self.name}: zero rotation axis")
        object.__setattr__(self, "axis", tuple(a / n))


@dataclass(frozen=True)
class SerialChain:
    """Ordered revolute joints plus a fixed end-effector offset transform."""

    joints: tuple[JointSpec, ...]
    tip_xyz: tuple[float, float, float] = (0.0, 0.0, 0.0)
    tip_quat: tuple[float, float, float, float] = _IDENTITY_QUAT
    name: str = "chain"

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def lower(self) -> np.ndarray:
        return np.array([j.lower for j in self.joints])

    @property
    def upper(self) -> np.ndarray:
        return np.array([j.upper for j in self.joints])

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(q, dtype=float), self.lower, self.upper)

    def mid(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def fk(self, q: np.ndarray) -> tuple[np.ndarray, Rotation]:
        """End-effector position and orientation in the chain base frame."""
        pos, rot, _, _ = self._fk_full(q)
        return pos, rot

    def fk_position(self, q: np.ndarray) -> np.ndarray:
        return self._fk_full(q)[0]

    def _constants(self):
        """Per-joint constant arrays, built once per chain instance."""
        cache = getattr(self, "_const_cache", None)
        if cache is None:
            cache = {
                "origin_xyz": np.array([j.origin_xyz for j in self.joints]),
                "origin_rot": np.array([
                    Rotation.from_quat(j.origin_quat).as_matrix()
                    for j in self.joints]),
                "axis": np.array([j.axis for j in self.joints]),
                "tip_xyz": np.asarray(self.tip_xyz),
                "tip_rot": Rotation.from_quat(self.tip_quat).as_matrix(),
            }
            object.__setattr__(self, "_const_cache", cache)
        return cache

    def _fk_full(self, q: np.ndarray):
        """Returns (tip position, tip Rotation, joint origins (n,3),
        world joint axes (n,3))."""
        q = np.asarray(q, dtype=float)
        if q.shape[0] != self.dof:
            raise ValueError(f"expected {self.dof} joint values, got {q.shape[0]}")
        const = self._constants()
        rot = np.eye(3)
        pos = np.zeros(3)
        origins = np.zeros((self.dof, 3))
        axes = np.zeros((self.dof, 3))
        for k in range(self.dof):
            pos = pos + rot @ const["origin_xyz"][k]
            rot = rot @ const["origin_rot"][k]
            origins[k] = pos
            axes[k] = rot @ const["axis"][k]
            rot = rot @ _axis_angle_matrix(const["axis"][k], q[k])
        pos = pos + rot @ const["tip_xyz"]
        rot = rot @ const["tip_rot"]
        return pos, Rotation.from_matrix(rot), origins, axes

    def joint_positions(self, q: np.ndarray) -> np.ndarray:
        """Joint-frame origins plus the tip, (n+1, 3); used for collision
        sampling along the links."""
        pos, _, origins, _ = self._fk_full(q)
        return np.vstack([origins, pos])

    def jacobian(self, q: np.ndarray) -> np.ndarray:
        """Geometric jacobian (6, n): linear rows then angular rows."""
        tip, _, origins, axes = self._fk_full(q)
        lin = np.cross(axes, tip - origins)
        return np.vstack([lin.T, axes.T])

    def reach(self) -> float:
        """Upper bound on tip distance from the chain base."""
        total = float(np.linalg.norm(self.tip_xyz))
        for j in self.joints:
            total += float(np.linalg.norm(j.origin_xyz))
        return total


# The arm model is simply a serial chain rooted at the shoulder.
ArmModel = SerialChain


@dataclass(frozen=True)
class HandModel:
    """Dexterous hand as independent per-finger chains in the palm frame."""

    fingers: tuple[tuple[str, SerialChain], ...]

    @property
    def dof(self) -> int:
        return sum(chain.dof for _, chain in self.fingers)

    @property
    def finger_count(self) -> int:
        return len(self.fingers)

    @property
    def lower(self) -> np.ndarray:
        return np.concatenate([chain.lower for _, chain in self.fingers])

    @property
    def upper(self) -> np.ndarray:
        return np.concatenate([chain.upper for _, chain in self.fingers])

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(q, dtype=float), self.lower, self.upper)

    def split(self, q: np.ndarray) -> list[np.ndarray]:
        q = np.asarray(q, dtype=float)
        if q.shape[0] != self.dof:
            raise ValueError(f"expected {self.dof} hand joint values")
        out, k = [], 0
        for _, chain in self.fingers:
            out.append(q[k:k + chain.dof])
            k += chain.dof
        return out

    def fingertips(self, q: np.ndarray) -> np.ndarray:
        """Fingertip positions (K, 3) in the palm frame."""
        return np.array([
            chain.fk_position(qs)
            for (_, chain), qs in zip(self.fingers, self.split(q))
        ])

    def fingertip_jacobian(self, q: np.ndarray) -> np.ndarray:
        """Block-structured position jacobian (3K, dof)."""
        jac = np.zeros((3 * self.finger_count, self.dof))
        col = 0
        for row, ((_, chain), qs) in enumerate(zip(self.fingers, self.split(q))):
            jac[3 * row:3 * row + 3, col:col + chain.dof] = chain.jacobian(qs)[:3]
            col += chain.dof
        return jac


@dataclass(frozen=True)
class LegModel:
    """Planar squat model: symmetric thigh/shank bend keeps the pelvis above
    the ankles; the torso leans forward proportionally to the knee bend, which
    is what makes the shoulder offset vary with base height."""

    thigh: float = 0.45
    shank: float = 0.45
    torso: float = 0.42
    lean_gain: float = 0.55
    z_min: float = 0.42
    z_max: float = 0.80
    shoulder_forward_offset: float = 0.02

    def __post_init__(self):
        if not (0 < self.z_min < self.z_max <= self.thigh + self.shank):
            raise ValueError("leg height range incompatible with link lengths")

    def knee_bend(self, z: float) -> float:
        ratio = np.clip(z / (self.thigh + self.shank), -1.0, 1.0)
        return math.acos(float(ratio))

    def torso_pitch(self, z: float) -> float:
        return self.lean_gain * self.knee_bend(z)

    def shoulder_forward(self, z: float) -> float:
        """Shoulder forward offset (base-frame x) at pelvis height z."""
        return self.torso * math.sin(self.torso_pitch(z)) + self.shoulder_forward_offset

    def shoulder_above_ground(self, z: float) -> float:
        return z + self.torso * math.cos(self.torso_pitch(z))

    def shoulder_in_adjusted_frame(self, z: float, z0: float) -> tuple[float, float]:
        """(dx, dz) of the shoulder in the base frame translated with the
        height change, i.e. the convention the offset-table stores."""
        return self.shoulder_forward(z), self.shoulder_above_ground(z) - (z - z0)


def default_arm() -> ArmModel:
    """7-DoF anthropomorphic arm rooted at the shoulder, ~0.63 m reach."""
    return SerialChain(
        joints=(
            JointSpec("shoulder_pitch", (0.0, 0.0, 0.0), axis=(0, 1, 0),
                      lower=-3.0, upper=3.0),
            JointSpec("shoulder_roll", (0.0, 0.0, 0.0), axis=(1, 0, 0),
                      lower=-2.2, upper=2.2),
            JointSpec("shoulder_yaw", (0.0, 0.0, 0.0), axis=(0, 0, 1),
                      lower=-2.9, upper=2.9),
            JointSpec("elbow", (0.0, 0.0, -0.28), axis=(0, 1, 0),
                      lower=-2.5, upper=0.05),
            JointSpec("wrist_yaw", (0.0, 0.0, -0.25), axis=(0, 0, 1),
                      lower=-2.9, upper=2.9),
            JointSpec("wrist_pitch", (0.0, 0.0, 0.0), axis=(0, 1, 0),
                      lower=-1.6, upper=1.6),
            JointSpec("wrist_roll", (0.0, 0.0, 0.0), axis=(1, 0, 0),
                      lower=-2.9, upper=2.9),
        ),
        tip_xyz=(0.0, 0.0, -0.10),
        name="arm",
    )


def neutral_arm_pose() -> np.ndarray:
    """Slightly-bent rest configuration used as the default IK seed."""
    return np.array([0.35, -0.25, 0.0, -0.9, 0.0, 0.3, 0.0])


def _finger(name: str, base: tuple[float, float, float], length: float,
            upper: float = 1.6) -> tuple[str, SerialChain]:
    chain = SerialChain(
        joints=(JointSpec(f"{name}_bend", base, axis=(0, 1, 0),
                          lower=0.0, upper=upper),),
        tip_xyz=(length, 0.0, 0.0),
        name=name,
    )
    return name, chain


def default_hand() -> HandModel:
    """5-finger, 6-DoF hand: 2-DoF thumb plus one curl joint per finger."""
    thumb = SerialChain(
        joints=(
            JointSpec("thumb_swing", (0.01, 0.035, -0.01), axis=(0, 0, 1),
                      lower=-0.2, upper=1.4),
            JointSpec("thumb_bend", (0.035, 0.0, 0.0), axis=(0, 1, 0),
                      lower=0.0, upper=1.5),
        ),
        tip_xyz=(0.045, 0.0, 0.0),
        name="thumb",
    )
    return HandModel(fingers=(
        ("thumb", thumb),
        _finger("index", (0.03, 0.027, 0.0), 0.075),
        _finger("middle", (0.03, 0.009, 0.0), 0.080),
        _finger("ring", (0.03, -0.009, 0.0), 0.075),
        _finger("pinky", (0.03, -0.027, 0.0), 0.065),
    ))


def default_leg() -> LegModel:
    return LegModel()


def _joint_to_dict(j: JointSpec) -> dict:
    return {
        "name": j.name,
        "origin_xyz": list(j.origin_xyz),
        "origin_quat": list(j.origin_quat),
        "axis": list(j.axis),
        "limits": [j.lower, j.upper],
    }


def _joint_from_dict(d: dict) -> JointSpec:
    return JointSpec(
        name=d["name"],
        origin_xyz=tuple(d["origin_xyz"]),
        origin_quat=tuple(d.get("origin_quat", _IDENTITY_QUAT)),
        axis=tuple(d["axis"]),
        lower=float(d["limits"][0]),
        upper=float(d["limits"][1]),
    )


def _chain_to_dict(c: SerialChain) -> dict:
    return {
        "name": c.name,
        "joints": [_joint_to_dict(j) for j in c.joints],
        "tip_xyz": list(c.tip_xyz),
        "tip_quat": list(c.tip_quat),
    }


def _chain_from_dict(d: dict) -> SerialChain:
    return SerialChain(
        joints=tuple(_joint_from_dict(j) for j in d["joints"]),
        tip_xyz=tuple(d.get("tip_xyz", (0.0, 0.0, 0.0))),
        tip_quat=tuple(d.get("tip_quat", _IDENTITY_QUAT)),
        name=d.get("name", "chain"),
    )


def model_to_dict(model) -> dict:
    if isinstance(model, HandModel):
        return {"schema": 1, "type": "hand",
                "fingers": [_chain_to_dict(c) for _, c in model.fingers]}
    if isinstance(model, LegModel):
        return {"schema": 1, "type": "leg",
                "thigh": model.thigh, "shank": model.shank,
                "torso": model.torso, "lean_gain": model.lean_gain,
                "z_min": model.z_min, "z_max": model.z_max,
                "shoulder_forward_offset": model.shoulder_forward_offset}
    if isinstance(model, SerialChain):
        return {"schema": 1, "type": "arm", **_chain_to_dict(model)}
    raise TypeError(f"unsupported model type {type(model)!r}")


def model_from_dict(d: dict):
    kind = d.get("type")
    if kind == "hand":
        return HandModel(fingers=tuple(
            (c.get("name", f"finger{k}"), _chain_from_dict(c))
            for k, c in enumerate(d["fingers"])))
    if kind == "leg":
        return LegModel(
            thigh=float(d["thigh"]), shank=float(d["shank"]),
            torso=float(d["torso"]), lean_gain=float(d["lean_gain"]),
            z_min=float(d["z_min"]), z_max=float(d["z_max"]),
            shoulder_forward_offset=float(d.get("shoulder_forward_offset", 0.0)))
    if kind == "arm":
        return _chain_from_dict(d)
    raise ValueError(f"unknown kinematics type {kind!r}")


def save_kinematics(model, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2,
                                     sort_keys=True) + "\n")


def load_kinematics(path: str | Path):
    return model_from_dict(json.loads(Path(path).read_text()))
