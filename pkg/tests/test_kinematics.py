import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from locomanip.kinematics import (
    HandModel,
    JointSpec,
    LegModel,
    SerialChain,
    default_arm,
    default_hand,
    default_leg,
    load_kinematics,
    model_from_dict,
    model_to_dict,
    neutral_arm_pose,
    save_kinematics,
)


def two_link_planar():
    return SerialChain(
        joints=(
            JointSpec("j1", (0.0, 0.0, 0.0), axis=(0, 0, 1)),
            JointSpec("j2", (1.0, 0.0, 0.0), axis=(0, 0, 1)),
        ),
        tip_xyz=(1.0, 0.0, 0.0),
        name="planar2",
    )


class TestSerialChain:
    def test_planar_fk_closed_form(self):
        chain = two_link_planar()
        for q1, q2 in [(0.0, 0.0), (0.3, -0.7), (1.2, 0.4)]:
            pos, _ = chain.fk(np.array([q1, q2]))
            expect = [math.cos(q1) + math.cos(q1 + q2),
                      math.sin(q1) + math.sin(q1 + q2), 0.0]
            np.testing.assert_allclose(pos, expect, atol=1e-12)

    def test_jacobian_matches_finite_differences(self, arm, rng):
        # central differences as the independent oracle
        for _ in range(5):
            q = rng.uniform(arm.lower, arm.upper)
            jac = arm.jacobian(q)
            eps = 1e-7
            for k in range(arm.dof):
                dq = np.zeros(arm.dof)
                dq[k] = eps
                p_plus, r_plus = arm.fk(q + dq)
                p_minus, r_minus = arm.fk(q - dq)
                lin = (p_plus - p_minus) / (2 * eps)
                ang = (r_plus * r_minus.inv()).as_rotvec() / (2 * eps)
                np.testing.assert_allclose(jac[:3, k], lin, atol=1e-5)
                np.testing.assert_allclose(jac[3:, k], ang, atol=1e-5)

    def test_limits_validation(self):
        with pytest.raises(ValueError):
            JointSpec("bad", (0, 0, 0), lower=1.0, upper=-1.0)
        with pytest.raises(ValueError):
            JointSpec("bad", (0, 0, 0), axis=(0, 0, 0))

    def test_joint_positions_shape(self, arm):
        pts = arm.joint_positions(neutral_arm_pose())
        assert pts.shape == (arm.dof + 1, 3)

    def test_reach_upper_bound(self, arm, rng):
        reach = arm.reach()
        for _ in range(50):
            q = rng.uniform(arm.lower, arm.upper)
            assert np.linalg.norm(arm.fk_position(q)) <= reach + 1e-9

    def test_default_arm_dof(self, arm):
        assert arm.dof >= 6  # full 6-DoF IK needs at least six joints


class TestHandModel:
    def test_dof_budget(self, hand):
        assert hand.dof == 6  # 2-DoF thumb + 4 single-joint fingers
        assert hand.finger_count == 5

    def test_fingertips_shape_and_split(self, hand, rng):
        q = rng.uniform(hand.lower, hand.upper)
        tips = hand.fingertips(q)
        assert tips.shape == (5, 3)
        assert sum(len(s) for s in hand.split(q)) == 6

    def test_fingertip_jacobian_matches_fd(self, hand, rng):
        q = rng.uniform(hand.lower, hand.upper)
        jac = hand.fingertip_jacobian(q)
        eps = 1e-7
        for k in range(hand.dof):
            dq = np.zeros(hand.dof)
            dq[k] = eps
            fd = (hand.fingertips(q + dq) - hand.fingertips(q - dq)) / (2 * eps)
            np.testing.assert_allclose(jac[:, k], fd.reshape(-1), atol=1e-5)


class TestLegModel:
    def test_standing_geometry(self, leg):
        # at full extension the knee is straight and the torso is upright
        z_top = leg.thigh + leg.shank
        assert leg.knee_bend(z_top) == pytest.approx(0.0, abs=1e-9)
        assert leg.shoulder_above_ground(z_top) == pytest.approx(
            z_top + leg.torso, abs=1e-9)

    def test_squatting_leans_forward(self, leg):
        assert leg.shoulder_forward(0.5) > leg.shoulder_forward(0.8)
        assert leg.shoulder_above_ground(0.5) < leg.shoulder_above_ground(0.8)

    def test_adjusted_frame_identity_at_z0(self, leg):
        z0 = 0.72
        dx, dz = leg.shoulder_in_adjusted_frame(z0, z0)
        assert dz == pytest.approx(leg.shoulder_above_ground(z0))
        assert dx == pytest.approx(leg.shoulder_forward(z0))

    def test_invalid_range_rejected(self):
        with pytest.raises(ValueError):
            LegModel(z_min=0.9, z_max=0.8)


class TestKinematicsIO:
    def test_arm_roundtrip(self, tmp_path, arm, rng):
        path = tmp_path / "arm.json"
        save_kinematics(arm, path)
        back = load_kinematics(path)
        assert isinstance(back, SerialChain)
        q = rng.uniform(arm.lower, arm.upper)
        np.testing.assert_allclose(back.fk_position(q), arm.fk_position(q),
                                   atol=1e-12)

    def test_hand_roundtrip(self, tmp_path, hand, rng):
        path = tmp_path / "hand.json"
        save_kinematics(hand, path)
        back = load_kinematics(path)
        assert isinstance(back, HandModel)
        q = rng.uniform(hand.lower, hand.upper)
        np.testing.assert_allclose(back.fingertips(q), hand.fingertips(q),
                                   atol=1e-12)

    def test_leg_roundtrip(self, tmp_path, leg):
        path = tmp_path / "leg.json"
        save_kinematics(leg, path)
        back = load_kinematics(path)
        assert back == leg

    def test_quaternion_origin_preserved(self, rng):
        rot = Rotation.from_euler("xyz", [0.3, -0.2, 0.9])
        chain = SerialChain(
            joints=(JointSpec("j", (0.1, 0.2, 0.3),
                              origin_quat=tuple(rot.as_quat()),
                              axis=(0, 0, 1)),),
            tip_xyz=(0.5, 0.0, 0.0))
        back = model_from_dict(model_to_dict(chain))
        q = np.array([0.7])
        np.testing.assert_allclose(back.fk_position(q), chain.fk_position(q),
                                   atol=1e-12)

    def test_unknown_type_rejected(self):
        with pytest.raises(ValueError):
            model_from_dict({"type": "wing"})


def test_default_models_construct():
    assert default_arm().dof == 7
    assert default_hand().dof == 6
    assert default_leg().z_min < default_leg().z_max
