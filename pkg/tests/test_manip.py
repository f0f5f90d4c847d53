import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from locomanip.errors import (
    DegenerateDirection,
    IKFailure,
    InvalidKeypointDepth,
)
from locomanip.geometry import DepthImage, Vec3
from locomanip.kinematics import neutral_arm_pose
from locomanip.manip import (
    EEPoseSequence,
    Keypoint,
    ManipParams,
    Pose6D,
    PrimitiveKind,
    PrimitiveRequest,
    RetargetRequest,
    generate_primitive,
    lift_keypoints,
    retarget_fingertips,
    solve_ik,
    trajectory_to_joints,
)

IDENTITY = np.array([0.0, 0.0, 0.0, 1.0])


def ee(x, y, z, quat=IDENTITY):
    return Pose6D(Vec3(x, y, z), quat)


class TestPose6D:
    def test_normalizes_quaternion(self):
        q = np.array([0.0, 0.0, 0.0, 1.0 + 3e-7])
        assert np.linalg.norm(Pose6D(Vec3(0, 0, 0), q).orientation) \
            == pytest.approx(1.0, abs=1e-12)

    def test_rejects_non_unit(self):
        with pytest.raises(ValueError):
            Pose6D(Vec3(0, 0, 0), np.array([0.0, 0.0, 0.0, 2.0]))


class TestPrimitiveRequest:
    def test_required_keypoints_enforced(self):
        with pytest.raises(ValueError):
            PrimitiveRequest(PrimitiveKind.ROTATE,
                             (Keypoint("grasp", (1, 1)),), angle=1.0,
                             axis=(0, 0, 1))

    def test_lift_keypoints_reports_label(self, intr, level_cam):
        req = PrimitiveRequest(PrimitiveKind.PUSH,
                               (Keypoint("contact", (5, 5)),),
                               distance=0.1, direction=(1, 0, 0))
        depth = DepthImage(np.zeros((intr.height, intr.width)))
        with pytest.raises(InvalidKeypointDepth) as err:
            lift_keypoints(req, depth, intr, level_cam)
        assert err.value.label == "contact"

    def test_lift_keypoints_order(self, intr, level_cam):
        vals = np.zeros((intr.height, intr.width))
        vals[10, 10] = 1.0
        vals[20, 20] = 2.0
        req = PrimitiveRequest(
            PrimitiveKind.ROTATE,
            (Keypoint("grasp", (10, 10)), Keypoint("pivot", (20, 20))),
            angle=0.5, axis=(0, 0, 1))
        pts = lift_keypoints(req, DepthImage(vals), intr, level_cam)
        assert len(pts) == 2
        assert pts[0].x < pts[1].x


class TestPrimitives:
    PARAMS = ManipParams()

    def make_push(self, dist, direction=(1.0, 0.0, 0.0)):
        req = PrimitiveRequest(PrimitiveKind.PUSH,
                               (Keypoint("contact", (0, 0)),),
                               distance=dist, direction=direction)
        return generate_primitive(
            PrimitiveKind.PUSH, {"contact": Vec3(0.5, 0.0, 0.9)}, req,
            ee(0.2, 0.1, 0.8), self.PARAMS)

    def test_sequence_begins_with_align(self):
        seq = self.make_push(0.1)
        assert seq.phases[0] == "align"
        assert "execute" in seq.phases

    def test_times_strictly_increasing(self):
        seq = self.make_push(0.1)
        times = [t for t, _ in seq.samples]
        assert all(b > a for a, b in zip(times, times[1:]))

    def test_zero_distance_push_is_identity(self):
        seq = self.make_push(0.0)
        execute = seq.phase_samples("execute")
        assert len(execute) == 1
        align_end = seq.phase_samples("align")[-1][1]
        np.testing.assert_array_equal(execute[0][1].position_array(),
                                      align_end.position_array())

    def test_push_approach_offset_before_contact(self):
        seq = self.make_push(0.2)
        align_end = seq.phase_samples("align")[-1][1].position_array()
        np.testing.assert_allclose(
            align_end, [0.5 - self.PARAMS.approach_offset, 0.0, 0.9],
            atol=1e-12)

    def test_push_displacement_along_direction(self):
        seq = self.make_push(0.2)
        align_end = seq.phase_samples("align")[-1][1].position_array()
        final = seq.samples[-1][1].position_array()
        np.testing.assert_allclose(final - align_end, [0.2, 0.0, 0.0],
                                   atol=1e-12)

    def test_pull_moves_along_requested_direction(self):
        # drawer pull toward -x: every execute sample displaced only along -x
        req = PrimitiveRequest(PrimitiveKind.PULL,
                               (Keypoint("contact", (0, 0)),),
                               distance=0.25, direction=(-1.0, 0.0, 0.0))
        seq = generate_primitive(
            PrimitiveKind.PULL, {"contact": Vec3(0.6, 0.0, 0.9)}, req,
            ee(0.2, 0.0, 0.9), self.PARAMS)
        align_end = seq.phase_samples("align")[-1][1].position_array()
        # approach lands in front of the handle along the motion direction
        np.testing.assert_allclose(
            align_end, [0.6 - self.PARAMS.approach_offset, 0.0, 0.9],
            atol=1e-12)
        prev = align_end
        for _, pose in seq.phase_samples("execute"):
            step = pose.position_array() - prev
            assert step[0] <= 1e-12  # straight-line oracle: -x only
            assert abs(step[1]) <= 1e-12 and abs(step[2]) <= 1e-12
            prev = pose.position_array()
        total = prev - align_end
        np.testing.assert_allclose(total, [-0.25, 0.0, 0.0], atol=1e-12)

    def test_place_offset_preserved_exactly(self):
        grasped = Vec3(0.45, 0.05, 0.85)
        current = ee(0.5, 0.0, 0.9)
        req = PrimitiveRequest(PrimitiveKind.PLACE,
                               (Keypoint("place_target", (0, 0)),))
        target = Vec3(0.3, -0.4, 0.85)
        seq = generate_primitive(PrimitiveKind.PLACE,
                                 {"place_target": target}, req, current,
                                 self.PARAMS, grasped_object_position=grasped)
        offset = current.position_array() - grasped.as_array()
        final = seq.samples[-1][1].position_array()
        np.testing.assert_allclose(final - target.as_array(), offset,
                                   atol=1e-9)
        # orientation preserved throughout
        for _, pose in seq.samples:
            np.testing.assert_allclose(pose.orientation, current.orientation,
                                       atol=1e-12)

    def test_place_hover_above_final(self):
        req = PrimitiveRequest(PrimitiveKind.PLACE,
                               (Keypoint("place_target", (0, 0)),))
        seq = generate_primitive(
            PrimitiveKind.PLACE, {"place_target": Vec3(0.3, 0.2, 0.8)}, req,
            ee(0.5, 0.0, 0.9), self.PARAMS,
            grasped_object_position=Vec3(0.5, 0.0, 0.85))
        hover = seq.phase_samples("align")[-1][1].position_array()
        final = seq.samples[-1][1].position_array()
        assert hover[2] - final[2] == pytest.approx(self.PARAMS.hover_height)

    def rotate_seq(self, angle, axis=(0.0, 0.0, 1.0)):
        req = PrimitiveRequest(
            PrimitiveKind.ROTATE,
            (Keypoint("grasp", (0, 0)), Keypoint("pivot", (0, 0))),
            angle=angle, axis=axis)
        return generate_primitive(
            PrimitiveKind.ROTATE,
            {"grasp": Vec3(0.5, 0.1, 0.9), "pivot": Vec3(0.5, 0.4, 0.9)},
            req, ee(0.3, 0.0, 0.8), self.PARAMS)

    def test_full_circle_rotation_is_identity(self):
        seq = self.rotate_seq(2 * math.pi)
        align_end = seq.phase_samples("align")[-1][1]
        final = seq.samples[-1][1]
        np.testing.assert_allclose(final.position_array(),
                                   align_end.position_array(), atol=1e-9)
        dot = abs(np.dot(final.orientation, align_end.orientation))
        assert dot == pytest.approx(1.0, abs=1e-9)

    def test_rotation_pivot_distance_constant(self):
        seq = self.rotate_seq(1.3, axis=(0.0, 1.0, 0.0))
        pivot = np.array([0.5, 0.4, 0.9])
        execute = seq.phase_samples("execute")
        r0 = np.linalg.norm(execute[0][1].position_array() - pivot)
        for _, pose in execute:
            r = np.linalg.norm(pose.position_array() - pivot)
            assert abs(r - r0) <= 1e-9

    def test_rotation_co_rotates_orientation(self):
        seq = self.rotate_seq(math.pi / 2)
        align_rot = seq.phase_samples("align")[-1][1].rotation()
        final_rot = seq.samples[-1][1].rotation()
        rel = final_rot * align_rot.inv()
        np.testing.assert_allclose(rel.as_rotvec(), [0, 0, math.pi / 2],
                                   atol=1e-9)

    def test_zero_direction_rejected(self):
        req = PrimitiveRequest(PrimitiveKind.PUSH,
                               (Keypoint("contact", (0, 0)),),
                               distance=0.1, direction=(0.0, 0.0, 0.0))
        with pytest.raises(DegenerateDirection):
            generate_primitive(PrimitiveKind.PUSH,
                               {"contact": Vec3(0.5, 0, 0.9)}, req,
                               ee(0.2, 0, 0.8), self.PARAMS)

    def test_sequence_validation(self):
        with pytest.raises(ValueError):
            EEPoseSequence(((0.0, ee(0, 0, 0)),), ("execute",))


class TestSolveIK:
    def test_fixed_point_returns_seed(self, arm):
        seed = neutral_arm_pose()
        pos, rot = arm.fk(seed)
        out = solve_ik(arm, Pose6D.from_rotation(pos, rot), seed)
        np.testing.assert_array_equal(out, seed)

    def test_unreachable_raises_with_residual(self, arm):
        target = Pose6D(Vec3(2.0, 0.0, 0.0), IDENTITY)
        with pytest.raises(IKFailure) as err:
            solve_ik(arm, target, neutral_arm_pose())
        assert err.value.position_error > 1.0

    def test_fk_generated_targets(self, arm, rng):
        params = ManipParams()
        for _ in range(20):
            q_true = rng.uniform(arm.lower, arm.upper)
            pos, rot = arm.fk(q_true)
            q = solve_ik(arm, Pose6D.from_rotation(pos, rot),
                         neutral_arm_pose(), params)
            p2, r2 = arm.fk(q)
            assert np.linalg.norm(p2 - pos) <= params.ik_pos_tol
            assert np.linalg.norm((rot * r2.inv()).as_rotvec()) \
                <= params.ik_ori_tol

    def test_outputs_within_limits(self, arm, rng):
        for _ in range(10):
            q_true = rng.uniform(arm.lower, arm.upper)
            pos, rot = arm.fk(q_true)
            q = solve_ik(arm, Pose6D.from_rotation(pos, rot),
                         neutral_arm_pose())
            assert np.all(q >= arm.lower - 1e-12)
            assert np.all(q <= arm.upper + 1e-12)

    def test_deterministic(self, arm, rng):
        q_true = rng.uniform(arm.lower, arm.upper)
        pos, rot = arm.fk(q_true)
        target = Pose6D.from_rotation(pos, rot)
        a = solve_ik(arm, target, neutral_arm_pose())
        b = solve_ik(arm, target, neutral_arm_pose())
        np.testing.assert_array_equal(a, b)

    def test_position_only_mode(self, arm):
        target = Pose6D(Vec3(0.25, 0.15, -0.35), IDENTITY)
        q = solve_ik(arm, target, neutral_arm_pose(), position_only=True)
        assert np.linalg.norm(arm.fk_position(q)
                              - target.position_array()) <= 1e-3


class TestTrajectoryToJoints:
    def test_single_pose_at_seed(self, arm):
        seed = neutral_arm_pose()
        pos, rot = arm.fk(seed)
        seq = EEPoseSequence(((0.0, Pose6D.from_rotation(pos, rot)),),
                             ("align",))
        traj = trajectory_to_joints(arm, seq, seed)
        assert traj.shape == (1, arm.dof)
        np.testing.assert_array_equal(traj[0], seed)

    def push_sequence(self, arm, dist=0.2):
        seed = neutral_arm_pose()
        pos, rot = arm.fk(seed)
        contact = Vec3.from_array(pos + np.array([0.05, 0.0, 0.0]))
        req = PrimitiveRequest(PrimitiveKind.PUSH,
                               (Keypoint("contact", (0, 0)),),
                               distance=dist, direction=(1.0, 0.0, 0.0))
        seq = generate_primitive(PrimitiveKind.PUSH, {"contact": contact},
                                 req, Pose6D.from_rotation(pos, rot))
        return seed, seq

    def test_straight_push_tracks_line(self, arm):
        seed, seq = self.push_sequence(arm)
        traj = trajectory_to_joints(arm, seq, seed)
        # FK replay oracle: execute-phase configs stay on the push line
        n_align = len(seq.phase_samples("align"))
        start = seq.phase_samples("execute")[0][1].position_array()
        direction = np.array([1.0, 0.0, 0.0])
        count = 0
        for q in traj:
            p = arm.fk_position(q)
            along = np.dot(p - start, direction)
            if -1e-9 <= along:
                lateral = (p - start) - along * direction
                if np.linalg.norm(p - start) < 0.35:
                    count += 1
                    assert np.linalg.norm(lateral) <= 2e-3
        assert count >= len(traj) - n_align

    def test_consecutive_steps_within_dq_max(self, arm):
        params = ManipParams()
        seed, seq = self.push_sequence(arm, dist=0.15)
        traj = trajectory_to_joints(arm, seq, seed, params)
        diffs = np.abs(np.diff(traj, axis=0))
        assert diffs.size == 0 or np.max(diffs) <= params.dq_max + 1e-12

    def test_failure_carries_sample_index(self, arm):
        seed = neutral_arm_pose()
        pos, rot = arm.fk(seed)
        far = Pose6D(Vec3(3.0, 0.0, 0.0), rot.as_quat())
        seq = EEPoseSequence(
            ((0.0, Pose6D.from_rotation(pos, rot)), (1.0, far)),
            ("align", "execute"))
        with pytest.raises(IKFailure) as err:
            trajectory_to_joints(arm, seq, seed)
        assert err.value.sample_index == 1


class TestRetargeting:
    def test_realizable_targets_recovered(self, hand, rng):
        for _ in range(10):
            q_true = rng.uniform(hand.lower, hand.upper)
            tips = hand.fingertips(q_true)
            res = retarget_fingertips(hand, RetargetRequest(tips))
            assert res.residual <= 1e-6
            np.testing.assert_allclose(hand.fingertips(res.joints), tips,
                                       atol=1e-3)

    def test_finger_count_mismatch(self, hand):
        with pytest.raises(ValueError):
            retarget_fingertips(hand, RetargetRequest(np.zeros((3, 3))))

    def test_distant_point_matches_per_finger_oracle(self, hand):
        """All targets at one far point: fingers are independent chains, so
        the optimum decomposes; a dense per-finger sweep is the oracle."""
        point = np.array([1.0, 0.0, -1.0])
        req = RetargetRequest(np.tile(point, (5, 1)))
        res = retarget_fingertips(hand, req)
        assert res.residual > 0

        oracle = 0.0
        for name, chain in hand.fingers:
            if chain.dof == 1:
                qs = np.linspace(chain.lower[0], chain.upper[0], 4001)
                d2 = min(np.sum((chain.fk_position(np.array([q])) - point) ** 2)
                         for q in qs)
            else:
                g0 = np.linspace(chain.lower[0], chain.upper[0], 180)
                g1 = np.linspace(chain.lower[1], chain.upper[1], 180)
                d2 = min(np.sum((chain.fk_position(np.array([a, b])) - point) ** 2)
                         for a in g0 for b in g1)
            oracle += d2
        assert res.residual <= oracle + 1e-4
        assert res.residual >= oracle - 5e-3  # oracle grid is an upper bound

    def test_permuting_matched_pairs_keeps_residual(self, hand, rng):
        q_true = rng.uniform(hand.lower, hand.upper)
        tips = hand.fingertips(q_true) + rng.normal(0, 0.02, (5, 3))
        res = retarget_fingertips(hand, RetargetRequest(tips))
        # swap two fingers' targets along with their chains
        fingers = list(hand.fingers)
        fingers[1], fingers[2] = fingers[2], fingers[1]
        swapped_hand = type(hand)(fingers=tuple(fingers))
        swapped_tips = tips.copy()
        swapped_tips[[1, 2]] = swapped_tips[[2, 1]]
        res2 = retarget_fingertips(swapped_hand, RetargetRequest(swapped_tips))
        assert res2.residual == pytest.approx(res.residual, abs=1e-9)

    def test_multistart_never_worse_than_any_run(self, hand, rng):
        for _ in range(5):
            tips = rng.uniform(-0.1, 0.15, (5, 3))
            res = retarget_fingertips(hand, RetargetRequest(tips))
            assert res.residual <= min(res.run_residuals) + 1e-15
            assert res.residual <= min(res.start_residuals) + 1e-15

    def test_joint_limits_respected(self, hand, rng):
        tips = rng.uniform(-0.2, 0.2, (5, 3))
        res = retarget_fingertips(hand, RetargetRequest(tips))
        assert np.all(res.joints >= hand.lower - 1e-12)
        assert np.all(res.joints <= hand.upper + 1e-12)
