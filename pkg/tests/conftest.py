import numpy as np
import pytest

from locomanip.geometry import CameraIntrinsics, CameraPose, Pose2D, Vec3
from locomanip.kinematics import default_arm, default_hand, default_leg


@pytest.fixture
def intr():
    return CameraIntrinsics(fx=70.0, fy=70.0, cx=64.0, cy=48.0,
                            width=128, height=96)


@pytest.fixture
def level_cam():
    """Camera at the base origin, level, axes aligned with the base frame."""
    return CameraPose(position=Vec3(0.0, 0.0, 0.0), pitch=0.0, yaw=0.0,
                      base_pose=Pose2D(0.0, 0.0, 0.0), base_height=0.72)


@pytest.fixture
def arm():
    return default_arm()


@pytest.fixture
def hand():
    return default_hand()


@pytest.fixture
def leg():
    return default_leg()


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
