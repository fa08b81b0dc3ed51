import numpy as np
import pytest

from semfuse.geometry import CameraIntrinsics, Pose
from semfuse.labels import LabelMap, ROLE_RAW
from semfuse.synthetic import default_room, render_oracle, sample_trajectory
from semfuse.volume import Frame, SemanticVolume


@pytest.fixture(scope="session")
def intr():
    return CameraIntrinsics(277.13, 277.13, 160.0, 120.0, 320, 240)


@pytest.fixture(scope="session")
def small_intr():
    return CameraIntrinsics(70.0, 70.0, 40.0, 30.0, 80, 60)


@pytest.fixture(scope="session")
def room():
    return default_room()


@pytest.fixture(scope="session")
def room_poses(room):
    return sample_trajectory(room, 24, seed=5)


@pytest.fixture(scope="session")
def clean_room_volume(room, room_poses, intr):
    """Room fused from noiseless predictions (prediction = ground truth)."""
    vol = SemanticVolume(0.05)
    for n, pose in enumerate(room_poses):
        depth, gt, _ = render_oracle(room, pose, intr)
        frame = Frame(n, depth, LabelMap(gt.data, ROLE_RAW), pose)
        vol.integrate_frame(frame, intr)
    return vol


def plane_frame(intr, z=2.0, class_id=7, index=0):
    """Head-on view of an infinite plane at camera depth z."""
    depth = np.full((intr.height, intr.width), z, dtype=np.float32)
    pred = LabelMap(np.full((intr.height, intr.width), class_id, dtype=np.uint8),
                    ROLE_RAW)
    return Frame(index, depth, pred, Pose.identity())
