"""Projection math against hand-computed values and round-trip properties."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semfuse.geometry import CameraIntrinsics, Pose, load_intrinsics, load_pose, \
    project_point, save_intrinsics, save_pose, transform_point, unproject_pixel


@pytest.fixture
def intr():
    return CameraIntrinsics(250.0, 250.0, 160.0, 120.0, 320, 240)


class TestUnproject:
    def test_principal_point_is_optical_axis(self, intr):
        p = unproject_pixel(intr.cx, intr.cy, 2.0, intr)
        np.testing.assert_allclose(p, [0.0, 0.0, 2.0])

    def test_unit_tangent_one_focal_length_right(self):
        # needs cx + fx inside the image for the precondition to hold
        wide = CameraIntrinsics(100.0, 100.0, 160.0, 120.0, 320, 240)
        p = unproject_pixel(wide.cx + wide.fx, wide.cy, 1.0, wide)
        np.testing.assert_allclose(p, [1.0, 0.0, 1.0])

    def test_closed_form_example(self, intr):
        # ((100-160)*1.5/250, (50-120)*1.5/250, 1.5) = (-0.36, -0.42, 1.5)
        p = unproject_pixel(100, 50, 1.5, intr)
        np.testing.assert_allclose(p, [-0.36, -0.42, 1.5])

    def test_rejects_bad_inputs(self, intr):
        with pytest.raises(ValueError):
            unproject_pixel(100, 50, 0.0, intr)
        with pytest.raises(ValueError):
            unproject_pixel(100, 50, -1.0, intr)
        with pytest.raises(ValueError):
            unproject_pixel(320, 50, 1.0, intr)
        with pytest.raises(ValueError):
            unproject_pixel(100, -1, 1.0, intr)


class TestProject:
    def test_optical_axis_lands_on_principal_point(self, intr):
        u, v, d = project_point(np.array([0.0, 0.0, 3.0]), intr)
        assert (u, v, d) == (intr.cx, intr.cy, 3.0)

    def test_inverse_of_unproject_example(self, intr):
        u, v, d = project_point(np.array([-0.36, -0.42, 1.5]), intr)
        np.testing.assert_allclose([u, v, d], [100.0, 50.0, 1.5])

    def test_behind_camera_rejected(self, intr):
        with pytest.raises(ValueError):
            project_point(np.array([0.0, 0.0, -1.0]), intr)

    @given(u=st.integers(0, 319), v=st.integers(0, 239),
           depth=st.floats(0.05, 20.0))
    @settings(max_examples=200, deadline=None)
    def test_round_trip_identity(self, u, v, depth):
        intr = CameraIntrinsics(250.0, 250.0, 160.0, 120.0, 320, 240)
        pu, pv, pd = project_point(unproject_pixel(u, v, depth, intr), intr)
        assert abs(pu - u) < 1e-9 and abs(pv - v) < 1e-9
        assert abs(pd - depth) < 1e-12


def _yaw90():
    return Pose(np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]),
                np.zeros(3))


class TestPose:
    def test_identity_transform(self):
        np.testing.assert_allclose(
            transform_point(Pose.identity(), np.array([1.0, 2.0, 3.0])), [1, 2, 3])

    def test_pure_translation(self):
        pose = Pose(np.eye(3), np.array([0.0, 0.0, 1.0]))
        np.testing.assert_allclose(transform_point(pose, np.zeros(3)), [0, 0, 1])

    def test_yaw_quarter_turn(self):
        np.testing.assert_allclose(
            transform_point(_yaw90(), np.array([1.0, 0.0, 0.0])), [0, 1, 0],
            atol=1e-12)

    def test_compose_inverse_is_identity(self):
        pose = _yaw90().compose(Pose(np.eye(3), np.array([0.5, -1.0, 2.0])))
        round_trip = pose.compose(pose.inverse())
        np.testing.assert_allclose(round_trip.matrix(), np.eye(4), atol=1e-9)

    def test_non_orthonormal_rotation_is_hard_error(self):
        bad = np.eye(3)
        bad[0, 0] = 1.001
        with pytest.raises(ValueError):
            Pose(bad, np.zeros(3))

    def test_reflection_rejected(self):
        bad = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            Pose(bad, np.zeros(3))

    @given(u=st.integers(0, 319), v=st.integers(0, 239),
           depth=st.floats(0.05, 20.0), yaw=st.floats(0, 6.28))
    @settings(max_examples=100, deadline=None)
    def test_world_round_trip(self, u, v, depth, yaw):
        intr = CameraIntrinsics(250.0, 250.0, 160.0, 120.0, 320, 240)
        c, s = np.cos(yaw), np.sin(yaw)
        pose = Pose(np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]]),
                    np.array([0.3, -1.2, 0.7]))
        p_world = transform_point(pose, unproject_pixel(u, v, depth, intr))
        back = transform_point(pose.inverse(), p_world)
        pu, pv, pd = project_point(back, intr)
        assert abs(pu - u) < 1e-6 and abs(pv - v) < 1e-6
        assert abs(pd - depth) < 1e-9


class TestFiles:
    def test_intrinsics_round_trip(self, tmp_path, intr):
        path = tmp_path / "intrinsics.txt"
        save_intrinsics(intr, path)
        loaded = load_intrinsics(path)
        assert loaded == intr

    def test_pose_round_trip(self, tmp_path):
        pose = _yaw90().compose(Pose(np.eye(3), np.array([0.25, 1.5, -0.125])))
        path = tmp_path / "pose.txt"
        save_pose(pose, path)
        loaded = load_pose(path)
        np.testing.assert_array_equal(loaded.matrix(), pose.matrix())

    def test_pose_orthonormality_checked_on_load(self, tmp_path):
        path = tmp_path / "pose.txt"
        path.write_text("1 0 0 0\n0 2 0 0\n0 0 1 0\n0 0 0 1\n")
        with pytest.raises(ValueError):
            load_pose(path)

    def test_truncated_intrinsics_rejected(self, tmp_path):
        path = tmp_path / "intrinsics.txt"
        path.write_text("250.0 250.0 160.0\n")
        with pytest.raises(ValueError):
            load_intrinsics(path)
