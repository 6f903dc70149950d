"""Unprojection, z-buffered projection, alignment, merging and camera paths."""

import numpy as np
import pytest

from bloomgs.config import TrajectoryConfig
from bloomgs.errors import AlignmentFailedError, InvalidArgumentError
from bloomgs.services.geometry import (
    align_depth, build_trajectory, merge_cloud, pose_offset, project, render_training_set,
    support_cameras, trajectory_yaws, unproject,
)
from bloomgs.services.scene_core import Camera, ColorImage, DepthMap, Mask, PointCloud

from conftest import make_camera


def principal_camera(width=5, height=5, focal=4.0):
    """Camera whose principal point sits on the center of pixel (2, 2)."""
    k = np.array([[focal, 0.0, 2.5], [0.0, focal, 2.5], [0.0, 0.0, 1.0]])
    return Camera(k, np.hstack([np.eye(3), np.zeros((3, 1))]), width, height)


class TestTrajectory:

    def test_alternating_yaws(self):
        np.testing.assert_allclose(trajectory_yaws(5, 0.1), [0.0, 0.1, -0.1, 0.2, -0.2])

    def test_single_camera(self):
        assert trajectory_yaws(1, 0.5) == [0.0]

    def test_first_camera_is_initial_and_rest_keep_center(self):
        initial = make_camera(translation=(0.0, 0.0, 0.0))
        cams = build_trajectory(initial, TrajectoryConfig(num_cameras=3, rotation_step=0.2, support_count=0))
        assert cams[0] is initial
        for cam in cams[1:]:
            np.testing.assert_allclose(cam.center, initial.center, atol=1e-12)
        # yawing about +y turns the forward axis (row 2 of R) toward +x or -x
        assert cams[1].rotation[2, 0] * cams[2].rotation[2, 0] < 0

    def test_support_cameras_face_sphere_center(self):
        base = make_camera()
        cams = support_cameras([base], [2.0], shift_degrees=10.0)
        assert len(cams) == 2
        target = np.array([0.0, 0.0, 2.0])
        for cam in cams:
            np.testing.assert_allclose(np.linalg.norm(cam.center - target), 2.0, atol=1e-12)
            look = cam.world_to_camera(target[None, :])[0]
            np.testing.assert_allclose(look[:2], 0.0, atol=1e-12)

    def test_zero_shift_duplicates_base_pose(self):
        base = make_camera(translation=(0.3, 0.0, 1.0))
        for cam in support_cameras([base], [1.5], shift_degrees=0.0):
            np.testing.assert_allclose(cam.extrinsic, base.extrinsic, atol=1e-12)

    def test_pose_offset_pitch_only_keeps_center(self):
        cam = pose_offset(make_camera(), 0.0, 0.2)
        np.testing.assert_allclose(cam.center, 0.0, atol=1e-12)


class TestUnproject:

    def test_principal_pixel_lies_on_axis(self):
        cam = principal_camera()
        depth = DepthMap.dense(np.full((5, 5), 3.0))
        only = np.zeros((5, 5), dtype=bool)
        only[2, 2] = True
        cloud = unproject(ColorImage.filled(5, 5, (0.2, 0.4, 0.6)), depth, cam, Mask(only), frame_index=3)
        np.testing.assert_allclose(cloud.positions, [[0.0, 0.0, 3.0]], atol=1e-12)
        np.testing.assert_allclose(cloud.colors, [[0.2, 0.4, 0.6]])
        np.testing.assert_array_equal(cloud.source_frame, [3])

    def test_invalid_selected_depth_rejected(self):
        cam = principal_camera()
        with pytest.raises(InvalidArgumentError):
            unproject(ColorImage.filled(5, 5, (0, 0, 0)), DepthMap.invalid(5, 5), cam, Mask.full(5, 5))

    def test_unproject_then_project_is_identity(self, camera, rng):
        depth = DepthMap.dense(rng.uniform(1.0, 3.0, size=(16, 16)))
        image = ColorImage(rng.uniform(size=(16, 16, 3)))
        cloud = unproject(image, depth, camera, Mask.full(16, 16))
        colors, mask, z = project(cloud, camera)
        assert mask.count == 256
        np.testing.assert_allclose(z.values, depth.values, atol=1e-9)
        np.testing.assert_allclose(colors.values, image.values)

    @pytest.mark.parametrize("seed", range(20))
    def test_round_trip_under_random_pose(self, seed):
        rng = np.random.default_rng(seed)
        q, r = np.linalg.qr(rng.normal(size=(3, 3)))
        q = q * np.sign(np.diag(r))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        camera = make_camera(64, 64, focal=50.0, rotation=q, translation=rng.normal(scale=2.0, size=3))
        depth = DepthMap.dense(rng.uniform(1.0, 3.0, size=(64, 64)))
        image = ColorImage(rng.uniform(size=(64, 64, 3)))

        colors, mask, z = project(unproject(image, depth, camera, Mask.full(64, 64)), camera)
        assert mask.count == 64 * 64
        np.testing.assert_array_equal(colors.values, image.values)
        np.testing.assert_allclose(z.values, depth.values, rtol=1e-12)


class TestProject:

    def test_nearer_point_wins(self):
        cam = principal_camera()
        cloud = PointCloud([[0.0, 0.0, 2.0], [0.0, 0.0, 1.0]], [[1, 0, 0], [0, 0, 1]], [0, 0])
        colors, mask, depth = project(cloud, cam)
        assert mask.count == 1
        np.testing.assert_allclose(colors.values[2, 2], [0, 0, 1])
        assert depth.values[2, 2] == 1.0

    def test_lower_index_wins_ties(self):
        cam = principal_camera()
        cloud = PointCloud([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]], [[1, 0, 0], [0, 1, 0]], [0, 0])
        colors, _, _ = project(cloud, cam)
        np.testing.assert_allclose(colors.values[2, 2], [1, 0, 0])

    def test_points_behind_camera_are_dropped(self):
        cloud = PointCloud([[0.0, 0.0, -1.0]], [[1, 1, 1]], [0])
        _, mask, _ = project(cloud, principal_camera())
        assert mask.count == 0

    def test_empty_cloud_gives_uncovered_frame(self):
        colors, mask, depth = project(PointCloud.empty(), principal_camera())
        assert mask.count == 0
        assert not depth.validity.any()
        np.testing.assert_allclose(colors.values, 0.5)


class TestAlignment:

    def test_recovers_affine_map(self, camera, rng):
        reference = DepthMap.dense(rng.uniform(1.0, 4.0, size=(16, 16)))
        estimate = DepthMap.dense(2.0 * reference.values + 0.5)
        result = align_depth(estimate, camera, reference, Mask.full(16, 16))
        assert result.scale == pytest.approx(0.5, abs=1e-9)
        assert result.shift == pytest.approx(-0.25, abs=1e-9)
        assert not result.shift_only
        np.testing.assert_allclose(result.depth.values, reference.values, atol=1e-9)

    def test_empty_overlap_fails(self, camera):
        depth = DepthMap.dense(np.ones((16, 16)))
        with pytest.raises(AlignmentFailedError) as info:
            align_depth(depth, camera, depth, Mask.full(16, 16, value=False))
        assert info.value.overlap_count == 0

    def test_constant_estimate_falls_back_to_shift(self, camera):
        estimate = DepthMap.dense(np.full((16, 16), 2.0))
        reference = DepthMap.dense(np.full((16, 16), 3.0))
        result = align_depth(estimate, camera, reference, Mask.full(16, 16))
        assert result.shift_only
        assert result.scale == 1.0
        assert result.shift == pytest.approx(1.0)


class TestMerge:

    def test_adds_only_inpainted_valid_pixels(self, camera):
        existing = PointCloud([[0.0, 0.0, 1.0]], [[1, 1, 1]], [0])
        covered = np.zeros((16, 16), dtype=bool)
        covered[:, :10] = True
        validity = np.ones((16, 16), dtype=bool)
        validity[0, 15] = False
        depth = DepthMap(np.where(validity, 2.0, 0.0), validity)
        merged = merge_cloud(existing, ColorImage.filled(16, 16, (0, 1, 0)), depth, camera,
                             Mask(covered), frame_index=2)
        assert len(merged) == 1 + 16 * 6 - 1
        assert (merged.source_frame[1:] == 2).all()

    def test_training_set_needs_points(self, camera):
        with pytest.raises(InvalidArgumentError):
            render_training_set(PointCloud.empty(), [camera])
