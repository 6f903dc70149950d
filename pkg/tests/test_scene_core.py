"""Domain types, rotations and the seeded stream."""

import numpy as np
import pytest

from bloomgs.errors import InvalidArgumentError
from bloomgs.services.scene_core import (
    Camera, ColorImage, DepthMap, Gaussian3D, Mask, PointCloud, Rng, axis_angle_rotation,
    covariance_from_factors, quaternion_to_rotation,
)

from conftest import make_camera

QUARTER_TURN_Z = (np.cos(np.pi / 4), 0.0, 0.0, np.sin(np.pi / 4))


class TestCovariance:

    def test_identity(self):
        np.testing.assert_allclose(covariance_from_factors((1, 1, 1), (1, 0, 0, 0)), np.eye(3), atol=1e-15)

    def test_axis_aligned(self):
        np.testing.assert_allclose(covariance_from_factors((2, 1, 1), (1, 0, 0, 0)), np.diag([4.0, 1.0, 1.0]))

    def test_rotated_matches_matrix_product(self):
        r = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        s = np.diag([1.0, 2.0, 3.0])
        expected = r @ s @ s.T @ r.T
        result = covariance_from_factors((1, 2, 3), QUARTER_TURN_Z)
        np.testing.assert_allclose(result, expected, atol=1e-12)
        np.testing.assert_array_equal(result, result.T)

    def test_rejects_non_positive_scale(self):
        with pytest.raises(InvalidArgumentError):
            covariance_from_factors((1, 0, 1), (1, 0, 0, 0))

    def test_quaternion_sign_invariance(self):
        q = np.array([0.3, -0.2, 0.5, 0.7])
        np.testing.assert_allclose(quaternion_to_rotation(q), quaternion_to_rotation(-q), atol=1e-15)

    def test_axis_angle_matches_quaternion(self):
        np.testing.assert_allclose(axis_angle_rotation((0, 0, 1), np.pi / 2),
                                   quaternion_to_rotation(QUARTER_TURN_Z), atol=1e-12)


class TestCamera:

    def test_rejects_non_orthonormal_rotation(self):
        with pytest.raises(InvalidArgumentError):
            make_camera(rotation=np.diag([1.0, 1.0, 2.0]))

    def test_rejects_principal_point_outside(self):
        k = np.array([[10.0, 0, 40.0], [0, 10.0, 4.0], [0, 0, 1]])
        with pytest.raises(InvalidArgumentError):
            Camera(k, np.hstack([np.eye(3), np.zeros((3, 1))]), 16, 16)

    def test_center_and_transforms_are_inverse(self):
        rot = axis_angle_rotation((0, 1, 0), 0.4)
        camera = make_camera(rotation=rot, translation=(0.5, -1.0, 2.0))
        points = np.array([[0.1, 0.2, 3.0], [-1.0, 0.5, 2.0]])
        np.testing.assert_allclose(camera.camera_to_world(camera.world_to_camera(points)), points, atol=1e-12)
        np.testing.assert_allclose(camera.world_to_camera(camera.center[None, :])[0], 0.0, atol=1e-12)

    def test_pixel_rays_pass_through_pixel_centers(self, camera):
        rays = camera.pixel_rays()
        assert rays.shape == (16, 16, 3)
        np.testing.assert_allclose(rays[..., 2], 1.0)
        # pixel 8 has its center at 8.5, half a pixel right of cx = 8
        np.testing.assert_allclose(rays[0, 8, 0], 0.5 / 20.0)

    def test_dict_round_trip(self, camera):
        restored = Camera.from_dict(camera.to_dict())
        np.testing.assert_array_equal(restored.intrinsic, camera.intrinsic)
        np.testing.assert_array_equal(restored.extrinsic, camera.extrinsic)


class TestImages:

    def test_color_range_enforced(self):
        with pytest.raises(InvalidArgumentError):
            ColorImage(np.full((2, 2, 3), 1.5))

    def test_invalid_depth_entries_are_zero(self):
        depth = DepthMap(np.array([[1.0, 7.0]]), np.array([[True, False]]))
        np.testing.assert_array_equal(depth.values, [[1.0, 0.0]])

    def test_valid_depth_must_be_positive(self):
        with pytest.raises(InvalidArgumentError):
            DepthMap(np.array([[0.0]]), np.array([[True]]))

    def test_center_depth_falls_back_to_median(self):
        values = np.array([[1.0, 2.0, 3.0], [4.0, 0.0, 6.0], [7.0, 8.0, 9.0]])
        depth = DepthMap.dense(values)
        assert depth.center_depth() == 5.0

    def test_mask_count_and_inversion(self):
        mask = Mask(np.array([[True, False], [True, True]]))
        assert mask.count == 3
        assert mask.inverted().count == 1


class TestPointCloudAndGaussian:

    def test_concat_keeps_order(self):
        a = PointCloud(np.zeros((2, 3)), np.zeros((2, 3)), [0, 0])
        b = PointCloud(np.ones((1, 3)), np.ones((1, 3)), [4])
        merged = a.concat(b)
        assert len(merged) == 3
        np.testing.assert_array_equal(merged.source_frame, [0, 0, 4])

    def test_length_mismatch_rejected(self):
        with pytest.raises(InvalidArgumentError):
            PointCloud(np.zeros((2, 3)), np.zeros((1, 3)), [0, 0])

    def test_gaussian_opacity_bounds(self):
        with pytest.raises(InvalidArgumentError):
            Gaussian3D(np.zeros(3), np.ones(3), np.array([1.0, 0, 0, 0]), 1.0, np.zeros(3))


class TestRng:

    def test_same_seed_same_stream(self):
        np.testing.assert_array_equal(Rng(7).normal(5), Rng(7).normal(5))

    def test_children_are_independent_and_stable(self):
        root = Rng(7)
        np.testing.assert_array_equal(root.child(1).uniform(size=4), Rng(7).child(1).uniform(size=4))
        assert not np.array_equal(root.child(1).uniform(size=4), root.child(2).uniform(size=4))

    def test_state_restores_stream(self):
        rng = Rng(11)
        rng.normal(3)
        state = rng.get_state()
        expected = rng.normal(4)
        rng.set_state(state)
        np.testing.assert_array_equal(rng.normal(4), expected)

    def test_seed_must_fit_64_bits(self):
        with pytest.raises(InvalidArgumentError):
            Rng(2 ** 64)
