"""Splatting renderer and the photometric loss."""

import numpy as np
import pytest

from bloomgs.errors import InvalidArgumentError
from bloomgs.services import autodiff as ad
from bloomgs.services.renderer import SplatScene, photometric_loss, photometric_loss_var, render, render_vars
from bloomgs.services.scene_core import Camera, ColorImage, Gaussian3D, Mask

from conftest import make_camera

IDENTITY = (1.0, 0.0, 0.0, 0.0)


def single_pixel_camera() -> Camera:
    k = np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.5], [0.0, 0.0, 1.0]])
    return Camera(k, np.hstack([np.eye(3), np.zeros((3, 1))]), 1, 1)


class TestBlending:

    def test_empty_scene_shows_background(self, camera):
        scene = SplatScene.from_gaussians([], background=(0.2, 0.3, 0.4))
        out = render(scene, camera)
        np.testing.assert_allclose(out.color.values, np.broadcast_to([0.2, 0.3, 0.4], (16, 16, 3)))
        np.testing.assert_array_equal(out.alpha, 0.0)
        assert not out.depth.validity.any()

    def test_two_splats_front_to_back(self):
        front = Gaussian3D((0, 0, 1), (1e-4,) * 3, IDENTITY, 0.5, (1, 0, 0))
        back = Gaussian3D((0, 0, 2), (1e-4,) * 3, IDENTITY, 0.9995, (0, 0, 1))
        # input order must not matter
        out = render(SplatScene.from_gaussians([back, front]), single_pixel_camera())

        np.testing.assert_allclose(out.color.values[0, 0], [0.5, 0.0, 0.5 * 0.999], atol=1e-12)
        np.testing.assert_allclose(out.depth.values[0, 0], 0.5 * 1.0 + 0.4995 * 2.0, atol=1e-12)
        np.testing.assert_allclose(out.alpha[0, 0], 0.9995, atol=1e-12)
        np.testing.assert_allclose(out.transmittance[0, 0], 0.0005, atol=1e-12)

    def test_splat_behind_camera_is_invisible(self, camera):
        behind = Gaussian3D((0, 0, -2), (0.5,) * 3, IDENTITY, 0.9, (1, 1, 1))
        out = render(SplatScene.from_gaussians([behind]), camera)
        np.testing.assert_array_equal(out.alpha, 0.0)

    def test_chunking_does_not_change_the_image(self, camera, rng):
        scene = SplatScene(rng.normal(scale=0.3, size=(12, 3)) + [0, 0, 3], rng.uniform(0.05, 0.3, (12, 3)),
                           rng.normal(size=(12, 4)), rng.uniform(0.2, 0.8, 12), rng.uniform(size=(12, 3)))
        whole = render(scene, camera, pixel_chunk=4096)
        banded = render(scene, camera, pixel_chunk=16)
        np.testing.assert_allclose(banded.color.values, whole.color.values, atol=1e-12)
        np.testing.assert_allclose(banded.alpha, whole.alpha, atol=1e-12)

    def test_opacity_must_be_open_interval(self):
        with pytest.raises(InvalidArgumentError):
            SplatScene(np.zeros((1, 3)), np.ones((1, 3)), [IDENTITY], [1.0], np.zeros((1, 3)))


class TestRenderGradients:

    def test_matches_central_differences(self, rng):
        camera = make_camera(width=6, height=6, focal=6.0)
        # wide splats keep every pixel inside the 3-sigma cutoff
        count = 3
        point = {
            "means": rng.normal(scale=0.05, size=(count, 3)) + [0.0, 0.0, 2.0],
            "scales": rng.uniform(0.5, 0.7, size=(count, 3)),
            "quats": rng.normal(size=(count, 4)),
            "opacity": rng.uniform(0.3, 0.7, size=count),
            "colors": rng.uniform(size=(count, 3)),
        }
        weights = rng.normal(size=(6, 6, 5))

        def fn(tape, p):
            color, depth, alpha = render_vars(p["means"], p["scales"], p["quats"], p["opacity"],
                                              p["colors"], camera, (0.1, 0.2, 0.3), pixel_chunk=12)
            return (ad.sum(color * weights[..., :3]) + ad.sum(depth * weights[..., 3])
                    + ad.sum(alpha * weights[..., 4]))

        report = ad.grad_check(fn, point, tolerance=1e-3)
        assert report.passed, report.per_parameter


class TestPhotometricLoss:

    def test_identical_images(self, rng):
        image = ColorImage(rng.uniform(size=(12, 12, 3)))
        assert photometric_loss(image, image) == pytest.approx(0.0, abs=1e-12)

    def test_all_false_mask(self, rng):
        a = ColorImage(rng.uniform(size=(8, 8, 3)))
        b = ColorImage(rng.uniform(size=(8, 8, 3)))
        assert photometric_loss(a, b, Mask.full(8, 8, value=False)) == 0.0

    def test_loss_grows_with_error(self, rng):
        target = ColorImage(rng.uniform(0.2, 0.8, size=(12, 12, 3)))
        near = ColorImage(target.values + 0.01)
        far = ColorImage(target.values + 0.1)
        assert 0.0 < photometric_loss(near, target) < photometric_loss(far, target)

    def test_shape_mismatch(self):
        tape = ad.Tape()
        with pytest.raises(InvalidArgumentError):
            photometric_loss_var(tape.leaf(np.zeros((4, 4, 3)), "x"), np.zeros((4, 5, 3)), np.ones((4, 4), bool))

    def test_gradient(self, rng):
        target = rng.uniform(size=(9, 9, 3))
        valid = rng.uniform(size=(9, 9)) > 0.3
        report = ad.grad_check(lambda tape, p: photometric_loss_var(p["x"], target, valid),
                               {"x": rng.uniform(size=(9, 9, 3))})
        assert report.passed, report.per_parameter
