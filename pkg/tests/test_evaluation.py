"""PSNR and per-view evaluation."""

import numpy as np
import pytest

from bloomgs.errors import InvalidArgumentError
from bloomgs.models import ViewKind
from bloomgs.services.evaluation import PSNR_CAP, evaluate, psnr
from bloomgs.services.pipeline import TrainingView
from bloomgs.services.renderer import SplatScene
from bloomgs.services.scene_core import ColorImage, Mask

from conftest import make_camera


class TestPsnr:

    def test_identical_images_hit_the_cap(self):
        image = ColorImage.filled(4, 4, (0.2, 0.4, 0.6))
        assert psnr(image, image) == PSNR_CAP

    def test_known_value(self):
        a = ColorImage.filled(4, 4, (0.5, 0.5, 0.5))
        b = ColorImage.filled(4, 4, (0.6, 0.6, 0.6))
        assert psnr(a, b) == pytest.approx(20.0)

    def test_mask_selects_pixels(self):
        a = ColorImage.filled(2, 2, (0.0, 0.0, 0.0))
        values = np.zeros((2, 2, 3))
        values[0, 0] = 1.0
        b = ColorImage(values)
        keep = np.ones((2, 2), dtype=bool)
        keep[0, 0] = False
        assert psnr(a, b, Mask(keep)) == PSNR_CAP
        assert psnr(a, b) == pytest.approx(10.0 * np.log10(4.0))

    def test_empty_mask_raises(self):
        image = ColorImage.filled(2, 2, (0.0, 0.0, 0.0))
        with pytest.raises(InvalidArgumentError):
            psnr(image, image, Mask.full(2, 2, value=False))

    def test_shape_mismatch_raises(self):
        with pytest.raises(InvalidArgumentError):
            psnr(ColorImage.filled(2, 2, (0, 0, 0)), ColorImage.filled(3, 2, (0, 0, 0)))


class TestEvaluate:

    def test_empty_scene_against_background(self):
        camera = make_camera(4, 4)
        scene = SplatScene.from_gaussians([], (0.1, 0.1, 0.1))
        view = TrainingView(0, ViewKind.SUPPORT, camera, ColorImage.filled(4, 4, (0.1, 0.1, 0.1)),
                            Mask.full(4, 4, value=False))
        report = evaluate(scene, [view])
        assert report.views[0].psnr == PSNR_CAP
        assert report.views[0].masked_psnr == PSNR_CAP
        assert report.mean_psnr == PSNR_CAP

    def test_no_views(self):
        assert evaluate(SplatScene.from_gaussians([]), []).views == []
