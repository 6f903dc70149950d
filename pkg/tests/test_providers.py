"""Synthetic and directory frame providers."""

import os
import threading

import numpy as np
import pytest

from bloomgs.config import Settings
from bloomgs.errors import (
    ConfigError, InvalidArgumentError, MalformedResponseError, ProviderTimeoutError, UnknownSceneError,
)
from bloomgs.services.file_formats import save_pfm, save_png
from bloomgs.services.providers import DirectoryProvider, SyntheticProvider, get_provider
from bloomgs.services.scene_core import Camera, ColorImage, DepthMap, Mask
from bloomgs.services.synthetic_scene import get_scene, scene_names, trace


@pytest.fixture
def room_camera() -> Camera:
    return Camera.from_fov(24, 16, 60.0)


def fast_settings(timeout: float = 0.2) -> Settings:
    return Settings(provider_timeout=timeout, provider_poll_interval=0.01)


def publish(image: ColorImage, target, staging) -> None:
    """Write then rename, the way a responder must."""
    save_png(staging, image)
    target.parent.mkdir(parents=True, exist_ok=True)
    os.replace(staging, target)


class TestSyntheticScene:

    def test_every_pixel_sees_a_wall(self, room_camera):
        for name in scene_names():
            image, depth = trace(get_scene(name), room_camera)
            assert image.shape == (16, 24)
            assert depth.validity.all()

    def test_unknown_scene(self):
        with pytest.raises(UnknownSceneError):
            get_scene("garage")


class TestSyntheticProvider:

    def test_same_seed_same_frames(self, room_camera):
        a, b = SyntheticProvider("room", seed=4), SyntheticProvider("room", seed=4)
        np.testing.assert_array_equal(a.initial_image("x", room_camera).values,
                                      b.initial_image("x", room_camera).values)
        for _ in range(3):
            np.testing.assert_array_equal(a.estimate_depth(None, room_camera).values,
                                          b.estimate_depth(None, room_camera).values)

    def test_first_depth_is_exact_then_distorted(self, room_camera):
        provider = SyntheticProvider("room", seed=1)
        _, truth = trace(provider.scene, room_camera)
        first = provider.estimate_depth(None, room_camera)
        second = provider.estimate_depth(None, room_camera)
        np.testing.assert_array_equal(first.values, truth.values)
        assert not np.allclose(second.values, truth.values)
        # the distortion is affine
        valid = second.validity
        slope = np.polyfit(truth.values[valid], second.values[valid], 1)[0]
        assert 0.9 <= slope <= 1.1

    def test_complete_keeps_covered_pixels(self, room_camera):
        provider = SyntheticProvider("room")
        partial = ColorImage.filled(16, 24, (0.1, 0.9, 0.1))
        covered = np.zeros((16, 24), bool)
        covered[:, :12] = True
        completed = provider.complete_image(partial, Mask(covered), "p", room_camera)
        np.testing.assert_array_equal(completed.values[:, :12], partial.values[:, :12])

    def test_full_mask_returns_partial(self, room_camera):
        partial = ColorImage.filled(16, 24, (0.3, 0.3, 0.3))
        completed = SyntheticProvider("room").complete_image(partial, Mask.full(16, 24), "p", room_camera)
        np.testing.assert_array_equal(completed.values, partial.values)

    def test_needs_camera(self):
        with pytest.raises(InvalidArgumentError):
            SyntheticProvider("room").initial_image("p")


class TestDirectoryProvider:

    def test_replays_prepared_responses(self, tmp_path, room_camera):
        image = ColorImage.filled(16, 24, (0.2, 0.4, 0.6))
        save_png(tmp_path / "responses" / "0000_initial" / "image.png", image)
        save_pfm(tmp_path / "responses" / "0001_depth" / "depth.pfm", DepthMap.dense(np.full((16, 24), 2.5)))
        (tmp_path / "responses" / "0002_describe").mkdir(parents=True)
        (tmp_path / "responses" / "0002_describe" / "prompt.txt").write_text("a blue room\n")

        provider = DirectoryProvider(str(tmp_path), fast_settings())
        frame = provider.initial_image("a room", room_camera)
        depth = provider.estimate_depth(frame, room_camera)
        caption = provider.describe_image(frame)

        np.testing.assert_allclose(frame.values, image.values, atol=0.5 / 255)
        np.testing.assert_array_equal(depth.values, 2.5)
        assert caption == "a blue room"
        assert (tmp_path / "requests" / "0000_initial" / "prompt.txt").read_text() == "a room"
        assert (tmp_path / "requests" / "0001_depth" / "camera.json").exists()

    def test_waits_for_a_late_response(self, tmp_path, room_camera):
        provider = DirectoryProvider(str(tmp_path), fast_settings(timeout=5.0))
        target = tmp_path / "responses" / "0000_initial" / "image.png"
        white = ColorImage.filled(16, 24, (1, 1, 1))
        writer = threading.Timer(0.1, publish, (white, target, tmp_path / "staging.png"))
        writer.start()
        try:
            frame = provider.initial_image("p", room_camera)
        finally:
            writer.join()
        np.testing.assert_array_equal(frame.values, 1.0)

    def test_timeout(self, tmp_path, room_camera):
        provider = DirectoryProvider(str(tmp_path), fast_settings(timeout=0.05))
        with pytest.raises(ProviderTimeoutError):
            provider.initial_image("p", room_camera)

    def test_wrong_size_is_malformed(self, tmp_path, room_camera):
        save_png(tmp_path / "responses" / "0000_initial" / "image.png", ColorImage.filled(8, 8, (0, 0, 0)))
        with pytest.raises(MalformedResponseError):
            DirectoryProvider(str(tmp_path), fast_settings()).initial_image("p", room_camera)

    def test_unreadable_depth_is_malformed(self, tmp_path, room_camera):
        response = tmp_path / "responses" / "0000_depth"
        response.mkdir(parents=True)
        (response / "depth.pfm").write_bytes(b"garbage")
        provider = DirectoryProvider(str(tmp_path), fast_settings())
        with pytest.raises(MalformedResponseError):
            provider.estimate_depth(ColorImage.filled(16, 24, (0, 0, 0)), room_camera)


class TestProviderFactory:

    def test_kinds(self, tmp_path):
        assert isinstance(get_provider("synthetic:studio", seed=2), SyntheticProvider)
        assert isinstance(get_provider(f"dir:{tmp_path}", settings=fast_settings()), DirectoryProvider)

    @pytest.mark.parametrize("spec", ["synthetic", "cloud:abc", ""])
    def test_bad_specs(self, spec):
        with pytest.raises(ConfigError):
            get_provider(spec)
