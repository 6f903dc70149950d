"""
Frame Provider Abstraction
Supports the analytic synthetic scenes and an out-of-process directory bridge
with one interface
"""

import logging
import time
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from bloomgs.config import Settings, get_settings
from bloomgs.errors import (
    ConfigError, InvalidArgumentError, MalformedResponseError, ProviderTimeoutError, StateFileError,
)
from bloomgs.models import ProviderKind
from bloomgs.services.file_formats import load_pfm, load_png, save_mask, save_png, write_json
from bloomgs.services.scene_core import Camera, ColorImage, DepthMap, Mask, Rng
from bloomgs.services.synthetic_scene import get_scene, trace

logger = logging.getLogger(__name__)

DEPTH_SCALE_RANGE = (0.9, 1.1)
DEPTH_SHIFT_RANGE = (-0.05, 0.05)


class FrameProvider(ABC):
    """Image generation, inpainting, depth estimation and captioning behind one interface."""

    @abstractmethod
    def initial_image(self, prompt: str, camera: Optional[Camera] = None) -> ColorImage:
        """Text-to-image for the first view."""
        pass

    @abstractmethod
    def complete_image(self, partial: ColorImage, mask: Mask, prompt: str,
                       camera: Optional[Camera] = None) -> ColorImage:
        """Inpaint the mask-false pixels of partial. Mask-true pixels must come back unchanged."""
        pass

    @abstractmethod
    def estimate_depth(self, image: ColorImage, camera: Optional[Camera] = None) -> DepthMap:
        """Monocular z-depth, up to an unknown scale and shift."""
        pass

    @abstractmethod
    def describe_image(self, image: ColorImage) -> str:
        """Caption an image, used when a run starts from a user image without a prompt."""
        pass


class SyntheticProvider(FrameProvider):
    """Analytic ray-cast rooms standing in for the pretrained models.

    Depth estimates after the first carry a per-call affine distortion drawn
    from the seed so alignment has real work to do.
    """

    def __init__(self, scene_id: str, seed: int = 0):
        self.scene = get_scene(scene_id)
        self.seed = seed
        self._depth_calls = 0

    def _require_camera(self, camera: Optional[Camera], operation: str) -> Camera:
        if camera is None:
            raise InvalidArgumentError(f"synthetic provider needs the camera for {operation}")
        return camera

    def initial_image(self, prompt: str, camera: Optional[Camera] = None) -> ColorImage:
        image, _ = trace(self.scene, self._require_camera(camera, "initial_image"))
        return image

    def complete_image(self, partial: ColorImage, mask: Mask, prompt: str,
                       camera: Optional[Camera] = None) -> ColorImage:
        if partial.shape != mask.shape:
            raise InvalidArgumentError(f"partial image {partial.shape} and mask {mask.shape} differ in size")
        if np.all(mask.values):
            return partial
        full, _ = trace(self.scene, self._require_camera(camera, "complete_image"))
        return ColorImage(np.where(mask.values[:, :, None], partial.values, full.values))

    def estimate_depth(self, image: ColorImage, camera: Optional[Camera] = None) -> DepthMap:
        _, depth = trace(self.scene, self._require_camera(camera, "estimate_depth"))
        call = self._depth_calls
        self._depth_calls += 1
        if call == 0:
            return depth

        rng = Rng(self.seed).child(call)
        scale = float(rng.uniform(*DEPTH_SCALE_RANGE))
        shift = float(rng.uniform(*DEPTH_SHIFT_RANGE))
        distorted = scale * depth.values + shift
        validity = depth.validity & (distorted > 0)
        logger.debug("Depth call %d distorted by scale=%.4f shift=%.4f", call, scale, shift)
        return DepthMap(np.where(validity, distorted, 0.0), validity)

    def describe_image(self, image: ColorImage) -> str:
        return self.scene.description


class DirectoryProvider(FrameProvider):
    """File-based request/response bridge to an external model server.

    Each call writes requests/NNNN_kind/ and waits for responses/NNNN_kind/:
      initial   prompt.txt camera.json                 -> image.png
      complete  partial.png mask.png prompt.txt camera.json -> image.png
      depth     image.png camera.json                  -> depth.pfm
      describe  image.png                              -> prompt.txt
    Responders should write into a temporary name and rename once complete.
    """

    RESPONSE_FILES = {"initial": "image.png", "complete": "image.png", "depth": "depth.pfm",
                      "describe": "prompt.txt"}

    def __init__(self, path: str, settings: Optional[Settings] = None):
        settings = settings or get_settings()
        self.root = Path(path)
        self.poll_interval = settings.provider_poll_interval
        self.timeout = settings.provider_timeout
        self._counter = 0
        (self.root / "requests").mkdir(parents=True, exist_ok=True)
        (self.root / "responses").mkdir(parents=True, exist_ok=True)

    def _request(self, kind: str) -> Tuple[Path, Path]:
        name = f"{self._counter:04d}_{kind}"
        self._counter += 1
        request = self.root / "requests" / name
        request.mkdir(parents=True, exist_ok=True)
        return request, self.root / "responses" / name / self.RESPONSE_FILES[kind]

    def _await(self, response: Path) -> Path:
        deadline = time.monotonic() + self.timeout
        while not response.exists():
            if time.monotonic() >= deadline:
                raise ProviderTimeoutError(
                    f"No response at {response} after {self.timeout:.1f}s"
                )
            time.sleep(self.poll_interval)
        logger.debug("Response ready: %s", response)
        return response

    @staticmethod
    def _write_camera(request: Path, camera: Optional[Camera]) -> None:
        if camera is not None:
            write_json(request / "camera.json", camera.to_dict())

    def _read_image(self, response: Path, shape: Optional[Tuple[int, int]]) -> ColorImage:
        try:
            image = load_png(self._await(response))
        except (StateFileError, InvalidArgumentError) as e:
            raise MalformedResponseError(f"Unreadable image response {response}: {e}")
        if shape is not None and image.shape != shape:
            raise MalformedResponseError(
                f"Response {response} is {image.shape[1]}x{image.shape[0]}, expected {shape[1]}x{shape[0]}"
            )
        return image

    def initial_image(self, prompt: str, camera: Optional[Camera] = None) -> ColorImage:
        request, response = self._request("initial")
        (request / "prompt.txt").write_text(prompt, encoding="utf-8")
        self._write_camera(request, camera)
        return self._read_image(response, camera.shape if camera is not None else None)

    def complete_image(self, partial: ColorImage, mask: Mask, prompt: str,
                       camera: Optional[Camera] = None) -> ColorImage:
        request, response = self._request("complete")
        save_png(request / "partial.png", partial)
        save_mask(request / "mask.png", mask)
        (request / "prompt.txt").write_text(prompt, encoding="utf-8")
        self._write_camera(request, camera)
        return self._read_image(response, partial.shape)

    def estimate_depth(self, image: ColorImage, camera: Optional[Camera] = None) -> DepthMap:
        request, response = self._request("depth")
        save_png(request / "image.png", image)
        self._write_camera(request, camera)
        try:
            depth = load_pfm(self._await(response))
        except (StateFileError, InvalidArgumentError) as e:
            raise MalformedResponseError(f"Unreadable depth response {response}: {e}")
        if depth.shape != image.shape:
            raise MalformedResponseError(
                f"Depth response {response} is {depth.shape[1]}x{depth.shape[0]}, "
                f"expected {image.shape[1]}x{image.shape[0]}"
            )
        return depth

    def describe_image(self, image: ColorImage) -> str:
        request, response = self._request("describe")
        save_png(request / "image.png", image)
        try:
            text = self._await(response).read_text(encoding="utf-8").strip()
        except (OSError, UnicodeDecodeError) as e:
            raise MalformedResponseError(f"Unreadable caption response {response}: {e}")
        if not text:
            raise MalformedResponseError(f"Caption response {response} is empty")
        return text


def get_provider(spec: str, seed: int = 0, settings: Optional[Settings] = None) -> FrameProvider:
    """Get a provider from 'synthetic:<scene>' or 'dir:<path>'."""
    kind, _, argument = spec.partition(":")
    if not argument:
        raise ConfigError(f"Provider must look like 'synthetic:<scene>' or 'dir:<path>', got '{spec}'")

    if kind == ProviderKind.SYNTHETIC.value:
        return SyntheticProvider(argument, seed)
    if kind == ProviderKind.DIRECTORY.value:
        return DirectoryProvider(argument, settings)
    raise ConfigError(f"Unknown provider kind '{kind}'")
