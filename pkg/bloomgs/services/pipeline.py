"""
Generation Pipeline
Progressive scene generation along the camera trajectory, and the on-disk run layout
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from bloomgs.config import RunConfig, dump_run_config
from bloomgs.errors import BloomError, GenerationError, MalformedResponseError, MaskPreservationError, StateFileError
from bloomgs.models import GenerationStep, GenerationSummary, ViewKind
from bloomgs.services.file_formats import (
    load_cameras, load_mask, load_pfm, load_ply, load_png, read_json, save_cameras, save_mask,
    save_pfm, save_ply, save_png, write_json,
)
from bloomgs.services.geometry import (
    align_depth, build_trajectory, merge_cloud, project, render_training_set, support_cameras, unproject,
)
from bloomgs.services.providers import FrameProvider
from bloomgs.services.scene_core import Camera, ColorImage, DepthMap, Mask, PointCloud

logger = logging.getLogger(__name__)

MASK_TOLERANCE = 1.0 / 255.0


@dataclass
class TrainingView:
    """One supervision view: target image, valid pixels and (trajectory views only) a depth prior."""
    index: int
    kind: ViewKind
    camera: Camera
    image: ColorImage
    mask: Mask
    depth: Optional[DepthMap] = None


@dataclass
class GenerationResult:
    prompt: str
    cloud: PointCloud
    cameras: List[Camera]
    frames: List[ColorImage]
    masks: List[Mask]
    depths: List[DepthMap]
    support_cameras: List[Camera] = field(default_factory=list)
    support_views: List[ColorImage] = field(default_factory=list)
    support_masks: List[Mask] = field(default_factory=list)
    summary: Optional[GenerationSummary] = None

    def training_views(self) -> List[TrainingView]:
        """Trajectory frames (fully valid, with depth priors) followed by support views."""
        views = []
        for i, (camera, frame, depth) in enumerate(zip(self.cameras, self.frames, self.depths)):
            views.append(TrainingView(i, ViewKind.TRAJECTORY, camera, frame,
                                      Mask.full(*camera.shape), depth))
        offset = len(views)
        for j, (camera, image, mask) in enumerate(zip(self.support_cameras, self.support_views,
                                                      self.support_masks)):
            views.append(TrainingView(offset + j, ViewKind.SUPPORT, camera, image, mask))
        return views


# ==================== Mask preservation ====================

def enforce_mask_preservation(partial: ColorImage, mask: Mask, completed: ColorImage,
                              tolerance: float = MASK_TOLERANCE) -> ColorImage:
    """Reject completions that alter covered pixels, then restore those pixels exactly.

    Differences up to tolerance absorb 8-bit round trips through image files.
    """
    if completed.shape != partial.shape or mask.shape != partial.shape:
        raise MalformedResponseError(
            f"Completed image {completed.shape} does not match partial {partial.shape}"
        )
    diff = np.abs(completed.values - partial.values).max(axis=2)
    changed = mask.values & (diff > tolerance)
    if changed.any():
        count = int(changed.sum())
        worst = float(diff[changed].max())
        raise MaskPreservationError(
            f"Provider changed {count} covered pixels (max difference {worst:.4f} > {tolerance:.4f})",
            count, worst,
        )
    return ColorImage(np.where(mask.values[:, :, None], partial.values, completed.values))


# ==================== Progressive generation ====================

def initial_camera(config: RunConfig) -> Camera:
    return Camera.from_fov(config.run.width, config.run.height, config.run.fov_degrees)


def generate(config: RunConfig, provider: FrameProvider, out_dir: Optional[str] = None) -> GenerationResult:
    """Initial frame to cloud, then project / inpaint / estimate / align / merge per camera."""
    camera0 = initial_camera(config)
    cameras = build_trajectory(camera0, config.trajectory)
    prompt = config.run.prompt

    try:
        if config.run.initial_image:
            image = load_png(config.run.initial_image)
            if image.shape != camera0.shape:
                raise StateFileError(
                    f"Initial image is {image.shape[1]}x{image.shape[0]}, config asks for "
                    f"{camera0.width}x{camera0.height}"
                )
        else:
            image = provider.initial_image(prompt, camera=camera0)
        if not prompt.strip():
            prompt = provider.describe_image(image)
            logger.info("Prompt from initial image: %s", prompt)

        depth = provider.estimate_depth(image, camera=camera0)
        cloud = unproject(image, depth, camera0, Mask(depth.validity), frame_index=0)
    except BloomError as e:
        raise GenerationError(0, e) from e

    logger.info("Initial frame: %d points", len(cloud))
    frames, masks, depths = [image], [Mask.full(*camera0.shape, value=False)], [depth]
    steps: List[GenerationStep] = []
    initial_points = len(cloud)

    for i, camera in enumerate(cameras[1:], start=1):
        try:
            partial, mask, reference = project(cloud, camera)
            completed = provider.complete_image(partial, mask, prompt, camera=camera)
            completed = enforce_mask_preservation(partial, mask, completed)
            estimate = provider.estimate_depth(completed, camera=camera)
            alignment = align_depth(estimate, camera, reference, mask, config.trajectory.min_overlap)
            before = len(cloud)
            cloud = merge_cloud(cloud, completed, alignment.depth, camera, mask, frame_index=i)
        except BloomError as e:
            raise GenerationError(i, e) from e

        step = GenerationStep(
            camera_index=i,
            covered_pixels=mask.count,
            inpainted_pixels=int((~mask.values).sum()),
            points_added=len(cloud) - before,
            scale=alignment.scale,
            shift=alignment.shift,
            shift_only=alignment.shift_only,
        )
        steps.append(step)
        frames.append(completed)
        masks.append(mask)
        depths.append(alignment.depth)
        logger.info("Camera %d: covered=%d inpainted=%d added=%d scale=%.4f shift=%.4f",
                    i, step.covered_pixels, step.inpainted_pixels, step.points_added,
                    step.scale, step.shift)

    support = _support_cameras(config, cameras, depths)
    support_pairs = render_training_set(cloud, support) if support else []

    result = GenerationResult(
        prompt=prompt,
        cloud=cloud,
        cameras=cameras,
        frames=frames,
        masks=masks,
        depths=depths,
        support_cameras=support,
        support_views=[image for image, _ in support_pairs],
        support_masks=[mask for _, mask in support_pairs],
        summary=GenerationSummary(
            prompt=prompt,
            num_cameras=len(cameras),
            support_cameras=len(support),
            initial_points=initial_points,
            total_points=len(cloud),
            steps=steps,
        ),
    )
    if out_dir is not None:
        save_generation(result, config, out_dir)
    return result


def _support_cameras(config: RunConfig, cameras: List[Camera], depths: List[DepthMap]) -> List[Camera]:
    wanted = config.trajectory.support_count
    if wanted == 0:
        return []
    candidates = support_cameras(cameras, [d.center_depth() for d in depths],
                                 config.trajectory.support_shift, config.trajectory.support_elevation)
    if wanted > len(candidates):
        logger.warning("support_count=%d exceeds the %d available support cameras", wanted, len(candidates))
    return candidates[:wanted]


# ==================== Run directory ====================

def update_report(out_dir: str, section: str, payload: Any) -> Dict[str, Any]:
    """Merge one section into report.json, keeping the others."""
    path = Path(out_dir) / "report.json"
    report = read_json(path) if path.exists() else {}
    report[section] = payload
    write_json(path, report)
    return report


def save_generation(result: GenerationResult, config: RunConfig, out_dir: str) -> None:
    root = Path(out_dir)
    for i, (frame, mask, depth) in enumerate(zip(result.frames, result.masks, result.depths)):
        save_png(root / "frames" / f"frame_{i:03d}.png", frame)
        save_mask(root / "masks" / f"mask_{i:03d}.png", mask)
        save_pfm(root / "depth" / f"depth_{i:03d}.pfm", depth)
    for j, (image, mask) in enumerate(zip(result.support_views, result.support_masks)):
        save_png(root / "support" / f"support_{j:03d}.png", image)
        save_mask(root / "support" / f"mask_{j:03d}.png", mask)

    save_ply(root / "cloud.ply", result.cloud)
    save_cameras(root / "cameras.json", {"trajectory": result.cameras, "support": result.support_cameras})
    resolved = config.model_copy(update={"run": config.run.model_copy(update={"prompt": result.prompt})})
    (root / "config.ini").write_text(dump_run_config(resolved), encoding="utf-8")
    if result.summary is not None:
        update_report(out_dir, "generation", result.summary.model_dump(mode="json"))
    logger.info("Saved generation outputs to %s", root)


def load_generation(out_dir: str) -> GenerationResult:
    """Read a generate() run directory back.

    Frames are reloaded from 8-bit PNGs; the cloud from float32 PLY.
    """
    root = Path(out_dir)
    if not (root / "cameras.json").exists():
        raise StateFileError(f"{root} is not a generation directory (cameras.json missing)")
    cameras = load_cameras(root / "cameras.json")
    trajectory = cameras.get("trajectory", [])
    support = cameras.get("support", [])

    frames = [load_png(root / "frames" / f"frame_{i:03d}.png") for i in range(len(trajectory))]
    masks = [load_mask(root / "masks" / f"mask_{i:03d}.png") for i in range(len(trajectory))]
    depths = [load_pfm(root / "depth" / f"depth_{i:03d}.pfm") for i in range(len(trajectory))]
    support_views = [load_png(root / "support" / f"support_{j:03d}.png") for j in range(len(support))]
    support_masks = [load_mask(root / "support" / f"mask_{j:03d}.png") for j in range(len(support))]

    report = read_json(root / "report.json") if (root / "report.json").exists() else {}
    summary = report.get("generation")
    return GenerationResult(
        prompt=summary["prompt"] if summary else "",
        cloud=load_ply(root / "cloud.ply"),
        cameras=trajectory,
        frames=frames,
        masks=masks,
        depths=depths,
        support_cameras=support,
        support_views=support_views,
        support_masks=support_masks,
        summary=GenerationSummary.model_validate(summary) if summary else None,
    )
