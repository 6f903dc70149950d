"""
Geometry Service
Unprojection, z-buffered reprojection, depth alignment, cloud merging and camera paths
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from bloomgs.config import TrajectoryConfig
from bloomgs.errors import AlignmentFailedError, InvalidArgumentError
from bloomgs.services.scene_core import (
    Camera, ColorImage, DepthMap, Mask, PointCloud, axis_angle_rotation,
)

logger = logging.getLogger(__name__)

FILL_COLOR = 0.5
SCALE_BOUNDS = (1e-3, 1e3)
DEGENERATE_VARIANCE = 1e-18


@dataclass(frozen=True)
class AlignmentResult:
    """Aligned depth plus the affine parameters that produced it."""
    depth: DepthMap
    scale: float
    shift: float
    shift_only: bool
    overlap_count: int


# ==================== Camera paths ====================

def trajectory_yaws(num_cameras: int, step: float) -> List[float]:
    """Alternating offsets 0, +step, -step, +2 step, -2 step, ..."""
    yaws = [0.0]
    ring = 1
    while len(yaws) < num_cameras:
        yaws.append(ring * step)
        if len(yaws) < num_cameras:
            yaws.append(-ring * step)
        ring += 1
    return yaws


def orbit_camera(camera: Camera, axis: Sequence[float], angle: float, pivot: np.ndarray) -> Camera:
    """Rigidly rotate a camera about a world axis through pivot."""
    rot = axis_angle_rotation(axis, angle)
    center = pivot + rot @ (camera.center - pivot)
    return Camera.from_center(camera.intrinsic, camera.rotation @ rot.T, center,
                              camera.width, camera.height)


def build_trajectory(initial_camera: Camera, config: TrajectoryConfig) -> List[Camera]:
    """Predefined cameras yawing about world y through the pivot (default: the initial center)."""
    pivot = initial_camera.center if config.pivot is None else np.asarray(config.pivot, dtype=np.float64)
    cameras = []
    for yaw in trajectory_yaws(config.num_cameras, config.rotation_step):
        if yaw == 0.0:
            cameras.append(initial_camera)
        else:
            cameras.append(orbit_camera(initial_camera, (0.0, 1.0, 0.0), yaw, pivot))
    return cameras


def support_cameras(
    base_cameras: Sequence[Camera],
    center_depths: Sequence[float],
    shift_degrees: float,
    elevation: bool = False,
) -> List[Camera]:
    """Two cameras per base camera, displaced +/- shift on the sphere around its look-at point.

    The sphere is centered center_depth along the optical axis; cameras stay
    aimed at that center. Azimuth rotates about the camera's y axis, elevation
    about its x axis.
    """
    if len(base_cameras) != len(center_depths):
        raise InvalidArgumentError("base_cameras and center_depths must have equal length")

    angle = np.radians(shift_degrees)
    cameras: List[Camera] = []
    for camera, radius in zip(base_cameras, center_depths):
        if not radius > 0:
            raise InvalidArgumentError(f"sphere radius must be positive, got {radius}")
        forward = camera.rotation[2]
        axis = camera.rotation[0] if elevation else camera.rotation[1]
        sphere_center = camera.center + radius * forward
        for sign in (1.0, -1.0):
            cameras.append(orbit_camera(camera, axis, sign * angle, sphere_center))
    return cameras


# ==================== Unprojection ====================

def _check_shapes(camera: Camera, *shapes: Tuple[int, int]) -> None:
    for shape in shapes:
        if tuple(shape) != camera.shape:
            raise InvalidArgumentError(f"shape {tuple(shape)} does not match camera {camera.shape}")


def unproject(image: ColorImage, depth: DepthMap, camera: Camera, select: Mask,
              frame_index: int = 0) -> PointCloud:
    """One world point per selected pixel: R^T (z K^-1 (u+0.5, v+0.5, 1) - t)."""
    _check_shapes(camera, image.shape, depth.shape, select.shape)

    bad = select.values & ~depth.validity
    if bad.any():
        raise InvalidArgumentError(f"{int(bad.sum())} selected pixels have invalid depth")

    rows, cols = np.nonzero(select.values)
    rays = camera.pixel_rays()[rows, cols]
    cam_points = rays * depth.values[rows, cols][:, None]
    positions = camera.camera_to_world(cam_points)
    colors = image.values[rows, cols]
    return PointCloud(positions, colors, np.full(len(rows), frame_index, dtype=np.int64))


def project(cloud: PointCloud, camera: Camera) -> Tuple[ColorImage, Mask, DepthMap]:
    """Z-buffered 1-pixel splat; the lower point index wins at equal depth."""
    height, width = camera.shape
    colors = np.full((height, width, 3), FILL_COLOR)
    depth = np.zeros((height, width))
    covered = np.zeros((height, width), dtype=bool)

    if len(cloud) > 0:
        cam_points = camera.world_to_camera(cloud.positions)
        z = cam_points[:, 2]
        in_front = z > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.floor(camera.fx * cam_points[:, 0] / z + camera.cx)
            v = np.floor(camera.fy * cam_points[:, 1] / z + camera.cy)
        inside = in_front & (u >= 0) & (u < width) & (v >= 0) & (v < height)

        index = np.nonzero(inside)[0]
        pixel = v[index].astype(np.int64) * width + u[index].astype(np.int64)
        order = np.lexsort((index, z[index], pixel))
        _, first = np.unique(pixel[order], return_index=True)
        winners = index[order[first]]
        win_pixels = pixel[order[first]]

        rows, cols = np.divmod(win_pixels, width)
        colors[rows, cols] = cloud.colors[winners]
        depth[rows, cols] = z[winners]
        covered[rows, cols] = True

    return ColorImage(colors), Mask(covered), DepthMap(depth, covered)


# ==================== Alignment and merge ====================

def align_depth(
    new_depth: DepthMap,
    camera: Camera,
    reference_depth: DepthMap,
    overlap: Mask,
    min_overlap: int = 16,
) -> AlignmentResult:
    """Closed-form least-squares scale and shift of new_depth onto reference_depth."""
    _check_shapes(camera, new_depth.shape, reference_depth.shape, overlap.shape)

    usable = overlap.values & new_depth.validity & reference_depth.validity
    count = int(usable.sum())
    if count < min_overlap:
        raise AlignmentFailedError(
            f"Depth alignment needs {min_overlap} overlapping pixels, found {count}", count
        )

    x = new_depth.values[usable]
    y = reference_depth.values[usable]
    x_mean, y_mean = x.mean(), y.mean()
    xc = x - x_mean
    variance = float(np.dot(xc, xc))

    shift_only = variance <= DEGENERATE_VARIANCE * max(1.0, x_mean * x_mean) * count
    if shift_only:
        scale = 1.0
        shift = float(np.mean(y - x))
        logger.warning("Degenerate depth over %d overlap pixels, using shift-only alignment", count)
    else:
        scale = float(np.dot(xc, y - y_mean) / variance)
        scale = float(np.clip(scale, *SCALE_BOUNDS))
        shift = float(y_mean - scale * x_mean)

    aligned = scale * new_depth.values + shift
    validity = new_depth.validity & np.isfinite(aligned) & (aligned > 0)
    return AlignmentResult(DepthMap(np.where(validity, aligned, 0.0), validity),
                           scale, shift, shift_only, count)


def merge_cloud(
    existing: PointCloud,
    image: ColorImage,
    aligned_depth: DepthMap,
    camera: Camera,
    inpaint_mask: Mask,
    frame_index: int = 0,
) -> PointCloud:
    """Append points for the newly inpainted (mask-false) pixels with valid depth."""
    select = Mask(~inpaint_mask.values & aligned_depth.validity)
    added = unproject(image, aligned_depth, camera, select, frame_index)
    return existing.concat(added)


def render_training_set(cloud: PointCloud, cameras: Sequence[Camera]) -> List[Tuple[ColorImage, Mask]]:
    """Reprojected image and validity mask for every camera."""
    if len(cloud) == 0:
        raise InvalidArgumentError("cannot render a training set from an empty cloud")
    pairs = []
    for camera in cameras:
        image, mask, _ = project(cloud, camera)
        pairs.append((image, mask))
    return pairs


def pose_offset(initial_camera: Camera, yaw: float, pitch: float = 0.0,
                pivot: Optional[np.ndarray] = None) -> Camera:
    """Camera yawed about world y then pitched about its own x axis."""
    pivot = initial_camera.center if pivot is None else np.asarray(pivot, dtype=np.float64)
    camera = orbit_camera(initial_camera, (0.0, 1.0, 0.0), yaw, pivot) if yaw else initial_camera
    if pitch:
        camera = orbit_camera(camera, camera.rotation[0], pitch, camera.center)
    return camera
