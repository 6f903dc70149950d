"""
Scene Core
Shared domain types, coordinate conventions and the seeded random stream

Convention: right-handed, the camera looks down +z, image origin top-left,
pixel (u, v) maps to the ray K^-1 (u + 0.5, v + 0.5, 1). Depth is z-depth.
All arithmetic is float64.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from bloomgs.errors import InvalidArgumentError

ORTHONORMAL_TOL = 1e-9


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


# ==================== Rotations ====================

def quaternion_to_rotation(q: Sequence[float]) -> np.ndarray:
    """Rotation matrix of a (w, x, y, z) quaternion; q and -q map to the same matrix."""
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def axis_angle_rotation(axis: Sequence[float], angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    kx, ky, kz = axis
    k = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def covariance_from_factors(scale: Sequence[float], rotation: Sequence[float]) -> np.ndarray:
    """Sigma = R S S^T R^T from per-axis scales and a unit quaternion."""
    scale = np.asarray(scale, dtype=np.float64)
    if scale.shape != (3,) or np.any(~np.isfinite(scale)) or np.any(scale <= 0):
        raise InvalidArgumentError(f"scale must be three positive reals, got {scale.tolist()}")

    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.shape != (4,) or not np.isfinite(np.linalg.norm(rotation)) or np.linalg.norm(rotation) == 0:
        raise InvalidArgumentError("rotation must be a non-zero quaternion (w, x, y, z)")

    m = quaternion_to_rotation(rotation) * scale[None, :]
    sigma = m @ m.T
    return 0.5 * (sigma + sigma.T)


# ==================== Camera ====================

@dataclass(frozen=True)
class Camera:
    """Pinhole intrinsics K and world-to-camera extrinsics E = [R|t]."""
    intrinsic: np.ndarray
    extrinsic: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        k = np.asarray(self.intrinsic, dtype=np.float64)
        e = np.asarray(self.extrinsic, dtype=np.float64)
        if k.shape != (3, 3) or e.shape != (3, 4):
            raise InvalidArgumentError("intrinsic must be 3x3 and extrinsic 3x4")
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise InvalidArgumentError("camera resolution must be positive")

        r = e[:, :3]
        if np.abs(r.T @ r - np.eye(3)).max() > ORTHONORMAL_TOL or abs(np.linalg.det(r) - 1.0) > ORTHONORMAL_TOL:
            raise InvalidArgumentError("extrinsic rotation must be orthonormal with det +1")

        fx, fy, cx, cy = k[0, 0], k[1, 1], k[0, 2], k[1, 2]
        if fx <= 0 or fy <= 0:
            raise InvalidArgumentError("focal lengths must be positive")
        if not (0 <= cx < self.width and 0 <= cy < self.height):
            raise InvalidArgumentError("principal point must lie inside the image")

        object.__setattr__(self, "intrinsic", _frozen(k))
        object.__setattr__(self, "extrinsic", _frozen(e))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @classmethod
    def from_fov(cls, width: int, height: int, fov_degrees: float,
                 rotation: Optional[np.ndarray] = None,
                 translation: Optional[np.ndarray] = None) -> "Camera":
        """Square-pixel camera with a horizontal field of view."""
        focal = 0.5 * width / np.tan(0.5 * np.radians(fov_degrees))
        k = np.array([[focal, 0.0, 0.5 * width], [0.0, focal, 0.5 * height], [0.0, 0.0, 1.0]])
        r = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
        t = np.zeros(3) if translation is None else np.asarray(translation, dtype=np.float64)
        return cls(k, np.hstack([r, t[:, None]]), width, height)

    @classmethod
    def from_center(cls, intrinsic: np.ndarray, rotation: np.ndarray, center: np.ndarray,
                    width: int, height: int) -> "Camera":
        """Build from a world-to-camera rotation and a camera center in world units."""
        rotation = np.asarray(rotation, dtype=np.float64)
        t = -rotation @ np.asarray(center, dtype=np.float64)
        return cls(intrinsic, np.hstack([rotation, t[:, None]]), width, height)

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsic[:, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.extrinsic[:, 3]

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def fx(self) -> float:
        return float(self.intrinsic[0, 0])

    @property
    def fy(self) -> float:
        return float(self.intrinsic[1, 1])

    @property
    def cx(self) -> float:
        return float(self.intrinsic[0, 2])

    @property
    def cy(self) -> float:
        return float(self.intrinsic[1, 2])

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation

    def pixel_rays(self) -> np.ndarray:
        """Camera-space rays with unit z through every pixel center, shape (H, W, 3)."""
        u, v = np.meshgrid(np.arange(self.width, dtype=np.float64),
                           np.arange(self.height, dtype=np.float64))
        x = (u + 0.5 - self.cx) / self.fx
        y = (v + 0.5 - self.cy) / self.fy
        return np.stack([x, y, np.ones_like(x)], axis=-1)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "intrinsic": self.intrinsic.tolist(),
            "extrinsic": self.extrinsic.tolist(),
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Camera":
        return cls(np.array(data["intrinsic"]), np.array(data["extrinsic"]),
                   int(data["width"]), int(data["height"]))


# ==================== Images ====================

@dataclass(frozen=True)
class ColorImage:
    """H x W x 3 color in [0, 1]."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3 or values.shape[2] != 3:
            raise InvalidArgumentError(f"color image must be HxWx3, got {values.shape}")
        if not np.all(np.isfinite(values)) or values.min(initial=0.0) < 0.0 or values.max(initial=0.0) > 1.0:
            raise InvalidArgumentError("color channels must lie in [0, 1]")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape[:2]

    @classmethod
    def filled(cls, height: int, width: int, color: Sequence[float]) -> "ColorImage":
        return cls(np.broadcast_to(np.asarray(color, dtype=np.float64), (height, width, 3)))


@dataclass(frozen=True)
class DepthMap:
    """H x W z-depth; invalid entries hold 0.0."""
    values: np.ndarray
    validity: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        validity = np.asarray(self.validity, dtype=bool)
        if values.ndim != 2 or values.shape != validity.shape:
            raise InvalidArgumentError("depth values and validity must share an HxW shape")
        valid_values = values[validity]
        if not np.all(np.isfinite(valid_values)) or np.any(valid_values <= 0):
            raise InvalidArgumentError("valid depth entries must be finite and positive")
        values = np.where(validity, values, 0.0)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "validity", _frozen(validity))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @classmethod
    def dense(cls, values: np.ndarray) -> "DepthMap":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.isfinite(values) & (values > 0))

    @classmethod
    def invalid(cls, height: int, width: int) -> "DepthMap":
        return cls(np.zeros((height, width)), np.zeros((height, width), dtype=bool))

    def center_depth(self) -> float:
        """Depth at the image center pixel, falling back to the median of valid pixels."""
        h, w = self.shape
        if self.validity[h // 2, w // 2]:
            return float(self.values[h // 2, w // 2])
        if not self.validity.any():
            raise InvalidArgumentError("depth map has no valid pixels")
        return float(np.median(self.values[self.validity]))


@dataclass(frozen=True)
class Mask:
    """H x W booleans; True = covered by projection, False = to be inpainted."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise InvalidArgumentError(f"mask must be HxW, got {values.shape}")
        object.__setattr__(self, "values", _frozen(values.astype(bool)))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def count(self) -> int:
        return int(self.values.sum())

    @classmethod
    def full(cls, height: int, width: int, value: bool = True) -> "Mask":
        return cls(np.full((height, width), value, dtype=bool))

    def inverted(self) -> "Mask":
        return Mask(~self.values)


# ==================== Point cloud ====================

@dataclass(frozen=True)
class PointCloud:
    """Colored points with the frame each came from."""
    positions: np.ndarray
    colors: np.ndarray
    source_frame: np.ndarray

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        source = np.asarray(self.source_frame, dtype=np.int64).reshape(-1)
        if not (len(positions) == len(colors) == len(source)):
            raise InvalidArgumentError("positions, colors and source_frame must share length")
        if not np.all(np.isfinite(positions)):
            raise InvalidArgumentError("point positions must be finite")
        if colors.size and (colors.min() < 0.0 or colors.max() > 1.0):
            raise InvalidArgumentError("point colors must lie in [0, 1]")
        object.__setattr__(self, "positions", _frozen(positions))
        object.__setattr__(self, "colors", _frozen(colors))
        object.__setattr__(self, "source_frame", _frozen(source))

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=np.int64))

    def concat(self, other: "PointCloud") -> "PointCloud":
        return PointCloud(
            np.concatenate([self.positions, other.positions]),
            np.concatenate([self.colors, other.colors]),
            np.concatenate([self.source_frame, other.source_frame]),
        )

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        if len(self) == 0:
            raise InvalidArgumentError("empty cloud has no bounding box")
        return self.positions.min(axis=0), self.positions.max(axis=0)


# ==================== Gaussians ====================

@dataclass(frozen=True)
class Gaussian3D:
    """One anisotropic splat."""
    mean: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    color: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        scale = np.asarray(self.scale, dtype=np.float64)
        rotation = np.asarray(self.rotation, dtype=np.float64)
        color = np.asarray(self.color, dtype=np.float64)
        if mean.shape != (3,) or not np.all(np.isfinite(mean)):
            raise InvalidArgumentError("mean must be three finite reals")
        if scale.shape != (3,) or np.any(scale <= 0):
            raise InvalidArgumentError("scale must be three positive reals")
        if rotation.shape != (4,) or abs(np.linalg.norm(rotation) - 1.0) > 1e-9:
            raise InvalidArgumentError("rotation must be a unit quaternion")
        if not 0.0 < float(self.opacity) < 1.0:
            raise InvalidArgumentError("opacity must lie in (0, 1)")
        if color.shape != (3,) or color.min() < 0.0 or color.max() > 1.0:
            raise InvalidArgumentError("color must be three reals in [0, 1]")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "scale", _frozen(scale))
        object.__setattr__(self, "rotation", _frozen(rotation))
        object.__setattr__(self, "opacity", float(self.opacity))
        object.__setattr__(self, "color", _frozen(color))

    @property
    def covariance(self) -> np.ndarray:
        return covariance_from_factors(self.scale, self.rotation)


# ==================== Random stream ====================

@dataclass
class Rng:
    """Seeded PCG64 stream (numpy Generator); identical on every platform.

    Single-owner: never share one instance between threads or loops.
    """
    seed: int
    _generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidArgumentError("seed must be a 64-bit unsigned integer")
        self.seed = int(self.seed)
        self._generator = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray:
        return self._generator.standard_normal(size) * scale

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self._generator.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._generator.integers(low, high, size)

    def child(self, label: int) -> "Rng":
        """Independent stream derived from this seed and a label."""
        return Rng(int(np.random.SeedSequence([self.seed, label]).generate_state(1, np.uint64)[0]))

    def get_state(self) -> Dict[str, Any]:
        return self._generator.bit_generator.state

    def set_state(self, state: Dict[str, Any]) -> None:
        self._generator.bit_generator.state = state
