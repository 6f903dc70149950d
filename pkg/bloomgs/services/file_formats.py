"""
File Formats
PLY point clouds, PFM depth, PNG color/mask, camera JSON and npz state files
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np
from PIL import Image
from plyfile import PlyData, PlyElement

from bloomgs.errors import StateFileError
from bloomgs.services.scene_core import Camera, ColorImage, DepthMap, Mask, PointCloud

PathLike = Union[str, Path]


# ==================== Point clouds ====================

def save_ply(path: PathLike, cloud: PointCloud) -> None:
    """Binary little-endian PLY: x y z float32, red green blue uint8, frame int32."""
    vertex_dtype = [
        ("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
        ("red", "u1"), ("green", "u1"), ("blue", "u1"),
        ("frame", "<i4"),
    ]
    elements = np.empty(len(cloud), dtype=vertex_dtype)
    elements["x"] = cloud.positions[:, 0]
    elements["y"] = cloud.positions[:, 1]
    elements["z"] = cloud.positions[:, 2]
    rgb = np.rint(cloud.colors * 255.0).astype(np.uint8)
    elements["red"], elements["green"], elements["blue"] = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    elements["frame"] = cloud.source_frame

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PlyData([PlyElement.describe(elements, "vertex")], byte_order="<").write(str(path))


def load_ply(path: PathLike) -> PointCloud:
    try:
        vertex = PlyData.read(str(path))["vertex"]
    except (OSError, KeyError, ValueError) as e:
        raise StateFileError(f"Cannot read point cloud {path}: {e}")

    positions = np.stack([vertex["x"], vertex["y"], vertex["z"]], axis=1).astype(np.float64)
    colors = np.stack([vertex["red"], vertex["green"], vertex["blue"]], axis=1).astype(np.float64) / 255.0
    names = [p.name for p in vertex.properties]
    frames = np.asarray(vertex["frame"]) if "frame" in names else np.zeros(len(positions), dtype=np.int64)
    return PointCloud(positions, colors, frames)


# ==================== Depth ====================

def save_pfm(path: PathLike, depth: Union[DepthMap, np.ndarray]) -> None:
    """Single-channel little-endian PFM; invalid pixels are written as 0."""
    values = depth.values if isinstance(depth, DepthMap) else np.asarray(depth)
    height, width = values.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode("ascii")
    # PFM stores rows bottom to top
    body = np.flipud(values).astype("<f4").tobytes()

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(header + body)


def load_pfm(path: PathLike) -> DepthMap:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise StateFileError(f"Cannot read depth file {path}: {e}")

    try:
        lines = data.split(b"\n", 3)
        kind, dims, scale_line, body = lines[0].strip(), lines[1].split(), lines[2].strip(), lines[3]
        if kind != b"Pf":
            raise ValueError(f"expected single-channel 'Pf', got {kind!r}")
        width, height = int(dims[0]), int(dims[1])
        scale = float(scale_line)
        dtype = "<f4" if scale < 0 else ">f4"
        values = np.frombuffer(body[: width * height * 4], dtype=dtype)
        if values.size != width * height:
            raise ValueError("pixel data is truncated")
    except (IndexError, ValueError) as e:
        raise StateFileError(f"Malformed PFM {path}: {e}")

    return DepthMap.dense(np.flipud(values.reshape(height, width)).astype(np.float64))


# ==================== Color and masks ====================

def save_png(path: PathLike, image: Union[ColorImage, np.ndarray]) -> None:
    values = image.values if isinstance(image, ColorImage) else np.asarray(image)
    rgb = np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb).save(str(path))


def load_png(path: PathLike) -> ColorImage:
    try:
        with Image.open(str(path)) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except OSError as e:
        raise StateFileError(f"Cannot read image {path}: {e}")
    return ColorImage(rgb)


def save_mask(path: PathLike, mask: Mask) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(mask.values.astype(np.uint8) * 255).save(str(path))


def load_mask(path: PathLike) -> Mask:
    try:
        with Image.open(str(path)) as img:
            values = np.asarray(img.convert("L")) >= 128
    except OSError as e:
        raise StateFileError(f"Cannot read mask {path}: {e}")
    return Mask(values)


# ==================== Cameras and JSON ====================

def save_cameras(path: PathLike, cameras: Dict[str, List[Camera]]) -> None:
    payload = {kind: [cam.to_dict() for cam in cams] for kind, cams in cameras.items()}
    write_json(path, payload)


def load_cameras(path: PathLike) -> Dict[str, List[Camera]]:
    payload = read_json(path)
    try:
        return {kind: [Camera.from_dict(c) for c in cams] for kind, cams in payload.items()}
    except (KeyError, TypeError, ValueError) as e:
        raise StateFileError(f"Malformed camera file {path}: {e}")


def write_json(path: PathLike, payload: Any) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path: PathLike) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise StateFileError(f"Cannot read {path}: {e}")


# ==================== Array state ====================

def save_arrays(path: PathLike, arrays: Dict[str, np.ndarray], meta: Dict[str, Any]) -> None:
    """npz archive of named float arrays plus a JSON metadata record."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    payload = {name: np.asarray(value) for name, value in arrays.items()}
    payload["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as handle:
        np.savez(handle, **payload)


def load_arrays(path: PathLike) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    try:
        with np.load(str(path), allow_pickle=False) as archive:
            arrays = {name: archive[name] for name in archive.files if name != "__meta__"}
            meta = json.loads(str(archive["__meta__"])) if "__meta__" in archive.files else {}
    except (OSError, ValueError, KeyError) as e:
        raise StateFileError(f"Cannot read state file {path}: {e}")
    return arrays, meta
