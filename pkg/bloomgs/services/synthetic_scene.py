"""
Synthetic Scenes
Procedural rooms ray-cast analytically: textured walls, checkered floor, shaded spheres
"""

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from bloomgs.errors import UnknownSceneError
from bloomgs.services.scene_core import Camera, ColorImage, DepthMap

NEAR = 1e-3
CHECKER_SIZE = 0.5
TO_LIGHT = np.array([-0.3, -1.0, -0.4]) / np.linalg.norm([-0.3, -1.0, -0.4])


@dataclass(frozen=True)
class Sphere:
    center: Tuple[float, float, float]
    radius: float
    color: Tuple[float, float, float]


@dataclass(frozen=True)
class RoomScene:
    """Axis-aligned box room (y points down, floor at bounds_max[1]) holding spheres."""
    name: str
    description: str
    bounds_min: Tuple[float, float, float]
    bounds_max: Tuple[float, float, float]
    floor: Tuple[float, float, float]
    ceiling: Tuple[float, float, float]
    walls: Tuple[Tuple[float, float, float], ...]
    spheres: Tuple[Sphere, ...] = field(default_factory=tuple)


SCENES: Dict[str, RoomScene] = {
    "room": RoomScene(
        name="room",
        description="a cozy living room with warm walls, a checkered wooden floor and two round cushions",
        bounds_min=(-3.0, -1.5, -3.0),
        bounds_max=(3.0, 1.5, 4.0),
        floor=(0.55, 0.38, 0.22),
        ceiling=(0.92, 0.90, 0.85),
        walls=((0.80, 0.62, 0.45), (0.70, 0.74, 0.60), (0.85, 0.78, 0.60), (0.60, 0.66, 0.78)),
        spheres=(
            Sphere((-1.0, 0.9, 2.5), 0.6, (0.80, 0.20, 0.15)),
            Sphere((1.2, 1.0, 3.0), 0.5, (0.20, 0.35, 0.80)),
            Sphere((0.2, 1.2, 1.8), 0.3, (0.90, 0.80, 0.20)),
        ),
    ),
    "studio": RoomScene(
        name="studio",
        description="a bright photo studio with pale grey walls, a tiled floor and three colored balls",
        bounds_min=(-2.5, -1.5, -2.5),
        bounds_max=(2.5, 1.5, 3.5),
        floor=(0.40, 0.42, 0.45),
        ceiling=(0.95, 0.95, 0.95),
        walls=((0.78, 0.78, 0.80), (0.70, 0.72, 0.76), (0.82, 0.80, 0.78), (0.66, 0.70, 0.72)),
        spheres=(
            Sphere((-0.8, 1.0, 2.2), 0.5, (0.15, 0.70, 0.30)),
            Sphere((0.7, 0.8, 2.6), 0.7, (0.85, 0.45, 0.10)),
            Sphere((0.0, 1.2, 1.4), 0.3, (0.60, 0.20, 0.70)),
        ),
    ),
}


def get_scene(name: str) -> RoomScene:
    try:
        return SCENES[name]
    except KeyError:
        raise UnknownSceneError(f"Unknown synthetic scene '{name}'. Known scenes: {', '.join(sorted(SCENES))}")


def _world_rays(camera: Camera) -> Tuple[np.ndarray, np.ndarray]:
    """Camera center and world directions whose camera-space z component is 1."""
    rays = camera.pixel_rays().reshape(-1, 3)
    return camera.center, rays @ camera.rotation


def _box_exit(origin: np.ndarray, directions: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Distance to the box face hit from inside, and which face (axis * 2 + upper)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = np.where(directions > 0, hi, lo)
        t_axis = np.where(directions != 0, (bound - origin) / directions, np.inf)
    axis = np.argmin(t_axis, axis=1)
    t = t_axis[np.arange(len(directions)), axis]
    upper = directions[np.arange(len(directions)), axis] > 0
    return t, axis * 2 + upper.astype(np.int64)


def _wall_texture(points: np.ndarray, face: np.ndarray, scene: RoomScene) -> np.ndarray:
    colors = np.empty_like(points)
    floor = face == 3
    ceiling = face == 2
    walls = ~(floor | ceiling)

    checker = (np.floor(points[:, 0] / CHECKER_SIZE) + np.floor(points[:, 2] / CHECKER_SIZE)) % 2
    colors[floor] = np.asarray(scene.floor) * (0.75 + 0.25 * checker[floor])[:, None]
    colors[ceiling] = scene.ceiling

    # faces 0, 1 are x walls and 4, 5 are z walls
    wall_index = np.array([0, 1, 0, 0, 2, 3])[face]
    along = np.where(face < 2, points[:, 2], points[:, 0])
    stripes = 0.85 + 0.15 * np.sin(2 * np.pi * points[:, 1] / 0.75) * np.cos(2 * np.pi * along / 1.5)
    palette = np.asarray(scene.walls)
    colors[walls] = palette[wall_index[walls]] * stripes[walls, None]
    return colors


def trace(scene: RoomScene, camera: Camera) -> Tuple[ColorImage, DepthMap]:
    """Analytic color and z-depth of every pixel."""
    height, width = camera.shape
    origin, directions = _world_rays(camera)
    lo, hi = np.asarray(scene.bounds_min), np.asarray(scene.bounds_max)

    t, face = _box_exit(origin, directions, lo, hi)
    points = origin + t[:, None] * directions
    colors = _wall_texture(points, face, scene)

    a = np.einsum("ij,ij->i", directions, directions)
    for sphere in scene.spheres:
        oc = origin - np.asarray(sphere.center)
        b = 2.0 * directions @ oc
        c = float(oc @ oc) - sphere.radius ** 2
        disc = b * b - 4.0 * a * c
        root = np.sqrt(np.maximum(disc, 0.0))
        t_hit = (-b - root) / (2.0 * a)
        hit = (disc >= 0) & (t_hit > NEAR) & (t_hit < t)
        if not np.any(hit):
            continue
        t = np.where(hit, t_hit, t)
        surface = origin + t_hit[hit, None] * directions[hit]
        normal = (surface - np.asarray(sphere.center)) / sphere.radius
        shading = 0.55 + 0.45 * np.maximum(normal @ TO_LIGHT, 0.0)
        colors[hit] = np.asarray(sphere.color) * shading[:, None]

    validity = np.isfinite(t) & (t > NEAR)
    colors[~validity] = 0.5
    depth = np.where(validity, t, 0.0).reshape(height, width)
    image = np.clip(colors, 0.0, 1.0).reshape(height, width, 3)
    return ColorImage(image), DepthMap(depth, validity.reshape(height, width))


def scene_names() -> List[str]:
    return sorted(SCENES)
