"""
Hash Grid
Multi-resolution spatial hash tables with trilinear interpolation
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from bloomgs.errors import InvalidArgumentError
from bloomgs.services import autodiff as ad
from bloomgs.services.autodiff import Var
from bloomgs.services.scene_core import Rng

PRIMES = (1, 2654435761, 805459861)

# the 8 lattice corners of a cell, x varying fastest
CORNERS = np.array([[(i >> 0) & 1, (i >> 1) & 1, (i >> 2) & 1] for i in range(8)], dtype=np.int64)


@dataclass
class HashLevel:
    resolution: int
    table: np.ndarray

    @property
    def size(self) -> int:
        return self.table.shape[0]

    @property
    def features(self) -> int:
        return self.table.shape[1]


@dataclass
class HashGrid:
    """Levels of (resolution, T x F table) over an axis-aligned bounding box."""
    levels: List[HashLevel]
    bbox_min: np.ndarray
    bbox_max: np.ndarray

    def __post_init__(self):
        resolutions = [level.resolution for level in self.levels]
        if not resolutions or any(b <= a for a, b in zip(resolutions, resolutions[1:])):
            raise InvalidArgumentError("hash grid resolutions must be strictly increasing")
        for level in self.levels:
            if not np.all(np.isfinite(level.table)):
                raise InvalidArgumentError("hash grid tables must be finite")
        self.bbox_min = np.asarray(self.bbox_min, dtype=np.float64)
        self.bbox_max = np.asarray(self.bbox_max, dtype=np.float64)

    @property
    def output_dim(self) -> int:
        return sum(level.features for level in self.levels)

    @property
    def tables(self) -> List[np.ndarray]:
        return [level.table for level in self.levels]

    def with_tables(self, tables: Sequence[np.ndarray]) -> "HashGrid":
        levels = [HashLevel(level.resolution, np.asarray(table, dtype=np.float64))
                  for level, table in zip(self.levels, tables)]
        return HashGrid(levels, self.bbox_min.copy(), self.bbox_max.copy())

    @classmethod
    def create(cls, resolutions: Sequence[int], table_size: int, features: int,
               bbox: Tuple[np.ndarray, np.ndarray], rng: Optional[Rng] = None,
               init_scale: float = 1e-4) -> "HashGrid":
        """Tables initialized uniform in [-init_scale, init_scale] (zeros without rng)."""
        levels = []
        for resolution in resolutions:
            if rng is None:
                table = np.zeros((table_size, features))
            else:
                table = rng.uniform(-init_scale, init_scale, size=(table_size, features))
            levels.append(HashLevel(int(resolution), table))
        return cls(levels, np.asarray(bbox[0], dtype=np.float64), np.asarray(bbox[1], dtype=np.float64))


def hash_index(corners: np.ndarray, table_size: int) -> np.ndarray:
    """(x * 1) ^ (y * 2654435761) ^ (z * 805459861) mod T, in wrapping 64-bit arithmetic."""
    c = corners.astype(np.uint64)
    h = (c[..., 0] * np.uint64(PRIMES[0])) ^ (c[..., 1] * np.uint64(PRIMES[1])) ^ (c[..., 2] * np.uint64(PRIMES[2]))
    return (h % np.uint64(table_size)).astype(np.int64)


def corner_lookup(grid: HashGrid, positions: np.ndarray, level: HashLevel) -> Tuple[np.ndarray, np.ndarray]:
    """Table rows (N, 8) and trilinear weights (N, 8) for one level.

    Positions are normalized to the grid box and clamped to it.
    """
    extent = grid.bbox_max - grid.bbox_min
    extent = np.where(extent > 0, extent, 1.0)
    unit = np.clip((np.asarray(positions, dtype=np.float64) - grid.bbox_min) / extent, 0.0, 1.0)
    scaled = unit * level.resolution
    base = np.minimum(np.floor(scaled), level.resolution - 1).astype(np.int64)
    frac = scaled - base

    corners = base[:, None, :] + CORNERS[None, :, :]
    weights = np.prod(np.where(CORNERS[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :]), axis=2)
    return hash_index(corners, level.size), weights


def hash_features(grid: HashGrid, positions: np.ndarray) -> np.ndarray:
    """Interpolated features for many positions, shape (N, D^h)."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(positions)):
        raise InvalidArgumentError("hash grid positions must be finite")
    parts = []
    for level in grid.levels:
        rows, weights = corner_lookup(grid, positions, level)
        parts.append(np.einsum("nc,ncf->nf", weights, level.table[rows]))
    return np.concatenate(parts, axis=1)


def hash_feature(grid: HashGrid, position: Sequence[float]) -> np.ndarray:
    return hash_features(grid, np.asarray(position, dtype=np.float64)[None, :])[0]


def hash_features_var(grid: HashGrid, tables: Sequence[Var], positions: np.ndarray) -> Var:
    """Differentiable lookup with respect to the level tables."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    count = len(positions)
    parts = []
    for level, table in zip(grid.levels, tables):
        rows, weights = corner_lookup(grid, positions, level)
        gathered = ad.reshape(ad.take(table, rows.reshape(-1), axis=0), (count, 8, level.features))
        parts.append(ad.sum(gathered * weights[:, :, None], axis=1))
    return ad.concat(parts, axis=1)
