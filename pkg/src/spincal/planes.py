"""Adaptive voxelization of a point cloud into planar patches.

Voxels are axis-aligned cubes keyed by ``floor(p / size)``. A voxel whose
points look planar becomes a feature; otherwise it is split into its eight
half-size children, down to ``max_layers`` levels including the root.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from . import kernels


@dataclass
class LaserPoint:
    position: np.ndarray
    timestamp: float = 0.0
    depth: float | None = None
    bearing: np.ndarray | None = None

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        norm = float(np.linalg.norm(self.position))
        if self.depth is None:
            self.depth = norm
        if self.bearing is None:
            if norm == 0.0:
                raise ValueError("cannot derive a bearing for a point at the origin")
            self.bearing = self.position / norm
        self.bearing = np.asarray(self.bearing, dtype=float).reshape(3)
        if self.depth <= 0:
            raise ValueError("depth must be positive")
        if abs(np.linalg.norm(self.bearing) - 1.0) > 1e-9:
            raise ValueError("bearing must be a unit vector")
        if np.max(np.abs(self.depth * self.bearing - self.position)) > 1e-9:
            raise ValueError("position disagrees with depth * bearing")


@dataclass(frozen=True)
class VoxelizationConfig:
    root_size: float = 1.0
    max_layers: int = 2
    planarity_ratio: float = 0.01
    min_points: int = 10

    def __post_init__(self):
        if not self.root_size > 0:
            raise ValueError("root_size must be positive")
        if self.max_layers < 1:
            raise ValueError("max_layers must be >= 1")
        if not 0.0 < self.planarity_ratio < 1.0:
            raise ValueError("planarity_ratio must lie in (0, 1)")
        if self.min_points < 4:
            raise ValueError("min_points must be >= 4")


@dataclass
class PlaneFeature:
    point_indices: np.ndarray
    centroid: np.ndarray
    covariance: np.ndarray
    eigenvalues: np.ndarray
    min_eigenvector: np.ndarray
    key: tuple = field(default=(0, 0, 0))
    layer: int = 0
    size: float = 1.0

    @property
    def thickness(self) -> float:
        return float(self.eigenvalues[0])


def voxel_key(position, size: float) -> tuple:
    if not size > 0:
        raise ValueError("voxel size must be positive")
    p = np.asarray(position, dtype=float)
    return tuple(int(math.floor(c / size)) for c in p)


def plane_stats(points):
    """Centroid, population covariance, ascending eigenvalues and eigenvectors.

    Eigenvectors are the columns of the returned matrix.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("plane_stats needs at least one point")
    cent, cov = kernels.segment_moments(pts, np.array([0, len(pts)]))
    vals, vecs = np.linalg.eigh(cov[0])
    return cent[0], cov[0], vals, vecs


def group_by_key(keys):
    """Sort integer keys ``(n, 3)``; return ``(order, starts, unique_keys)``."""
    n = keys.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(1, dtype=np.int64), np.zeros((0, 3), dtype=np.int64)
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    k = keys[order]
    change = np.any(k[1:] != k[:-1], axis=1)
    starts = np.concatenate(([0], np.flatnonzero(change) + 1, [n])).astype(np.int64)
    return order, starts, k[starts[:-1]]


@dataclass
class VoxelPartition:
    """Array form of a feature set: feature ``g`` owns ``order[starts[g]:starts[g+1]]``."""

    order: np.ndarray
    starts: np.ndarray
    keys: np.ndarray
    layers: np.ndarray
    sizes: np.ndarray
    eigenvalues: np.ndarray
    normals: np.ndarray

    def __len__(self):
        return len(self.starts) - 1

    @property
    def counts(self):
        return np.diff(self.starts)

    def features(self, points) -> list:
        pts = np.asarray(points, dtype=float)
        out = []
        if len(self) == 0:
            return out
        ordered = pts[self.order]
        cent, cov = kernels.segment_moments(ordered, self.starts)
        for g in range(len(self)):
            idx = self.order[self.starts[g]:self.starts[g + 1]]
            vals, vecs = np.linalg.eigh(cov[g])
            out.append(PlaneFeature(point_indices=idx.copy(), centroid=cent[g], covariance=cov[g],
                                    eigenvalues=vals, min_eigenvector=vecs[:, 0],
                                    key=tuple(int(k) for k in self.keys[g]),
                                    layer=int(self.layers[g]), size=float(self.sizes[g])))
        return out


def voxelize(points, config: VoxelizationConfig) -> VoxelPartition:
    """Adaptive voxelization returning the compact :class:`VoxelPartition`.

    A voxel passes when it holds at least ``min_points`` points and
    ``lambda_min < planarity_ratio * lambda_mid``. Passing voxels stop the
    recursion; voxels with fewer than ``min_points`` points are dropped
    because no child could pass either.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    active = np.arange(len(pts), dtype=np.int64)
    size = float(config.root_size)
    parts = []
    for layer in range(config.max_layers):
        if len(active) == 0:
            break
        keys = np.floor(pts[active] / size).astype(np.int64)
        order, starts, gkeys = group_by_key(keys)
        idx = active[order]
        counts = np.diff(starts)
        big = counts >= config.min_points
        if not np.any(big):
            break
        rowmask = np.repeat(big, counts)
        sub_idx = idx[rowmask]
        sub_counts = counts[big]
        sub_starts = np.concatenate(([0], np.cumsum(sub_counts))).astype(np.int64)
        lam, normals, _, _, _ = kernels.plane_terms(pts[sub_idx], sub_starts)
        planar = lam[:, 0] < config.planarity_ratio * lam[:, 1]
        if np.any(planar):
            rows = np.repeat(planar, sub_counts)
            parts.append((sub_idx[rows], sub_counts[planar], gkeys[big][planar],
                          layer, size, lam[planar], normals[planar]))
        active = sub_idx[~np.repeat(planar, sub_counts)]
        size *= 0.5
    if not parts:
        return VoxelPartition(np.zeros(0, dtype=np.int64), np.zeros(1, dtype=np.int64),
                              np.zeros((0, 3), dtype=np.int64), np.zeros(0, dtype=np.int64),
                              np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)))
    order = np.concatenate([p[0] for p in parts])
    counts = np.concatenate([p[1] for p in parts])
    starts = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
    return VoxelPartition(
        order=order,
        starts=starts,
        keys=np.concatenate([p[2] for p in parts]),
        layers=np.concatenate([np.full(len(p[1]), p[3], dtype=np.int64) for p in parts]),
        sizes=np.concatenate([np.full(len(p[1]), p[4]) for p in parts]),
        eigenvalues=np.concatenate([p[5] for p in parts]),
        normals=np.concatenate([p[6] for p in parts]),
    )


def adaptive_voxelize(cloud, config: VoxelizationConfig) -> list:
    """Plane features of a motor-frame cloud, ordered by (layer, voxel key)."""
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("cannot voxelize an empty cloud")
    return voxelize(pts, config).features(pts)
