"""Cube partition of a voxel grid and occupancy helpers.

A cloud on a 2**b grid is split into non-overlapping cubes of side W
(W must divide the grid side). Cube-local coordinates are the global
ones minus W times the cube index. Empty cubes are never materialized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pointcloud_io import PointCloud


@dataclass(eq=False)
class Cube:
    """One W-sided occupancy block at grid position `index` (in cube units)."""

    index: tuple[int, int, int]
    occupancy: np.ndarray
    side: int
    k_occupied: int | None = None

    def __post_init__(self):
        self.index = tuple(int(v) for v in self.index)
        self.occupancy = np.ascontiguousarray(self.occupancy, dtype=np.uint8)
        if self.occupancy.shape != (self.side, self.side, self.side):
            raise ValueError(
                f"occupancy shape {self.occupancy.shape} does not match side {self.side}"
            )
        if not np.all((self.occupancy == 0) | (self.occupancy == 1)):
            raise ValueError("occupancy must be binary")
        pop = int(self.occupancy.sum())
        if self.k_occupied is None:
            self.k_occupied = pop
        elif self.k_occupied != pop:
            raise ValueError(f"k_occupied={self.k_occupied} but occupancy has {pop} ones")
        if min(self.index) < 0:
            raise ValueError("cube index must be non-negative")

    def local_points(self) -> np.ndarray:
        """Occupied voxels in cube-local coordinates, lexicographic order."""
        return np.argwhere(self.occupancy).astype(np.int64)


def partition(pc: PointCloud, side: int) -> list[Cube]:
    """Split a cloud into occupied cubes, sorted by cube index.

    `side` must divide the grid side 2**precision_b, which restricts it
    to powers of two.
    """
    grid = 1 << pc.precision_b
    if side < 1 or grid % side != 0:
        raise ValueError(f"cube side {side} does not divide grid side {grid}")
    if len(pc) == 0:
        return []
    cube_idx = pc.points // side
    local = pc.points - cube_idx * side
    uniq, inverse = np.unique(cube_idx, axis=0, return_inverse=True)
    cubes = []
    for u in range(len(uniq)):
        sel = local[inverse == u]
        occ = np.zeros((side, side, side), dtype=np.uint8)
        occ[sel[:, 0], sel[:, 1], sel[:, 2]] = 1
        cubes.append(Cube(tuple(uniq[u]), occ, side))
    return cubes


def merge(cubes: list[Cube], precision_b: int) -> PointCloud:
    """Inverse of partition: reassemble global coordinates from cubes."""
    if not cubes:
        return PointCloud(np.empty((0, 3), dtype=np.int64), precision_b)
    side = cubes[0].side
    seen = set()
    for c in cubes:
        if c.side != side:
            raise ValueError("cubes with mixed side lengths")
        if c.index in seen:
            raise ValueError(f"duplicate cube index {c.index}")
        seen.add(c.index)
    parts = [
        c.local_points() + side * np.asarray(c.index, dtype=np.int64)
        for c in cubes
    ]
    return PointCloud(np.concatenate(parts, axis=0), precision_b)


def binarize_topk(probabilities: np.ndarray, k: int) -> np.ndarray:
    """Set exactly the k most probable voxels to 1.

    Ties at the threshold are resolved toward lexicographically lower
    (i, j, k) coordinates so the result is deterministic.
    """
    probs = np.asarray(probabilities)
    if probs.ndim != 3:
        raise ValueError("probabilities must be a rank 3 array")
    if not (0 <= k <= probs.size):
        raise ValueError(f"k={k} outside [0, {probs.size}]")
    out = np.zeros(probs.size, dtype=np.uint8)
    if k:
        # stable sort on negated values keeps lower flat index first on ties;
        # C-order flat index is exactly lexicographic (i, j, k)
        order = np.argsort(-probs.ravel(), kind="stable")
        out[order[:k]] = 1
    return out.reshape(probs.shape)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary occupancy arrays."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)
