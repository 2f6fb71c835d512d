"""Geometric reconstruction quality metrics.

Distances are exact: clouds live on integer grids, the k-d tree works
in int64, and squared distances never round. Ties on distance resolve
toward the lexicographically smaller point so every result is
deterministic regardless of tree layout.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .pointcloud_io import PointCloud

DIRECTIONS = ("a_to_b", "b_to_a", "symmetric_max")


class KdTree:
    """Median-split k-d tree over integer 3-d points."""

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("points must have shape (n, 3)")
        if pts.shape[0] == 0:
            raise ValueError("cannot build a tree over zero points")
        self._pts = pts.astype(np.int64)
        self._tuples = [tuple(map(int, p)) for p in self._pts]
        # node = [point_index, axis, left_id, right_id]
        self._nodes: list[list[int]] = []
        self._build(np.arange(len(self._tuples)), 0)

    def __len__(self):
        return len(self._tuples)

    def _build(self, idx: np.ndarray, depth: int) -> int:
        if idx.size == 0:
            return -1
        axis = depth % 3
        mid = idx.size // 2
        ordered = idx[np.argpartition(self._pts[idx, axis], mid)]
        node_id = len(self._nodes)
        self._nodes.append([int(ordered[mid]), axis, -1, -1])
        self._nodes[node_id][2] = self._build(ordered[:mid], depth + 1)
        self._nodes[node_id][3] = self._build(ordered[mid + 1:], depth + 1)
        return node_id

    def nearest(self, query) -> tuple[tuple[int, int, int], int]:
        """Closest point and its squared distance; ties pick the
        lexicographically smaller point."""
        qx, qy, qz = (int(c) for c in query)
        best_d2 = None
        best_p = None
        nodes = self._nodes
        tuples = self._tuples

        def visit(nid):
            nonlocal best_d2, best_p
            if nid < 0:
                return
            pi, axis, left, right = nodes[nid]
            p = tuples[pi]
            dx, dy, dz = p[0] - qx, p[1] - qy, p[2] - qz
            d2 = dx * dx + dy * dy + dz * dz
            if best_d2 is None or d2 < best_d2 or (d2 == best_d2 and p < best_p):
                best_d2, best_p = d2, p
            diff = (qx, qy, qz)[axis] - p[axis]
            near, far = (left, right) if diff < 0 else (right, left)
            visit(near)
            if diff * diff <= best_d2:
                visit(far)

        visit(0)
        return best_p, best_d2

    def knn(self, query, k: int) -> tuple[np.ndarray, np.ndarray]:
        """k closest points, ascending (d2, point); k capped at len."""
        if k < 1:
            raise ValueError("k must be >= 1")
        k = min(k, len(self._tuples))
        qx, qy, qz = (int(c) for c in query)
        nodes = self._nodes
        tuples = self._tuples
        # min-heap rooted at the current worst: key (-d2, negated point)
        heap: list[tuple[int, tuple[int, int, int], tuple[int, int, int]]] = []

        def visit(nid):
            if nid < 0:
                return
            pi, axis, left, right = nodes[nid]
            p = tuples[pi]
            dx, dy, dz = p[0] - qx, p[1] - qy, p[2] - qz
            d2 = dx * dx + dy * dy + dz * dz
            entry = (-d2, (-p[0], -p[1], -p[2]), p)
            if len(heap) < k:
                heapq.heappush(heap, entry)
            elif entry > heap[0]:  # better than the current worst
                heapq.heapreplace(heap, entry)
            diff = (qx, qy, qz)[axis] - p[axis]
            near, far = (left, right) if diff < 0 else (right, left)
            visit(near)
            if len(heap) < k or diff * diff <= -heap[0][0]:
                visit(far)

        visit(0)
        order = sorted((-nd2, p) for nd2, _, p in heap)
        d2s = np.array([d for d, _ in order], dtype=np.int64)
        pts = np.array([p for _, p in order], dtype=np.int64)
        return pts, d2s


def mse_c2c(a_points: np.ndarray, b_points: np.ndarray) -> float:
    """Mean squared nearest-neighbor distance from each a-point into b."""
    a = np.asarray(a_points)
    if a.ndim != 2 or a.shape[1] != 3 or a.shape[0] == 0:
        raise ValueError("a_points must be a nonempty (n, 3) array")
    tree = KdTree(b_points)
    total = 0
    for p in a:
        total += tree.nearest(p)[1]
    return total / a.shape[0]


def mse_c2p(a_points: np.ndarray, b_points: np.ndarray,
            normals_a: np.ndarray) -> float:
    """Mean squared point-to-plane error: the a->b nearest-neighbor
    displacement projected on a's surface normal."""
    a = np.asarray(a_points)
    n = np.asarray(normals_a, dtype=np.float64)
    if n.shape != a.shape:
        raise ValueError("normals_a must match a_points in shape")
    tree = KdTree(b_points)
    total = 0.0
    for p, nv in zip(a, n):
        q, _ = tree.nearest(p)
        e = (float(p[0] - q[0]), float(p[1] - q[1]), float(p[2] - q[2]))
        proj = e[0] * nv[0] + e[1] * nv[1] + e[2] * nv[2]
        total += proj * proj
    return total / a.shape[0]


def estimate_normals(points: np.ndarray, k: int = 16) -> np.ndarray:
    """Unit normals from the smallest covariance eigenvector of the k
    nearest neighbors (the point itself included), oriented away from
    the cloud centroid."""
    pts = np.asarray(points, dtype=np.int64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
        raise ValueError("points must be a nonempty (n, 3) array")
    tree = KdTree(pts)
    centroid = pts.mean(axis=0)
    out = np.empty((pts.shape[0], 3), dtype=np.float64)
    for i, p in enumerate(pts):
        nbrs, _ = tree.knn(p, k)
        centered = nbrs.astype(np.float64) - nbrs.mean(axis=0)
        cov = centered.T @ centered
        _, vecs = np.linalg.eigh(cov)
        normal = vecs[:, 0]
        outward = p - centroid
        side = float(normal @ outward)
        if side < 0:
            normal = -normal
        elif side == 0:
            nz = np.nonzero(normal)[0]
            if nz.size and normal[nz[0]] < 0:
                normal = -normal
        out[i] = normal
    return out


def psnr(mse: float, precision_b: int) -> float:
    """Peak signal-to-noise in dB; the peak is the grid space diagonal
    squared, 3 * (2^b - 1)^2. Zero error maps to math.inf."""
    if mse < 0:
        raise ValueError("mse must be >= 0")
    if mse == 0.0:
        return math.inf
    peak = 3.0 * (2 ** precision_b - 1) ** 2
    return 10.0 * math.log10(peak / mse)


@dataclass(frozen=True)
class QualityReport:
    direction: str
    n_a: int
    n_b: int
    mse_c2c: float
    mse_c2p: float
    psnr_c2c: float
    psnr_c2p: float


def compare(a: PointCloud, b: PointCloud, direction: str = "a_to_b",
            k_normals: int = 16,
            normals_a: np.ndarray | None = None,
            normals_b: np.ndarray | None = None) -> QualityReport:
    """Quality of cloud b as a reconstruction of cloud a.

    Precomputed normals can be passed to amortize the expensive step
    across repeated comparisons against the same cloud.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    if a.precision_b != b.precision_b:
        raise ValueError("clouds must share a coordinate grid")
    if len(a) == 0 or len(b) == 0:
        raise ValueError("cannot compare empty clouds")

    def one_way(src, dst, normals):
        m_c2c = mse_c2c(src.points, dst.points)
        if normals is None:
            normals = estimate_normals(src.points, k_normals)
        m_c2p = mse_c2p(src.points, dst.points, normals)
        return m_c2c, m_c2p

    if direction == "a_to_b":
        m_c2c, m_c2p = one_way(a, b, normals_a)
    elif direction == "b_to_a":
        m_c2c, m_c2p = one_way(b, a, normals_b)
    else:
        ab = one_way(a, b, normals_a)
        ba = one_way(b, a, normals_b)
        m_c2c, m_c2p = max(ab[0], ba[0]), max(ab[1], ba[1])
    return QualityReport(
        direction=direction, n_a=len(a), n_b=len(b),
        mse_c2c=m_c2c, mse_c2p=m_c2p,
        psnr_c2c=psnr(m_c2c, a.precision_b), psnr_c2p=psnr(m_c2p, a.precision_b),
    )
