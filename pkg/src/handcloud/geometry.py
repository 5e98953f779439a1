"""Core geometric types: labeled point clouds, rigid transforms, pinhole
cameras, 21-joint hand poses, and an exact k-d tree for nearest neighbors.

Coordinates are double precision throughout. Units are millimeters unless a
call site documents otherwise (templates and the folding demo work in
normalized, dimensionless units).
"""

from __future__ import annotations

import enum
from bisect import insort
from dataclasses import dataclass, field

import numpy as np


class ComponentId(enum.IntEnum):
    """The six semantic hand components."""

    PALM = 0
    THUMB = 1
    INDEX = 2
    MIDDLE = 3
    RING = 4
    PINKY = 5

    @property
    def short_name(self) -> str:
        return self.name.lower()


COMPONENT_NAMES = tuple(c.short_name for c in ComponentId)

# Fixed 21-joint order: wrist, then four joints per digit from knuckle to tip.
JOINT_NAMES = (
    ("wrist", "thumb_cmc", "thumb_mcp", "thumb_ip", "thumb_tip")
    + tuple(
        f"{digit}_{part}"
        for digit in ("index", "middle", "ring", "pinky")
        for part in ("mcp", "pip", "dip", "tip")
    )
)


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points contain NaN or Inf")
    return pts


@dataclass(frozen=True)
class PointCloud:
    """An ordered set of 3D points with optional per-point component labels."""

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = _as_points(self.points).copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.shape != (len(pts),):
                raise ValueError(
                    f"labels length {lab.shape} does not match {len(pts)} points"
                )
            if lab.size and (lab.min() < 0 or lab.max() > max(ComponentId)):
                raise ValueError("labels must be ComponentId values in 0..5")
            lab = lab.astype(np.uint8)
            lab.flags.writeable = False
            object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def is_labeled(self) -> bool:
        return self.labels is not None

    def subset(self, index) -> "PointCloud":
        """Cloud restricted to the given indices or boolean mask."""
        lab = self.labels[index] if self.labels is not None else None
        return PointCloud(self.points[index], lab)

    def component(self, cid: ComponentId) -> "PointCloud":
        if self.labels is None:
            raise ValueError("cloud has no component labels")
        return self.subset(self.labels == int(cid))


@dataclass(frozen=True)
class HandPose:
    """21 joint positions, ordered per JOINT_NAMES."""

    joints: np.ndarray

    def __post_init__(self):
        j = np.asarray(self.joints, dtype=np.float64)
        if j.shape != (21, 3):
            raise ValueError(f"hand pose must have shape (21, 3), got {j.shape}")
        if not np.all(np.isfinite(j)):
            raise ValueError("joints contain NaN or Inf")
        j = j.copy()
        j.flags.writeable = False
        object.__setattr__(self, "joints", j)


@dataclass(frozen=True)
class RigidTransform:
    """Rotation plus translation; maps p to R @ p + t."""

    rotation: np.ndarray
    translation: np.ndarray

    _TOL = 1e-9

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).copy()
        t = np.asarray(self.translation, dtype=np.float64).reshape(3).copy()
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("transform contains NaN or Inf")
        if np.abs(r.T @ r - np.eye(3)).max() > self._TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > self._TOL:
            raise ValueError("rotation must have determinant +1")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -(rt @ self.translation))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying `other` first, then self."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )


def axis_angle_rotation(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about `axis` by `angle` radians."""
    a = np.asarray(axis, dtype=np.float64).reshape(3)
    n = np.linalg.norm(a)
    if n == 0:
        raise ValueError("rotation axis must be nonzero")
    x, y, z = a / n
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def transform(cloud: PointCloud, t: RigidTransform) -> PointCloud:
    """Rigidly transform every point; labels are preserved."""
    return PointCloud(t.apply(cloud.points), cloud.labels)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus a world-from-camera rigid transform.

    Pixel coordinates follow the convention u = fx * x/z + cx along columns
    and v = fy * y/z + cy along rows, with pixel centers at integer
    coordinates.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return self.extrinsic.inverse().apply(points)

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        return self.extrinsic.apply(points)

    def project(self, points_cam: np.ndarray) -> np.ndarray:
        """Continuous pixel coordinates (u, v) of camera-frame points.

        Callers must exclude non-positive depths themselves.
        """
        pts = np.asarray(points_cam, dtype=np.float64)
        z = pts[:, 2]
        uv = np.empty((len(pts), 2))
        uv[:, 0] = self.fx * pts[:, 0] / z + self.cx
        uv[:, 1] = self.fy * pts[:, 1] / z + self.cy
        return uv


_LEAF_SIZE = 16


class KdTree:
    """Exact nearest-neighbor index over a point cloud.

    Splits on the axis of maximum extent at the median point; leaves hold at
    most 16 points. Queries are exact and break distance ties by the lower
    point index. Immutable after construction.
    """

    def __init__(self, cloud: PointCloud):
        if len(cloud) == 0:
            raise ValueError("empty point cloud")
        self.cloud = cloud
        self._pts = cloud.points
        n = len(self._pts)
        self._order = np.arange(n)
        # Node storage: axis < 0 marks a leaf spanning order[start:end).
        self._axis: list[int] = []
        self._split: list[float] = []
        self._left: list[int] = []
        self._right: list[int] = []
        self._start: list[int] = []
        self._end: list[int] = []
        self._root = self._build(0, n)

    def _new_node(self) -> int:
        self._axis.append(-1)
        self._split.append(0.0)
        self._left.append(-1)
        self._right.append(-1)
        self._start.append(0)
        self._end.append(0)
        return len(self._axis) - 1

    def _build(self, start: int, end: int) -> int:
        node = self._new_node()
        count = end - start
        if count <= _LEAF_SIZE:
            self._start[node] = start
            self._end[node] = end
            return node
        sub = self._pts[self._order[start:end]]
        axis = int(np.argmax(sub.max(axis=0) - sub.min(axis=0)))
        mid = count // 2
        part = np.argpartition(sub[:, axis], mid)
        self._order[start:end] = self._order[start:end][part]
        self._axis[node] = axis
        self._split[node] = self._pts[self._order[start + mid], axis]
        left = self._build(start, start + mid)
        right = self._build(start + mid, end)
        self._left[node] = left
        self._right[node] = right
        return node

    def __len__(self) -> int:
        return len(self._pts)

    def query(self, point, k: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Indices and Euclidean distances of the k nearest points.

        Returns min(k, N) results sorted by ascending (distance, index).
        """
        idx, d2 = self._query_sq(point, k)
        return idx, np.sqrt(d2)

    def _query_sq(self, point, k: int) -> tuple[np.ndarray, np.ndarray]:
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(point, dtype=np.float64).reshape(3)
        best: list[tuple[float, int]] = []  # sorted (squared distance, index)
        self._search(self._root, q, k, best)
        idx = np.fromiter((b[1] for b in best), dtype=np.int64, count=len(best))
        d2 = np.fromiter((b[0] for b in best), dtype=np.float64, count=len(best))
        return idx, d2

    def _search(self, node: int, q: np.ndarray, k: int, best: list) -> None:
        axis = self._axis[node]
        if axis < 0:
            ids = self._order[self._start[node] : self._end[node]]
            diff = self._pts[ids] - q
            d2 = np.einsum("ij,ij->i", diff, diff)
            for dist, i in zip(d2.tolist(), ids.tolist()):
                if len(best) < k:
                    insort(best, (dist, i))
                elif (dist, i) < best[-1]:
                    insort(best, (dist, i))
                    best.pop()
            return
        delta = q[axis] - self._split[node]
        near, far = (
            (self._left[node], self._right[node])
            if delta < 0
            else (self._right[node], self._left[node])
        )
        self._search(near, q, k, best)
        # The far side may still hold an equal-distance, lower-index point.
        if len(best) < k or delta * delta <= best[-1][0]:
            self._search(far, q, k, best)

    def query_many(self, points, k: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Batched query; rows of the results correspond to input rows."""
        pts = _as_points(points)
        m = min(k, len(self._pts))
        idx = np.empty((len(pts), m), dtype=np.int64)
        dist = np.empty((len(pts), m))
        for row, p in enumerate(pts):
            i, d = self.query(p, k)
            idx[row] = i
            dist[row] = d
        return idx, dist

    def nearest_sq(self, points) -> np.ndarray:
        """Squared distance from each query point to its nearest point."""
        pts = _as_points(points)
        out = np.empty(len(pts))
        for row, p in enumerate(pts):
            _, d2 = self._query_sq(p, 1)
            out[row] = d2[0]
        return out


def build_index(cloud: PointCloud) -> KdTree:
    """Build an exact spatial index over a non-empty cloud."""
    return KdTree(cloud)


def k_nearest(index: KdTree, point, k: int) -> list[tuple[int, float]]:
    """The min(k, N) nearest points as (index, distance) pairs."""
    idx, dist = index.query(point, k)
    return list(zip(idx.tolist(), dist.tolist()))
