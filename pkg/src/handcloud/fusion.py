"""Multi-view depth fusion: threshold segmentation, pinhole back-projection,
extrinsic merge, statistical outlier removal, and voxel density balancing.

Depth values are millimeters with 0 marking invalid pixels, matching common
depth-camera conventions. A point-splat z-buffer renderer is included so the
pipeline can be validated against synthetic scenes without real sensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import CameraModel, PointCloud, RigidTransform

_MAX_DEPTH_MM = 10_000.0


@dataclass(frozen=True)
class DepthMap:
    """Row-major depth image in millimeters bound to its camera."""

    depth: np.ndarray
    camera: CameraModel

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError("depth must be a 2-D array")
        if d.shape != (self.camera.height, self.camera.width):
            raise ValueError(
                f"depth shape {d.shape} does not match camera "
                f"{self.camera.height}x{self.camera.width}"
            )
        if not np.all(np.isfinite(d)):
            raise ValueError("depth contains NaN or Inf")
        if d.min() < 0 or (d[d > 0].max(initial=0.0) >= _MAX_DEPTH_MM):
            raise ValueError("valid depths must be positive and < 10000 mm")
        d = d.copy()
        d.flags.writeable = False
        object.__setattr__(self, "depth", d)

    @property
    def width(self) -> int:
        return self.camera.width

    @property
    def height(self) -> int:
        return self.camera.height

    @property
    def valid_count(self) -> int:
        return int((self.depth > 0).sum())


@dataclass(frozen=True)
class FusionConfig:
    """Parameters of the fuse() pipeline stages."""

    near: float = 250.0
    far: float = 750.0
    outlier_k: int = 8
    outlier_alpha: float = 2.0
    voxel_size: float = 3.0
    target_points: int = 1038

    def __post_init__(self):
        if not (0 < self.near < self.far):
            raise ValueError("need 0 < near < far")
        if self.outlier_k < 1:
            raise ValueError("outlier_k must be >= 1")
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        if self.target_points < 1:
            raise ValueError("target_points must be >= 1")

    def to_dict(self) -> dict:
        return {"near": self.near, "far": self.far, "outlier_k": self.outlier_k,
                "outlier_alpha": self.outlier_alpha, "voxel_size": self.voxel_size,
                "target_points": self.target_points}

    @classmethod
    def from_dict(cls, data: dict) -> "FusionConfig":
        known = {f: data[f] for f in ("near", "far", "outlier_k", "outlier_alpha",
                                      "voxel_size", "target_points") if f in data}
        return cls(**known)


def segment_depth(depth_map: DepthMap, near: float, far: float) -> DepthMap:
    """Zero out pixels outside the [near, far] depth band."""
    if not near < far:
        raise ValueError("need near < far")
    d = depth_map.depth.copy()
    d[(d < near) | (d > far)] = 0.0
    return DepthMap(d, depth_map.camera)


def backproject(depth_map: DepthMap) -> PointCloud:
    """World-frame points for every valid pixel, in row-major pixel order."""
    cam = depth_map.camera
    v, u = np.nonzero(depth_map.depth > 0)
    if len(u) == 0:
        raise ValueError("no valid pixels")
    d = depth_map.depth[v, u]
    pts_cam = np.stack([
        (u - cam.cx) * d / cam.fx,
        (v - cam.cy) * d / cam.fy,
        d,
    ], axis=1)
    return PointCloud(cam.camera_to_world(pts_cam))


def render_depth(cloud: PointCloud, camera: CameraModel) -> DepthMap:
    """Point-splat z-buffer render of a world-frame cloud (test harness)."""
    pts_cam = camera.world_to_camera(cloud.points)
    z = pts_cam[:, 2]
    front = (z > 0) & (z < _MAX_DEPTH_MM)
    uv = camera.project(pts_cam[front])
    u = np.rint(uv[:, 0]).astype(np.int64)
    v = np.rint(uv[:, 1]).astype(np.int64)
    inside = (u >= 0) & (u < camera.width) & (v >= 0) & (v < camera.height)
    buf = np.full(camera.height * camera.width, np.inf)
    flat = v[inside] * camera.width + u[inside]
    np.minimum.at(buf, flat, z[front][inside])
    buf[~np.isfinite(buf)] = 0.0
    return DepthMap(buf.reshape(camera.height, camera.width), camera)


def merge_views(clouds) -> PointCloud:
    """Concatenate world-frame clouds preserving view order."""
    clouds = list(clouds)
    if not clouds:
        raise ValueError("no clouds to merge")
    total = sum(len(c) for c in clouds)
    if total == 0:
        raise ValueError("all input clouds are empty")
    points = np.concatenate([c.points for c in clouds])
    labels = None
    if all(c.labels is not None for c in clouds):
        labels = np.concatenate([c.labels for c in clouds])
    return PointCloud(points, labels)


def remove_outliers(cloud: PointCloud, k: int = 8, alpha: float = 2.0) -> PointCloud:
    """Drop points whose mean k-NN distance exceeds mean + alpha * std."""
    if len(cloud) <= k:
        raise ValueError(f"need more than k={k} points, got {len(cloud)}")
    tree = cKDTree(cloud.points)
    dist, _ = tree.query(cloud.points, k=k + 1, workers=1)
    mean_knn = dist[:, 1:].mean(axis=1)  # column 0 is the point itself
    threshold = mean_knn.mean() + alpha * mean_knn.std()
    return cloud.subset(mean_knn <= threshold)


def balance_density(cloud: PointCloud, voxel_size: float, target: int,
                    seed: int) -> PointCloud:
    """Even out density: voxel-centroid pass, then random subsample to target.

    Voxels are ordered by their first point's index, so output is
    deterministic for fixed input and seed. Voxel labels take the majority
    vote (ties to the lowest ComponentId).
    """
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    if len(cloud) == 0:
        return cloud
    pts = cloud.points
    cells = np.floor((pts - pts.min(axis=0)) / voxel_size).astype(np.int64)
    dims = cells.max(axis=0) + 1
    keys = (cells[:, 0] * dims[1] + cells[:, 1]) * dims[2] + cells[:, 2]
    uniq, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)

    sums = np.zeros((len(uniq), 3))
    np.add.at(sums, inverse, pts)
    centroids = sums / counts[:, None]

    first = np.full(len(uniq), len(pts), dtype=np.int64)
    np.minimum.at(first, inverse, np.arange(len(pts)))
    order = np.argsort(first, kind="stable")
    centroids = centroids[order]

    labels = None
    if cloud.labels is not None:
        votes = np.zeros((len(uniq), 6), dtype=np.int64)
        np.add.at(votes, (inverse, cloud.labels.astype(np.int64)), 1)
        labels = votes.argmax(axis=1).astype(np.uint8)[order]

    out = PointCloud(centroids, labels)
    if len(out) > target:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(out), target, replace=False))
        out = out.subset(keep)
    return out


def fuse(maps, config: FusionConfig, seed: int) -> PointCloud:
    """Full pipeline: segment, backproject, merge, filter, balance."""
    maps = list(maps)
    clouds = [backproject(segment_depth(m, config.near, config.far)) for m in maps]
    merged = merge_views(clouds)
    filtered = remove_outliers(merged, config.outlier_k, config.outlier_alpha)
    return balance_density(filtered, config.voxel_size, config.target_points, seed)


def look_at_camera(eye, center, fx: float = 600.0, fy: float = 600.0,
                   width: int = 640, height: int = 480,
                   up=(0.0, 0.0, 1.0)) -> CameraModel:
    """Pinhole camera at `eye` with its optical axis through `center`."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(center, dtype=np.float64) - eye
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise ValueError("eye and center coincide")
    forward /= norm
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, [1.0, 0.0, 0.0])
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward], axis=1)
    return CameraModel(fx=fx, fy=fy, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                       width=width, height=height,
                       extrinsic=RigidTransform(rotation, eye))


def orbit_rig(center, distance: float, n_views: int = 4,
              elevation: float = np.deg2rad(25.0), **camera_kwargs):
    """Cameras on a ring around `center` with alternating elevation.

    Alternating the elevation sign gives four views decent coverage of both
    the palmar and dorsal sides.
    """
    cameras = []
    center = np.asarray(center, dtype=np.float64)
    for i in range(n_views):
        azimuth = 2 * np.pi * i / n_views
        elev = elevation if i % 2 == 0 else -elevation
        offset = distance * np.array([
            np.cos(elev) * np.cos(azimuth),
            np.cos(elev) * np.sin(azimuth),
            np.sin(elev),
        ])
        cameras.append(look_at_camera(center + offset, center, **camera_kwargs))
    return cameras
