"""Distances and evaluation metrics for point clouds and hand poses.

Chamfer distance averages squared nearest-neighbor distances in both
directions, so its value carries squared input units (mm^2 for mm clouds).
Earth Mover's distance is the minimum total unsquared Euclidean matching
cost over bijections and requires equal cardinalities. The combined loss
sums per-component and global CD + EMD terms with equal weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .geometry import CameraModel, ComponentId, HandPose, KdTree, PointCloud

# Above this many points, chamfer_distance switches from the quadratic scan
# to the k-d tree unless the caller forces a path.
_CHAMFER_BRUTE_LIMIT = 3000


def _check_nonempty(*clouds: PointCloud) -> None:
    for c in clouds:
        if len(c) == 0:
            raise ValueError("empty point cloud")


def _nearest_sq_brute(queries: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Squared distance of each query to its nearest target, O(N*M)."""
    out = np.empty(len(queries))
    chunk = max(1, int(4_000_000 // max(len(targets), 1)))
    for start in range(0, len(queries), chunk):
        block = queries[start:start + chunk]
        d2 = cdist(block, targets, "sqeuclidean")
        out[start:start + len(block)] = d2.min(axis=1)
    return out


def chamfer_distance(gt: PointCloud, pred: PointCloud,
                     accelerated: bool | None = None) -> float:
    """Symmetric mean of squared nearest-neighbor distances.

    `accelerated` forces the k-d tree (True) or the quadratic scan (False);
    by default small inputs use the scan. Both paths are exact.
    """
    _check_nonempty(gt, pred)
    if accelerated is None:
        accelerated = max(len(gt), len(pred)) > _CHAMFER_BRUTE_LIMIT
    if accelerated:
        d_gt = KdTree(pred).nearest_sq(gt.points)
        d_pred = KdTree(gt).nearest_sq(pred.points)
    else:
        d_gt = _nearest_sq_brute(gt.points, pred.points)
        d_pred = _nearest_sq_brute(pred.points, gt.points)
    return float(d_gt.mean() + d_pred.mean())


@dataclass(frozen=True)
class Assignment:
    """A perfect matching: predicted row i pairs with column mapping[i]."""

    mapping: np.ndarray
    total_cost: float

    def __post_init__(self):
        m = np.asarray(self.mapping, dtype=np.int64).copy()
        if m.ndim != 1:
            raise ValueError("mapping must be one-dimensional")
        if len(np.unique(m)) != len(m) or (len(m) and (m.min() < 0 or m.max() >= len(m))):
            raise ValueError("mapping is not a bijection on 0..N-1")
        m.flags.writeable = False
        object.__setattr__(self, "mapping", m)


def _check_cost_matrix(cost) -> np.ndarray:
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] == 0:
        raise ValueError(f"cost matrix must be square and non-empty, got {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix contains NaN or Inf")
    return c


def solve_assignment(cost) -> Assignment:
    """Minimum-total-cost perfect matching of a square cost matrix.

    Exact; when several matchings are optimal any one may be returned, but
    the total cost is unique.
    """
    c = _check_cost_matrix(cost)
    rows, cols = linear_sum_assignment(c)
    mapping = np.empty(len(c), dtype=np.int64)
    mapping[rows] = cols
    return Assignment(mapping, float(c[rows, cols].sum()))


def solve_assignment_auction(cost, rel_gap: float = 1e-3,
                             max_rounds: int = 60) -> Assignment:
    """Approximate matching by forward auction with epsilon scaling.

    Runs scaling rounds until N * eps <= rel_gap * total, which bounds the
    duality gap: the returned total is within rel_gap (relative) of the
    optimum. A zero-cost matching is returned as exactly optimal.
    """
    c = _check_cost_matrix(cost)
    n = len(c)
    value = -c  # auction maximizes
    spread = float(value.max() - value.min())
    if spread == 0.0:
        return Assignment(np.arange(n), float(c[np.arange(n), np.arange(n)].sum()))
    prices = np.zeros(n)
    eps = spread / 4.0
    mapping = np.arange(n)
    for _ in range(max_rounds):
        mapping = _auction_round(value, prices, eps)
        total = float(c[np.arange(n), mapping].sum())
        if total == 0.0 or n * eps <= rel_gap * total:
            break
        eps /= 5.0
    return Assignment(mapping, total)


def _auction_round(value: np.ndarray, prices: np.ndarray, eps: float) -> np.ndarray:
    n = len(value)
    owner = np.full(n, -1, dtype=np.int64)   # object -> row
    assigned = np.full(n, -1, dtype=np.int64)  # row -> object
    while True:
        unassigned = np.flatnonzero(assigned < 0)
        if len(unassigned) == 0:
            return assigned
        gain = value[unassigned] - prices
        if gain.shape[1] >= 2:
            top2 = np.argpartition(gain, -2, axis=1)[:, -2:]
            pair = np.take_along_axis(gain, top2, axis=1)
            pick = np.argmax(pair, axis=1)
            best_obj = top2[np.arange(len(unassigned)), pick]
            best = pair[np.arange(len(unassigned)), pick]
            second = pair[np.arange(len(unassigned)), 1 - pick]
        else:
            best_obj = np.zeros(len(unassigned), dtype=np.int64)
            best = gain[:, 0]
            second = best
        bids = prices[best_obj] + (best - second) + eps
        # Highest bid per object wins; ties go to the lowest row index.
        order = np.lexsort((unassigned, -bids, best_obj))
        obj_sorted = best_obj[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = obj_sorted[1:] != obj_sorted[:-1]
        win = order[first]
        win_obj = best_obj[win]
        win_row = unassigned[win]
        prev = owner[win_obj]
        assigned[prev[prev >= 0]] = -1
        owner[win_obj] = win_row
        assigned[win_row] = win_obj
        prices[win_obj] = bids[win]


def earth_movers_distance(gt: PointCloud, pred: PointCloud) -> tuple[float, Assignment]:
    """Exact EMD: minimum total Euclidean matching cost over bijections.

    Returns the distance and the realizing assignment mapping predicted
    point i to ground-truth point mapping[i].
    """
    _check_nonempty(gt, pred)
    if len(gt) != len(pred):
        raise ValueError("EMD requires equal cardinality")
    cost = cdist(pred.points, gt.points)
    assignment = solve_assignment(cost)
    return assignment.total_cost, assignment


@dataclass(frozen=True)
class LossBreakdown:
    """Per-component and global CD/EMD terms plus their unit-weighted sum."""

    cd_local: np.ndarray    # six entries, ComponentId order
    emd_local: np.ndarray
    cd_global: float
    emd_global: float
    total: float

    @classmethod
    def build(cls, cd_local, emd_local, cd_global: float,
              emd_global: float) -> "LossBreakdown":
        cd_local = np.asarray(cd_local, dtype=np.float64)
        emd_local = np.asarray(emd_local, dtype=np.float64)
        total = float(cd_local.sum() + emd_local.sum() + cd_global + emd_global)
        return cls(cd_local, emd_local, float(cd_global), float(emd_global), total)


def combined_loss(gt: PointCloud, pred: PointCloud) -> LossBreakdown:
    """Equally weighted sum of per-component and global CD + EMD terms.

    Requires labeled clouds with matching per-component cardinalities so the
    local EMD bijections exist.
    """
    _check_nonempty(gt, pred)
    if gt.labels is None or pred.labels is None:
        raise ValueError("combined loss requires labeled clouds")
    cd_local = np.zeros(len(ComponentId))
    emd_local = np.zeros(len(ComponentId))
    for cid in ComponentId:
        gt_part = gt.subset(gt.labels == int(cid))
        pred_part = pred.subset(pred.labels == int(cid))
        if len(gt_part) != len(pred_part):
            raise ValueError(
                f"per-component cardinality mismatch for {cid.short_name}: "
                f"{len(gt_part)} ground truth vs {len(pred_part)} predicted"
            )
        if len(gt_part) == 0:
            continue
        cd_local[cid] = chamfer_distance(gt_part, pred_part)
        emd_local[cid], _ = earth_movers_distance(gt_part, pred_part)
    cd_global = chamfer_distance(gt, pred)
    emd_global, _ = earth_movers_distance(gt, pred)
    return LossBreakdown.build(cd_local, emd_local, cd_global, emd_global)


# ---------------------------------------------------------------------------
# Pose metrics

def mpjpe(pred: HandPose, gt: HandPose) -> float:
    """Mean per-joint position error: average Euclidean joint distance."""
    return float(np.linalg.norm(pred.joints - gt.joints, axis=1).mean())


@dataclass(frozen=True)
class PckCurve:
    """Fraction of joint errors within each threshold."""

    thresholds: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if t.ndim != 1 or t.shape != v.shape or len(t) < 2:
            raise ValueError("curve needs matching thresholds/values, length >= 2")
        if np.any(np.diff(t) <= 0):
            raise ValueError("thresholds must be strictly ascending")
        if v.min() < 0 or v.max() > 1 or np.any(np.diff(v) < 0):
            raise ValueError("values must be non-decreasing fractions in [0, 1]")
        object.__setattr__(self, "thresholds", t)
        object.__setattr__(self, "values", v)


def pck_curve(errors, thresholds) -> PckCurve:
    """PCK over the given ascending error thresholds (same units as errors)."""
    e = np.asarray(errors, dtype=np.float64).ravel()
    if e.size == 0:
        raise ValueError("no errors given")
    t = np.asarray(thresholds, dtype=np.float64)
    values = (e[None, :] <= t[:, None]).mean(axis=1)
    return PckCurve(t, values)


def auc(curve: PckCurve) -> float:
    """Trapezoidal area under the curve, normalized by the threshold span."""
    deltas = np.diff(curve.thresholds)
    num = (0.5 * (curve.values[:-1] + curve.values[1:]) * deltas).sum()
    return float(num / deltas.sum())


# ---------------------------------------------------------------------------
# 2.5D surface projection

def surface_project(cloud: PointCloud, camera: CameraModel,
                    raster: tuple[int, int] | None = None,
                    depth_tol: float = 10.0) -> PointCloud:
    """Camera-visible subset of a cloud, in the camera frame.

    Points are binned on a pixel raster (the camera's native resolution by
    default); within each occupied cell only points within `depth_tol` of
    the cell's minimum camera depth survive. This is the z-buffer reading
    of a 2.5D surface projection.
    """
    _check_nonempty(cloud)
    raster_w, raster_h = raster if raster is not None else (camera.width, camera.height)
    if raster_w < 1 or raster_h < 1:
        raise ValueError("raster resolution must be positive")
    pts_cam = camera.world_to_camera(cloud.points)
    z = pts_cam[:, 2]
    front = z > 0
    uv = np.zeros((len(cloud), 2))
    uv[front] = camera.project(pts_cam[front])
    # Pixel centers sit at integer coordinates, so the image spans
    # [-0.5, width - 0.5) x [-0.5, height - 0.5).
    cu = np.floor((uv[:, 0] + 0.5) * raster_w / camera.width).astype(np.int64)
    cv = np.floor((uv[:, 1] + 0.5) * raster_h / camera.height).astype(np.int64)
    inside = front & (cu >= 0) & (cu < raster_w) & (cv >= 0) & (cv < raster_h)
    if not inside.any():
        raise ValueError("cloud outside frustum")
    idx = np.flatnonzero(inside)
    cell = cv[idx] * raster_w + cu[idx]
    zmin = np.full(raster_w * raster_h, np.inf)
    np.minimum.at(zmin, cell, z[idx])
    keep = idx[z[idx] <= zmin[cell] + depth_tol]
    lab = cloud.labels[keep] if cloud.labels is not None else None
    return PointCloud(pts_cam[keep], lab)
