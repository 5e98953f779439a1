"""Component-label transfer from a labeled reference cloud and per-component
resampling.

Transfer runs a k-nearest-neighbor vote (k = 3 by default) in world
coordinates; callers are responsible for aligning query and reference
beforehand. An exact-coincidence query point takes its reference twin's
label directly, which makes identity transfer literal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ComponentId, KdTree, PointCloud, build_index


@dataclass(frozen=True)
class LabeledReference:
    """A fully labeled cloud with a prebuilt exact index."""

    cloud: PointCloud
    index: KdTree

    def __post_init__(self):
        if self.cloud.labels is None:
            raise ValueError("reference cloud must be labeled")
        present = set(self.cloud.labels.tolist())
        missing = [c.short_name for c in ComponentId if int(c) not in present]
        if missing:
            raise ValueError(f"reference lacks components: {', '.join(missing)}")

    @classmethod
    def from_cloud(cls, cloud: PointCloud) -> "LabeledReference":
        return cls(cloud, build_index(cloud))


def _vote(labels_by_rank: np.ndarray) -> int:
    """Majority label; ties resolve to the winner seen nearest first."""
    counts = np.bincount(labels_by_rank, minlength=len(ComponentId))
    top = counts.max()
    for lab in labels_by_rank:
        if counts[lab] == top:
            return int(lab)
    raise AssertionError("unreachable")


def knn_transfer(query: PointCloud, ref: LabeledReference, k: int = 3) -> PointCloud:
    """Label each query point by majority vote of its k nearest references."""
    if len(query) == 0:
        raise ValueError("empty query cloud")
    if k < 1:
        raise ValueError("k must be >= 1")
    ref_labels = ref.cloud.labels
    out = np.empty(len(query), dtype=np.uint8)
    for row, point in enumerate(query.points):
        idx, dist = ref.index.query(point, k)
        if dist[0] == 0.0:
            out[row] = ref_labels[idx[0]]
        else:
            out[row] = _vote(ref_labels[idx].astype(np.int64))
    return PointCloud(query.points, out)


def resample_components(cloud: PointCloud, budget: dict[ComponentId, int],
                        seed: int) -> PointCloud:
    """Resample each budgeted component to an exact count.

    Subsamples uniformly without replacement; when a budget exceeds the
    available points the component is upsampled with replacement. Output is
    concatenated in ComponentId order. Components missing from the budget
    are dropped.
    """
    if cloud.labels is None:
        raise ValueError("cloud must be labeled")
    rng = np.random.default_rng(seed)
    points = []
    labels = []
    for cid in ComponentId:
        want = int(budget.get(cid, 0))
        if want == 0:
            continue
        source = np.flatnonzero(cloud.labels == int(cid))
        if len(source) == 0:
            raise ValueError(f"no source points for budgeted component "
                             f"{cid.short_name}")
        if want <= len(source):
            pick = source[rng.choice(len(source), want, replace=False)]
        else:
            pick = source[rng.choice(len(source), want, replace=True)]
        points.append(cloud.points[pick])
        labels.append(np.full(want, int(cid), dtype=np.uint8))
    if not points:
        raise ValueError("budget is empty")
    return PointCloud(np.concatenate(points), np.concatenate(labels))
