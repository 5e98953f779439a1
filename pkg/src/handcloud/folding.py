"""Desk-scale folding decoder, pose decoder, and a manual-gradient ADAM
trainer.

The decoder folds a fixed template into a target cloud conditioned on a
512-dimensional latent code: two 3-layer perceptron stages per weight block,
with the final layers zero-initialized so a fresh decoder reproduces its
template exactly. Local templates get an independent weight block per hand
component. Gradients are hand-derived; nearest-neighbor and assignment
matches are held fixed within each backward pass.

Scenes are synthetic: latent codes come from a fixed random Fourier
embedding of the flexion angles, standing in for an image encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .geometry import ComponentId, HandPose, PointCloud
from .metrics import LossBreakdown
from .templates import (
    SyntheticHandSpec,
    Template,
    TemplateKind,
    default_budget,
    hand_skeleton,
    normalize_cloud,
    sample_hand_by_component,
)

LATENT_DIM = 512
_POSE_HIDDEN = 128
_N_JOINTS = 21

GLOBAL_LOSS = "global"
LOCAL_GLOBAL_LOSS = "local_global"


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


# ---------------------------------------------------------------------------
# Parameter bookkeeping

class _Layout:
    """Maps named parameters to slices of one flat vector."""

    def __init__(self):
        self.shapes: dict[str, tuple] = {}
        self.slices: dict[str, slice] = {}
        self.size = 0

    def add(self, name: str, shape: tuple) -> None:
        count = int(np.prod(shape))
        self.shapes[name] = shape
        self.slices[name] = slice(self.size, self.size + count)
        self.size += count

    def view(self, vec: np.ndarray, name: str) -> np.ndarray:
        return vec[self.slices[name]].reshape(self.shapes[name])


def _add_stage(layout: _Layout, prefix: str, hidden: int) -> None:
    layout.add(f"{prefix}/w1p", (3, hidden))
    layout.add(f"{prefix}/w1z", (LATENT_DIM, hidden))
    layout.add(f"{prefix}/b1", (hidden,))
    layout.add(f"{prefix}/w2", (hidden, hidden))
    layout.add(f"{prefix}/b2", (hidden,))
    layout.add(f"{prefix}/w3", (hidden, 3))
    layout.add(f"{prefix}/b3", (3,))


def _init_stage(layout: _Layout, theta: np.ndarray, prefix: str, hidden: int,
                rng: np.random.Generator) -> None:
    fan_in = 3 + LATENT_DIM
    layout.view(theta, f"{prefix}/w1p")[:] = rng.normal(0, fan_in ** -0.5, (3, hidden))
    layout.view(theta, f"{prefix}/w1z")[:] = rng.normal(0, fan_in ** -0.5,
                                                        (LATENT_DIM, hidden))
    layout.view(theta, f"{prefix}/w2")[:] = rng.normal(0, hidden ** -0.5,
                                                       (hidden, hidden))
    # Biases and the final layer start at zero: the stage outputs zero, so a
    # fresh decoder is the identity on its template.


def _stage_forward(layout, theta, prefix, points, z):
    w1p = layout.view(theta, f"{prefix}/w1p")
    w1z = layout.view(theta, f"{prefix}/w1z")
    b1 = layout.view(theta, f"{prefix}/b1")
    w2 = layout.view(theta, f"{prefix}/w2")
    b2 = layout.view(theta, f"{prefix}/b2")
    w3 = layout.view(theta, f"{prefix}/w3")
    b3 = layout.view(theta, f"{prefix}/b3")
    h1 = np.tanh(points @ w1p + (z @ w1z + b1))
    h2 = np.tanh(h1 @ w2 + b2)
    out = h2 @ w3 + b3
    return out, (points, h1, h2)


def _stage_backward(layout, theta, grad, prefix, z, cache, d_out):
    points, h1, h2 = cache
    w2 = layout.view(theta, f"{prefix}/w2")
    w3 = layout.view(theta, f"{prefix}/w3")
    w1p = layout.view(theta, f"{prefix}/w1p")

    layout.view(grad, f"{prefix}/w3")[:] += h2.T @ d_out
    layout.view(grad, f"{prefix}/b3")[:] += d_out.sum(axis=0)
    da2 = (d_out @ w3.T) * (1.0 - h2 * h2)
    layout.view(grad, f"{prefix}/w2")[:] += h1.T @ da2
    layout.view(grad, f"{prefix}/b2")[:] += da2.sum(axis=0)
    da1 = (da2 @ w2.T) * (1.0 - h1 * h1)
    layout.view(grad, f"{prefix}/w1p")[:] += points.T @ da1
    da1_sum = da1.sum(axis=0)
    layout.view(grad, f"{prefix}/w1z")[:] += np.outer(z, da1_sum)
    layout.view(grad, f"{prefix}/b1")[:] += da1_sum
    return da1 @ w1p.T  # gradient w.r.t. the stage's input points


# ---------------------------------------------------------------------------
# Folding decoder

class FoldingDecoder:
    """Two folding stages per weight block; one block per local component.

    The template must group points contiguously by component when its kind
    is LOCAL_HAND3D (local_hand_template builds them that way).
    """

    def __init__(self, template: Template, hidden: int = 128, seed: int = 0):
        if hidden < 1:
            raise ValueError("hidden width must be >= 1")
        self.template = template
        self.hidden = hidden
        labels = template.cloud.labels
        if template.kind is TemplateKind.LOCAL_HAND3D:
            self.block_components = [cid for cid in ComponentId
                                     if int(cid) in set(labels.tolist())]
            self.block_ranges = []
            for cid in self.block_components:
                idx = np.flatnonzero(labels == int(cid))
                if idx[-1] - idx[0] + 1 != len(idx):
                    raise ValueError("local template points must be grouped "
                                     "by component")
                self.block_ranges.append(slice(int(idx[0]), int(idx[-1]) + 1))
        else:
            self.block_components = [None]
            self.block_ranges = [slice(0, len(template.cloud))]

        self.layout = _Layout()
        for b in range(len(self.block_ranges)):
            _add_stage(self.layout, f"b{b}/s1", hidden)
            _add_stage(self.layout, f"b{b}/s2", hidden)
        self.theta = np.zeros(self.layout.size)
        rng = np.random.default_rng(seed)
        for b in range(len(self.block_ranges)):
            _init_stage(self.layout, self.theta, f"b{b}/s1", hidden, rng)
            _init_stage(self.layout, self.theta, f"b{b}/s2", hidden, rng)

    @property
    def n_weights(self) -> int:
        return self.layout.size

    def _check_latent(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64).ravel()
        if z.shape != (LATENT_DIM,):
            raise ValueError(f"latent dimension mismatch: expected {LATENT_DIM}, "
                             f"got {z.shape}")
        if not np.all(np.isfinite(z)):
            raise ValueError("latent code contains NaN or Inf")
        return z

    def _forward(self, z: np.ndarray, want_cache: bool):
        # Both stages are residual: the intermediate points stay anchored at
        # template scale (an unconstrained stage-1 output grows until the
        # second stage's tanh saturates and gradients die).
        out = np.empty_like(self.template.cloud.points)
        caches = []
        for b, rng_ in enumerate(self.block_ranges):
            points = self.template.cloud.points[rng_]
            delta1, cache1 = _stage_forward(self.layout, self.theta,
                                            f"b{b}/s1", points, z)
            folded = points + delta1
            delta2, cache2 = _stage_forward(self.layout, self.theta,
                                            f"b{b}/s2", folded, z)
            out[rng_] = points + delta2
            if want_cache:
                caches.append((cache1, cache2))
        return out, caches

    def _backward(self, z: np.ndarray, caches, d_out: np.ndarray) -> np.ndarray:
        grad = np.zeros_like(self.theta)
        for b, rng_ in enumerate(self.block_ranges):
            cache1, cache2 = caches[b]
            d_folded = _stage_backward(self.layout, self.theta, grad,
                                       f"b{b}/s2", z, cache2, d_out[rng_])
            _stage_backward(self.layout, self.theta, grad, f"b{b}/s1", z,
                            cache1, d_folded)
        return grad


def decode(decoder: FoldingDecoder, z) -> PointCloud:
    """Fold the template under latent z; labels copy from the template."""
    z = decoder._check_latent(z)
    out, _ = decoder._forward(z, want_cache=False)
    return PointCloud(out, decoder.template.cloud.labels)


# ---------------------------------------------------------------------------
# Reconstruction loss with gradients

def _cd_terms(gt: np.ndarray, pred: np.ndarray):
    """Chamfer value plus the frozen nearest-neighbor matches.

    Returns (value, gt_nearest_pred_index, pred_nearest_gt_index, sq_matrix).
    """
    d2 = cdist(gt, pred, "sqeuclidean")
    a = d2.argmin(axis=1)
    b = d2.argmin(axis=0)
    rows = np.arange(len(gt))
    cols = np.arange(len(pred))
    value = d2[rows, a].mean() + d2[b, cols].mean()
    return float(value), a, b, d2


def _cd_grad(gt, pred, a, b) -> np.ndarray:
    """Chamfer gradient w.r.t. the pred points, matches held fixed."""
    grad = (2.0 / len(pred)) * (pred - gt[b])
    np.add.at(grad, a, (2.0 / len(gt)) * (pred[a] - gt))
    return grad


def _emd_term(gt: np.ndarray, pred: np.ndarray, d2: np.ndarray):
    """EMD value plus the optimal assignment and matched distances."""
    cost = np.sqrt(d2.T)  # rows = pred, cols = gt
    r, c = linear_sum_assignment(cost)
    mapping = np.empty(len(pred), dtype=np.int64)
    mapping[r] = c
    dists = cost[np.arange(len(pred)), mapping]
    return float(dists.sum()), mapping, dists


def _emd_grad(gt, pred, mapping, dists) -> np.ndarray:
    """EMD subgradient w.r.t. pred; zero at coincident matched points."""
    grad = np.zeros_like(pred)
    safe = dists > 0
    grad[safe] = (pred[safe] - gt[mapping][safe]) / dists[safe, None]
    return grad


def loss_and_gradients(decoder: FoldingDecoder, z, gt: PointCloud,
                       mode: str = LOCAL_GLOBAL_LOSS):
    """Reconstruction loss and its gradient w.r.t. every decoder weight.

    The global mode uses only the whole-cloud CD and EMD terms; the
    local+global mode adds per-component terms and requires matching
    per-component cardinalities. Matches are constants of the backward pass.
    """
    if mode not in (GLOBAL_LOSS, LOCAL_GLOBAL_LOSS):
        raise ValueError(f"unknown loss mode {mode!r}")
    z = decoder._check_latent(z)
    pred, caches = decoder._forward(z, want_cache=True)
    gt_pts = gt.points
    if len(gt_pts) == 0:
        raise ValueError("empty point cloud")

    dY = np.zeros_like(pred)
    cd_local = np.zeros(len(ComponentId))
    emd_local = np.zeros(len(ComponentId))

    if mode == LOCAL_GLOBAL_LOSS:
        if gt.labels is None or decoder.template.cloud.labels is None:
            raise ValueError("local+global loss requires labeled clouds")
        pred_labels = decoder.template.cloud.labels
        for cid in ComponentId:
            gt_rows = np.flatnonzero(gt.labels == int(cid))
            pred_rows = np.flatnonzero(pred_labels == int(cid))
            if len(gt_rows) != len(pred_rows):
                raise ValueError(
                    f"per-component cardinality mismatch for {cid.short_name}: "
                    f"{len(gt_rows)} ground truth vs {len(pred_rows)} predicted"
                )
            if len(gt_rows) == 0:
                continue
            g = gt_pts[gt_rows]
            p = pred[pred_rows]
            value, a, b, d2 = _cd_terms(g, p)
            cd_local[cid] = value
            dY[pred_rows] += _cd_grad(g, p, a, b)
            total, mapping, dists = _emd_term(g, p, d2)
            emd_local[cid] = total
            dY[pred_rows] += _emd_grad(g, p, mapping, dists)

    if len(gt_pts) != len(pred):
        raise ValueError("EMD requires equal cardinality")
    cd_global, a, b, d2 = _cd_terms(gt_pts, pred)
    dY += _cd_grad(gt_pts, pred, a, b)
    emd_global, mapping, dists = _emd_term(gt_pts, pred, d2)
    dY += _emd_grad(gt_pts, pred, mapping, dists)

    breakdown = LossBreakdown.build(cd_local, emd_local, cd_global, emd_global)
    grad = decoder._backward(z, caches, dY)
    return breakdown, grad


# ---------------------------------------------------------------------------
# Pose decoder

class PoseDecoder:
    """Three fully connected layers (128 hidden) from latent to 21 joints."""

    def __init__(self, seed: int = 0):
        self.layout = _Layout()
        self.layout.add("w1", (LATENT_DIM, _POSE_HIDDEN))
        self.layout.add("b1", (_POSE_HIDDEN,))
        self.layout.add("w2", (_POSE_HIDDEN, _POSE_HIDDEN))
        self.layout.add("b2", (_POSE_HIDDEN,))
        self.layout.add("w3", (_POSE_HIDDEN, _N_JOINTS * 3))
        self.layout.add("b3", (_N_JOINTS * 3,))
        self.theta = np.zeros(self.layout.size)
        rng = np.random.default_rng(seed)
        self.layout.view(self.theta, "w1")[:] = rng.normal(
            0, LATENT_DIM ** -0.5, (LATENT_DIM, _POSE_HIDDEN))
        self.layout.view(self.theta, "w2")[:] = rng.normal(
            0, _POSE_HIDDEN ** -0.5, (_POSE_HIDDEN, _POSE_HIDDEN))
        self.layout.view(self.theta, "w3")[:] = rng.normal(
            0, _POSE_HIDDEN ** -0.5, (_POSE_HIDDEN, _N_JOINTS * 3))

    @property
    def n_weights(self) -> int:
        return self.layout.size

    def _forward(self, z: np.ndarray):
        view = self.layout.view
        h1 = np.tanh(z @ view(self.theta, "w1") + view(self.theta, "b1"))
        h2 = np.tanh(h1 @ view(self.theta, "w2") + view(self.theta, "b2"))
        out = h2 @ view(self.theta, "w3") + view(self.theta, "b3")
        return out, (h1, h2)


def decode_pose(decoder: PoseDecoder, z) -> HandPose:
    z = np.asarray(z, dtype=np.float64).ravel()
    if z.shape != (LATENT_DIM,):
        raise ValueError("latent dimension mismatch")
    out, _ = decoder._forward(z)
    return HandPose(out.reshape(_N_JOINTS, 3))


def pose_loss_and_gradients(decoder: PoseDecoder, z, gt: HandPose):
    """L2 norm of the 63-dimensional joint residual and its exact gradient.

    The gradient at a zero residual is taken as zero (the subgradient
    convention also used for coincident EMD matches).
    """
    z = np.asarray(z, dtype=np.float64).ravel()
    out, (h1, h2) = decoder._forward(z)
    residual = out - gt.joints.ravel()
    loss = float(np.linalg.norm(residual))
    grad = np.zeros_like(decoder.theta)
    if loss > 0:
        d_out = residual / loss
        view = decoder.layout.view
        view(grad, "w3")[:] = np.outer(h2, d_out)
        view(grad, "b3")[:] = d_out
        da2 = (view(decoder.theta, "w3") @ d_out) * (1.0 - h2 * h2)
        view(grad, "w2")[:] = np.outer(h1, da2)
        view(grad, "b2")[:] = da2
        da1 = (view(decoder.theta, "w2") @ da2) * (1.0 - h1 * h1)
        view(grad, "w1")[:] = np.outer(z, da1)
        view(grad, "b1")[:] = da1
    return loss, grad


# ---------------------------------------------------------------------------
# ADAM

class Adam:
    """Standard ADAM with L2 weight decay folded into the gradient."""

    def __init__(self, size: int, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self, theta: np.ndarray, grad: np.ndarray, lr: float,
             weight_decay: float = 0.0) -> None:
        self.t += 1
        g = grad + weight_decay * theta
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        theta -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# Synthetic scenes

_FLEXION_LOW = np.array([0.0, 0.0, 0.0])
_FLEXION_HIGH = np.array([1.2, 1.5, 0.9])


@dataclass(frozen=True)
class SyntheticScene:
    """A posed hand: flexion angles, normalized cloud + joints, latent code."""

    flexion: np.ndarray
    cloud: PointCloud
    pose: HandPose
    latent: np.ndarray


def latent_embedding(flexion: np.ndarray, seed: int = 0) -> np.ndarray:
    """Fixed random Fourier features of the 15 flexion angles."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    basis = rng.normal(0.0, 1.0, (LATENT_DIM, 15))
    phase = rng.uniform(0.0, 2 * np.pi, LATENT_DIM)
    return np.sqrt(2.0) * np.cos(basis @ np.ravel(flexion) + phase)


def make_scenes(count: int, n_points: int, seed: int,
                budget: dict[ComponentId, int] | None = None) -> list[SyntheticScene]:
    """Posed synthetic hands with fixed per-component point budgets.

    Clouds and joint positions are normalized per scene to zero centroid and
    unit max radius, so the decoder works in template units.
    """
    if count < 1:
        raise ValueError("need at least one scene")
    if budget is None:
        budget = default_budget(n_points)
    base = SyntheticHandSpec.default()
    root = np.random.SeedSequence(seed)
    flex_rng = np.random.default_rng(root.spawn(1)[0])
    sample_seeds = np.random.SeedSequence([seed, 0xC10D]).generate_state(count)
    scenes = []
    for i in range(count):
        flexion = flex_rng.uniform(_FLEXION_LOW, _FLEXION_HIGH, (5, 3))
        spec = base.with_flexion(flexion)
        cloud = sample_hand_by_component(spec, budget, int(sample_seeds[i]))
        pts, centroid, scale = normalize_cloud(cloud.points)
        joints = (hand_skeleton(spec).joints - centroid) / scale
        scenes.append(SyntheticScene(
            flexion=flexion,
            cloud=PointCloud(pts, cloud.labels),
            pose=HandPose(joints),
            latent=latent_embedding(flexion, seed=seed),
        ))
    return scenes


def benchmark_template(kind: TemplateKind, n: int, seed: int,
                       budget: dict[ComponentId, int] | None = None) -> Template:
    """Template of exactly n points for benchmark runs.

    Grid templates truncate a ceil(sqrt(n))^2 row-major lattice to n points
    so the decoder's output cardinality matches the target clouds (the EMD
    term needs equal counts). Hand and local templates sample the canonical
    hand as usual.
    """
    from .templates import grid_template, hand_template, local_hand_template

    if kind is TemplateKind.GRID2D:
        m = int(np.ceil(np.sqrt(n)))
        full = grid_template(m * m)
        cloud = full.cloud.subset(np.arange(n))
        return Template(cloud, TemplateKind.GRID2D)
    if kind is TemplateKind.HAND3D:
        return hand_template(n, seed)
    if kind is TemplateKind.LOCAL_HAND3D:
        return local_hand_template(budget or default_budget(n), seed)
    raise ValueError(f"unknown template kind {kind!r}")


# ---------------------------------------------------------------------------
# Training

@dataclass(frozen=True)
class TrainerConfig:
    epochs: int
    seed: int = 0
    learning_rate: float = 1e-3
    weight_decay: float = 1e-6
    batch_size: int = 32
    loss_mode: str = LOCAL_GLOBAL_LOSS

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.loss_mode not in (GLOBAL_LOSS, LOCAL_GLOBAL_LOSS):
            raise ValueError(f"unknown loss mode {self.loss_mode!r}")


@dataclass
class TrainingLog:
    """Per-epoch mean loss breakdowns plus final whole-set metrics."""

    epochs: list[LossBreakdown] = field(default_factory=list)
    final_cd: float = float("nan")
    final_emd: float = float("nan")

    def csv_rows(self):
        header = (["epoch", "cd_global", "emd_global"]
                  + [f"cd_{c.short_name}" for c in ComponentId]
                  + [f"emd_{c.short_name}" for c in ComponentId]
                  + ["total"])
        yield header
        for i, b in enumerate(self.epochs, start=1):
            yield ([str(i), repr(b.cd_global), repr(b.emd_global)]
                   + [repr(float(v)) for v in b.cd_local]
                   + [repr(float(v)) for v in b.emd_local]
                   + [repr(b.total)])


def _mean_breakdown(parts: list[LossBreakdown]) -> LossBreakdown:
    return LossBreakdown.build(
        np.mean([p.cd_local for p in parts], axis=0),
        np.mean([p.emd_local for p in parts], axis=0),
        float(np.mean([p.cd_global for p in parts])),
        float(np.mean([p.emd_global for p in parts])),
    )


def train(decoder: FoldingDecoder, scenes: list[SyntheticScene],
          config: TrainerConfig) -> TrainingLog:
    """ADAM training of the reconstruction decoder; deterministic per seed."""
    if not scenes:
        raise ValueError("need at least one scene")
    rng = np.random.default_rng(config.seed)
    adam = Adam(decoder.theta.size)
    log = TrainingLog()
    for epoch in range(config.epochs):
        order = rng.permutation(len(scenes))
        epoch_parts = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            grad = np.zeros_like(decoder.theta)
            for scene_idx in batch:
                scene = scenes[scene_idx]
                breakdown, g = loss_and_gradients(decoder, scene.latent,
                                                  scene.cloud, config.loss_mode)
                if not np.isfinite(breakdown.total):
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch + 1}, "
                        f"scene {int(scene_idx)}"
                    )
                grad += g
                epoch_parts.append(breakdown)
            grad /= len(batch)
            adam.step(decoder.theta, grad, config.learning_rate,
                      config.weight_decay)
        log.epochs.append(_mean_breakdown(epoch_parts))

    from .metrics import chamfer_distance, earth_movers_distance
    cds = []
    emds = []
    for scene in scenes:
        pred = decode(decoder, scene.latent)
        cds.append(chamfer_distance(scene.cloud, pred))
        emds.append(earth_movers_distance(scene.cloud, pred)[0])
    log.final_cd = float(np.mean(cds))
    log.final_emd = float(np.mean(emds))
    return log


def train_pose(decoder: PoseDecoder, scenes: list[SyntheticScene],
               config: TrainerConfig) -> list[float]:
    """ADAM training of the pose decoder; returns per-epoch mean loss."""
    if not scenes:
        raise ValueError("need at least one scene")
    rng = np.random.default_rng(config.seed)
    adam = Adam(decoder.theta.size)
    losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(scenes))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            grad = np.zeros_like(decoder.theta)
            for scene_idx in batch:
                scene = scenes[scene_idx]
                loss, g = pose_loss_and_gradients(decoder, scene.latent,
                                                  scene.pose)
                if not np.isfinite(loss):
                    raise DivergenceError(f"non-finite pose loss at epoch "
                                          f"{epoch + 1}")
                grad += g
                epoch_losses.append(loss)
            grad /= len(batch)
            adam.step(decoder.theta, grad, config.learning_rate,
                      config.weight_decay)
        losses.append(float(np.mean(epoch_losses)))
    return losses


# ---------------------------------------------------------------------------
# Weight serialization

_MAGIC = b"HCFD"
_VERSION = 1
_KIND_CODES = {TemplateKind.GRID2D: 0, TemplateKind.HAND3D: 1,
               TemplateKind.LOCAL_HAND3D: 2}


def save_decoder(path, decoder: FoldingDecoder) -> None:
    """Write decoder weights and template as a little-endian binary blob.

    Layout: magic "HCFD", u32 version, u8 kind, u32 hidden, u32 latent dim,
    u32 point count, template points (f64 x 3 per point), labels (u8 per
    point), u64 weight count, weights (f64).
    """
    cloud = decoder.template.cloud
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(np.array([_VERSION], "<u4").tobytes())
        f.write(np.array([_KIND_CODES[decoder.template.kind]], "u1").tobytes())
        f.write(np.array([decoder.hidden, LATENT_DIM, len(cloud)], "<u4").tobytes())
        f.write(cloud.points.astype("<f8").tobytes())
        f.write(cloud.labels.astype("u1").tobytes())
        f.write(np.array([decoder.theta.size], "<u8").tobytes())
        f.write(decoder.theta.astype("<f8").tobytes())


def load_decoder(path) -> FoldingDecoder:
    """Reload a decoder written by save_decoder."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a decoder blob (bad magic)")
    version = int(np.frombuffer(raw[4:8], "<u4")[0])
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    kind_code = raw[8]
    kinds = {v: k for k, v in _KIND_CODES.items()}
    if kind_code not in kinds:
        raise ValueError(f"{path}: unknown template kind {kind_code}")
    hidden, latent, n = np.frombuffer(raw[9:21], "<u4")
    if latent != LATENT_DIM:
        raise ValueError(f"{path}: latent dimension {latent} unsupported")
    pos = 21
    pts = np.frombuffer(raw[pos:pos + 24 * n], "<f8").reshape(n, 3).copy()
    pos += 24 * n
    labels = np.frombuffer(raw[pos:pos + n], "u1").copy()
    pos += n
    count = int(np.frombuffer(raw[pos:pos + 8], "<u8")[0])
    pos += 8
    theta = np.frombuffer(raw[pos:pos + 8 * count], "<f8").copy()
    if len(theta) != count:
        raise ValueError(f"{path}: truncated weight data")

    kind = kinds[kind_code]
    budget = None
    if kind is TemplateKind.LOCAL_HAND3D:
        budget = {ComponentId(c): int((labels == c).sum())
                  for c in sorted(set(labels.tolist()))}
    template = Template(PointCloud(pts, labels), kind, budget)
    decoder = FoldingDecoder(template, hidden=int(hidden))
    if theta.size != decoder.theta.size:
        raise ValueError(f"{path}: weight count {theta.size} does not match "
                         f"architecture ({decoder.theta.size})")
    decoder.theta = theta
    return decoder
