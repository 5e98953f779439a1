"""Decoder template initializations and triangle-mesh surface sampling.

A procedural hand substitutes for licensed parametric mesh models: the palm
is an ellipsoid and each phalanx a capsule, assembled by forward kinematics
from per-digit bone lengths and flexion angles. All dimensions are
millimeters; templates are normalized to zero centroid and unit max radius.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass

import numpy as np

from .geometry import ComponentId, HandPose, PointCloud, axis_angle_rotation

_ANGULAR_RESOLUTION = 16  # segments per full turn for all curved surfaces
_UPSAMPLE_FACTOR = 4

_DIGIT_COMPONENTS = (ComponentId.THUMB, ComponentId.INDEX, ComponentId.MIDDLE,
                     ComponentId.RING, ComponentId.PINKY)

# Digit attachment points as fractions of the palm ellipsoid radii, and the
# in-plane splay of each digit's zero-flexion direction. Fingers fan out
# around +x like a spread hand (keeps the inter-digit gaps visible to a
# camera rig); the thumb leaves the radial (+y) side at 40 degrees.
_THUMB_ANGLE = np.deg2rad(40.0)
_DIGIT_BASE_FRACTIONS = {
    ComponentId.THUMB: (0.22, 0.95),
    ComponentId.INDEX: (None, 26.0 / 38.0),
    ComponentId.MIDDLE: (None, 9.0 / 38.0),
    ComponentId.RING: (None, -9.0 / 38.0),
    ComponentId.PINKY: (None, -26.0 / 38.0),
}
_DIGIT_SPLAY = {
    ComponentId.INDEX: np.deg2rad(10.0),
    ComponentId.MIDDLE: np.deg2rad(1.0),
    ComponentId.RING: np.deg2rad(-8.0),
    ComponentId.PINKY: np.deg2rad(-18.0),
}


@dataclass(frozen=True)
class SyntheticHandSpec:
    """Dimensions and pose of the procedural hand.

    Rows of the per-digit arrays follow thumb, index, middle, ring, pinky;
    columns run from the proximal to the distal phalanx.
    """

    bone_lengths: np.ndarray  # (5, 3) mm
    palm_radii: np.ndarray    # (3,) mm
    digit_radii: np.ndarray   # (5,) mm
    flexion: np.ndarray       # (5, 3) radians per articulation

    def __post_init__(self):
        bones = np.asarray(self.bone_lengths, dtype=np.float64).reshape(5, 3)
        palm = np.asarray(self.palm_radii, dtype=np.float64).reshape(3)
        radii = np.asarray(self.digit_radii, dtype=np.float64).reshape(5)
        flex = np.asarray(self.flexion, dtype=np.float64).reshape(5, 3)
        if bones.min() <= 0 or palm.min() <= 0 or radii.min() <= 0:
            raise ValueError("bone lengths and radii must be positive")
        if flex.min() < -np.pi / 2 or flex.max() > np.pi:
            raise ValueError("flexion angles must lie in [-pi/2, pi]")
        for name, arr in (("bone_lengths", bones), ("palm_radii", palm),
                          ("digit_radii", radii), ("flexion", flex)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def default(cls) -> "SyntheticHandSpec":
        return cls(
            bone_lengths=[[45.0, 32.0, 25.0],   # thumb
                          [42.0, 25.0, 22.0],   # index
                          [46.0, 28.0, 24.0],   # middle
                          [42.0, 26.0, 22.0],   # ring
                          [34.0, 20.0, 19.0]],  # pinky
            palm_radii=[45.0, 38.0, 14.0],
            digit_radii=[11.0, 9.0, 9.5, 9.0, 8.0],
            flexion=np.zeros((5, 3)),
        )

    def with_flexion(self, flexion) -> "SyntheticHandSpec":
        return SyntheticHandSpec(self.bone_lengths, self.palm_radii,
                                 self.digit_radii, flexion)

    def to_dict(self) -> dict:
        return {
            "bone_lengths": self.bone_lengths.tolist(),
            "palm_radii": self.palm_radii.tolist(),
            "digit_radii": self.digit_radii.tolist(),
            "flexion": self.flexion.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticHandSpec":
        try:
            return cls(data["bone_lengths"], data["palm_radii"],
                       data["digit_radii"], data["flexion"])
        except KeyError as e:
            raise ValueError(f"hand spec missing field {e}") from None


@dataclass(frozen=True)
class TriangleMesh:
    """Triangle mesh with optional per-vertex component labels."""

    vertices: np.ndarray
    faces: np.ndarray
    vertex_labels: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        f = np.asarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or f.ndim != 2 or f.shape[1] != 3:
            raise ValueError("vertices must be (V, 3) and faces (F, 3)")
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face indices out of range")
        if np.any(self._face_areas(v, f) <= 0):
            raise ValueError("mesh contains degenerate zero-area faces")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if self.vertex_labels is not None:
            lab = np.asarray(self.vertex_labels, dtype=np.uint8)
            if lab.shape != (len(v),):
                raise ValueError("vertex_labels length must match vertices")
            object.__setattr__(self, "vertex_labels", lab)

    @staticmethod
    def _face_areas(v: np.ndarray, f: np.ndarray) -> np.ndarray:
        a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def face_areas(self) -> np.ndarray:
        return self._face_areas(self.vertices, self.faces)

    def face_labels(self) -> np.ndarray:
        """Majority vertex label per face; ties pick the lowest ComponentId."""
        if self.vertex_labels is None:
            raise ValueError("mesh has no vertex labels")
        rows = np.sort(self.vertex_labels[self.faces].astype(np.int64), axis=1)
        out = rows[:, 0].copy()
        mid_pair = rows[:, 1] == rows[:, 2]
        out[mid_pair & (rows[:, 0] != rows[:, 1])] = rows[mid_pair & (rows[:, 0] != rows[:, 1]), 1]
        return out.astype(np.uint8)

    def is_watertight(self) -> bool:
        """True when every undirected edge is shared by exactly two faces."""
        edges = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]],
                                self.faces[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))


def _ellipsoid(center, radii, label: int,
               n_theta: int = _ANGULAR_RESOLUTION,
               n_lat: int = _ANGULAR_RESOLUTION):
    """Closed UV-sphere mesh scaled to an ellipsoid."""
    center = np.asarray(center, dtype=np.float64)
    radii = np.asarray(radii, dtype=np.float64)
    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    verts = [center + radii * np.array([0.0, 0.0, 1.0])]
    for i in range(1, n_lat):
        phi = np.pi * i / n_lat
        ring = np.stack([np.sin(phi) * np.cos(theta),
                         np.sin(phi) * np.sin(theta),
                         np.full(n_theta, np.cos(phi))], axis=1)
        verts.extend(center + radii * ring)
    verts.append(center + radii * np.array([0.0, 0.0, -1.0]))
    verts = np.array(verts)

    faces = []
    def ring_start(i):  # ring index 0..n_lat-2
        return 1 + i * n_theta
    for t in range(n_theta):
        faces.append((0, ring_start(0) + t, ring_start(0) + (t + 1) % n_theta))
    for i in range(n_lat - 2):
        a, b = ring_start(i), ring_start(i + 1)
        for t in range(n_theta):
            t2 = (t + 1) % n_theta
            faces.append((a + t, b + t, b + t2))
            faces.append((a + t, b + t2, a + t2))
    bottom = len(verts) - 1
    last = ring_start(n_lat - 2)
    for t in range(n_theta):
        faces.append((bottom, last + (t + 1) % n_theta, last + t))
    labels = np.full(len(verts), label, dtype=np.uint8)
    return verts, np.array(faces, dtype=np.int64), labels


def _capsule(p0, p1, radius: float, label: int,
             n_theta: int = _ANGULAR_RESOLUTION,
             n_cap: int = _ANGULAR_RESOLUTION // 4):
    """Closed capsule: a cylinder from p0 to p1 with hemispherical caps."""
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    axis = p1 - p0
    length = np.linalg.norm(axis)
    if length <= 0:
        raise ValueError("capsule endpoints coincide")
    u = axis / length
    helper = np.array([0.0, 0.0, 1.0])
    if abs(u @ helper) > 0.9:
        helper = np.array([1.0, 0.0, 0.0])
    e1 = np.cross(u, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)
    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    circle = np.outer(np.cos(theta), e1) + np.outer(np.sin(theta), e2)

    verts = [p0 - radius * u]
    alphas = np.pi / 2 * np.arange(1, n_cap + 1) / n_cap
    for a in alphas:                       # bottom cap, pole to equator
        verts.extend(p0 + radius * (np.sin(a) * circle - np.cos(a) * u))
    for a in alphas[::-1]:                 # top cap, equator to pole
        verts.extend(p1 + radius * (np.sin(a) * circle + np.cos(a) * u))
    verts.append(p1 + radius * u)
    verts = np.array(verts)

    n_rings = 2 * n_cap
    faces = []
    def ring_start(i):
        return 1 + i * n_theta
    for t in range(n_theta):
        faces.append((0, ring_start(0) + (t + 1) % n_theta, ring_start(0) + t))
    for i in range(n_rings - 1):
        a, b = ring_start(i), ring_start(i + 1)
        for t in range(n_theta):
            t2 = (t + 1) % n_theta
            faces.append((a + t, a + t2, b + t2))
            faces.append((a + t, b + t2, b + t))
    top = len(verts) - 1
    last = ring_start(n_rings - 1)
    for t in range(n_theta):
        faces.append((top, last + t, last + (t + 1) % n_theta))
    labels = np.full(len(verts), label, dtype=np.uint8)
    return verts, np.array(faces, dtype=np.int64), labels


def _digit_frame(spec: SyntheticHandSpec, cid: ComponentId):
    """Base position and zero-flexion direction of one digit."""
    a, b, _ = spec.palm_radii
    xf, yf = _DIGIT_BASE_FRACTIONS[cid]
    if cid is ComponentId.THUMB:
        base = np.array([xf * a, yf * b, 0.0])
        angle = _THUMB_ANGLE
    else:
        base = np.array([0.95 * a * np.sqrt(1.0 - yf * yf), yf * b, 0.0])
        angle = _DIGIT_SPLAY[cid]
    direction = np.array([np.cos(angle), np.sin(angle), 0.0])
    return base, direction


def hand_skeleton(spec: SyntheticHandSpec) -> HandPose:
    """21 joint positions of the posed hand (wrist, then 4 per digit)."""
    joints = [np.array([-spec.palm_radii[0], 0.0, 0.0])]
    for d, cid in enumerate(_DIGIT_COMPONENTS):
        base, direction = _digit_frame(spec, cid)
        curl_axis = np.cross([0.0, 0.0, 1.0], direction)
        joints.append(base)
        pos = base
        angle = 0.0
        for seg in range(3):
            angle += spec.flexion[d, seg]
            seg_dir = axis_angle_rotation(curl_axis, angle) @ direction
            pos = pos + spec.bone_lengths[d, seg] * seg_dir
            joints.append(pos)
    return HandPose(np.array(joints))


def _hand_primitives(spec: SyntheticHandSpec):
    """The solid primitives making up the hand: one ellipsoid, 15 capsules."""
    primitives = [("ellipsoid", np.zeros(3), spec.palm_radii,
                   int(ComponentId.PALM))]
    skeleton = hand_skeleton(spec).joints
    for d, cid in enumerate(_DIGIT_COMPONENTS):
        chain = skeleton[1 + 4 * d : 5 + 4 * d]
        for seg in range(3):
            taper = 1.0 - 0.12 * seg
            primitives.append(("capsule", chain[seg], chain[seg + 1],
                               float(spec.digit_radii[d]) * taper, int(cid)))
    return primitives


def _buried(points: np.ndarray, primitives, own: np.ndarray,
            margin: float = 1e-9) -> np.ndarray:
    """Mask of points strictly inside a primitive other than their own.

    Samples live on mesh triangles, which are chords dipping slightly into
    their own smooth primitive, so each point's source primitive is skipped.
    """
    inside = np.zeros(len(points), dtype=bool)
    for index, prim in enumerate(primitives):
        if prim[0] == "ellipsoid":
            _, center, radii, _ = prim
            q = (points - center) / radii
            hit = np.einsum("ij,ij->i", q, q) < 1.0 - margin
        else:
            _, p0, p1, radius, _ = prim
            axis = p1 - p0
            length2 = float(axis @ axis)
            t = np.clip(((points - p0) @ axis) / length2, 0.0, 1.0)
            closest = p0 + t[:, None] * axis
            d = np.linalg.norm(points - closest, axis=1)
            hit = d < radius - margin
        inside |= hit & (own != index)
    return inside


def _hand_mesh_parts(spec: SyntheticHandSpec) -> tuple[TriangleMesh, np.ndarray]:
    """The assembled mesh plus each face's source primitive index."""
    parts = []
    for prim in _hand_primitives(spec):
        if prim[0] == "ellipsoid":
            parts.append(_ellipsoid(prim[1], prim[2], prim[3]))
        else:
            parts.append(_capsule(prim[1], prim[2], prim[3], prim[4]))
    verts = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[2] for p in parts])
    offsets = np.cumsum([0] + [len(p[0]) for p in parts[:-1]])
    faces = np.concatenate([p[1] + off for p, off in zip(parts, offsets)])
    face_prim = np.concatenate([np.full(len(p[1]), i, dtype=np.int64)
                                for i, p in enumerate(parts)])
    return TriangleMesh(verts, faces, labels), face_prim


def synthetic_hand_mesh(spec: SyntheticHandSpec | None = None) -> TriangleMesh:
    """Watertight capsule-and-ellipsoid hand with per-vertex component labels."""
    if spec is None:
        spec = SyntheticHandSpec.default()
    return _hand_mesh_parts(spec)[0]


@functools.lru_cache(maxsize=1)
def default_hand_mesh() -> TriangleMesh:
    return synthetic_hand_mesh(SyntheticHandSpec.default())


# ---------------------------------------------------------------------------
# Surface sampling

def _sample_faces(mesh: TriangleMesh, face_subset: np.ndarray, n: int,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Area-weighted sampling with 4x oversampling then random downsampling.

    Returns the points and the face index each point landed on.
    """
    areas = mesh.face_areas()[face_subset]
    probs = areas / areas.sum()
    candidates = _UPSAMPLE_FACTOR * n
    chosen = face_subset[rng.choice(len(face_subset), candidates, p=probs)]
    r1 = rng.random(candidates)
    r2 = rng.random(candidates)
    flip = r1 + r2 > 1.0
    r1[flip] = 1.0 - r1[flip]
    r2[flip] = 1.0 - r2[flip]
    tri = mesh.vertices[mesh.faces[chosen]]
    pts = (tri[:, 0]
           + r1[:, None] * (tri[:, 1] - tri[:, 0])
           + r2[:, None] * (tri[:, 2] - tri[:, 0]))
    keep = np.sort(rng.choice(candidates, n, replace=False))
    return pts[keep], chosen[keep]


def sample_mesh_surface(mesh: TriangleMesh, n: int, seed: int) -> PointCloud:
    """Uniform area-weighted surface samples; labeled when the mesh is."""
    if len(mesh.faces) == 0:
        raise ValueError("empty mesh")
    if n < 1:
        raise ValueError("sample count must be >= 1")
    rng = np.random.default_rng(seed)
    pts, face_idx = _sample_faces(mesh, np.arange(len(mesh.faces)), n, rng)
    labels = None
    if mesh.vertex_labels is not None:
        labels = mesh.face_labels()[face_idx]
    return PointCloud(pts, labels)


def sample_mesh_by_component(mesh: TriangleMesh, budget: dict[ComponentId, int],
                             seed: int) -> PointCloud:
    """Per-component sampling with exact counts, concatenated in enum order."""
    if mesh.vertex_labels is None:
        raise ValueError("mesh has no vertex labels")
    face_labels = mesh.face_labels()
    rng = np.random.default_rng(seed)
    points = []
    labels = []
    for cid in ComponentId:
        count = int(budget.get(cid, 0))
        if count == 0:
            continue
        if count < 0:
            raise ValueError(f"negative budget for {cid.short_name}")
        subset = np.flatnonzero(face_labels == int(cid))
        if len(subset) == 0:
            raise ValueError(f"component {cid.short_name} absent from mesh")
        pts, _ = _sample_faces(mesh, subset, count, rng)
        points.append(pts)
        labels.append(np.full(count, int(cid), dtype=np.uint8))
    if not points:
        raise ValueError("budget is empty")
    return PointCloud(np.concatenate(points), np.concatenate(labels))


def _sample_outer(mesh: TriangleMesh, primitives, face_prim: np.ndarray,
                  face_subset: np.ndarray, n: int,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Sample n points on the visible outer surface of overlapping parts.

    Part surfaces buried inside a neighboring primitive (capsule caps inside
    the palm, contact regions between digits) are rejected and redrawn.
    Returns points plus their source face indices.
    """
    pts_out = []
    faces_out = []
    have = 0
    for _ in range(64):
        need = n - have
        draw = max(32, int(1.4 * need))
        pts, faces = _sample_faces(mesh, face_subset, draw, rng)
        keep = ~_buried(pts, primitives, face_prim[faces])
        pts_out.append(pts[keep])
        faces_out.append(faces[keep])
        have += int(keep.sum())
        if have >= n:
            break
    else:
        raise ValueError("surface sampling kept rejecting points; "
                         "component may be fully buried")
    return (np.concatenate(pts_out)[:n], np.concatenate(faces_out)[:n])


def sample_hand_surface(spec: SyntheticHandSpec, n: int, seed: int) -> PointCloud:
    """Area-weighted samples of the hand's outer surface (no buried points)."""
    if n < 1:
        raise ValueError("sample count must be >= 1")
    mesh, face_prim = _hand_mesh_parts(spec)
    primitives = _hand_primitives(spec)
    rng = np.random.default_rng(seed)
    pts, faces = _sample_outer(mesh, primitives, face_prim,
                               np.arange(len(mesh.faces)), n, rng)
    return PointCloud(pts, mesh.face_labels()[faces])


def sample_hand_by_component(spec: SyntheticHandSpec,
                             budget: dict[ComponentId, int],
                             seed: int) -> PointCloud:
    """Outer-surface samples with exact per-component counts, enum order."""
    mesh, face_prim = _hand_mesh_parts(spec)
    primitives = _hand_primitives(spec)
    face_labels = mesh.face_labels()
    rng = np.random.default_rng(seed)
    points = []
    labels = []
    for cid in ComponentId:
        count = int(budget.get(cid, 0))
        if count == 0:
            continue
        subset = np.flatnonzero(face_labels == int(cid))
        if len(subset) == 0:
            raise ValueError(f"component {cid.short_name} absent from mesh")
        pts, _ = _sample_outer(mesh, primitives, face_prim, subset, count, rng)
        points.append(pts)
        labels.append(np.full(count, int(cid), dtype=np.uint8))
    if not points:
        raise ValueError("budget is empty")
    return PointCloud(np.concatenate(points), np.concatenate(labels))


def normalize_cloud(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Shift to zero centroid and scale to unit max radius.

    Returns the normalized points plus the (centroid, scale) that were
    removed, so poses can be mapped into the same frame.
    """
    centroid = points.mean(axis=0)
    shifted = points - centroid
    scale = float(np.linalg.norm(shifted, axis=1).max())
    if scale == 0:
        raise ValueError("cannot normalize a degenerate cloud")
    return shifted / scale, centroid, scale


# ---------------------------------------------------------------------------
# Templates

class TemplateKind(enum.Enum):
    GRID2D = "grid"
    HAND3D = "hand"
    LOCAL_HAND3D = "local"


@dataclass(frozen=True)
class Template:
    """Decoder starting points: a labeled cloud plus its initialization kind."""

    cloud: PointCloud
    kind: TemplateKind
    budget: dict[ComponentId, int] | None = None

    def __post_init__(self):
        if self.cloud.labels is None:
            raise ValueError("template clouds carry labels")
        if self.kind is TemplateKind.GRID2D and np.any(self.cloud.points[:, 2] != 0):
            raise ValueError("2D grid template must lie in the z = 0 plane")
        if self.kind is TemplateKind.LOCAL_HAND3D:
            if self.budget is None:
                raise ValueError("local template requires a per-component budget")
            if sum(self.budget.values()) != len(self.cloud):
                raise ValueError("budget must sum to the template point count")

    def __len__(self) -> int:
        return len(self.cloud)


def grid_template(n: int) -> Template:
    """m x m lattice over [-1, 1]^2 at z = 0, row-major, corners included."""
    m = round(np.sqrt(n))
    if m * m != n or m < 2:
        raise ValueError(f"grid size must be a perfect square >= 4, got {n}")
    axis = np.linspace(-1.0, 1.0, m)
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel(), np.zeros(n)], axis=1)
    labels = np.full(n, int(ComponentId.PALM), dtype=np.uint8)
    return Template(PointCloud(pts, labels), TemplateKind.GRID2D)


def hand_template(n: int, seed: int) -> Template:
    """Canonical 3D hand samples, zero centroid and unit max radius."""
    if n < 6:
        raise ValueError("hand template needs at least 6 points")
    cloud = sample_mesh_surface(default_hand_mesh(), n, seed)
    pts, _, _ = normalize_cloud(cloud.points)
    return Template(PointCloud(pts, cloud.labels), TemplateKind.HAND3D)


def local_hand_template(budget: dict[ComponentId, int], seed: int) -> Template:
    """Per-component hand samples with exact counts, normalized like hand_template."""
    clean = {ComponentId(k): int(v) for k, v in budget.items()}
    if any(v < 1 for v in clean.values()):
        raise ValueError("all component budgets must be >= 1")
    cloud = sample_mesh_by_component(default_hand_mesh(), clean, seed)
    pts, _, _ = normalize_cloud(cloud.points)
    return Template(PointCloud(pts, cloud.labels), TemplateKind.LOCAL_HAND3D,
                    budget=clean)


def default_budget(n: int) -> dict[ComponentId, int]:
    """Split n points across components proportionally to canonical area."""
    if n < len(ComponentId):
        raise ValueError(f"need at least {len(ComponentId)} points")
    mesh = default_hand_mesh()
    areas = np.zeros(len(ComponentId))
    face_labels = mesh.face_labels()
    face_areas = mesh.face_areas()
    for cid in ComponentId:
        areas[cid] = face_areas[face_labels == int(cid)].sum()
    fractions = areas / areas.sum()
    counts = np.maximum(1, np.floor(fractions * n).astype(int))
    while counts.sum() > n:
        counts[np.argmax(counts)] -= 1
    # Hand out the remainder by largest fractional part, ties in enum order.
    remainder = fractions * n - np.floor(fractions * n)
    for idx in np.argsort(-remainder, kind="stable"):
        if counts.sum() == n:
            break
        counts[idx] += 1
    return {ComponentId(i): int(c) for i, c in enumerate(counts)}
