"""File formats: PLY point clouds, camera/rig JSON, 16-bit PGM depth maps,
raw depth with JSON sidecar, and 21-joint pose JSON.

PLY clouds store x, y, z as 64-bit floats plus an optional per-vertex
`uchar component` label. Depth maps are millimeters with 0 marking invalid
pixels; 16-bit PGM samples are big-endian per the Netpbm spec.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .geometry import CameraModel, HandPose, PointCloud, RigidTransform


class FileFormatError(ValueError):
    """Malformed input file; message carries file and line/offset."""


def _fail(path, what: str, line: int | None = None, offset: int | None = None):
    where = f"{path}"
    if line is not None:
        where += f":{line}"
    if offset is not None:
        where += f" (byte {offset})"
    raise FileFormatError(f"{where}: {what}")


# ---------------------------------------------------------------------------
# PLY

_COORD_TYPES = {"double": np.float64, "float64": np.float64,
                "float": np.float32, "float32": np.float32}
_LABEL_TYPES = {"uchar": np.uint8, "uint8": np.uint8}


def write_ply(path, cloud: PointCloud, binary: bool = False) -> None:
    """Write a cloud as PLY; ASCII by default, binary little-endian else."""
    fmt = "binary_little_endian" if binary else "ascii"
    header = ["ply", f"format {fmt} 1.0", f"element vertex {len(cloud)}",
              "property double x", "property double y", "property double z"]
    if cloud.labels is not None:
        header.append("property uchar component")
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            if cloud.labels is not None:
                rec = np.empty(len(cloud), dtype=_ply_dtype(True))
                rec["x"], rec["y"], rec["z"] = cloud.points.T
                rec["component"] = cloud.labels
            else:
                rec = np.empty(len(cloud), dtype=_ply_dtype(False))
                rec["x"], rec["y"], rec["z"] = cloud.points.T
            f.write(rec.tobytes())
        else:
            lines = []
            for i, (x, y, z) in enumerate(cloud.points):
                row = f"{x:.17g} {y:.17g} {z:.17g}"
                if cloud.labels is not None:
                    row += f" {int(cloud.labels[i])}"
                lines.append(row)
            if lines:
                f.write(("\n".join(lines) + "\n").encode("ascii"))


def _ply_dtype(labeled: bool):
    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    if labeled:
        fields.append(("component", "u1"))
    return np.dtype(fields)


def read_ply(path) -> PointCloud:
    """Read an ASCII or binary little-endian PLY vertex cloud."""
    with open(path, "rb") as f:
        raw = f.read()
    lines = []
    pos = 0
    while True:
        nl = raw.find(b"\n", pos)
        if nl < 0:
            _fail(path, "missing end_header")
        line = raw[pos:nl].decode("ascii", errors="replace").strip()
        pos = nl + 1
        lines.append(line)
        if line == "end_header":
            break
        if len(lines) > 200:
            _fail(path, "header too large or missing end_header")
    if not lines or lines[0] != "ply":
        _fail(path, "not a PLY file (missing 'ply' magic)", line=1)

    fmt = None
    count = None
    props: list[tuple[str, str]] = []
    element = None
    for ln, line in enumerate(lines[1:-1], start=2):
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            if len(tok) != 3 or tok[1] not in ("ascii", "binary_little_endian"):
                _fail(path, f"unsupported format {line!r}", line=ln)
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3:
                _fail(path, f"bad element line {line!r}", line=ln)
            element = tok[1]
            if element == "vertex":
                try:
                    count = int(tok[2])
                except ValueError:
                    _fail(path, f"bad vertex count {tok[2]!r}", line=ln)
            elif int(tok[2]) != 0:
                _fail(path, f"unsupported non-empty element {element!r}", line=ln)
        elif tok[0] == "property":
            if element != "vertex":
                continue
            if len(tok) != 3:
                _fail(path, f"bad property line {line!r}", line=ln)
            props.append((tok[2], tok[1]))
        else:
            _fail(path, f"unrecognized header line {line!r}", line=ln)
    if fmt is None or count is None:
        _fail(path, "header lacks format or vertex element")

    names = [p[0] for p in props]
    if names[:3] != ["x", "y", "z"]:
        _fail(path, f"vertex properties must start with x, y, z, got {names}")
    labeled = False
    if len(names) == 4 and names[3] == "component":
        labeled = True
        if props[3][1] not in _LABEL_TYPES:
            _fail(path, f"component property must be uchar, got {props[3][1]!r}")
    elif len(names) != 3:
        _fail(path, f"unsupported vertex properties {names}")
    for pname, ptype in props[:3]:
        if ptype not in _COORD_TYPES:
            _fail(path, f"coordinate property {pname!r} has unsupported type {ptype!r}")

    if fmt == "ascii":
        return _read_ply_ascii(path, raw[pos:], count, labeled, len(lines))
    return _read_ply_binary(path, raw[pos:], count, labeled,
                            [_COORD_TYPES[p[1]] for p in props[:3]], pos)


def _read_ply_ascii(path, body: bytes, count: int, labeled: bool,
                    header_lines: int) -> PointCloud:
    rows = body.decode("ascii", errors="replace").split()
    width = 4 if labeled else 3
    if len(rows) != count * width:
        _fail(path, f"expected {count * width} values for {count} vertices, "
                    f"got {len(rows)}", line=header_lines + 1)
    try:
        vals = np.array(rows, dtype=np.float64).reshape(count, width)
    except ValueError:
        _fail(path, "non-numeric vertex data", line=header_lines + 1)
    labels = vals[:, 3].astype(np.uint8) if labeled else None
    try:
        return PointCloud(vals[:, :3], labels)
    except ValueError as e:
        _fail(path, str(e))


def _read_ply_binary(path, body: bytes, count: int, labeled: bool,
                     coord_types, offset: int) -> PointCloud:
    fields = [(n, np.dtype(t).newbyteorder("<"))
              for n, t in zip(("x", "y", "z"), coord_types)]
    if labeled:
        fields.append(("component", np.uint8))
    dtype = np.dtype(fields)
    need = dtype.itemsize * count
    if len(body) < need:
        _fail(path, f"truncated vertex data: need {need} bytes, have {len(body)}",
              offset=offset + len(body))
    rec = np.frombuffer(body[:need], dtype=dtype)
    pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    labels = rec["component"].copy() if labeled else None
    try:
        return PointCloud(pts, labels)
    except ValueError as e:
        _fail(path, str(e))


# ---------------------------------------------------------------------------
# Camera JSON

def camera_to_dict(camera: CameraModel, units: str = "mm") -> dict:
    return {
        "fx": camera.fx, "fy": camera.fy, "cx": camera.cx, "cy": camera.cy,
        "width": camera.width, "height": camera.height,
        "rotation": [float(v) for v in camera.extrinsic.rotation.ravel()],
        "translation": [float(v) for v in camera.extrinsic.translation],
        "units": units,
    }


def camera_from_dict(data: dict, path="<camera>") -> CameraModel:
    try:
        rot = np.array(data["rotation"], dtype=np.float64).reshape(3, 3)
        trans = np.array(data["translation"], dtype=np.float64)
        return CameraModel(
            fx=float(data["fx"]), fy=float(data["fy"]),
            cx=float(data["cx"]), cy=float(data["cy"]),
            width=int(data["width"]), height=int(data["height"]),
            extrinsic=RigidTransform(rot, trans),
        )
    except (KeyError, TypeError, ValueError) as e:
        _fail(path, f"bad camera record: {e}")


def load_camera(path) -> tuple[CameraModel, str]:
    """Load a camera JSON file; returns (camera, units)."""
    data = _load_json(path)
    units = data.get("units", "mm")
    if units not in ("mm", "m"):
        _fail(path, f"units must be 'mm' or 'm', got {units!r}")
    return camera_from_dict(data, path), units


def load_rig(path) -> list[CameraModel]:
    """Load a multi-camera rig: either a JSON list or {"cameras": [...]}."""
    data = _load_json(path)
    records = data["cameras"] if isinstance(data, dict) else data
    if not isinstance(records, list) or not records:
        _fail(path, "rig must be a non-empty list of camera records")
    return [camera_from_dict(r, path) for r in records]


def save_rig(path, cameras, units: str = "mm") -> None:
    with open(path, "w") as f:
        json.dump({"cameras": [camera_to_dict(c, units) for c in cameras]},
                  f, indent=2, sort_keys=True)
        f.write("\n")


def _load_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        _fail(path, f"invalid JSON: {e.msg}", line=e.lineno)


# ---------------------------------------------------------------------------
# Depth maps

def write_pgm16(path, depth: np.ndarray) -> None:
    """Write a depth image (millimeters) as 16-bit binary PGM (P5)."""
    d = np.asarray(depth)
    if d.ndim != 2:
        raise ValueError("depth must be a 2-D array")
    q = np.rint(np.clip(d, 0, 65535)).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{d.shape[1]} {d.shape[0]}\n65535\n".encode("ascii"))
        f.write(q.tobytes())


def read_pgm16(path) -> np.ndarray:
    """Read a 16-bit PGM (P5 or P2) depth image; values in millimeters."""
    with open(path, "rb") as f:
        raw = f.read()
    tokens = []
    pos = 0
    # Header tokens: magic, width, height, maxval (comments allowed).
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            nl = raw.find(b"\n", pos)
            pos = len(raw) if nl < 0 else nl + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            _fail(path, "truncated PGM header", offset=pos)
        tokens.append(raw[start:pos])
    magic = tokens[0]
    if magic not in (b"P5", b"P2"):
        _fail(path, f"not a PGM file (magic {magic!r})", offset=0)
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        _fail(path, "non-numeric PGM header fields", offset=pos)
    if maxval <= 255 or maxval > 65535:
        _fail(path, f"expected 16-bit PGM (maxval in 256..65535), got {maxval}")
    n = width * height
    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        body = raw[pos:pos + 2 * n]
        if len(body) != 2 * n:
            _fail(path, f"truncated pixel data: need {2 * n} bytes, "
                        f"have {len(body)}", offset=len(raw))
        img = np.frombuffer(body, dtype=">u2").astype(np.float64)
    else:
        vals = raw[pos:].split()
        if len(vals) != n:
            _fail(path, f"expected {n} pixel values, got {len(vals)}")
        img = np.array(vals, dtype=np.float64)
    return img.reshape(height, width)


def write_raw_depth(path, depth: np.ndarray, camera: CameraModel,
                    units: str = "mm") -> None:
    """Write raw little-endian uint16 depth plus a `.json` sidecar."""
    d = np.asarray(depth)
    q = np.rint(np.clip(d, 0, 65535)).astype("<u2")
    with open(path, "wb") as f:
        f.write(q.tobytes())
    sidecar = {"width": d.shape[1], "height": d.shape[0],
               "camera": camera_to_dict(camera, units)}
    with open(str(path) + ".json", "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def read_raw_depth(path) -> tuple[np.ndarray, CameraModel]:
    """Read raw uint16 depth described by its `.json` sidecar."""
    sidecar_path = str(path) + ".json"
    if not os.path.exists(sidecar_path):
        _fail(path, f"missing sidecar {sidecar_path}")
    meta = _load_json(sidecar_path)
    try:
        width, height = int(meta["width"]), int(meta["height"])
        camera = camera_from_dict(meta["camera"], sidecar_path)
    except (KeyError, TypeError) as e:
        _fail(sidecar_path, f"bad sidecar: {e}")
    with open(path, "rb") as f:
        body = f.read()
    if len(body) != 2 * width * height:
        _fail(path, f"expected {2 * width * height} bytes for "
                    f"{width}x{height} uint16, got {len(body)}")
    depth = np.frombuffer(body, dtype="<u2").astype(np.float64)
    return depth.reshape(height, width), camera


# ---------------------------------------------------------------------------
# Pose JSON

def read_pose(path) -> HandPose:
    """Read a 21-joint pose: a bare [[x,y,z]*21] list or {"joints": [...]}."""
    data = _load_json(path)
    joints = data.get("joints") if isinstance(data, dict) else data
    try:
        return HandPose(np.array(joints, dtype=np.float64))
    except (TypeError, ValueError) as e:
        _fail(path, f"bad pose: {e}")


def write_pose(path, pose: HandPose) -> None:
    with open(path, "w") as f:
        json.dump({"joints": [[float(v) for v in row] for row in pose.joints]},
                  f, indent=2)
        f.write("\n")
