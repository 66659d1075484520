"""Readers and writers for clouds, detections, poses, segmentation states and PLY maps.

Formats:

* cloud ``.bin``: little-endian float32 quadruplets ``x y z intensity``.
* detections: one box per line, ``frame label score x y z l w h yaw`` with z
  the box center and yaw in radians about +z (lidar frame). ``#`` starts a
  comment line.
* poses: 12 numbers per line, the row-major upper 3x4 of the homogeneous matrix.
* segmentation: ``frame obj_index state`` per line.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cuboid import Detection, DetectionSet, Label, MotionState
from .errors import FormatError, InvalidInputError
from .geom import PointCloud, Pose, orthonormal_drift

POSE_REJECT_TOL = 1e-6

_LABELS = {lab.value: lab for lab in Label}
_STATES = {s.value: s for s in MotionState}


def fmt_float(v: float) -> str:
    """Shortest text that parses back to exactly ``v``; integral values drop the ``.0``."""
    r = repr(float(v))
    return r[:-2] if r.endswith(".0") else r


def _parse_float(tok: str, path, line: int, what: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise FormatError(f"bad {what} {tok!r}", path, line) from None
    if not np.isfinite(v):
        raise FormatError(f"non-finite {what} {tok!r}", path, line)
    return v


# -- clouds -------------------------------------------------------------------

def read_cloud_bin(path) -> PointCloud:
    raw = Path(path).read_bytes()
    if len(raw) % 16:
        raise FormatError(f"size {len(raw)} is not a multiple of 16 bytes", path, len(raw) - len(raw) % 16 + 1)
    arr = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    bad = ~np.isfinite(arr).all(axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise FormatError(f"non-finite value in point {i}", path, 16 * i + 1)
    return PointCloud(arr[:, :3].astype(np.float64), arr[:, 3].astype(np.float64))


def write_cloud_bin(path, cloud: PointCloud) -> None:
    arr = np.zeros((len(cloud), 4), dtype="<f4")
    arr[:, :3] = cloud.points
    if cloud.intensity is not None:
        arr[:, 3] = cloud.intensity
    Path(path).write_bytes(arr.tobytes())


# -- detections ---------------------------------------------------------------

def parse_detection_line(line: str, path=None, lineno: int | None = None) -> tuple[int, Detection]:
    tok = line.split()
    if len(tok) != 10:
        raise FormatError(f"expected 10 fields, got {len(tok)}", path, lineno)
    try:
        frame = int(tok[0])
    except ValueError:
        raise FormatError(f"bad frame id {tok[0]!r}", path, lineno) from None
    if frame < 0:
        raise FormatError(f"negative frame id {frame}", path, lineno)
    label = _LABELS.get(tok[1])
    if label is None:
        raise FormatError(f"unknown label {tok[1]!r}", path, lineno)
    score, x, y, z, l, w, h, yaw = (
        _parse_float(t, path, lineno, name)
        for t, name in zip(tok[2:], ("score", "x", "y", "z", "l", "w", "h", "yaw"))
    )
    try:
        det = Detection(x, y, z, l, w, h, yaw, label, score)
    except InvalidInputError as exc:
        raise FormatError(str(exc), path, lineno) from None
    return frame, det


def format_detection_line(frame: int, det: Detection) -> str:
    vals = (det.score, det.x, det.y, det.z, det.l, det.w, det.h, det.yaw)
    return f"{frame} {det.label.value} " + " ".join(fmt_float(v) for v in vals)


def read_detections(path) -> dict[int, DetectionSet]:
    groups: dict[int, list[Detection]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            frame, det = parse_detection_line(s, path, lineno)
            groups.setdefault(frame, []).append(det)
    return {f: DetectionSet(f, tuple(d)) for f, d in sorted(groups.items())}


def write_detections(path, sets: Iterable[DetectionSet]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ds in sorted(sets, key=lambda s: s.frame_id):
            for det in ds.detections:
                fh.write(format_detection_line(ds.frame_id, det) + "\n")


# -- poses --------------------------------------------------------------------

def format_pose_line(pose: Pose) -> str:
    M = pose.matrix()[:3, :]
    return " ".join(fmt_float(v) for v in M.reshape(-1))


def write_poses(path, poses: Iterable[Pose]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in poses:
            fh.write(format_pose_line(p) + "\n")


def read_poses(path) -> list[Pose]:
    poses = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tok = line.split()
            if not tok:
                raise FormatError("empty pose line", path, lineno)
            if len(tok) != 12:
                raise FormatError(f"expected 12 fields, got {len(tok)}", path, lineno)
            vals = np.array([_parse_float(t, path, lineno, "pose entry") for t in tok]).reshape(3, 4)
            drift = orthonormal_drift(vals[:, :3])
            if drift > POSE_REJECT_TOL:
                raise FormatError(f"rotation not orthonormal (drift {drift:.3g})", path, lineno)
            poses.append(Pose(vals[:, :3], vals[:, 3]))
    return poses


# -- segmentation states ------------------------------------------------------

def write_states(path, rows: Iterable[tuple[int, int, MotionState]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame, idx, state in rows:
            fh.write(f"{frame} {idx} {state.value}\n")


def read_states(path) -> dict[tuple[int, int], MotionState]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tok = line.split()
            if len(tok) != 3:
                raise FormatError(f"expected 3 fields, got {len(tok)}", path, lineno)
            try:
                key = (int(tok[0]), int(tok[1]))
            except ValueError:
                raise FormatError("bad frame or object index", path, lineno) from None
            if tok[2] not in _STATES:
                raise FormatError(f"unknown state {tok[2]!r}", path, lineno)
            out[key] = _STATES[tok[2]]
    return out


# -- PLY ----------------------------------------------------------------------

TAG_ENVIRONMENT, TAG_STATIC, TAG_DYNAMIC, TAG_UNKNOWN = 0, 1, 2, 3
TAG_COLORS = {
    TAG_ENVIRONMENT: (255, 255, 255),
    TAG_STATIC: (0, 255, 0),
    TAG_DYNAMIC: (255, 0, 0),
    TAG_UNKNOWN: (128, 128, 128),
}


def write_ply(path, cloud: PointCloud, tags: Sequence[int] | np.ndarray | None = None) -> None:
    """ASCII PLY with per-vertex color: white environment, green static, red dynamic.

    Points of unmatched objects (tag 3) are gray.
    """
    n = len(cloud)
    tags = np.zeros(n, dtype=np.int64) if tags is None else np.asarray(tags, dtype=np.int64)
    if tags.shape != (n,):
        raise InvalidInputError("one color tag per point required")
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    for p, t in zip(cloud.points, tags):
        r, g, b = TAG_COLORS[int(t)]
        lines.append(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {r} {g} {b}")
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc


def read_ply_colors(path) -> list[tuple[int, int, int]]:
    text = Path(path).read_text(encoding="ascii").splitlines()
    start = text.index("end_header") + 1
    return [tuple(int(v) for v in line.split()[3:6]) for line in text[start:] if line.strip()]


# -- sequences ----------------------------------------------------------------

@dataclass(frozen=True)
class SequenceManifest:
    frame_ids: tuple[int, ...]
    cloud_paths: tuple[Path, ...]
    detection_path: Path | None = None
    gt_pose_path: Path | None = None

    def __post_init__(self):
        if len(self.frame_ids) != len(self.cloud_paths):
            raise InvalidInputError("frame id count differs from cloud path count")
        if any(b <= a for a, b in zip(self.frame_ids, self.frame_ids[1:])):
            raise InvalidInputError("frame ids must be strictly increasing")
        for p in (*self.cloud_paths, self.detection_path, self.gt_pose_path):
            if p is not None and not Path(p).is_file():
                raise FileNotFoundError(f"missing file: {p}")


def scan_sequence(cloud_dir, detection_path=None, gt_pose_path=None) -> SequenceManifest:
    """Collect ``<frame>.bin`` files of a directory in frame order."""
    cloud_dir = Path(cloud_dir)
    if not cloud_dir.is_dir():
        raise FileNotFoundError(f"missing cloud directory: {cloud_dir}")
    found = []
    for name in os.listdir(cloud_dir):
        stem, ext = os.path.splitext(name)
        if ext == ".bin" and stem.isdigit():
            found.append((int(stem), cloud_dir / name))
    found.sort()
    return SequenceManifest(
        tuple(f for f, _ in found),
        tuple(p for _, p in found),
        Path(detection_path) if detection_path is not None else None,
        Path(gt_pose_path) if gt_pose_path is not None else None,
    )


def cloud_name(frame: int) -> str:
    return f"{frame:06d}.bin"


def states_rows(sets: Mapping[int, DetectionSet]) -> list[tuple[int, int, MotionState]]:
    return [(f, i, s) for f, ds in sorted(sets.items()) for i, s in enumerate(ds.states)]
