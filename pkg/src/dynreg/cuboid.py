"""Detected objects as oriented cuboids, and removal of the points they enclose."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, InvalidParameterError
from .geom import PointCloud, rot_z, wrap_angle

DEFAULT_MARGIN = 0.1


class Label(enum.Enum):
    CAR = "Car"
    CYCLIST = "Cyclist"
    PEDESTRIAN = "Pedestrian"


class MotionState(enum.Enum):
    UNKNOWN = "unknown"
    STATIC = "static"
    DYNAMIC = "dynamic"


@dataclass(frozen=True)
class Detection:
    """One cuboid: center (z is the box center), extents l/w/h, yaw about +z in radians."""

    x: float
    y: float
    z: float
    l: float
    w: float
    h: float
    yaw: float
    label: Label
    score: float

    def __post_init__(self):
        vals = (self.x, self.y, self.z, self.l, self.w, self.h, self.yaw, self.score)
        if not all(np.isfinite(vals)):
            raise InvalidInputError("detection has non-finite fields")
        if min(self.l, self.w, self.h) <= 0:
            raise InvalidInputError(f"detection extents must be positive: {self.l}, {self.w}, {self.h}")
        if not 0.0 <= self.score <= 1.0:
            raise InvalidInputError(f"score {self.score} outside [0, 1]")
        if not isinstance(self.label, Label):
            object.__setattr__(self, "label", Label(self.label))
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def extents(self) -> np.ndarray:
        return np.array([self.l, self.w, self.h])

    def corners(self) -> np.ndarray:
        """The 8 corners, rotating signed half-extent offsets about the center."""
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float)
        offsets = signs * (self.extents / 2.0)
        return offsets @ rot_z(self.yaw).T + self.center


@dataclass(frozen=True)
class DetectionSet:
    frame_id: int
    detections: tuple[Detection, ...] = ()
    states: tuple[MotionState, ...] | None = None

    def __post_init__(self):
        if self.frame_id < 0:
            raise InvalidInputError(f"negative frame id {self.frame_id}")
        object.__setattr__(self, "detections", tuple(self.detections))
        if self.states is None:
            object.__setattr__(self, "states", (MotionState.UNKNOWN,) * len(self.detections))
        else:
            object.__setattr__(self, "states", tuple(self.states))
        if len(self.states) != len(self.detections):
            raise InvalidInputError("state count differs from detection count")

    def __len__(self) -> int:
        return len(self.detections)

    def __iter__(self):
        return iter(self.detections)

    def with_states(self, states: Sequence[MotionState]) -> DetectionSet:
        return replace(self, states=tuple(states))

    def subset(self, keep: Sequence[int]) -> DetectionSet:
        keep = list(keep)
        return DetectionSet(
            self.frame_id,
            tuple(self.detections[i] for i in keep),
            tuple(self.states[i] for i in keep),
        )

    def filter_score(self, min_score: float) -> DetectionSet:
        return self.subset([i for i, d in enumerate(self.detections) if d.score >= min_score])

    def centers(self) -> np.ndarray:
        return np.array([d.center for d in self.detections]).reshape(-1, 3)


@dataclass(frozen=True)
class CuboidFrame:
    """Anchor corner ``A`` and the three edges AB (length), AD (width), AC (height)."""

    anchor: np.ndarray
    ab: np.ndarray
    ad: np.ndarray
    ac: np.ndarray

    def edges(self) -> np.ndarray:
        return np.stack([self.ab, self.ad, self.ac])

    def corners(self) -> np.ndarray:
        return np.array([
            self.anchor + i * self.ab + j * self.ad + k * self.ac
            for i in (0, 1) for j in (0, 1) for k in (0, 1)
        ])


def cuboid_frame(det: Detection, margin: float = DEFAULT_MARGIN) -> CuboidFrame:
    if margin < 0:
        raise InvalidParameterError(f"margin must be >= 0, got {margin}")
    R = rot_z(det.yaw)
    l, w, h = det.l + 2 * margin, det.w + 2 * margin, det.h + 2 * margin
    anchor = det.center - R @ np.array([l / 2, w / 2, 0.0]) - np.array([0.0, 0.0, h / 2])
    return CuboidFrame(
        anchor=anchor,
        ab=R @ np.array([l, 0.0, 0.0]),
        ad=R @ np.array([0.0, w, 0.0]),
        ac=np.array([0.0, 0.0, h]),
    )


def contains_points(frame: CuboidFrame, points: np.ndarray) -> np.ndarray:
    """Vectorized containment: each projection of AP on a unit edge must lie in [0, |edge|]."""
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    AP = P - frame.anchor
    inside = np.ones(len(P), dtype=bool)
    for e in (frame.ab, frame.ad, frame.ac):
        n = np.linalg.norm(e)
        u = e / n
        proj = AP @ u
        inside &= (proj >= 0.0) & (proj <= e @ u)
    return inside


def contains_point(frame: CuboidFrame, p) -> bool:
    return bool(contains_points(frame, np.asarray(p, dtype=np.float64).reshape(1, 3))[0])


def partition_cloud(
    cloud: PointCloud, dets: DetectionSet, margin: float = DEFAULT_MARGIN
) -> tuple[PointCloud, list[PointCloud]]:
    """Split ``cloud`` into the points outside every cuboid and one bucket per detection.

    A point inside several cuboids goes to the lowest detection index.
    """
    owner = point_owners(cloud, dets, margin)
    outside = cloud.select(owner < 0)
    buckets = [cloud.select(owner == i) for i in range(len(dets))]
    return outside, buckets


def point_owners(cloud: PointCloud, dets: DetectionSet, margin: float = DEFAULT_MARGIN) -> np.ndarray:
    """Per point, the index of the first cuboid containing it, or -1."""
    owner = np.full(len(cloud), -1, dtype=np.int64)
    for i, det in enumerate(dets):
        free = owner < 0
        if not free.any():
            break
        hit = contains_points(cuboid_frame(det, margin), cloud.points[free])
        sub = np.nonzero(free)[0][hit]
        owner[sub] = i
    return owner
