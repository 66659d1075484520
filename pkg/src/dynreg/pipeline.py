"""Dynamic registration of one frame pair.

``dynamic_register`` removes every detected object, registers the clean
clouds, classifies the objects as static or dynamic from how far they appear
to move under that pose, puts the static ones back and registers again.
``iterative_dynamic_register`` keeps repeating the last two steps until the
static sets stop changing.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .association import DEFAULT_GATE, Association, associate, reproject
from .cuboid import DEFAULT_MARGIN, DetectionSet, MotionState, partition_cloud
from .errors import InvalidInputError, InvalidParameterError
from .geom import PointCloud, Pose, RangeBox, concatenate, crop_range, voxel_downsample
from .registration import Registrar, RegistrationConfig

DEFAULT_MOTION_THRESHOLD = 0.5
DEFAULT_MAX_LOOP = 10


class Mode(enum.Enum):
    BASELINE = "baseline"
    RMA = "rma"
    RMD = "rmd"


@dataclass(frozen=True)
class PipelineConfig:
    """``voxel`` downsamples the object-free environment after removal; ``None`` keeps it as is."""

    motion_threshold: float = DEFAULT_MOTION_THRESHOLD
    gate: float = DEFAULT_GATE
    margin: float = DEFAULT_MARGIN
    max_loop: int = DEFAULT_MAX_LOOP
    strict_loop: bool = False
    voxel: float | None = None

    def __post_init__(self):
        if not self.motion_threshold > 0:
            raise InvalidParameterError("motion threshold must be positive")
        if not self.gate > 0:
            raise InvalidParameterError("gate must be positive")
        if self.margin < 0:
            raise InvalidParameterError("margin must be non-negative")
        if self.max_loop < 1:
            raise InvalidParameterError("max_loop must be >= 1")
        if self.voxel is not None and not self.voxel > 0:
            raise InvalidParameterError("voxel must be positive")


def motion_segment(
    prev: DetectionSet,
    curr_reproj: DetectionSet,
    assoc: Association,
    thresh: float,
) -> tuple[tuple[MotionState, ...], tuple[MotionState, ...], tuple[tuple[int, int, float], ...]]:
    """Label matched pairs from their BEV displacement; unmatched objects stay UNKNOWN."""
    sp = [MotionState.UNKNOWN] * len(prev)
    sc = [MotionState.UNKNOWN] * len(curr_reproj)
    errors = []
    for i, j, _ in assoc.pairs:
        if i >= len(prev) or j >= len(curr_reproj):
            raise InvalidInputError(f"association pair ({i}, {j}) out of range")
        e = float(np.linalg.norm(prev.detections[i].center[:2] - curr_reproj.detections[j].center[:2]))
        state = MotionState.STATIC if e <= thresh else MotionState.DYNAMIC
        sp[i] = sc[j] = state
        errors.append((i, j, e))
    return tuple(sp), tuple(sc), tuple(errors)


def merge_and_concatenate(
    static_prev: Sequence[PointCloud],
    static_curr: Sequence[PointCloud],
    env_prev: PointCloud,
    env_curr: PointCloud,
) -> tuple[PointCloud, PointCloud]:
    return concatenate([env_prev, *static_prev]), concatenate([env_curr, *static_curr])


@dataclass(frozen=True)
class FrameParts:
    """One frame split into its environment and per-detection buckets.

    ``env`` is downsampled when the pipeline has a voxel size; buckets keep
    full density.
    """

    env: PointCloud
    buckets: tuple[PointCloud, ...]

    @property
    def n_points(self) -> int:
        return len(self.env) + sum(len(b) for b in self.buckets)


def split_frame(cloud: PointCloud, dets: DetectionSet, margin: float, voxel: float | None) -> FrameParts:
    outside, buckets = partition_cloud(cloud, dets, margin)
    env = voxel_downsample(outside, voxel) if voxel else outside
    return FrameParts(env, tuple(buckets))


@dataclass(frozen=True)
class Segmentation:
    states_prev: tuple[MotionState, ...]
    states_curr: tuple[MotionState, ...]
    errors: tuple[tuple[int, int, float], ...]
    association: Association

    def static_key(self) -> tuple[frozenset[int], frozenset[int]]:
        return (
            frozenset(i for i, s in enumerate(self.states_prev) if s is MotionState.STATIC),
            frozenset(i for i, s in enumerate(self.states_curr) if s is MotionState.STATIC),
        )


@dataclass(frozen=True)
class FramePairResult:
    pose: Pose
    detections_prev: DetectionSet
    detections_curr: DetectionSet
    errors: tuple[tuple[int, int, float], ...]
    iterations: int
    pose_trace: tuple[Pose, ...]
    parts_prev: FrameParts | None = None
    parts_curr: FrameParts | None = None
    association: Association | None = None
    terminated_by: str = "converged"

    @property
    def initial_pose(self) -> Pose:
        return self.pose_trace[0]

    def environment(self, which: str = "curr") -> PointCloud:
        """The frame's registration cloud: environment plus static-object points."""
        parts = self.parts_curr if which == "curr" else self.parts_prev
        dets = self.detections_curr if which == "curr" else self.detections_prev
        if parts is None:
            raise InvalidInputError("result carries no frame parts")
        return concatenate([parts.env, *_static_buckets(parts, dets.states)])

    def accounting(self, which: str = "curr") -> dict[str, int]:
        parts = self.parts_curr if which == "curr" else self.parts_prev
        dets = self.detections_curr if which == "curr" else self.detections_prev
        by_state = {s: 0 for s in MotionState}
        for b, s in zip(parts.buckets, dets.states):
            by_state[s] += len(b)
        return {
            "input": parts.n_points,
            "environment": len(self.environment(which)),
            "dynamic": by_state[MotionState.DYNAMIC],
            "unknown": by_state[MotionState.UNKNOWN],
        }


def _static_buckets(parts: FrameParts, states: Sequence[MotionState]) -> list[PointCloud]:
    return [b for b, s in zip(parts.buckets, states) if s is MotionState.STATIC]


def _check_order(dets_prev: DetectionSet, dets_curr: DetectionSet) -> None:
    if dets_curr.frame_id <= dets_prev.frame_id:
        raise InvalidInputError(
            f"frame ids out of order: previous {dets_prev.frame_id}, current {dets_curr.frame_id}"
        )


class PairSolver:
    """The building blocks shared by both algorithms, bound to one frame pair."""

    def __init__(
        self,
        parts_prev: FrameParts,
        parts_curr: FrameParts,
        dets_prev: DetectionSet,
        dets_curr: DetectionSet,
        backend: Registrar,
        reg_cfg: RegistrationConfig | None = None,
        cfg: PipelineConfig | None = None,
    ):
        _check_order(dets_prev, dets_curr)
        if len(parts_prev.buckets) != len(dets_prev) or len(parts_curr.buckets) != len(dets_curr):
            raise InvalidInputError("one point bucket per detection required")
        self.cfg = cfg or PipelineConfig()
        self.reg_cfg = reg_cfg or RegistrationConfig()
        self.backend = backend
        self.dets_prev = dets_prev
        self.dets_curr = dets_curr
        self.parts_prev = parts_prev
        self.parts_curr = parts_curr

    @classmethod
    def from_clouds(cls, cloud_prev, cloud_curr, dets_prev, dets_curr, backend, reg_cfg=None, cfg=None) -> PairSolver:
        _check_order(dets_prev, dets_curr)
        cfg = cfg or PipelineConfig()
        return cls(
            split_frame(cloud_prev, dets_prev, cfg.margin, cfg.voxel),
            split_frame(cloud_curr, dets_curr, cfg.margin, cfg.voxel),
            dets_prev, dets_curr, backend, reg_cfg, cfg,
        )

    @classmethod
    def from_result(cls, result: FramePairResult, backend, reg_cfg=None, cfg=None) -> PairSolver:
        return cls(result.parts_prev, result.parts_curr, result.detections_prev,
                   result.detections_curr, backend, reg_cfg, cfg)

    def register_environment(self) -> Pose:
        return self.backend(self.parts_prev.env, self.parts_curr.env, self.reg_cfg).pose

    def segment(self, pose: Pose) -> Segmentation:
        rep = reproject(self.dets_curr, pose)
        assoc = associate(self.dets_prev, rep, self.cfg.gate)
        sp, sc, errs = motion_segment(self.dets_prev, rep, assoc, self.cfg.motion_threshold)
        return Segmentation(sp, sc, errs, assoc)

    def register_with_static(self, seg: Segmentation) -> Pose:
        target, source = merge_and_concatenate(
            _static_buckets(self.parts_prev, seg.states_prev),
            _static_buckets(self.parts_curr, seg.states_curr),
            self.parts_prev.env,
            self.parts_curr.env,
        )
        return self.backend(target, source, self.reg_cfg).pose

    def result(self, pose, seg: Segmentation, iterations, trace, terminated_by="converged") -> FramePairResult:
        return FramePairResult(
            pose=pose,
            detections_prev=self.dets_prev.with_states(seg.states_prev),
            detections_curr=self.dets_curr.with_states(seg.states_curr),
            errors=seg.errors,
            iterations=iterations,
            pose_trace=tuple(trace),
            parts_prev=self.parts_prev,
            parts_curr=self.parts_curr,
            association=seg.association,
            terminated_by=terminated_by,
        )


def loop_body(result: FramePairResult, backend: Registrar, reg_cfg=None, cfg=None) -> tuple[Pose, Segmentation]:
    """Run one more merge, register and segment step from a finished result."""
    s = PairSolver.from_result(result, backend, reg_cfg, cfg)
    seg = Segmentation(result.detections_prev.states, result.detections_curr.states, result.errors,
                       result.association)
    pose = s.register_with_static(seg)
    return pose, s.segment(pose)


def dynamic_register(
    cloud_prev: PointCloud,
    cloud_curr: PointCloud,
    dets_prev: DetectionSet,
    dets_curr: DetectionSet,
    backend: Registrar,
    reg_cfg: RegistrationConfig | None = None,
    cfg: PipelineConfig | None = None,
) -> FramePairResult:
    """One pass: remove all, register, segment, merge static objects, register again."""
    s = PairSolver.from_clouds(cloud_prev, cloud_curr, dets_prev, dets_curr, backend, reg_cfg, cfg)
    t0 = s.register_environment()
    seg0 = s.segment(t0)
    t_dr = s.register_with_static(seg0)
    return s.result(t_dr, seg0, 1, (t0, t_dr))


def iterative_dynamic_register(
    cloud_prev: PointCloud,
    cloud_curr: PointCloud,
    dets_prev: DetectionSet,
    dets_curr: DetectionSet,
    backend: Registrar,
    reg_cfg: RegistrationConfig | None = None,
    cfg: PipelineConfig | None = None,
) -> FramePairResult:
    """Repeat merge-and-register until the static sets of both frames stop changing.

    ``iterations`` counts registrations made after the object-free one, so it
    is at least 1 and never exceeds ``max_loop``. By default the loop runs
    while either frame's static set changed; ``strict_loop`` requires
    both to change. A static set that was already registered once ends the
    loop as well, since repeating it would only cycle.
    """
    s = PairSolver.from_clouds(cloud_prev, cloud_curr, dets_prev, dets_curr, backend, reg_cfg, cfg)
    cfg = s.cfg
    t0 = s.register_environment()
    seg_prev = s.segment(t0)
    pose = s.register_with_static(seg_prev)
    trace = [t0, pose]
    seg = s.segment(pose)
    registered = {seg_prev.static_key()}
    iterations = 1
    reason = "converged"
    while True:
        (old_p, old_c), (new_p, new_c) = seg_prev.static_key(), seg.static_key()
        changed = (old_p != new_p and old_c != new_c) if cfg.strict_loop else (old_p, old_c) != (new_p, new_c)
        if not changed:
            break
        if iterations >= cfg.max_loop:
            reason = "max_loop"
            break
        if seg.static_key() in registered:
            reason = "cycle"
            break
        registered.add(seg.static_key())
        pose = s.register_with_static(seg)
        trace.append(pose)
        iterations += 1
        seg_prev, seg = seg, s.segment(pose)
    return s.result(pose, seg, iterations, trace, reason)


# -- frame preprocessing and the three comparison modes -----------------------

@dataclass(frozen=True)
class Preprocessed:
    cloud: PointCloud
    detections: DetectionSet
    kept: tuple[int, ...] = field(default=())  # original indices of the kept detections


def preprocess(cloud: PointCloud, dets: DetectionSet, box: RangeBox | None, min_score: float) -> Preprocessed:
    """Range crop the cloud, drop detections below ``min_score`` or centered outside the box."""
    cropped = crop_range(cloud, box) if box is not None else cloud
    keep = [
        i for i, d in enumerate(dets.detections)
        if d.score >= min_score and (box is None or bool(box.mask(d.center)[0]))
    ]
    return Preprocessed(cropped, dets.subset(keep), tuple(keep))


def register_pair(
    mode: Mode,
    cloud_prev: PointCloud,
    cloud_curr: PointCloud,
    dets_prev: DetectionSet,
    dets_curr: DetectionSet,
    backend: Registrar,
    reg_cfg: RegistrationConfig | None = None,
    cfg: PipelineConfig | None = None,
) -> FramePairResult:
    """Pose for one pair under a comparison mode.

    ``BASELINE`` registers whole (downsampled) clouds, ``RMA`` registers with
    every detected object removed, ``RMD`` runs the iterative algorithm.
    """
    cfg = cfg or PipelineConfig()
    reg_cfg = reg_cfg or RegistrationConfig()
    mode = Mode(mode)
    if mode is Mode.RMD:
        return iterative_dynamic_register(cloud_prev, cloud_curr, dets_prev, dets_curr, backend, reg_cfg, cfg)
    if mode is Mode.RMA:
        s = PairSolver.from_clouds(cloud_prev, cloud_curr, dets_prev, dets_curr, backend, reg_cfg, cfg)
        pose = s.register_environment()
        return FramePairResult(pose, dets_prev, dets_curr, (), 1, (pose,), s.parts_prev, s.parts_curr)
    _check_order(dets_prev, dets_curr)
    ds = (lambda c: voxel_downsample(c, cfg.voxel)) if cfg.voxel else (lambda c: c)
    pose = backend(ds(cloud_prev), ds(cloud_curr), reg_cfg).pose
    return FramePairResult(pose, dets_prev, dets_curr, (), 1, (pose,))
