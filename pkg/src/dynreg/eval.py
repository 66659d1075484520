"""Translational relative pose error, trajectory accumulation and the comparison table."""

from __future__ import annotations

import io
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidInputError
from .geom import Pose


@dataclass(frozen=True)
class RpeReport:
    errors: tuple[float, ...]
    rmse: float

    @property
    def pairs(self) -> int:
        return len(self.errors)

    def to_csv(self) -> str:
        """Per-pair errors; the rotational column is reserved and left empty."""
        out = io.StringIO()
        out.write("pair,trans_error,rot_error\n")
        for i, e in enumerate(self.errors):
            out.write(f"{i},{e:.6f},\n")
        return out.getvalue()


def rpe_trans(gt_pairs: Sequence[Pose], est_pairs: Sequence[Pose]) -> RpeReport:
    """RMS over pairs of ``|trans(gt_i^-1 est_i)|``.

    Both sequences hold relative poses between consecutive frames, each
    mapping frame t into frame t-1.
    """
    if len(gt_pairs) != len(est_pairs):
        raise InvalidInputError(f"pose count mismatch: {len(gt_pairs)} ground truth vs {len(est_pairs)} estimated")
    if not gt_pairs:
        raise InvalidInputError("no pose pairs to evaluate")
    errs = tuple(float(np.linalg.norm((g.inverse() @ e).translation)) for g, e in zip(gt_pairs, est_pairs))
    rmse = math.sqrt(math.fsum(e * e for e in errs) / len(errs))
    return RpeReport(errs, rmse)


@dataclass(frozen=True)
class Trajectory:
    poses: tuple[Pose, ...]
    frame_ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.poses) != len(self.frame_ids):
            raise InvalidInputError("trajectory pose count differs from frame count")

    def relative(self) -> list[Pose]:
        """Consecutive pair poses ``A_{k-1}^-1 A_k``."""
        return relative_poses(self.poses)


def accumulate(pair_poses: Sequence[Pose], first_frame: int = 0) -> Trajectory:
    poses = [Pose.identity()]
    for p in pair_poses:
        poses.append(poses[-1] @ p)
    return Trajectory(tuple(poses), tuple(range(first_frame, first_frame + len(poses))))


def relative_poses(absolute: Sequence[Pose]) -> list[Pose]:
    return [absolute[k - 1].inverse() @ absolute[k] for k in range(1, len(absolute))]


def report_csv(
    cells: Mapping[tuple[str, str, str], RpeReport],
    include_mean: bool = False,
) -> str:
    """Table of RMSE values keyed by ``(seq, backend, mode)``.

    With ``include_mean`` a ``mean`` row per (backend, mode) follows the data
    rows, holding the arithmetic mean of that column's RMSE values and the
    total pair count.
    """
    out = io.StringIO()
    out.write("seq,backend,mode,rmse,pairs\n")
    columns: dict[tuple[str, str], list[RpeReport]] = defaultdict(list)
    for key in sorted(cells):
        seq, backend, mode = key
        rep = cells[key]
        out.write(f"{seq},{backend},{mode},{rep.rmse:.4f},{rep.pairs}\n")
        columns[(backend, mode)].append(rep)
    if include_mean:
        for (backend, mode), reps in sorted(columns.items()):
            mean = math.fsum(r.rmse for r in reps) / len(reps)
            out.write(f"mean,{backend},{mode},{mean:.4f},{sum(r.pairs for r in reps)}\n")
    return out.getvalue()
