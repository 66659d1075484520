"""Point-to-point ICP with a hard correspondence gate."""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateInputError, NoOverlapError
from ..geom import KdIndex, PointCloud, Pose
from .base import RegistrationConfig, RegistrationResult


def best_fit_transform(src: np.ndarray, dst: np.ndarray) -> Pose:
    """Least-squares rigid transform taking ``src`` onto ``dst`` (paired rows)."""
    if len(src) < 3:
        raise DegenerateInputError(f"need >= 3 correspondences, got {len(src)}")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    H = (src - mu_s).T @ (dst - mu_d)
    U, S, Vt = np.linalg.svd(H)
    if S[0] <= 0 or S[1] <= 1e-10 * S[0]:
        raise DegenerateInputError("cross-covariance is rank deficient (collinear or coincident points)")
    V = Vt.T
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(V @ U.T)) or 1.0])
    R = V @ D @ U.T
    return Pose(R, mu_d - R @ mu_s)


def icp_register(
    target: PointCloud, source: PointCloud, cfg: RegistrationConfig | None = None
) -> RegistrationResult:
    cfg = cfg or RegistrationConfig()
    if len(target) < 3 or len(source) < 3:
        raise DegenerateInputError("ICP needs at least 3 points in each cloud")
    index = KdIndex(target)
    gate = cfg.max_correspondence_distance
    tgt = target.points
    src = source.points

    def evaluate(pose: Pose):
        moved = pose.apply(src)
        idx, dist = index.nearest_many(moved)
        # truncated quadratic: non-increasing under the gated closed-form update
        cost = float(np.mean(np.minimum(dist, gate) ** 2))
        return moved, idx, dist, cost

    pose = cfg.initial_guess
    moved, idx, dist, cost = evaluate(pose)
    history = [cost]
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        inl = dist <= gate
        if not inl.any():
            raise NoOverlapError(f"no correspondences within {gate} m")
        step = best_fit_transform(moved[inl], tgt[idx[inl]])
        pose = step @ pose
        moved, idx, dist, cost = evaluate(pose)
        history.append(cost)
        if step.translation_norm() < cfg.translation_epsilon and step.rotation_angle() < cfg.rotation_epsilon:
            converged = True
            break
    return RegistrationResult(pose, cost, it, converged, tuple(history))
