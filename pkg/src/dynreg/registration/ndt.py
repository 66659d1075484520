"""Normal Distributions Transform scan matching.

The target is summarised by one Gaussian per voxel holding at least five
points. Each source point scores ``exp(-m / 2)`` against the Gaussians of
its own voxel and the 26 around it, ``m`` being the Mahalanobis distance.
The summed score is maximised with Gauss-Newton steps on a left-multiplied
SE(3) increment; a step is halved (up to 8 times) until the score does not
drop.

Cell means are the fixed point of the kernel-weighted mean rather than the
plain average. With the plain average, unequal kernel weights inside a cell
leave a net pull on a perfectly aligned scan and the optimum sits a few
millimetres off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NoOverlapError, NumericalFailureError
from ..geom import PointCloud, Pose, voxel_keys
from .base import RegistrationConfig, RegistrationResult

MIN_CELL_POINTS = 5
EIGEN_FLOOR = 0.01
MAX_HALVINGS = 8
MEAN_ITERATIONS = 50

_OFFSETS = np.array(
    [[i, j, k] for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)], dtype=np.int64
)
_BIAS = 1 << 20


def _hash(keys: np.ndarray) -> np.ndarray:
    k = keys + _BIAS
    return (k[..., 0] << 42) | (k[..., 1] << 21) | k[..., 2]


@dataclass(frozen=True)
class NdtGrid:
    voxel: float
    hashes: np.ndarray  # sorted
    means: np.ndarray
    inv_covs: np.ndarray

    def __len__(self) -> int:
        return len(self.hashes)

    def lookup(self, points: np.ndarray) -> np.ndarray:
        """Cell ids (``-1`` when unpopulated) of the 27 voxels around each point."""
        keys = voxel_keys(points, self.voxel)[:, None, :] + _OFFSETS[None, :, :]
        h = _hash(keys)
        pos = np.minimum(np.searchsorted(self.hashes, h), len(self.hashes) - 1)
        return np.where(self.hashes[pos] == h, pos, -1)


def _weighted_mean(P: np.ndarray, mu: np.ndarray, S: np.ndarray, tol: float) -> np.ndarray:
    for _ in range(MEAN_ITERATIONS):
        d = P - mu
        w = np.exp(-0.5 * np.einsum("ni,ij,nj->n", d, S, d))
        new = (w[:, None] * P).sum(axis=0) / w.sum()
        if np.abs(new - mu).max() < tol:
            return new
        mu = new
    return mu


def build_grid(cloud: PointCloud, voxel: float) -> NdtGrid:
    pts = cloud.points
    if len(pts) == 0:
        raise NoOverlapError("empty NDT target")
    h = _hash(voxel_keys(pts, voxel))
    order = np.argsort(h, kind="stable")
    hs = h[order]
    starts = np.flatnonzero(np.r_[True, hs[1:] != hs[:-1]])
    ends = np.r_[starts[1:], len(hs)]
    keep, means, invs = [], [], []
    for s, e in zip(starts, ends):
        if e - s < MIN_CELL_POINTS:
            continue
        P = pts[order[s:e]]
        mu = P.mean(axis=0)
        lam, V = np.linalg.eigh(np.cov(P, rowvar=False))
        if not np.isfinite(lam).all() or lam[-1] <= 0:
            continue
        lam = np.maximum(lam, EIGEN_FLOOR * lam[-1])
        S = (V / lam) @ V.T
        keep.append(hs[s])
        means.append(_weighted_mean(P, mu, S, 1e-12 * voxel))
        invs.append(S)
    if not keep:
        raise NoOverlapError(f"no NDT voxel holds >= {MIN_CELL_POINTS} points")
    return NdtGrid(voxel, np.array(keep, dtype=np.int64), np.array(means), np.array(invs))


def _terms(grid: NdtGrid, q: np.ndarray):
    cells = grid.lookup(q)
    pi, ci = np.nonzero(cells >= 0)
    cid = cells[pi, ci]
    d = q[pi] - grid.means[cid]
    Sd = np.einsum("nij,nj->ni", grid.inv_covs[cid], d)
    w = np.exp(-0.5 * np.einsum("ni,ni->n", d, Sd))
    return pi, cid, Sd, w


def ndt_score(grid: NdtGrid, q: np.ndarray) -> float:
    return float(np.sum(_terms(grid, q)[3]))


def _normal_equations(grid: NdtGrid, q, pi, cid, Sd, w):
    # J = [I, -[q]x]; A = sum w J^T S J, g = -sum w J^T S d (ascent direction)
    qq = q[pi]
    S = grid.inv_covs[cid]
    Q = np.zeros((len(qq), 3, 3))
    Q[:, 0, 1], Q[:, 0, 2] = -qq[:, 2], qq[:, 1]
    Q[:, 1, 0], Q[:, 1, 2] = qq[:, 2], -qq[:, 0]
    Q[:, 2, 0], Q[:, 2, 1] = -qq[:, 1], qq[:, 0]
    SQ = S @ Q
    wb = w[:, None, None]
    A = np.empty((6, 6))
    A[:3, :3] = (wb * S).sum(axis=0)
    A[:3, 3:] = -(wb * SQ).sum(axis=0)
    A[3:, :3] = A[:3, 3:].T
    A[3:, 3:] = -(wb * (Q @ SQ)).sum(axis=0)
    g = -np.r_[(w[:, None] * Sd).sum(axis=0), (w[:, None] * np.cross(qq, Sd)).sum(axis=0)]
    return A, g


def ndt_register(
    target: PointCloud, source: PointCloud, cfg: RegistrationConfig | None = None
) -> RegistrationResult:
    cfg = cfg or RegistrationConfig()
    if len(source) == 0:
        raise NoOverlapError("empty NDT source")
    grid = build_grid(target, cfg.ndt_voxel)
    src = source.points
    n = len(src)

    pose = cfg.initial_guess
    q = pose.apply(src)
    terms = _terms(grid, q)
    if len(terms[0]) == 0:
        raise NoOverlapError("no source point lies near a populated target voxel")
    score = float(np.sum(terms[3]))
    history = [-score / n]
    converged = False
    accepted_steps = 0
    for _ in range(cfg.max_iterations):
        A, g = _normal_equations(grid, q, *terms)
        if not (np.isfinite(A).all() and np.isfinite(g).all()):
            raise NumericalFailureError("non-finite NDT Hessian")
        try:
            delta = np.linalg.solve(A + 1e-9 * np.trace(A) * np.eye(6), g)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailureError(f"singular NDT Hessian: {exc}") from exc
        if not np.isfinite(delta).all():
            raise NumericalFailureError("non-finite NDT step")

        step = None
        alpha = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = Pose.exp(alpha * delta) @ pose
            cq = cand.apply(src)
            c_terms = _terms(grid, cq)
            c_score = float(np.sum(c_terms[3]))
            if c_score >= score:
                step = alpha * delta
                break
            alpha *= 0.5
        if step is None:
            # no ascent along the Gauss-Newton direction: a local maximum
            converged = True
            break
        pose, q, terms, score = cand, cq, c_terms, c_score
        accepted_steps += 1
        history.append(-score / n)
        if np.linalg.norm(step[:3]) < cfg.translation_epsilon and np.linalg.norm(step[3:]) < cfg.rotation_epsilon:
            converged = True
            break
    return RegistrationResult(pose, -score / n, accepted_steps, converged, tuple(history))
