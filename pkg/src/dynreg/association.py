"""Carry frame-t detections into frame t-1 and match them to the frame t-1 detections."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .cuboid import DetectionSet
from .errors import InvalidParameterError
from .geom import Pose, wrap_angle

DEFAULT_GATE = 2.0


def reproject(dets: DetectionSet, pose: Pose) -> DetectionSet:
    """Map centers by ``pose`` and add its yaw to each heading."""
    dyaw = pose.yaw
    moved = []
    for d in dets.detections:
        c = pose.apply(d.center)
        moved.append(replace(d, x=float(c[0]), y=float(c[1]), z=float(c[2]), yaw=wrap_angle(d.yaw + dyaw)))
    return DetectionSet(dets.frame_id, tuple(moved), dets.states)


@dataclass(frozen=True)
class CostMatrix:
    """BEV distances; ``feasible[i, j]`` is False for gated pairs."""

    costs: np.ndarray
    feasible: np.ndarray

    @classmethod
    def dense(cls, costs) -> CostMatrix:
        c = np.asarray(costs, dtype=np.float64)
        if c.ndim != 2:
            if c.size:
                raise InvalidParameterError(f"cost matrix must be 2-D, got shape {c.shape}")
            c = c.reshape(0, 0)
        return cls(c, np.isfinite(c))

    @classmethod
    def gated(cls, costs, gate: float) -> CostMatrix:
        m = cls.dense(costs)
        return cls(m.costs, m.feasible & (m.costs <= gate))

    @property
    def shape(self) -> tuple[int, int]:
        return self.costs.shape


@dataclass(frozen=True)
class Association:
    pairs: tuple[tuple[int, int, float], ...]
    unmatched_prev: frozenset[int]
    unmatched_curr: frozenset[int]

    @property
    def total_cost(self) -> float:
        return float(np.sum([p[2] for p in self.pairs]))

    def curr_for_prev(self) -> dict[int, int]:
        return {i: j for i, j, _ in self.pairs}


def _solve_square(C: np.ndarray) -> np.ndarray:
    """Shortest-augmenting-path Hungarian method; returns the column of every row.

    Ties fall to the lowest column index because minima are taken with strict <.
    """
    n = C.shape[0]
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row matched to column j (1-based, 0 = free)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = C[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col_of_row[p[j] - 1] = j - 1
    return col_of_row


def hungarian(costs: CostMatrix) -> Association:
    """Maximum-cardinality matching over feasible entries, minimum total cost among those.

    Infeasible and padding entries get a cost larger than any feasible
    assignment could sum to, so the solver only uses them when forced to.
    """
    r, c = costs.shape
    feas = costs.feasible
    if r == 0 or c == 0 or not feas.any():
        return Association((), frozenset(range(r)), frozenset(range(c)))
    vals = np.where(feas, costs.costs, 0.0)
    if (vals < 0).any():
        raise InvalidParameterError("assignment costs must be non-negative")
    big = 1.0 + 2.0 * float(vals.sum())
    n = max(r, c)
    C = np.full((n, n), big)
    C[:r, :c] = np.where(feas, costs.costs, big)
    col = _solve_square(C)
    pairs = []
    for i in range(r):
        j = int(col[i])
        if j < c and feas[i, j]:
            pairs.append((i, j, float(costs.costs[i, j])))
    mp = {i for i, _, _ in pairs}
    mc = {j for _, j, _ in pairs}
    return Association(
        tuple(pairs), frozenset(set(range(r)) - mp), frozenset(set(range(c)) - mc)
    )


def bev_distance_matrix(prev: DetectionSet, curr: DetectionSet) -> np.ndarray:
    a = prev.centers()[:, :2]
    b = curr.centers()[:, :2]
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2).reshape(len(prev), len(curr))


def associate(prev: DetectionSet, curr_reprojected: DetectionSet, gate: float = DEFAULT_GATE) -> Association:
    """Hungarian matching on BEV center distance; pairs beyond ``gate`` or of different class are barred."""
    if not gate > 0:
        raise InvalidParameterError(f"gate must be positive, got {gate}")
    D = bev_distance_matrix(prev, curr_reprojected)
    feas = D <= gate
    for i, dp in enumerate(prev.detections):
        for j, dc in enumerate(curr_reprojected.detections):
            if dp.label is not dc.label:
                feas[i, j] = False
    return hungarian(CostMatrix(D, feas))
