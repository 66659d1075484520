"""Point clouds, rigid poses and the spatial helpers every stage builds on."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyIndexError, InvalidInputError, InvalidParameterError

ORTHO_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def rot_z(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(phi: np.ndarray) -> np.ndarray:
    """Rodrigues' formula for an axis-angle vector."""
    phi = np.asarray(phi, dtype=np.float64)
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * K @ K


def so3_log(R: np.ndarray) -> np.ndarray:
    cos_t = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_t))
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-8:
        return 0.5 * w
    if np.pi - theta < 1e-6:
        # near pi the antisymmetric part vanishes; recover the axis from R + I
        M = (R + np.eye(3)) / 2.0
        axis = M[:, int(np.argmax(np.diag(M)))]
        axis = axis / np.linalg.norm(axis)
        return theta * axis
    return theta / (2.0 * np.sin(theta)) * w


def orthonormal_drift(R: np.ndarray) -> float:
    return max(float(np.abs(R.T @ R - np.eye(3)).max()), abs(float(np.linalg.det(R)) - 1.0))


def polar_orthonormalize(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def wrap_angle(a: float) -> float:
    """Map an angle onto (-pi, pi]."""
    a = float(np.fmod(a, 2.0 * np.pi))
    if a <= -np.pi:
        a += 2.0 * np.pi
    elif a > np.pi:
        a -= 2.0 * np.pi
    return a


class Pose:
    """Rigid transform ``p -> R p + t``.

    Rotations whose drift from SO(3) exceeds 1e-9 are re-orthonormalized by
    polar decomposition; anything that is not a rotation at all (reflection,
    large drift) is rejected.
    """

    __slots__ = ("_R", "_t")

    def __init__(self, rotation=None, translation=None, *, max_drift: float = 1e-3):
        R = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
        t = np.zeros(3) if translation is None else np.asarray(translation, dtype=np.float64)
        if R.shape != (3, 3) or t.shape != (3,):
            raise InvalidInputError(f"bad pose shapes {R.shape}, {t.shape}")
        if not (np.isfinite(R).all() and np.isfinite(t).all()):
            raise InvalidInputError("pose contains non-finite values")
        drift = orthonormal_drift(R)
        if drift > max_drift:
            raise InvalidInputError(f"rotation is not orthonormal (drift {drift:.3g})")
        if drift > ORTHO_TOL:
            R = polar_orthonormalize(R)
        self._R = _frozen(R)
        self._t = _frozen(t)

    @property
    def rotation(self) -> np.ndarray:
        return self._R

    @property
    def translation(self) -> np.ndarray:
        return self._t

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_matrix(cls, T, **kw) -> Pose:
        T = np.asarray(T, dtype=np.float64)
        return cls(T[:3, :3], T[:3, 3], **kw)

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> Pose:
        return cls(rot_z(yaw), np.asarray(translation, dtype=np.float64))

    @classmethod
    def exp(cls, xi) -> Pose:
        """Pose from a 6-vector (translation, axis-angle); translation is taken as-is."""
        xi = np.asarray(xi, dtype=np.float64)
        return cls(so3_exp(xi[3:]), xi[:3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self._R
        T[:3, 3] = self._t
        return T

    def inverse(self) -> Pose:
        Rt = self._R.T
        return Pose(Rt, -Rt @ self._t)

    def compose(self, other: Pose) -> Pose:
        """``self ∘ other``: apply ``other`` first."""
        return Pose(self._R @ other._R, self._R @ other._t + self._t)

    __matmul__ = compose

    def apply(self, points) -> np.ndarray:
        P = np.asarray(points, dtype=np.float64)
        return P @ self._R.T + self._t

    @property
    def yaw(self) -> float:
        return float(np.arctan2(self._R[1, 0], self._R[0, 0]))

    def rotation_angle(self) -> float:
        return float(np.linalg.norm(so3_log(self._R)))

    def translation_norm(self) -> float:
        return float(np.linalg.norm(self._t))

    def allclose(self, other: Pose, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self._R, other._R, atol=atol, rtol=0)
            and np.allclose(self._t, other._t, atol=atol, rtol=0)
        )

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(np.array_equal(self._R, other._R) and np.array_equal(self._t, other._t))

    def __hash__(self):
        return hash((self._R.tobytes(), self._t.tobytes()))

    def __repr__(self):
        return f"Pose(yaw={self.yaw:.6f}, t={np.array2string(self._t, precision=6)})"


def pose_error(a: Pose, b: Pose) -> tuple[float, float]:
    """Translation (m) and rotation (rad) magnitude of ``a⁻¹ ∘ b``."""
    d = a.inverse() @ b
    return d.translation_norm(), d.rotation_angle()


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Immutable ``(N, 3)`` array of points in meters, with optional intensity."""

    points: np.ndarray
    intensity: np.ndarray | None = None

    def __post_init__(self):
        P = np.asarray(self.points, dtype=np.float64)
        if P.size == 0:
            P = P.reshape(0, 3)
        if P.ndim != 2 or P.shape[1] != 3:
            raise InvalidInputError(f"points must be (N, 3), got {P.shape}")
        if not np.isfinite(P).all():
            raise InvalidInputError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", _frozen(P))
        if self.intensity is not None:
            I = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
            if I.shape[0] != P.shape[0]:
                raise InvalidInputError("intensity length differs from point count")
            object.__setattr__(self, "intensity", _frozen(I))

    @classmethod
    def empty(cls, with_intensity: bool = False) -> PointCloud:
        return cls(np.zeros((0, 3)), np.zeros(0) if with_intensity else None)

    def __len__(self) -> int:
        return self.points.shape[0]

    def select(self, idx) -> PointCloud:
        """Subset by boolean mask or index array, keeping order."""
        I = None if self.intensity is None else self.intensity[idx]
        return PointCloud(self.points[idx], I)

    def equals(self, other: PointCloud, atol: float = 0.0) -> bool:
        if len(self) != len(other):
            return False
        if (self.intensity is None) != (other.intensity is None):
            return False
        ok = np.allclose(self.points, other.points, atol=atol, rtol=0)
        if self.intensity is not None:
            ok = ok and np.allclose(self.intensity, other.intensity, atol=atol, rtol=0)
        return bool(ok)


def concatenate(clouds: Sequence[PointCloud]) -> PointCloud:
    clouds = list(clouds)
    if not clouds:
        return PointCloud.empty()
    pts = np.concatenate([c.points for c in clouds], axis=0)
    if all(c.intensity is not None for c in clouds):
        return PointCloud(pts, np.concatenate([c.intensity for c in clouds]))
    return PointCloud(pts)


def transform_cloud(cloud: PointCloud, pose: Pose) -> PointCloud:
    return PointCloud(pose.apply(cloud.points), cloud.intensity)


def voxel_keys(points: np.ndarray, voxel: float) -> np.ndarray:
    return np.floor(points / voxel).astype(np.int64)


def voxel_downsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """Replace the members of each occupied voxel by their centroid.

    Output is ordered by voxel key, so it does not depend on input order
    beyond floating-point summation.
    """
    if not voxel > 0:
        raise InvalidParameterError(f"voxel size must be positive, got {voxel}")
    n = len(cloud)
    if n == 0:
        return PointCloud.empty(cloud.intensity is not None)
    keys = voxel_keys(cloud.points, voxel)
    uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    m = uniq.shape[0]
    sums = np.zeros((m, 3))
    np.add.at(sums, inverse, cloud.points)
    pts = sums / counts[:, None]
    intensity = None
    if cloud.intensity is not None:
        isum = np.zeros(m)
        np.add.at(isum, inverse, cloud.intensity)
        intensity = isum / counts
    return PointCloud(pts, intensity)


@dataclass(frozen=True)
class RangeBox:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float

    def __post_init__(self):
        for lo, hi, ax in (
            (self.x_min, self.x_max, "x"),
            (self.y_min, self.y_max, "y"),
            (self.z_min, self.z_max, "z"),
        ):
            if not lo < hi:
                raise InvalidParameterError(f"range box {ax}: min must be < max ({lo}, {hi})")

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[float]]) -> RangeBox:
        (x0, x1), (y0, y1), (z0, z1) = pairs
        return cls(x0, x1, y0, y1, z0, z1)

    def mask(self, points: np.ndarray) -> np.ndarray:
        P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return (
            (P[:, 0] >= self.x_min) & (P[:, 0] <= self.x_max)
            & (P[:, 1] >= self.y_min) & (P[:, 1] <= self.y_max)
            & (P[:, 2] >= self.z_min) & (P[:, 2] <= self.z_max)
        )


# Velodyne-frame crop used for KITTI in the experiments.
KITTI_RANGE = RangeBox(0.0, 40.0, -30.0, 30.0, -3.0, 1.0)


def crop_range(cloud: PointCloud, box: RangeBox) -> PointCloud:
    return cloud.select(box.mask(cloud.points))


class KdIndex:
    """Nearest-neighbour index; ties resolve to the smallest point index."""

    def __init__(self, cloud: PointCloud | np.ndarray):
        pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
        self.points = pts.reshape(-1, 3)
        self._tree = cKDTree(self.points) if len(self.points) else None

    def __len__(self) -> int:
        return self.points.shape[0]

    def nearest(self, query) -> tuple[int, float]:
        idx, dist = self.nearest_many(np.asarray(query, dtype=np.float64).reshape(1, 3))
        return int(idx[0]), float(dist[0])

    def nearest_many(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self._tree is None:
            raise EmptyIndexError("nearest-neighbour query on an empty index")
        Q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        if len(self) == 1:
            d = np.linalg.norm(Q - self.points[0], axis=1)
            return np.zeros(len(Q), dtype=np.int64), d
        dist, idx = self._tree.query(Q, k=2)
        best_i = idx[:, 0].astype(np.int64)
        best_d = dist[:, 0]
        tied = np.nonzero(dist[:, 1] - dist[:, 0] <= 1e-9 * dist[:, 0] + 1e-300)[0]
        for q in tied:
            # near-tie: rescore every candidate in a slightly inflated ball
            cand = np.array(self._tree.query_ball_point(Q[q], dist[q, 1] * (1 + 1e-9) + 1e-12))
            dd = np.linalg.norm(self.points[cand] - Q[q], axis=1)
            dmin = dd.min()
            best_i[q] = cand[dd == dmin].min()
            best_d[q] = dmin
        return best_i, best_d


def build_index(cloud: PointCloud) -> KdIndex:
    return KdIndex(cloud)


def nearest(index: KdIndex, query) -> tuple[int, float]:
    return index.nearest(query)
