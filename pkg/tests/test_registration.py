import numpy as np
import pytest

from dynreg.errors import DegenerateInputError, NoOverlapError
from dynreg.geom import PointCloud, Pose, pose_error, voxel_downsample
from dynreg.registration import BACKENDS, RegistrationConfig, build_grid, icp_register, ndt_register
from dynreg.registration.icp import best_fit_transform
from dynreg.synth import generate, registration_pair, street_spec

REG_WIDE = RegistrationConfig(max_correspondence_distance=3.0)


def displaced_pair(rng, n=500, side=3.0):
    P = rng.uniform(0, side, (n, 3))
    move = Pose.from_yaw(np.radians(5.0), (0.4, 0.2, 0.0))
    # source is the target moved; registration must return the inverse motion
    return PointCloud(P), PointCloud(move.apply(P)), move.inverse()


NDT_BIAS = pytest.mark.xfail(
    strict=True,
    reason="neighbour-voxel scoring leaves a mm to cm offset on sparse uniform cubes; see decisions ledger",
)


def test_icp_self_registration_is_identity(rng):
    c = PointCloud(rng.uniform(0, 3, (500, 3)))
    res = icp_register(c, c, RegistrationConfig())
    t, r = pose_error(res.pose, Pose.identity())
    assert t < 1e-4 and r < 1e-4
    assert res.converged
    assert res.final_cost < 1e-20
    assert res.iterations_used <= 2


@NDT_BIAS
def test_ndt_self_registration_is_identity(rng):
    c = PointCloud(rng.uniform(0, 3, (500, 3)))
    res = ndt_register(c, c, RegistrationConfig())
    t, r = pose_error(res.pose, Pose.identity())
    assert t < 1e-4 and r < 1e-4


def test_ndt_self_registration_bias_on_street_cloud():
    # measured bound on the structured clouds NDT is used for: about 7e-4 m
    cloud = voxel_downsample(generate(street_spec(0)).clouds[0], 0.3)
    res = ndt_register(cloud, cloud, RegistrationConfig())
    t, r = pose_error(res.pose, Pose.identity())
    assert res.converged
    assert t < 2e-3 and r < 1e-3


def test_icp_recovers_constructed_motion(rng):
    tgt, src, truth = displaced_pair(rng)
    res = icp_register(tgt, src, RegistrationConfig())
    t, r = pose_error(res.pose, truth)
    assert t < 1e-3 and r < 1e-3


@NDT_BIAS
def test_ndt_recovers_constructed_motion(rng):
    tgt, src, truth = displaced_pair(rng)
    res = ndt_register(tgt, src, RegistrationConfig(ndt_voxel=1.0))
    t, r = pose_error(res.pose, truth)
    assert t < 5e-3 and r < 5e-3


def test_collinear_points_are_degenerate():
    line = PointCloud([[0, 0, 0], [1, 0, 0], [2, 0, 0]])
    with pytest.raises(DegenerateInputError):
        icp_register(line, line)
    with pytest.raises(DegenerateInputError):
        best_fit_transform(line.points, line.points)


def test_icp_without_inliers():
    a = PointCloud(np.eye(3) * [1, 2, 3])
    with pytest.raises(NoOverlapError):
        icp_register(a, PointCloud(a.points + 100.0))


def test_ndt_disjoint_source(rng):
    tgt = PointCloud(rng.uniform(0, 3, (500, 3)))
    with pytest.raises(NoOverlapError):
        ndt_register(tgt, PointCloud(tgt.points + 50.0))


def test_ndt_needs_populated_voxel():
    with pytest.raises(NoOverlapError):
        build_grid(PointCloud([[0.1, 0.1, 0.1]] * 3 + [[5, 5, 5]] * 3), 1.0)


@pytest.mark.parametrize("name", ["icp", "ndt"])
def test_objective_monotone(rng, name):
    for _ in range(10):
        tgt, src, _ = registration_pair(rng)
        res = BACKENDS[name](tgt, src, REG_WIDE)
        h = np.array(res.cost_history)
        assert (np.diff(h) <= 1e-12).all()


@pytest.mark.parametrize("name", ["icp", "ndt"])
def test_inverse_consistency(rng, name):
    for _ in range(5):
        tgt, src, _ = registration_pair(rng)
        ab = BACKENDS[name](tgt, src, REG_WIDE).pose
        ba = BACKENDS[name](src, tgt, REG_WIDE).pose
        t, r = pose_error(ab @ ba, Pose.identity())
        assert t < 1e-2 and r < 1e-2


@pytest.mark.parametrize("name", ["icp", "ndt"])
def test_warm_start_converges_fast(rng, name):
    for _ in range(5):
        tgt, src, truth = registration_pair(rng)
        cfg = RegistrationConfig(max_correspondence_distance=3.0, initial_guess=truth)
        res = BACKENDS[name](tgt, src, cfg)
        assert res.converged and res.iterations_used <= 3


@pytest.mark.parametrize("name", ["icp", "ndt"])
def test_rotation_stays_orthonormal(rng, name):
    tgt, src, _ = registration_pair(rng)
    R = BACKENDS[name](tgt, src, RegistrationConfig(max_correspondence_distance=3.0, max_iterations=200)).pose.rotation
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-12
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


def test_kabsch_exact(rng):
    P = rng.normal(size=(50, 3))
    T = Pose.from_yaw(0.3, (1, 2, 3))
    assert best_fit_transform(P, T.apply(P)).allclose(T, atol=1e-12)
