import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dynreg.association import CostMatrix, associate, bev_distance_matrix, hungarian, reproject
from dynreg.cuboid import Detection, DetectionSet, Label
from dynreg.errors import InvalidParameterError
from dynreg.geom import Pose
from dynreg.synth import BoxSpec, SceneSpec, generate


def car(x, y, yaw=0.0, label=Label.CAR):
    return Detection(x, y, 0.0, 4.0, 1.8, 1.5, yaw, label, 0.9)


def brute_force(C, feasible):
    """Max-cardinality then min-cost matching by enumerating permutations."""
    r, c = C.shape
    best = (-1, 0.0)
    if r <= c:
        perms = ((tuple(range(r)), p) for p in itertools.permutations(range(c), r))
    else:
        perms = ((p, tuple(range(c))) for p in itertools.permutations(range(r), c))
    for rows, cols in perms:
        pairs = [(i, j) for i, j in zip(rows, cols) if feasible[i, j]]
        key = (len(pairs), -sum(C[i, j] for i, j in pairs))
        if key > (best[0], -best[1]):
            best = (len(pairs), -key[1])
    return best


def test_reproject_identity():
    ds = DetectionSet(0, (car(5, 1, 0.3), car(-2, 4, -1.0)))
    assert reproject(ds, Pose.identity()) == ds


def test_reproject_translation():
    out = reproject(DetectionSet(0, (car(5, 0, 0.2),)), Pose.from_yaw(0.0, (1, 0, 0)))
    d = out.detections[0]
    assert (d.x, d.y, d.z, d.yaw) == (6.0, 0.0, 0.0, 0.2)


@given(
    st.floats(-np.pi, np.pi), st.floats(-10, 10), st.floats(-10, 10), st.floats(-np.pi, np.pi),
    st.floats(-20, 20), st.floats(-20, 20),
)
def test_reproject_maps_corners(yaw, tx, ty, box_yaw, x, y):
    det = car(x, y, box_yaw)
    pose = Pose.from_yaw(yaw, (tx, ty, 0.5))
    moved = reproject(DetectionSet(0, (det,)), pose).detections[0]
    # corner order differs only when the new yaw wraps, so compare as sets
    got = np.sort(moved.corners(), axis=0)
    want = np.sort(pose.apply(det.corners()), axis=0)
    assert np.abs(got - want).max() < 1e-9


@given(st.lists(st.floats(-np.pi, np.pi), min_size=4, max_size=4))
def test_reproject_compose(a):
    ds = DetectionSet(0, (car(3, -2, 0.1), car(10, 5, 2.0)))
    t1 = Pose.from_yaw(a[0], (a[1], 1.0, 0.0))
    t2 = Pose.from_yaw(a[2], (-2.0, a[3], 0.3))
    lhs = reproject(reproject(ds, t1), t2)
    rhs = reproject(ds, t2 @ t1)
    assert np.abs(lhs.centers() - rhs.centers()).max() < 1e-9


def test_hungarian_diagonal():
    a = hungarian(CostMatrix.dense([[1, 2], [2, 1]]))
    assert [(i, j) for i, j, _ in a.pairs] == [(0, 0), (1, 1)]
    assert a.total_cost == 2


def test_hungarian_gated_single():
    a = hungarian(CostMatrix.gated([[3.0]], 2.0))
    assert a.pairs == ()
    assert a.unmatched_prev == {0} and a.unmatched_curr == {0}


def test_hungarian_empty():
    a = hungarian(CostMatrix.dense(np.zeros((0, 3))))
    assert a.pairs == () and a.unmatched_curr == {0, 1, 2}


def test_hungarian_negative_costs_rejected():
    with pytest.raises(InvalidParameterError):
        hungarian(CostMatrix.dense([[-1.0]]))


def test_hungarian_ties_pick_lowest_index():
    a = hungarian(CostMatrix.dense(np.ones((3, 3))))
    assert [(i, j) for i, j, _ in a.pairs] == [(0, 0), (1, 1), (2, 2)]


def test_hungarian_matches_brute_force(rng):
    for _ in range(300):
        r, c = rng.integers(1, 7, 2)
        C = rng.uniform(0, 5, (r, c))
        if rng.uniform() < 0.3:
            C = np.round(C)  # adversarial ties
        feas = rng.uniform(size=(r, c)) < 0.8
        a = hungarian(CostMatrix(C, feas))
        n, cost = brute_force(C, feas)
        assert len(a.pairs) == n
        assert a.total_cost == pytest.approx(cost, abs=1e-9)
        assert all(feas[i, j] for i, j, _ in a.pairs)


def test_hungarian_rectangular_six_by_five(rng):
    for _ in range(50):
        C = rng.uniform(0, 10, (6, 5))
        a = hungarian(CostMatrix.dense(C))
        best = min(sum(C[p[j], j] for j in range(5)) for p in itertools.permutations(range(6), 5))
        assert a.total_cost == pytest.approx(best, abs=1e-9)


def test_associate_identical_sets():
    ds = DetectionSet(0, (car(1, 1), car(8, -3), car(15, 6)))
    a = associate(ds, ds, 0.5)
    assert [(i, j, d) for i, j, d in a.pairs] == [(0, 0, 0.0), (1, 1, 0.0), (2, 2, 0.0)]


def test_associate_one_missing():
    prev = DetectionSet(0, (car(0, 0), car(10, 0)))
    curr = DetectionSet(1, (car(0.3, 0.1),))
    a = associate(prev, curr)
    assert [(i, j) for i, j, _ in a.pairs] == [(0, 0)]
    assert a.unmatched_prev == {1} and a.unmatched_curr == frozenset()


def test_associate_bars_other_classes():
    prev = DetectionSet(0, (car(0, 0),))
    curr = DetectionSet(1, (car(0, 0, label=Label.PEDESTRIAN),))
    assert associate(prev, curr).pairs == ()


def test_associate_ignores_height():
    prev = DetectionSet(0, (car(0, 0),))
    curr = DetectionSet(1, (Detection(0, 0, 5.0, 4, 1.8, 1.5, 0, Label.CAR, 0.9),))
    assert associate(prev, curr).pairs[0][2] == 0.0


def test_associate_rejects_bad_gate():
    ds = DetectionSet(0, (car(0, 0),))
    with pytest.raises(InvalidParameterError):
        associate(ds, ds, 0.0)


def random_set(rng, frame, n):
    labels = list(Label)
    return DetectionSet(frame, tuple(
        car(*rng.uniform(-6, 6, 2), label=labels[int(rng.integers(2))]) for _ in range(n)))


def test_associate_symmetric_and_partitions(rng):
    for _ in range(100):
        a_set, b_set = random_set(rng, 0, int(rng.integers(0, 6))), random_set(rng, 1, int(rng.integers(0, 6)))
        ab = associate(a_set, b_set, 2.0)
        ba = associate(b_set, a_set, 2.0)
        assert ab.total_cost == pytest.approx(ba.total_cost, abs=1e-9)
        assert len(ab.pairs) == len(ba.pairs)
        prev_idx = [i for i, _, _ in ab.pairs]
        curr_idx = [j for _, j, _ in ab.pairs]
        assert sorted(prev_idx + list(ab.unmatched_prev)) == list(range(len(a_set)))
        assert sorted(curr_idx + list(ab.unmatched_curr)) == list(range(len(b_set)))


def test_gate_soundness_and_monotonicity(rng):
    for _ in range(100):
        a_set, b_set = random_set(rng, 0, 5), random_set(rng, 1, 5)
        D = bev_distance_matrix(a_set, b_set)
        counts = []
        for gate in (4.0, 2.0, 1.0, 0.5):
            a = associate(a_set, b_set, gate)
            assert all(d <= gate and D[i, j] == d for i, j, d in a.pairs)
            counts.append(len(a.pairs))
        assert counts == sorted(counts, reverse=True)


def test_associate_recovers_synthetic_correspondence():
    boxes = tuple(BoxSpec(Label.CAR, 4.2, 1.8, 1.5, x, y, 0.0) for x, y in
                  ((8, 5), (14, -5), (20, 5), (26, -5), (32, 5)))
    truth = generate(SceneSpec(seed=3, frames=2, boxes=boxes, jitter=0.1, ground_points=10,
                               structure_points=10, structures=1))
    pose = truth.pair_poses[0]
    prev, curr = truth.detections
    # drop one detection of the current frame
    keep = list(range(len(curr)))[1:]
    curr, owners = curr.subset(keep), [truth.objects[1][k] for k in keep]
    a = associate(prev, reproject(curr, pose))
    got = {truth.objects[0][i]: owners[j] for i, j, _ in a.pairs}
    assert got == {k: k for k in owners if k in truth.objects[0]}
