import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dynreg.errors import InvalidInputError
from dynreg.eval import RpeReport, accumulate, relative_poses, report_csv, rpe_trans
from dynreg.geom import Pose, so3_exp


def shift(x, y=0.0, z=0.0):
    return Pose.from_yaw(0.0, (x, y, z))


def random_pose(rng, scale=0.5):
    return Pose(so3_exp(rng.normal(0, 0.1, 3)), rng.normal(0, scale, 3))


def test_equal_sequences_zero():
    ps = [shift(1), shift(0, 2)]
    rep = rpe_trans(ps, ps)
    assert rep.errors == (0.0, 0.0) and rep.rmse == 0.0


def test_three_four_five():
    assert rpe_trans([Pose.identity()], [shift(0.3, 0.4)]).rmse == pytest.approx(0.5, abs=1e-12)


def test_two_pairs():
    rep = rpe_trans([Pose.identity()] * 2, [shift(0.3), shift(0, 0.4)])
    assert abs(rep.rmse - math.sqrt(0.125)) < 1e-12


def test_length_checks():
    with pytest.raises(InvalidInputError):
        rpe_trans([Pose.identity()], [])
    with pytest.raises(InvalidInputError):
        rpe_trans([], [])


def test_rotation_conjugation_invariance(rng):
    gt = [random_pose(rng) for _ in range(10)]
    est = [random_pose(rng) for _ in range(10)]
    R = Pose(so3_exp(rng.normal(size=3)), np.zeros(3))
    conj = lambda ps: [R @ p @ R.inverse() for p in ps]
    a, b = rpe_trans(gt, est), rpe_trans(conj(gt), conj(est))
    assert np.allclose(a.errors, b.errors, atol=1e-12)


@given(st.lists(st.floats(0, 10), min_size=1, max_size=10), st.integers(0, 9), st.floats(0, 5))
def test_rmse_monotone_in_one_error(xs, k, extra):
    k %= len(xs)
    gt = [Pose.identity()] * len(xs)
    base = rpe_trans(gt, [shift(x) for x in xs]).rmse
    ys = list(xs)
    ys[k] += extra
    assert rpe_trans(gt, [shift(y) for y in ys]).rmse >= base - 1e-12


def test_accumulate_basics():
    assert [p.allclose(Pose.identity()) for p in accumulate([]).poses] == [True]
    assert np.allclose(accumulate([shift(1), shift(1)]).poses[-1].translation, [2, 0, 0])


def test_accumulate_matches_chain_product(rng):
    pairs = [random_pose(rng) for _ in range(50)]
    M = np.eye(4)
    for p in pairs:
        M = M @ p.matrix()
    assert np.abs(accumulate(pairs).poses[-1].matrix() - M).max() < 1e-9


def test_relative_inverts_accumulate(rng):
    pairs = [random_pose(rng) for _ in range(20)]
    back = accumulate(pairs).relative()
    assert all(a.allclose(b, atol=1e-9) for a, b in zip(pairs, back))
    assert len(relative_poses(accumulate(pairs).poses)) == 20


def test_report_single_cell():
    rep = RpeReport((0.2101,), 0.2101)
    assert report_csv({("0000", "NDT", "RMD"): rep}).splitlines() == [
        "seq,backend,mode,rmse,pairs", "0000,NDT,RMD,0.2101,1"]


def test_report_empty():
    assert report_csv({}) == "seq,backend,mode,rmse,pairs\n"


def test_report_mean_row(rng):
    cells = {}
    for seq in ("0000", "0001", "0002"):
        for mode in ("baseline", "RMA", "RMD"):
            e = tuple(rng.uniform(0, 1, 5))
            cells[(seq, "ICP", mode)] = RpeReport(e, float(np.sqrt(np.mean(np.square(e)))))
    lines = report_csv(cells, include_mean=True).splitlines()
    rows = [l.split(",") for l in lines[1:]]
    assert [r[:3] for r in rows[:9]] == sorted(r[:3] for r in rows[:9])
    for r in rows[9:]:
        col = [cells[(s, r[1], r[2])].rmse for s in ("0000", "0001", "0002")]
        assert r[0] == "mean" and r[3] == f"{sum(col) / 3:.4f}" and r[4] == "15"


def test_csv_has_reserved_rotation_column():
    text = rpe_trans([Pose.identity()], [shift(0.3, 0.4)]).to_csv()
    assert text.splitlines() == ["pair,trans_error,rot_error", "0,0.500000,"]
