import numpy as np
import pytest

from dynreg.association import associate, reproject
from dynreg.cuboid import Label, MotionState, point_owners
from dynreg.errors import InvalidParameterError
from dynreg.geom import pose_error
from dynreg.pipeline import motion_segment
from dynreg.synth import BoxSpec, SceneSpec, format_spec, generate, parse_spec, registration_pair, street_spec

few = dict(ground_points=500, structure_points=500, structures=3)


def test_identity_ego_without_boxes_repeats_frames():
    t = generate(SceneSpec(frames=3, ego_translation=(0, 0, 0), ego_yaw=0.0, **few))
    assert all(np.array_equal(t.clouds[0].points, c.points) for c in t.clouds[1:])


def true_errors(t, k=0):
    rep = reproject(t.detections[k + 1], t.pair_poses[k])
    assoc = associate(t.detections[k], rep)
    return motion_segment(t.detections[k], rep, assoc, 0.5)


def test_static_box_reprojects_exactly():
    t = generate(SceneSpec(frames=3, boxes=(BoxSpec(Label.CAR, 4, 2, 1.5, 10, 3, 0.3),), **few))
    for k in range(2):
        sp, sc, errs = true_errors(t, k)
        assert sp == sc == (MotionState.STATIC,)
        assert errs[0][2] < 1e-9


def test_mover_error_is_its_speed():
    t = generate(SceneSpec(frames=3, boxes=(BoxSpec(Label.CAR, 4, 2, 1.5, 10, 3, 0.0, vx=1.0),), **few))
    for k in range(2):
        sp, _, errs = true_errors(t, k)
        assert sp == (MotionState.DYNAMIC,)
        assert abs(errs[0][2] - 1.0) < 1e-9


def test_deterministic():
    a, b = generate(street_spec(11)), generate(street_spec(11))
    assert all(x.points.tobytes() == y.points.tobytes() for x, y in zip(a.clouds, b.clouds))
    assert a.detections == b.detections
    assert generate(street_spec(12)).clouds[0].points.tobytes() != a.clouds[0].points.tobytes()


def test_provenance_recovered_at_zero_margin():
    t = generate(street_spec(5, jitter=0.0, dropout=0.0))
    for cloud, boxes, prov in zip(t.clouds, t.boxes, t.provenance):
        assert np.array_equal(point_owners(cloud, boxes, margin=0.0), prov)


def test_truth_states_follow_velocity():
    t = generate(street_spec(3, false_positive_rate=2.0))
    for dets, owners in zip(t.detections, t.objects):
        for s, k in zip(dets.states, owners):
            if k < 0:
                assert s is MotionState.UNKNOWN
            else:
                assert (s is MotionState.DYNAMIC) == t.spec.boxes[k].moving


def test_street_movers_cover_enough_points():
    t = generate(street_spec(0))
    movers = [k for k, b in enumerate(t.spec.boxes) if b.moving]
    frac = np.isin(t.provenance[0], movers).mean()
    assert frac >= 0.10


def test_registration_pair_is_exact(rng):
    for _ in range(5):
        tgt, src, pose = registration_pair(rng)
        assert 500 <= len(tgt) <= 2000
        assert np.abs(pose.apply(src.points) - tgt.points).max() < 1e-9
        assert abs(pose.yaw) <= np.radians(10) and np.linalg.norm(pose.translation) <= 1.0


@pytest.mark.parametrize("kw, field", [
    ({"frames": 1}, "frames"), ({"jitter": -1}, "jitter"), ({"dropout": 1.5}, "dropout"),
    ({"extent": 0}, "extent"), ({"ego_translation": (1, 0)}, "ego_translation"),
])
def test_invalid_spec_names_field(kw, field):
    with pytest.raises(InvalidParameterError, match=field):
        SceneSpec(**kw)


def test_spec_text_round_trip():
    spec = street_spec(4, point_noise=0.01, false_positive_rate=0.5)
    assert parse_spec(format_spec(spec)) == spec


def test_spec_text_errors():
    with pytest.raises(InvalidParameterError, match="line 2: frames"):
        parse_spec("seed = 1\nframes = many\n")
    with pytest.raises(InvalidParameterError, match="unknown field 'speed'"):
        parse_spec("speed = 3\n")
    with pytest.raises(InvalidParameterError, match="line 1: box: unknown label"):
        parse_spec("box = Truck 1 1 1 0 0 0 0 0 10\n")
    with pytest.raises(InvalidParameterError, match="dropout"):
        parse_spec("dropout = 2  # too high\n")


def test_spec_comments_and_boxes():
    spec = parse_spec("# scene\nseed = 3\nbox = Car 4 2 1.5 10 2 0 1 0 100\nbox = Pedestrian 1 1 1.8 5 -2 0 0 0 50\n")
    assert spec.seed == 3 and len(spec.boxes) == 2
    assert spec.boxes[0].moving and not spec.boxes[1].moving
    t = generate(spec)
    assert t.frames == 5
    assert pose_error(t.pair_poses[0], spec.pair_pose) == (0.0, 0.0)
