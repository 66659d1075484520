"""Seeded synthetic scenes with known ego motion, parked boxes and movers.

World coordinates are those of frame 0. The ego pose of frame t in the world
is ``E_t = T_1 @ ... @ T_t`` where ``T_k`` is the pair pose mapping frame k
into frame k-1, and frame t observes ``E_t^-1`` applied to the world content
of that instant. Movers translate by their BEV velocity each frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cuboid import Detection, DetectionSet, Label, MotionState, contains_points, cuboid_frame
from .errors import InvalidParameterError
from .geom import PointCloud, Pose, rot_z, wrap_angle

GROUND_Z = -1.75
BOX_LIFT = 0.05  # boxes hover this far above the ground
SURFACE_INSET = 1e-3
STRUCTURE_CLEARANCE = 0.3  # facades keep this far from every box position
FALSE_POSITIVE_EXTENTS = {
    Label.CAR: (4.0, 1.8, 1.5),
    Label.CYCLIST: (1.8, 0.6, 1.7),
    Label.PEDESTRIAN: (0.8, 0.6, 1.8),
}


@dataclass(frozen=True)
class BoxSpec:
    label: Label
    l: float
    w: float
    h: float
    x: float
    y: float
    yaw: float
    vx: float = 0.0
    vy: float = 0.0
    points: int = 300

    def __post_init__(self):
        if min(self.l, self.w, self.h) <= 0:
            raise InvalidParameterError("box: extents must be positive")
        if self.points < 0:
            raise InvalidParameterError("box: points must be non-negative")

    @property
    def moving(self) -> bool:
        return self.vx != 0.0 or self.vy != 0.0


@dataclass(frozen=True)
class SceneSpec:
    """Everything ``generate`` needs; a fixed spec always yields the same scene.

    The environment is a ground plane plus ``structures`` random vertical
    facades and two side walls, spread over ``x in [-5, extent]`` and
    ``|y| <= extent / 2``. ``point_noise`` perturbs every observed point
    independently per frame.
    """

    seed: int = 0
    frames: int = 5
    ego_translation: tuple[float, float, float] = (0.8, 0.0, 0.0)
    ego_yaw: float = 0.01
    ground_points: int = 3000
    structure_points: int = 3000
    structures: int = 8
    extent: float = 40.0
    point_noise: float = 0.0
    boxes: tuple[BoxSpec, ...] = ()
    jitter: float = 0.0
    dropout: float = 0.0
    false_positive_rate: float = 0.0

    def __post_init__(self):
        checks = [
            ("frames", self.frames >= 2, "must be >= 2"),
            ("ground_points", self.ground_points >= 0, "must be non-negative"),
            ("structure_points", self.structure_points >= 0, "must be non-negative"),
            ("structures", self.structures >= 0, "must be non-negative"),
            ("extent", self.extent > 0, "must be positive"),
            ("point_noise", self.point_noise >= 0, "must be non-negative"),
            ("jitter", self.jitter >= 0, "must be non-negative"),
            ("dropout", 0.0 <= self.dropout <= 1.0, "must lie in [0, 1]"),
            ("false_positive_rate", self.false_positive_rate >= 0, "must be non-negative"),
            ("ego_translation", len(self.ego_translation) == 3, "needs 3 values"),
        ]
        for name, ok, why in checks:
            if not ok:
                raise InvalidParameterError(f"{name}: {why}")

    @property
    def pair_pose(self) -> Pose:
        return Pose.from_yaw(self.ego_yaw, self.ego_translation)


@dataclass(frozen=True)
class SceneTruth:
    """Generated frames plus their ground truth.

    ``provenance[t][i]`` is -1 for environment points and the box index
    otherwise. ``objects[t][k]`` is the box index behind detection k, -1 for
    false positives. ``boxes[t]`` holds the exact boxes in frame t.
    """

    spec: SceneSpec
    clouds: tuple[PointCloud, ...]
    detections: tuple[DetectionSet, ...]
    objects: tuple[tuple[int, ...], ...]
    boxes: tuple[DetectionSet, ...]
    pair_poses: tuple[Pose, ...]
    provenance: tuple[np.ndarray, ...] = field(repr=False)

    @property
    def frames(self) -> int:
        return len(self.clouds)


def _sample_rect(rng, n, origin, u, v):
    a = rng.uniform(0.0, 1.0, (n, 1))
    b = rng.uniform(0.0, 1.0, (n, 1))
    return origin + a * u + b * v


def _environment(spec: SceneSpec, rng) -> tuple[np.ndarray, np.ndarray]:
    """Ground points and structure points."""
    ext = spec.extent
    x0, x1, half = -5.0, ext, ext / 2
    g = _sample_rect(rng, spec.ground_points, np.array([x0, -half, GROUND_Z]),
                     np.array([x1 - x0, 0, 0]), np.array([0, 2 * half, 0]))
    parts = []
    n = spec.structure_points
    if n:
        k = spec.structures + 2
        counts = np.full(k, n // k)
        counts[: n % k] += 1
        up = np.array([0.0, 0.0, 2.5])
        for side, c in zip((-1.0, 1.0), counts[:2]):
            parts.append(_sample_rect(rng, c, np.array([x0, side * half, GROUND_Z]), np.array([x1 - x0, 0, 0]), up))
        for c in counts[2:]:
            cx, cy = rng.uniform(x0, x1), rng.uniform(-half, half)
            a = rng.uniform(0.0, np.pi)
            L = rng.uniform(1.5, 4.0)
            d = L * np.array([np.cos(a), np.sin(a), 0.0])
            parts.append(_sample_rect(rng, c, np.array([cx, cy, GROUND_Z]) - d / 2, d, up))
    return g, np.concatenate(parts) if parts else np.zeros((0, 3))


def _clear_of_boxes(pts: np.ndarray, spec: SceneSpec) -> np.ndarray:
    keep = np.ones(len(pts), dtype=bool)
    for b in spec.boxes:
        for t in range(spec.frames):
            det = Detection(*_box_center(b, t), b.l, b.w, b.h, b.yaw, b.label, 1.0)
            keep &= ~contains_points(cuboid_frame(det, STRUCTURE_CLEARANCE), pts)
    return pts[keep]


def _box_surface(box: BoxSpec, rng) -> np.ndarray:
    """Points on the four sides and the top, in box-local coordinates."""
    l, w, h = box.l, box.w, box.h
    areas = np.array([l * h, l * h, w * h, w * h, l * w])
    face = rng.choice(5, size=box.points, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, (box.points, 3)) * (l, w, h)
    u[face == 0, 1] = w / 2
    u[face == 1, 1] = -w / 2
    u[face == 2, 0] = l / 2
    u[face == 3, 0] = -l / 2
    u[face == 4, 2] = h / 2
    lim = np.array([l, w, h]) / 2 - SURFACE_INSET
    return np.clip(u, -lim, lim)


def _box_center(box: BoxSpec, t: int) -> np.ndarray:
    return np.array([box.x + box.vx * t, box.y + box.vy * t, GROUND_Z + BOX_LIFT + box.h / 2])


def generate(spec: SceneSpec) -> SceneTruth:
    rng = np.random.default_rng(spec.seed)
    ground, structure = _environment(spec, rng)
    env = np.concatenate([ground, _clear_of_boxes(structure, spec)])
    local = [_box_surface(b, rng) for b in spec.boxes]
    T = spec.pair_pose
    ego = [Pose.identity()]
    for _ in range(1, spec.frames):
        ego.append(ego[-1] @ T)

    clouds, dets, objects, boxes, prov = [], [], [], [], []
    for t in range(spec.frames):
        inv = ego[t].inverse()
        dyaw = ego[t].yaw
        world = [env]
        tags = [np.full(len(env), -1, dtype=np.int64)]
        exact, noisy, owner = [], [], []
        for k, (b, pts) in enumerate(zip(spec.boxes, local)):
            c = _box_center(b, t)
            world.append(pts @ rot_z(b.yaw).T + c)
            tags.append(np.full(len(pts), k, dtype=np.int64))
            cf = inv.apply(c)
            yaw = wrap_angle(b.yaw - dyaw)
            exact.append(Detection(*cf, b.l, b.w, b.h, yaw, b.label, 1.0))
            jit = rng.normal(0.0, spec.jitter, 2) if spec.jitter > 0 else np.zeros(2)
            drop = rng.uniform() < spec.dropout
            score = float(rng.uniform(0.6, 1.0))
            if not drop:
                noisy.append(Detection(cf[0] + jit[0], cf[1] + jit[1], cf[2], b.l, b.w, b.h, yaw, b.label, score))
                owner.append(k)
        n_fp = int(rng.poisson(spec.false_positive_rate)) if spec.false_positive_rate > 0 else 0
        for _ in range(n_fp):
            lab = list(Label)[int(rng.integers(len(Label)))]
            l, w, h = FALSE_POSITIVE_EXTENTS[lab]
            x, y = rng.uniform(5.0, spec.extent - 5.0), rng.uniform(-spec.extent / 4, spec.extent / 4)
            noisy.append(Detection(x, y, GROUND_Z + BOX_LIFT + h / 2, l, w, h,
                                   float(rng.uniform(-np.pi, np.pi)), lab, float(rng.uniform(0.6, 1.0))))
            owner.append(-1)
        pts = inv.apply(np.concatenate(world))
        if spec.point_noise > 0:
            pts = pts + rng.normal(0.0, spec.point_noise, pts.shape)
        clouds.append(PointCloud(pts, np.zeros(len(pts))))
        prov.append(np.concatenate(tags))
        states = [
            MotionState.UNKNOWN if k < 0 else (MotionState.DYNAMIC if spec.boxes[k].moving else MotionState.STATIC)
            for k in owner
        ]
        dets.append(DetectionSet(t, tuple(noisy), tuple(states)))
        objects.append(tuple(owner))
        boxes.append(DetectionSet(t, tuple(exact), tuple(
            MotionState.DYNAMIC if b.moving else MotionState.STATIC for b in spec.boxes)))
    return SceneTruth(spec, tuple(clouds), tuple(dets), tuple(objects), tuple(boxes),
                      tuple(T for _ in range(spec.frames - 1)), tuple(prov))


def street_spec(
    seed: int,
    movers: int = 3,
    parked: int = 3,
    frames: int = 4,
    jitter: float = 0.05,
    dropout: float = 0.05,
    mover_speed: tuple[float, float] = (1.0, 1.5),
    mover_points: int = 700,
    parked_points: int = 500,
    **kw,
) -> SceneSpec:
    """A street: parked cars along the kerbs, movers driving in the lanes.

    Boxes start on a grid of slots at least 6 m apart so no two of them share
    a gate; movers follow the x axis of their lane.
    """
    rng = np.random.default_rng([seed, 7919])
    slots_x = rng.permutation(np.arange(6.0, 36.0, 6.0))
    boxes = []
    for i in range(parked):
        y = (-1.0) ** i * rng.uniform(5.0, 7.0)
        boxes.append(BoxSpec(Label.CAR, 4.2, 1.8, 1.5, float(slots_x[i % len(slots_x)] + rng.uniform(-1, 1)),
                             float(y), float(rng.uniform(-0.1, 0.1)), points=parked_points))
    lanes = rng.permutation(np.arange(6.0, 30.0, 7.0))
    for i in range(movers):
        y = (-1.0) ** i * rng.uniform(1.2, 2.0)
        v = float(rng.uniform(*mover_speed)) * (1.0 if i % 2 == 0 else -1.0)
        boxes.append(BoxSpec(Label.CAR, 4.5, 1.9, 1.6, float(lanes[i % len(lanes)]), float(y), 0.0 if v > 0 else np.pi,
                             vx=v, points=mover_points))
    return SceneSpec(seed=seed, frames=frames, boxes=tuple(boxes), jitter=jitter, dropout=dropout, **kw)


# -- registration pairs ---------------------------------------------------------

def room_cloud(rng, n: int, half: float = 3.0) -> np.ndarray:
    """A compact scene: a floor patch plus 4 to 6 short walls of spread headings."""
    n_floor = n // 3
    parts = [np.c_[rng.uniform(-half, half, (n_floor, 2)), np.zeros(n_floor)]]
    k = int(rng.integers(4, 7))
    rest = n - n_floor
    a0 = rng.uniform(0.0, np.pi)
    for i in range(k):
        per = rest // k if i < k - 1 else rest - (k - 1) * (rest // k)
        c = rng.uniform(-half, half, 2)
        a = a0 + i * np.pi / k + rng.uniform(-0.1, 0.1)
        L = rng.uniform(1.5, 3.5)
        s = rng.uniform(-L / 2, L / 2, per)
        z = rng.uniform(0.0, 2.0, per)
        parts.append(np.c_[c[0] + s * np.cos(a), c[1] + s * np.sin(a), z])
    return np.concatenate(parts)


def registration_pair(rng, n: int | None = None, max_yaw: float = np.radians(10.0), max_shift: float = 1.0):
    """``(target, source, pose)`` with ``pose`` mapping source points onto target points exactly."""
    if n is None:
        n = int(rng.integers(500, 2001))
    P = room_cloud(rng, n)
    yaw = rng.uniform(-max_yaw, max_yaw)
    d = rng.normal(size=3)
    t = d / np.linalg.norm(d) * rng.uniform(0.0, max_shift)
    pose = Pose.from_yaw(yaw, t)
    return PointCloud(P), PointCloud(pose.inverse().apply(P)), pose


# -- spec files and disk emission ----------------------------------------------

_SCALARS = {
    "seed": int, "frames": int, "ground_points": int, "structure_points": int, "structures": int,
    "extent": float, "point_noise": float, "ego_yaw": float, "jitter": float, "dropout": float,
    "false_positive_rate": float,
}
_LABELS = {lab.value: lab for lab in Label}


def parse_spec(text: str) -> SceneSpec:
    """Read ``key = value`` lines; ``box`` may repeat.

    ``box = <label> l w h x y yaw vx vy points`` adds one box. Errors name the
    offending field.
    """
    kw: dict = {}
    boxes = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParameterError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            if key in _SCALARS:
                kw[key] = _SCALARS[key](val)
            elif key == "ego_translation":
                kw[key] = tuple(float(v) for v in val.split())
            elif key == "box":
                tok = val.split()
                if len(tok) != 10:
                    raise ValueError("needs label l w h x y yaw vx vy points")
                if tok[0] not in _LABELS:
                    raise ValueError(f"unknown label {tok[0]!r}")
                nums = [float(v) for v in tok[1:9]]
                boxes.append(BoxSpec(_LABELS[tok[0]], *nums, points=int(tok[9])))
            else:
                raise InvalidParameterError(f"line {lineno}: unknown field {key!r}")
        except ValueError as exc:
            if isinstance(exc, InvalidParameterError) and "unknown field" in str(exc):
                raise
            raise InvalidParameterError(f"line {lineno}: {key}: {exc}") from None
    return SceneSpec(boxes=tuple(boxes), **kw)


def format_spec(spec: SceneSpec) -> str:
    lines = [f"{k} = {getattr(spec, k)}" for k in _SCALARS]
    lines.insert(2, "ego_translation = " + " ".join(repr(float(v)) for v in spec.ego_translation))
    for b in spec.boxes:
        lines.append("box = " + " ".join([b.label.value, *(repr(float(v)) for v in
                                                          (b.l, b.w, b.h, b.x, b.y, b.yaw, b.vx, b.vy)), str(b.points)]))
    return "\n".join(lines) + "\n"


def emit(truth: SceneTruth, out_dir) -> None:
    """Write ``velodyne/*.bin``, ``detections.txt``, ``poses.txt`` (pair poses) and ``states.txt``."""
    from . import formats

    out = Path(out_dir)
    (out / "velodyne").mkdir(parents=True, exist_ok=True)
    for t, cloud in enumerate(truth.clouds):
        formats.write_cloud_bin(out / "velodyne" / formats.cloud_name(t), cloud)
    formats.write_detections(out / "detections.txt", truth.detections)
    formats.write_poses(out / "poses.txt", truth.pair_poses)
    formats.write_states(out / "states.txt", formats.states_rows({d.frame_id: d for d in truth.detections}))
