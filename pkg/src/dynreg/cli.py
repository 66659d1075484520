"""``dynreg`` command line: ``run`` a sequence, ``eval`` poses, emit a ``synth`` scene.

Exit status: 0 success, 1 usage, 2 data or format problem, 3 pipeline or
numerical failure. Logs go to standard error; results only to files.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import formats
from .cuboid import DetectionSet, MotionState, point_owners
from .errors import DynRegError, FormatError, InvalidInputError, InvalidParameterError, RegistrationError
from .eval import accumulate, relative_poses, rpe_trans
from .geom import KITTI_RANGE, PointCloud, Pose, RangeBox
from .pipeline import Mode, PipelineConfig, preprocess, register_pair
from .registration import BACKENDS, RegistrationConfig, RegistrationResult
from .synth import emit, generate, parse_spec

log = logging.getLogger("dynreg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PIPELINE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class FixedPose:
    """A registrar that ignores its inputs and returns a known pose."""

    pose: Pose

    def __call__(self, target, source, cfg=None) -> RegistrationResult:
        return RegistrationResult(self.pose, 0.0, 0, True, (0.0,))


@dataclass(frozen=True)
class RunConfig:
    cloud_dir: Path
    detection_path: Path | None
    out_dir: Path
    backend: str = "ndt"
    mode: Mode = Mode.RMD
    voxel: float = 0.3
    range_box: RangeBox = KITTI_RANGE
    min_score: float = 0.5
    thresh: float = 0.5
    gate: float = 2.0
    max_loop: int = 10
    strict_loop: bool = False
    ndt_voxel: float = 1.0
    max_correspondence: float = 1.0
    true_poses: Path | None = None
    ply: bool = False
    workers: int = 1
    constant_velocity: bool = False

    def __post_init__(self):
        for name in ("voxel", "thresh", "gate", "ndt_voxel", "max_correspondence"):
            if not getattr(self, name) > 0:
                raise UsageError(f"--{name.replace('_', '-')} must be positive")
        if self.max_loop < 1 or self.workers < 1:
            raise UsageError("--max-loop and --workers must be >= 1")
        if self.backend not in BACKENDS:
            raise UsageError(f"unknown backend {self.backend!r}")
        if self.constant_velocity and self.workers > 1:
            raise UsageError("--constant-velocity chains pairs and needs --workers 1")


def _solve_pair(job):
    mode, backend, reg_cfg, cfg, prev, curr = job
    return register_pair(mode, prev.cloud, curr.cloud, prev.detections, curr.detections, backend, reg_cfg, cfg)


def _tags(cloud: PointCloud, dets: DetectionSet, margin: float) -> np.ndarray:
    owner = point_owners(cloud, dets, margin)
    lut = {MotionState.STATIC: formats.TAG_STATIC, MotionState.DYNAMIC: formats.TAG_DYNAMIC,
           MotionState.UNKNOWN: formats.TAG_UNKNOWN}
    by_det = np.array([lut[s] for s in dets.states] + [formats.TAG_ENVIRONMENT], dtype=np.int64)
    return by_det[owner]  # owner -1 picks the trailing environment tag


def _frame_states(results) -> list[DetectionSet]:
    """One state per detection and frame from the two pairs a middle frame belongs to.

    The pair where the frame is current wins; its UNKNOWN entries (no match
    there) take the state from the pair where the frame is previous.
    """
    out = [results[0].detections_prev]
    for k, r in enumerate(results):
        dets = r.detections_curr
        if k + 1 < len(results):
            other = results[k + 1].detections_prev.states
            dets = dets.with_states([b if a is MotionState.UNKNOWN else a for a, b in zip(dets.states, other)])
        out.append(dets)
    return out


def cmd_run(rc: RunConfig) -> int:
    mode = Mode(rc.mode)
    if mode is not Mode.BASELINE and rc.detection_path is None:
        raise UsageError(f"mode {mode.value} needs a detection file")
    manifest = formats.scan_sequence(rc.cloud_dir, rc.detection_path)
    if len(manifest.frame_ids) < 2:
        raise InvalidInputError(f"{rc.cloud_dir}: need at least two frames, found {len(manifest.frame_ids)}")
    raw_dets = formats.read_detections(manifest.detection_path) if manifest.detection_path else {}
    frames = []
    for fid, path in zip(manifest.frame_ids, manifest.cloud_paths):
        dets = raw_dets.get(fid, DetectionSet(fid, ()))
        frames.append(preprocess(formats.read_cloud_bin(path), dets, rc.range_box, rc.min_score))
    n_pairs = len(frames) - 1
    log.info("%d frames, mode %s, backend %s", len(frames), mode.value, rc.backend)

    if rc.true_poses is not None:
        truth = formats.read_poses(rc.true_poses)
        if len(truth) != n_pairs:
            raise InvalidInputError(f"{rc.true_poses}: {len(truth)} poses for {n_pairs} frame pairs")
        backends = [FixedPose(p) for p in truth]
    else:
        backends = [BACKENDS[rc.backend]] * n_pairs
    reg_cfg = RegistrationConfig(max_correspondence_distance=rc.max_correspondence, ndt_voxel=rc.ndt_voxel)
    cfg = PipelineConfig(motion_threshold=rc.thresh, gate=rc.gate, max_loop=rc.max_loop,
                         strict_loop=rc.strict_loop, voxel=rc.voxel)
    jobs = [(mode, backends[k], reg_cfg, cfg, frames[k], frames[k + 1]) for k in range(n_pairs)]
    if rc.workers > 1:
        with ProcessPoolExecutor(rc.workers) as pool:
            results = list(pool.map(_solve_pair, jobs))
    elif rc.constant_velocity:
        # each pair starts from the previous pair's estimate
        results = []
        for mode_, backend, rcfg, pcfg, prev, curr in jobs:
            if results:
                rcfg = replace(rcfg, initial_guess=results[-1].pose)
            results.append(_solve_pair((mode_, backend, rcfg, pcfg, prev, curr)))
    else:
        results = [_solve_pair(j) for j in jobs]

    out = rc.out_dir
    writes = [
        (out / "poses.txt", lambda p: formats.write_poses(p, [r.pose for r in results])),
        (out / "trajectory.txt", lambda p: formats.write_poses(p, accumulate([r.pose for r in results]).poses)),
    ]
    if mode is Mode.RMD:
        final = _frame_states(results)
        rows = []
        for fid, pre, dets in zip(manifest.frame_ids, frames, final):
            n_all = len(raw_dets.get(fid, DetectionSet(fid, ())))
            states = [MotionState.UNKNOWN] * n_all
            for orig, s in zip(pre.kept, dets.states):
                states[orig] = s
            rows.extend((fid, i, s) for i, s in enumerate(states))
            log.info("frame %d: %s", fid, " ".join(s.value for s in dets.states))
        writes.append((out / "segmentation.txt", lambda p: formats.write_states(p, rows)))
    if rc.ply:
        for k, (fid, pre) in enumerate(zip(manifest.frame_ids, frames)):
            tags = _tags(pre.cloud, final[k], cfg.margin) if mode is Mode.RMD else None
            writes.append((out / f"{fid:06d}.ply", lambda p, c=pre.cloud, t=tags: formats.write_ply(p, c, t)))
    out.mkdir(parents=True, exist_ok=True)
    done = []
    try:
        for path, write in writes:
            write(path)
            done.append(path)
    except BaseException:
        # leave no partial result set behind
        for path in done:
            path.unlink(missing_ok=True)
        raise
    for k, r in enumerate(results):
        log.debug("pair %d: %d iterations, t=%s", k, r.iterations, np.round(r.pose.translation, 4))
    return EXIT_OK


def cmd_eval(est_path, gt_path, csv_path=None, est_absolute=False, gt_absolute=False) -> int:
    est = formats.read_poses(est_path)
    gt = formats.read_poses(gt_path)
    if est_absolute:
        est = relative_poses(est)
    if gt_absolute:
        gt = relative_poses(gt)
    rep = rpe_trans(gt, est)
    if csv_path is not None:
        Path(csv_path).write_text(rep.to_csv(), encoding="utf-8")
    print(f"{rep.rmse:.4f}")
    return EXIT_OK


def cmd_synth(spec_path, out_dir) -> int:
    spec = parse_spec(Path(spec_path).read_text(encoding="utf-8"))
    emit(generate(spec), out_dir)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dynreg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="estimate pair poses for a sequence")
    r.add_argument("--clouds", required=True, type=Path, help="directory of <frame>.bin files")
    r.add_argument("--detections", type=Path, help="detection text file")
    r.add_argument("--out", required=True, type=Path)
    r.add_argument("--backend", choices=sorted(BACKENDS), default="ndt")
    r.add_argument("--mode", choices=[m.value for m in Mode], default="rmd")
    r.add_argument("--voxel", type=float, default=0.3)
    r.add_argument("--range", type=float, nargs=6, metavar=("X0", "X1", "Y0", "Y1", "Z0", "Z1"),
                   default=[KITTI_RANGE.x_min, KITTI_RANGE.x_max, KITTI_RANGE.y_min, KITTI_RANGE.y_max,
                            KITTI_RANGE.z_min, KITTI_RANGE.z_max])
    r.add_argument("--min-score", type=float, default=0.5)
    r.add_argument("--thresh", type=float, default=0.5, help="motion threshold in meters")
    r.add_argument("--gate", type=float, default=2.0)
    r.add_argument("--max-loop", type=int, default=10)
    r.add_argument("--strict-loop", action="store_true",
                   help="loop only while both frames' static sets change")
    r.add_argument("--ndt-voxel", type=float, default=1.0)
    r.add_argument("--max-correspondence", type=float, default=1.0, help="ICP inlier gate in meters")
    r.add_argument("--true-poses", type=Path, help="use these pair poses instead of registering")
    r.add_argument("--ply", action="store_true", help="write a colored PLY per frame")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--constant-velocity", action="store_true",
                   help="start each registration from the previous pair's pose")

    e = sub.add_parser("eval", help="translational relative pose error")
    e.add_argument("est", type=Path)
    e.add_argument("gt", type=Path)
    e.add_argument("--csv", type=Path)
    e.add_argument("--est-absolute", action="store_true", help="est file holds absolute poses")
    e.add_argument("--gt-absolute", action="store_true", help="gt file holds absolute poses")

    s = sub.add_parser("synth", help="write a synthetic scene")
    s.add_argument("spec", type=Path)
    s.add_argument("out", type=Path)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "run":
            try:
                box = RangeBox.from_pairs(zip(args.range[::2], args.range[1::2]))
            except InvalidParameterError as exc:
                raise UsageError(f"--range: {exc}") from None
            rc = RunConfig(
                args.clouds, args.detections, args.out, args.backend, Mode(args.mode), args.voxel, box,
                args.min_score, args.thresh, args.gate, args.max_loop, args.strict_loop,
                args.ndt_voxel, args.max_correspondence, args.true_poses, args.ply, args.workers,
                args.constant_velocity,
            )
            return cmd_run(rc)
        if args.command == "eval":
            return cmd_eval(args.est, args.gt, args.csv, args.est_absolute, args.gt_absolute)
        return cmd_synth(args.spec, args.out)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (FormatError, InvalidInputError, InvalidParameterError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except (RegistrationError, DynRegError, np.linalg.LinAlgError) as exc:
        log.error("%s", exc)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
