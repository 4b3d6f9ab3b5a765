"""Command-line interface.

::

    snowlo synth    --out DIR [--frames N] [--snow-fraction F]
    snowlo odometry FRAMES --out DIR [--gt POSES] [--no-psm] [--no-mask] [--no-predictor]
    snowlo ablate   FRAMES --gt POSES --out DIR
    snowlo denoise  FRAMES --method {ror,sor,dror,dsor,mask} --out DIR
    snowlo eval     --gt POSES --est POSES --out DIR

Every subcommand takes ``--config`` (key = value file, see
:mod:`snowlo.config`) and ``--seed``. Exit status is 0 on success, 2 for
malformed input or configuration and 3 when the pipeline fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import baselines, kitti, plotting
from .cloud import PointCloud
from .config import pipeline_config, read_kv, synth_config
from .errors import EmptyBreakdown, MalformedFile, SnowLOError
from .pipeline import run_ablation, run_odometry, write_ablation_csv
from .pose import pose_error
from .synth import SceneConfig, make_sequence, street_scene
from .trajectory import LENGTHS, kitti_metrics, write_drift_csv

log = logging.getLogger("snowlo")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_PIPELINE = 3


class InputError(Exception):
    """Bad paths or arguments detected by the CLI itself."""


def _lengths(text: Optional[str]):
    if not text:
        return LENGTHS
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise InputError(f"--lengths: expected comma-separated numbers, got {text!r}") from None


def _config_values(args) -> dict:
    values = read_kv(args.config) if args.config else {}
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if getattr(args, "snow_ratio", None) is not None:
        values["snow_ratio"] = str(args.snow_ratio)
    return values


def _pipeline_config(args):
    cfg = pipeline_config(_config_values(args))
    if getattr(args, "no_psm", False):
        cfg.use_psm = False
    if getattr(args, "no_mask", False):
        cfg.use_mask = False
    if getattr(args, "no_predictor", False):
        cfg.predictor = "uniform"
    return cfg


def _frame_paths(path) -> list:
    path = Path(path)
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise InputError(f"{path}: no such file or directory")
    frames = kitti.list_frames(path)
    if not frames:
        raise InputError(f"{path}: no .bin scans found")
    return frames


def _label_path(frame: Path) -> Optional[Path]:
    cand = frame.parent.parent / "labels" / frame.name
    return cand if frame.parent.name == "velodyne" and cand.is_file() else None


def _load(frame: Path, with_labels: bool = False):
    labels = None
    if with_labels:
        lp = _label_path(frame)
        if lp is not None:
            labels = kitti.read_labels(lp)
    cloud = kitti.read_cloud_bin(frame, None)
    if labels is not None:
        if len(labels) != len(cloud):
            raise MalformedFile(f"{lp}: {len(labels)} labels for {len(cloud)} points")
        cloud = PointCloud(cloud.positions, cloud.intensities, None, labels)
    return cloud


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ----------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    values = read_kv(args.config) if args.config else {}
    cfg = synth_config(values)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.frames is not None:
        cfg.frames = args.frames
    if args.snow_fraction is not None:
        cfg.snow_fraction = args.snow_fraction
    length = cfg.step * cfg.frames + 40
    scene = SceneConfig(street_scene(length, seed=cfg.seed), rings=cfg.rings,
                        azimuth_steps=cfg.azimuth_steps, max_range=60.0, fov_up_deg=10.0,
                        intensity_range=(cfg.scene_intensity_min, cfg.scene_intensity_max),
                        seed=cfg.seed)
    snow_kw = dict(near_share=cfg.near_share, near_extent=cfg.near_extent,
                   far_range=(cfg.far_range_min, cfg.far_range_max),
                   near_band=(0.0, cfg.snow_band_max), far_band=(0.0, cfg.snow_band_max))
    seq = make_sequence(cfg.frames, cfg.step, cfg.snow_fraction, seed=cfg.seed, scene=scene,
                        noise_sigma=cfg.noise_sigma, snow_kw=snow_kw)
    out = _out_dir(args)
    (out / "velodyne").mkdir(exist_ok=True)
    (out / "labels").mkdir(exist_ok=True)
    for k, frame in enumerate(seq.frames):
        kitti.write_cloud_bin(out / "velodyne" / f"{k:06d}.bin", frame)
        kitti.write_labels(out / "labels" / f"{k:06d}.bin", frame.labels)
    kitti.write_pose_file(out / "poses.txt", seq.poses)
    n_snow = sum(int(np.count_nonzero(f.labels)) for f in seq.frames)
    n_all = sum(len(f) for f in seq.frames)
    print(f"wrote {len(seq.frames)} frames to {out} ({n_snow / n_all:.1%} snow points)")
    return EXIT_OK


def _write_eval(out: Path, gt, est, lengths, prefix: str = "") -> Optional[object]:
    plotting.plot_trajectory(out / f"{prefix}trajectory.png", est, gt)
    rel = [pose_error(a, b) for a, b in zip(est.relative(), gt.relative())]
    with open(out / f"{prefix}pair_errors.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pair", "t_err_m", "r_err_deg"])
        for k, (t, r) in enumerate(rel, 1):
            w.writerow([k, f"{t:.6f}", f"{np.degrees(r):.6f}"])
    plotting.plot_pair_errors(out / f"{prefix}pair_errors.png",
                              [t for t, _ in rel], [np.degrees(r) for _, r in rel])
    try:
        metrics = kitti_metrics(gt, est, lengths)
    except EmptyBreakdown as exc:
        log.warning("no drift metrics: %s", exc)
        return None
    write_drift_csv(out / f"{prefix}drift.csv", metrics)
    plotting.plot_drift(out / f"{prefix}drift.png", {"estimate": metrics})
    print(f"t_rel {metrics.t_rel:.3f} %  r_rel {metrics.r_rel:.3f} deg/100m "
          f"({metrics.n_segments} segments)")
    return metrics


def cmd_odometry(args) -> int:
    cfg = _pipeline_config(args)
    frames = _frame_paths(args.frames)
    if len(frames) < 2:
        raise InputError("odometry needs at least two frames")
    gt = kitti.read_pose_file(args.gt) if args.gt else None
    if gt is not None and len(gt) != len(frames):
        raise InputError(f"{args.gt}: {len(gt)} poses for {len(frames)} frames")
    traj, diag = run_odometry([lambda f=f: _load(f) for f in frames], cfg)
    out = _out_dir(args)
    kitti.write_pose_file(out / "poses.txt", traj)
    with open(out / "diagnostics.jsonl", "w") as fh:
        for rec in diag:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    if gt is not None:
        _write_eval(out, gt, traj, _lengths(args.lengths))
    failed = [d["pair"] for d in diag if not d["ok"]]
    if failed:
        print(f"{len(failed)} of {len(diag)} pairs failed: {failed}", file=sys.stderr)
        return EXIT_PIPELINE
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _pipeline_config(args)
    frames = _frame_paths(args.frames)
    gt = kitti.read_pose_file(args.gt)
    if len(gt) != len(frames):
        raise InputError(f"{args.gt}: {len(gt)} poses for {len(frames)} frames")
    clouds = [_load(f) for f in frames]
    try:
        rows = run_ablation(clouds, gt, cfg, lengths=_lengths(args.lengths))
    except EmptyBreakdown as exc:
        raise InputError(f"sequence too short for drift metrics: {exc}") from exc
    out = _out_dir(args)
    write_ablation_csv(out / "ablation.csv", rows)
    plotting.plot_ablation(out / "ablation.png", [r.name for r in rows],
                           [r.metrics.t_rel for r in rows], [r.metrics.r_rel for r in rows])
    plotting.plot_drift(out / "ablation_drift.png", {r.name: r.metrics for r in rows})
    for r in rows:
        print(f"{r.name:<20} t_rel {r.metrics.t_rel:8.3f} %  r_rel {r.metrics.r_rel:8.3f}"
              f"  failed {r.n_failed}")
    return EXIT_OK


def cmd_denoise(args) -> int:
    frames = _frame_paths(args.frames)
    method = args.method
    if method == "ror":
        kw = dict(radius=args.radius, min_neighbors=args.min_neighbors)
    elif method == "sor":
        kw = dict(k=args.k, std_mult=args.std_mult)
    elif method == "dror":
        kw = dict(alpha=args.alpha, min_neighbors=args.min_neighbors, r_min=args.r_min)
    elif method == "dsor":
        kw = dict(k=args.k, std_mult=args.std_mult, range_mult=args.range_mult)
    else:
        ratio = args.snow_ratio if args.snow_ratio is not None else pipeline_config(
            _config_values(args)).snow_ratio
        kw = dict(ratio=ratio)
    out = _out_dir(args)
    (out / "velodyne").mkdir(exist_ok=True)
    rows = []
    for frame in frames:
        cloud = _load(frame, with_labels=True)
        rep = baselines.FILTERS[method](cloud, **kw)
        kitti.write_cloud_bin(out / "velodyne" / frame.name, cloud.select(rep.kept_indices))
        rows.append((frame.name, rep))
    with open(out / "denoise.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "kept", "removed", "runtime_ms", "precision", "recall"])
        for name, rep in rows:
            d = rep.as_dict()
            w.writerow([name, d["kept"], d["removed"], d["runtime_ms"],
                        "" if d["precision"] is None else f"{d['precision']:.6f}",
                        "" if d["recall"] is None else f"{d['recall']:.6f}"])
    scored = [r for _, r in rows if r.precision is not None and r.recall is not None]
    if scored:
        prec = float(np.mean([r.precision for r in scored]))
        rec = float(np.mean([r.recall for r in scored]))
        plotting.plot_filter_scores(out / "denoise.png",
                                    {method: {"precision": prec, "recall": rec}})
        print(f"{method}: mean precision {prec:.3f} recall {rec:.3f} over {len(scored)} frames")
    else:
        print(f"{method}: filtered {len(rows)} frames")
    return EXIT_OK


def cmd_eval(args) -> int:
    gt = kitti.read_pose_file(args.gt)
    est = kitti.read_pose_file(args.est)
    if len(gt) != len(est):
        raise InputError(f"pose files differ in length ({len(gt)} vs {len(est)})")
    out = _out_dir(args)
    if _write_eval(out, gt, est, _lengths(args.lengths)) is None:
        raise InputError("trajectory too short for any segment length")
    return EXIT_OK


# ----------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    toggles = argparse.ArgumentParser(add_help=False)
    toggles.add_argument("--snow-ratio", type=float,
                         help="mask threshold as a fraction of the frame's max intensity")
    toggles.add_argument("--no-psm", action="store_true", help="disable the spatial score")
    toggles.add_argument("--no-mask", action="store_true", help="disable the intensity mask")
    toggles.add_argument("--no-predictor", action="store_true",
                         help="use uniform point weights instead of the predictor")
    toggles.add_argument("--lengths", help="segment lengths for drift metrics, e.g. 25,50,100")

    p = argparse.ArgumentParser(prog="snowlo", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic snowy sequence")
    s.add_argument("--frames", type=int)
    s.add_argument("--snow-fraction", type=float, help="share of snow points per frame")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("odometry", parents=[common, toggles], help="estimate a trajectory")
    s.add_argument("frames", help="directory of .bin scans (or its parent holding velodyne/)")
    s.add_argument("--gt", help="ground-truth pose file for evaluation")
    s.set_defaults(func=cmd_odometry)

    s = sub.add_parser("ablate", parents=[common, toggles], help="drift per module toggle set")
    s.add_argument("frames")
    s.add_argument("--gt", required=True)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("denoise", parents=[common], help="run a baseline snow filter")
    s.add_argument("frames")
    s.add_argument("--method", required=True, choices=sorted(baselines.FILTERS))
    s.add_argument("--radius", type=float, default=0.5)
    s.add_argument("--min-neighbors", type=int, default=3)
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--std-mult", type=float, default=1.0)
    s.add_argument("--alpha", type=float, default=0.02)
    s.add_argument("--r-min", type=float, default=0.1)
    s.add_argument("--range-mult", type=float, default=0.05)
    s.add_argument("--snow-ratio", type=float)
    s.set_defaults(func=cmd_denoise)

    s = sub.add_parser("eval", parents=[common], help="drift metrics of a pose file")
    s.add_argument("--gt", required=True)
    s.add_argument("--est", required=True)
    s.add_argument("--lengths")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, MalformedFile, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SnowLOError as exc:
        print(f"pipeline failure: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
