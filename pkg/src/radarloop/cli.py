"""Command line entry points: simulate, slam, train, eval, export-plots."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np
import yaml

from .config import PipelineConfig
from .evaluation import (DetectionCriteria, pr_curve, save_metrics,
                         save_pr_curve, save_svg_plot)
from .geometry import load_tum, save_tum
from .pipeline import (evaluate_run, label_candidates, load_candidate_log,
                       run_slam, train_classifier, write_artifacts)
from .presets import build_preset, radar_profile
from .simulator import load_scans, save_scans, simulate_sequence
from .verification import LoopClassifier, save_corpus


def _load_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        cfg = PipelineConfig.load(args.config)
    else:
        cfg = PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def cmd_simulate(args) -> int:
    scene, waypoints, settings = build_preset(args.preset, seed=args.seed or 0)
    radar = radar_profile(args.profile)
    scans, poses, times = simulate_sequence(
        scene, waypoints, radar,
        speed=args.speed or settings["speed"],
        scan_rate=args.rate or settings["scan_rate"],
        imu_drift=args.imu_drift, imu_noise=args.imu_noise,
        seed=args.seed or 0)
    os.makedirs(args.out, exist_ok=True)
    save_scans(os.path.join(args.out, "scans.txt"), scans, radar)
    save_tum(os.path.join(args.out, "gt.tum"), times, poses)
    with open(os.path.join(args.out, "scene.yaml"), "w") as f:
        yaml.safe_dump(scene.to_dict(), f, sort_keys=False)
    cfg = _load_config(args)
    cfg.w = settings["w"]
    cfg.save(os.path.join(args.out, "config.yaml"))
    print(f"wrote {len(scans)} scans to {args.out} "
          f"({sum(len(s) for s in scans)} points)")
    return 0


def cmd_slam(args) -> int:
    cfg = _load_config(args)
    scans, _ = load_scans(args.scans)
    classifier = LoopClassifier.load(args.model) if args.model else None
    if not args.no_loops and classifier is None:
        print("note: no --model given; candidates are retrieved and "
              "registered but no loop is accepted", file=sys.stderr)
    result = run_slam(scans, cfg, classifier=classifier,
                      enable_loops=not args.no_loops,
                      single_thread=args.single_thread)
    write_artifacts(result, args.out, cfg)
    n_queries = max(result.timings.get("loop_queries", 0), 1)
    per_kf = (result.timings["retrieval"] + result.timings["registration"]
              + result.timings["verification"]) / n_queries * 1e3
    print(f"{len(result.keyframes)} keyframes, {len(result.loops)} accepted "
          f"loops, {per_kf:.1f} ms/keyframe loop-closure cost")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    scans, _ = load_scans(args.scans)
    gt_times, gt_poses = load_tum(args.gt)
    clf, result = train_classifier(scans, gt_times, gt_poses, cfg,
                                   single_thread=args.single_thread)
    os.makedirs(args.out, exist_ok=True)
    model_path = os.path.join(args.out, "model.txt")
    clf.save(model_path)
    save_corpus(os.path.join(args.out, "corpus.txt"), result.candidates)
    labels = np.array([c.label for c in result.candidates])
    scored = [c for c in result.candidates if c.reg_ok]
    criteria = DetectionCriteria(cfg.label_trans, cfg.label_rot,
                                 cfg.gtp_radius)
    from .evaluation import count_gtp
    from .pipeline import keyframe_ground_truth
    kf_gt = keyframe_ground_truth(result, gt_times, gt_poses)
    gtp = count_gtp([p for p in kf_gt if p is not None], criteria,
                    cfg.exclusion_gap)
    rows = pr_curve(scored, gtp, criteria)
    best = max(rows, key=lambda r: r[3])
    print(f"trained on {len(labels)} candidates "
          f"({int(labels.sum())} positive); "
          f"y_th = {clf.y_th:.4f}, training F1 = {best[3]:.3f}")
    print(f"model written to {model_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    gt_times, gt_poses = load_tum(args.gt)
    scans, _ = load_scans(args.scans)
    classifier = LoopClassifier.load(args.model) if args.model else None
    result = run_slam(scans, cfg, classifier=classifier,
                      enable_loops=not args.no_loops,
                      single_thread=args.single_thread)
    label_candidates(result, gt_times, gt_poses, cfg)
    metrics = evaluate_run(result, gt_times, gt_poses, cfg)
    os.makedirs(args.out, exist_ok=True)
    write_artifacts(result, args.out, cfg)
    save_metrics(os.path.join(args.out, "metrics.csv"), metrics)
    criteria = DetectionCriteria(cfg.label_trans, cfg.label_rot,
                                 cfg.gtp_radius)
    rows = pr_curve([c for c in result.candidates if c.reg_ok],
                    metrics["GTP"], criteria)
    save_pr_curve(os.path.join(args.out, "pr_curve.csv"), rows)
    _plots(args.out, rows, gt_times, gt_poses)
    for key, value in metrics.items():
        print(f"{key}: {value:.6g}" if isinstance(value, float)
              else f"{key}: {value}")
    return 0


def _plots(out_dir, pr_rows, gt_times=None, gt_poses=None) -> None:
    if pr_rows:
        curve = np.array([[r[2], r[1]] for r in pr_rows])
        order = np.argsort(curve[:, 0])
        save_svg_plot(os.path.join(out_dir, "pr_curve.svg"),
                      [("PR", curve[order])], title="Precision-Recall",
                      xlabel="recall", ylabel="precision")
    series = []
    for name, fname in (("odometry", "odometry.tum"),
                        ("optimized", "optimized.tum")):
        path = os.path.join(out_dir, fname)
        if os.path.exists(path):
            _, poses = load_tum(path)
            series.append((name, np.stack([p.translation[:2] for p in poses])))
    if gt_poses is not None:
        series.append(("ground truth",
                       np.stack([p.translation[:2] for p in gt_poses])))
    if series:
        save_svg_plot(os.path.join(out_dir, "trajectory.svg"), series,
                      title="Trajectory (top view)", xlabel="x [m]",
                      ylabel="y [m]", equal_axes=True)


def cmd_export_plots(args) -> int:
    rows = []
    pr_path = os.path.join(args.run, "pr_curve.csv")
    if os.path.exists(pr_path):
        with open(pr_path) as f:
            f.readline()
            for line in f:
                rows.append(tuple(float(v) for v in line.strip().split(",")))
    gt_times = gt_poses = None
    if args.gt:
        gt_times, gt_poses = load_tum(args.gt)
    out = args.out or args.run
    os.makedirs(out, exist_ok=True)
    for fname in ("odometry.tum", "optimized.tum"):
        src = os.path.join(args.run, fname)
        dst = os.path.join(out, fname)
        if os.path.exists(src) and src != dst:
            with open(src) as fi, open(dst, "w") as fo:
                fo.write(fi.read())
    _plots(out, rows, gt_times, gt_poses)
    print(f"plots written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radarloop",
        description="4D radar SLAM loop-closure pipeline with a built-in "
                    "synthetic radar-world simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a synthetic scan sequence")
    p.add_argument("--preset", required=True,
                   help="corridor_with_side_tunnels | campus_loop | "
                        "forest_loop")
    p.add_argument("--profile", default="short",
                   help="radar profile: short | long | noiseless")
    p.add_argument("--speed", type=float, default=None)
    p.add_argument("--rate", type=float, default=None, help="scan rate, Hz")
    p.add_argument("--imu-drift", type=float, default=0.5,
                   help="yaw drift, degrees/minute")
    p.add_argument("--imu-noise", type=float, default=0.1,
                   help="yaw white noise, degrees")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("slam", help="run the full pipeline on a scan file")
    p.add_argument("--scans", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--model", default=None,
                   help="verifier model file (from `train`)")
    p.add_argument("--no-loops", action="store_true")
    p.add_argument("--single-thread", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_slam)

    p = sub.add_parser("train", help="train the loop verifier on a labeled "
                                     "run")
    p.add_argument("--scans", required=True)
    p.add_argument("--gt", required=True, help="TUM ground-truth trajectory")
    p.add_argument("--config", default=None)
    p.add_argument("--single-thread", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run + score against ground truth")
    p.add_argument("--scans", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--no-loops", action="store_true")
    p.add_argument("--single-thread", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-plots", help="re-render SVG plots from a run "
                                            "directory")
    p.add_argument("--run", required=True)
    p.add_argument("--gt", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_export_plots)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
