"""Scoring: loop-detection precision/recall, PR curves, KITTI relative drift
and ATE, plus comma-separated reports and dependency-free SVG plots."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose, pose_error, rotation_angle_deg


@dataclass
class DetectionCriteria:
    tp_trans: float = 4.0     # meters
    tp_rot: float = 2.5       # degrees
    gtp_radius: float = 6.0   # meters


@dataclass
class TrajectoryMetrics:
    t_rel: float   # percent
    r_rel: float   # degrees / 100 m
    ate: float     # meters RMSE


def is_true_positive(rel_estimate: Pose, gt_query: Pose, gt_candidate: Pose,
                     criteria: DetectionCriteria) -> bool:
    """A detected loop counts iff its registered relative pose is within the
    translation/rotation thresholds of the ground-truth relative pose."""
    gt_rel = gt_candidate.inverse().compose(gt_query)
    t_err, r_err = pose_error(rel_estimate, gt_rel)
    return t_err <= criteria.tp_trans and r_err <= criteria.tp_rot


def count_gtp(gt_poses: list[Pose], criteria: DetectionCriteria,
              exclusion_gap: int = 0,
              query_indices=None) -> int:
    """Query keyframes with any admissible prior keyframe within gtp_radius."""
    positions = np.stack([p.translation for p in gt_poses])
    total = 0
    queries = range(len(gt_poses)) if query_indices is None else query_indices
    for q in queries:
        limit = q - exclusion_gap
        if limit <= 0:
            continue
        d = np.linalg.norm(positions[:limit] - positions[q], axis=1)
        if np.any(d <= criteria.gtp_radius):
            total += 1
    return total


def classify_loops(loops, gt_poses: list[Pose], criteria: DetectionCriteria,
                   exclusion_gap: int = 0) -> dict:
    """Counts {TP, FP, GTP} plus precision/recall/F1 for accepted loops.

    `loops` are objects with query_index, candidate_index and the registered
    sensor-frame relative pose `rel_pose`.
    """
    tp = fp = 0
    for loop in loops:
        if loop.rel_pose is not None and is_true_positive(
                loop.rel_pose, gt_poses[loop.query_index],
                gt_poses[loop.candidate_index], criteria):
            tp += 1
        else:
            fp += 1
    gtp = count_gtp(gt_poses, criteria, exclusion_gap)
    precision = tp / (tp + fp) if tp + fp > 0 else 1.0
    # Correct long-baseline constraints can outnumber the 6 m opportunities
    # at desk scale; recall is a proportion, so cap it.
    recall = min(tp / gtp, 1.0) if gtp > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) \
        if precision + recall > 0 else 0.0
    return {"TP": tp, "FP": fp, "GTP": gtp, "precision": precision,
            "recall": recall, "f1": f1}


def pr_curve(candidates, gtp: int, criteria: DetectionCriteria):
    """Sweep the decision threshold over all distinct scores (plus 0).

    Per threshold, the best-scoring candidate strictly above it is accepted
    for each query (select_best semantics), then classified against the
    stored registration errors.  Returns rows (y_th, P, R, F1); P = 1 when
    nothing is accepted.
    """
    scored = [c for c in candidates if c.y_loop is not None]
    thresholds = sorted({0.0} | {c.y_loop for c in scored})
    by_query: dict[int, list] = {}
    for c in scored:
        by_query.setdefault(c.query_index, []).append(c)
    rows = []
    for th in thresholds:
        tp = fp = 0
        for cands in by_query.values():
            best = None
            for c in cands:
                if c.y_loop > th and (best is None or c.y_loop > best.y_loop):
                    best = c
            if best is None:
                continue
            good = (best.t_err <= criteria.tp_trans
                    and best.r_err <= criteria.tp_rot)
            tp += int(good)
            fp += int(not good)
        p = tp / (tp + fp) if tp + fp > 0 else 1.0
        r = min(tp / gtp, 1.0) if gtp > 0 else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        rows.append((th, p, r, f1))
    return rows


def f1_optimal_threshold(rows) -> float:
    """Threshold with the highest F1 (ties -> lowest threshold)."""
    if not rows:
        raise ValueError("empty PR curve")
    best = max(rows, key=lambda row: (row[3], -row[0]))
    return best[0]


# --- trajectory metrics ------------------------------------------------------

def kitti_metric(estimate: list[Pose], ground_truth: list[Pose],
                 lengths=(100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0,
                          800.0)) -> tuple[float, float]:
    """Average relative error over fixed-length segments.

    For every start pose and segment length, compares the relative motion of
    estimate and ground truth over the segment.  Returns (t_rel percent,
    r_rel degrees per 100 m); raises ValueError when the trajectory is too
    short for the smallest segment.
    """
    if len(estimate) != len(ground_truth):
        raise ValueError("trajectories must have equal length")
    positions = np.stack([p.translation for p in ground_truth])
    seg = np.linalg.norm(np.diff(positions, axis=0), axis=1)
    dist = np.concatenate([[0.0], np.cumsum(seg)])
    t_errs, r_errs = [], []
    for first in range(len(ground_truth)):
        targets = dist[first] + np.asarray(lengths)
        last = np.searchsorted(dist, targets, side="right")
        for li in last[last < len(dist)]:
            actual = dist[li] - dist[first]
            if actual <= 0:
                continue
            delta_gt = ground_truth[first].inverse().compose(ground_truth[li])
            delta_est = estimate[first].inverse().compose(estimate[li])
            err = delta_est.inverse().compose(delta_gt)
            t_errs.append(np.linalg.norm(err.translation) / actual)
            r_errs.append(rotation_angle_deg(err.rotation) / actual)
    if not t_errs:
        raise ValueError(
            "trajectory shorter than the smallest segment length")
    return float(np.mean(t_errs) * 100.0), float(np.mean(r_errs) * 100.0)


def rigid_align(source: np.ndarray, target: np.ndarray):
    """Closed-form SE(3) (no scale) minimizing ||R s + t - target||^2."""
    ms = source.mean(axis=0)
    mt = target.mean(axis=0)
    h = (source - ms).T @ (target - mt)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    trans = mt - rot @ ms
    return rot, trans


def ate(estimate: list[Pose], ground_truth: list[Pose]) -> float:
    """Position RMSE after rigid SE(3) alignment of the estimate."""
    if len(estimate) != len(ground_truth):
        raise ValueError("trajectories must have equal length")
    if len(estimate) < 3:
        raise ValueError("need at least 3 pose pairs")
    est = np.stack([p.translation for p in estimate])
    gt = np.stack([p.translation for p in ground_truth])
    rot, trans = rigid_align(est, gt)
    aligned = est @ rot.T + trans
    return float(np.sqrt(np.mean(np.sum((aligned - gt) ** 2, axis=1))))


def associate_by_time(times_a, poses_a, times_b, poses_b, tol: float = 1e-6):
    """Pairs of poses whose timestamps match within `tol`."""
    ia = {round(t / tol): i for i, t in enumerate(times_a)}
    out_a, out_b = [], []
    for j, t in enumerate(times_b):
        i = ia.get(round(t / tol))
        if i is not None:
            out_a.append(poses_a[i])
            out_b.append(poses_b[j])
    return out_a, out_b


# --- reports and plots -------------------------------------------------------

def save_pr_curve(path, rows) -> None:
    with open(path, "w") as f:
        f.write("y_th,P,R,F1\n")
        for th, p, r, f1 in rows:
            f.write(f"{th:.9g},{p:.9g},{r:.9g},{f1:.9g}\n")


def save_metrics(path, table: dict) -> None:
    """Flat comma-separated key,value report."""
    with open(path, "w") as f:
        f.write("metric,value\n")
        for key, value in table.items():
            f.write(f"{key},{value:.9g}\n")


def _svg_polyline(points, color: str, width: float = 1.5) -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    return (f'<polyline fill="none" stroke="{color}" '
            f'stroke-width="{width}" points="{pts}"/>')


def save_svg_plot(path, series, *, title: str = "", xlabel: str = "",
                  ylabel: str = "", size: int = 480,
                  equal_axes: bool = False) -> None:
    """Polyline plot of [(name, (N,2) array), ...] with no external tooling."""
    margin = 50
    inner = size - 2 * margin
    allpts = np.vstack([np.asarray(data, dtype=float)
                        for _, data in series if len(data)])
    lo = allpts.min(axis=0)
    hi = allpts.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    if equal_axes:
        span = np.array([span.max(), span.max()])
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]

    def to_px(data):
        rel = (np.asarray(data) - lo) / span
        return np.stack([margin + rel[:, 0] * inner,
                         size - margin - rel[:, 1] * inner], axis=1)

    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
             f'height="{size}" viewBox="0 0 {size} {size}">',
             f'<rect x="{margin}" y="{margin}" width="{inner}" '
             f'height="{inner}" fill="none" stroke="#888"/>',
             f'<text x="{size / 2:.0f}" y="20" text-anchor="middle" '
             f'font-size="14">{title}</text>',
             f'<text x="{size / 2:.0f}" y="{size - 10}" '
             f'text-anchor="middle" font-size="12">{xlabel}</text>',
             f'<text x="15" y="{size / 2:.0f}" font-size="12" '
             f'transform="rotate(-90 15 {size / 2:.0f})" '
             f'text-anchor="middle">{ylabel}</text>']
    for idx, (name, data) in enumerate(series):
        if not len(data):
            continue
        color = colors[idx % len(colors)]
        lines.append(_svg_polyline(to_px(data), color))
        lines.append(f'<text x="{margin + 6}" y="{margin + 16 + 14 * idx}" '
                     f'font-size="12" fill="{color}">{name}</text>')
    lines.append(f'<text x="{margin}" y="{size - margin + 14}" '
                 f'font-size="10">{lo[0]:.3g}</text>')
    lines.append(f'<text x="{size - margin}" y="{size - margin + 14}" '
                 f'font-size="10" text-anchor="end">{lo[0] + span[0]:.3g}'
                 '</text>')
    lines.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
