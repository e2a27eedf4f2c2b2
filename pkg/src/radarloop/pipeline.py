"""Full pipeline orchestration: odometry -> submapping -> descriptors ->
retrieval -> registration -> verification -> pose graph, plus the training
and evaluation entry points used by the CLI."""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .descriptor import double_flip, encode
from .evaluation import (DetectionCriteria, associate_by_time, classify_loops,
                         count_gtp, f1_optimal_threshold, pr_curve)
from .geometry import Pose, ViewpointMode, load_tum, quat_to_rotation, save_tum
from .odometry import OdometryState, estimate_ego_velocity, integrate, \
    keyframe_due
from .pose_graph import PoseGraph
from .registration import (AlignmentQuality, DistributionMap,
                           build_distributions, initial_guess,
                           loop_relative_pose, register)
from .retrieval import DistanceMatrices, LoopCandidate
from .submap import Keyframe, VoxelGrid
from .verification import (LoopClassifier, feature_vector, label_candidate,
                           select_best)


@dataclass
class SlamResult:
    keyframes: list[Keyframe]
    scan_times: np.ndarray
    odometry_poses: list[Pose]           # one per scan
    graph: PoseGraph
    matrices: DistanceMatrices
    candidates: list[LoopCandidate]      # every scored candidate
    loops: list[LoopCandidate]           # accepted loop closures
    timings: dict = field(default_factory=dict)

    def keyframe_odometry(self) -> list[Pose]:
        return [kf.pose for kf in self.keyframes]

    def optimized_poses(self) -> list[Pose]:
        return list(self.graph.nodes)

    def keyframe_times(self) -> np.ndarray:
        return np.array([kf.timestamp for kf in self.keyframes])


def run_slam(scans, config: PipelineConfig,
             classifier: LoopClassifier | None = None,
             enable_loops: bool = True,
             single_thread: bool = False) -> SlamResult:
    """Process a scan sequence into trajectories and loop closures.

    Without a classifier, candidates are retrieved and registered but never
    accepted (that is the training mode); with one, the best candidate above
    its threshold becomes a loop edge and the graph is re-optimized
    periodically.  Deterministic for a fixed config.
    """
    desc_cfg = config.descriptor_config()
    grid = VoxelGrid(config.nu, config.r_a, config.voxel_capacity)
    matrices = DistanceMatrices(config.retrieval_config(),
                                config.similarity_params())
    graph = PoseGraph(config.graph, exclusion_gap=config.exclusion_gap)

    state = OdometryState()
    velocity = np.zeros(3)
    keyframes: list[Keyframe] = []
    odometry_poses: list[Pose] = []
    scan_times: list[float] = []
    candidates: list[LoopCandidate] = []
    loops: list[LoopCandidate] = []
    dmaps: dict[int, DistributionMap] = {}
    timings = {"retrieval": 0.0, "registration": 0.0, "verification": 0.0,
               "optimization": 0.0, "loop_queries": 0}
    prev_time = None
    pending_optimize = False

    def candidate_map(idx: int) -> DistributionMap:
        if idx not in dmaps:
            dmaps[idx] = build_distributions(
                keyframes[idx].submap[:, :3], config.registration.cell_size,
                config.registration.min_points, config.registration.cov_floor)
        return dmaps[idx]

    for i, scan in enumerate(scans):
        est = None
        if len(scan) >= 3:
            est = estimate_ego_velocity(scan, config.ransac,
                                        seed=config.seed * 1_000_003 + i)
        if est is not None:
            velocity, static_mask = est
        if i == 0:
            state = OdometryState(
                pose=Pose(quat_to_rotation(scan.imu_quat), np.zeros(3)))
        else:
            dt = scan.timestamp - prev_time
            state = integrate(state, velocity, scan.imu_quat, dt)
        prev_time = scan.timestamp
        odometry_poses.append(state.pose.copy())
        scan_times.append(scan.timestamp)
        if est is not None:
            grid.insert_points(scan.positions[static_mask],
                               scan.intensities[static_mask], state.pose)

        if not keyframe_due(state, config.s):
            continue
        state.mark_keyframe()
        kf = Keyframe(index=len(keyframes), pose=state.pose.copy(),
                      submap=grid.snapshot(state.pose),
                      traveled=state.traveled, timestamp=scan.timestamp)
        kf.desc_sv = encode(kf.submap, kf.pose.yaw_deg(), desc_cfg)
        kf.desc_ov = double_flip(kf.desc_sv)

        if kf.index == 0:
            graph.set_root(kf.pose)
        else:
            rel = keyframes[-1].pose.inverse().compose(kf.pose)
            graph.add_odometry_edge(kf.index - 1, rel)

        matrices.append_keyframe(
            kf, keyframes,
            pose_override=(list(graph.nodes) if config.recompute_d_odom
                           else None))
        keyframes.append(kf)

        if enable_loops and matrices.admissible(kf.index) > 0:
            t0 = time.perf_counter()
            cands = matrices.retrieve_candidates(kf.index)
            timings["retrieval"] += time.perf_counter() - t0
            timings["loop_queries"] += 1

            t0 = time.perf_counter()
            query_cells = len(candidate_map(kf.index))

            def register_one(cand: LoopCandidate) -> None:
                ckf = keyframes[cand.candidate_index]
                result = register(kf.submap,
                                  candidate_map(cand.candidate_index),
                                  initial_guess(kf, ckf, cand.mode),
                                  config.registration)
                if result is None:
                    c_a = 0.5 * (query_cells
                                 + len(candidate_map(cand.candidate_index)))
                    cand.quality = AlignmentQuality(
                        config.registration.cf_cap, c_a, 0)
                    cand.reg_ok = False
                else:
                    cand.rel_pose = loop_relative_pose(result.pose, kf, ckf)
                    cand.quality = result.quality
                    cand.reg_ok = True

            if single_thread or len(cands) <= 1:
                for cand in cands:
                    register_one(cand)
            else:
                with ThreadPoolExecutor(max_workers=len(cands)) as pool:
                    list(pool.map(register_one, cands))
            timings["registration"] += time.perf_counter() - t0

            if classifier is not None:
                t0 = time.perf_counter()
                for cand in cands:
                    if cand.reg_ok:
                        cand.y_loop = classifier.score(feature_vector(cand))
                best = select_best(cands, classifier.y_th)
                if best is not None:
                    best.accepted = True
                    graph.add_loop_edge(best.query_index,
                                        best.candidate_index,
                                        best.rel_pose, best.y_loop)
                    loops.append(best)
                    pending_optimize = True
                timings["verification"] += time.perf_counter() - t0
            candidates.extend(cands)

        if (config.optimize_every and pending_optimize
                and (kf.index + 1) % config.optimize_every == 0):
            t0 = time.perf_counter()
            graph.optimize()
            timings["optimization"] += time.perf_counter() - t0
            pending_optimize = False

    if graph.loop_edges():
        t0 = time.perf_counter()
        graph.optimize()
        timings["optimization"] += time.perf_counter() - t0

    return SlamResult(keyframes, np.asarray(scan_times), odometry_poses,
                      graph, matrices, candidates, loops, timings)


def label_candidates(result: SlamResult, gt_times, gt_poses,
                     config: PipelineConfig) -> list[Pose]:
    """Attach ground-truth labels/errors to every candidate in place.

    Returns the ground-truth pose of each keyframe (associated by scan
    timestamp); candidates whose keyframes lack ground truth are dropped.
    """
    kf_gt = keyframe_ground_truth(result, gt_times, gt_poses)
    kept = []
    for cand in result.candidates:
        gt_q = kf_gt[cand.query_index]
        gt_c = kf_gt[cand.candidate_index]
        if gt_q is None or gt_c is None:
            continue
        gt_rel = gt_c.inverse().compose(gt_q)
        cand.label, cand.t_err, cand.r_err = label_candidate(
            cand.rel_pose if cand.reg_ok else None, gt_rel,
            config.label_trans, config.label_rot)
        kept.append(cand)
    result.candidates = kept
    return kf_gt


def keyframe_ground_truth(result: SlamResult, gt_times, gt_poses,
                          tol: float = 1e-6):
    gt_by_time = {round(t / tol): p for t, p in zip(gt_times, gt_poses)}
    return [gt_by_time.get(round(kf.timestamp / tol))
            for kf in result.keyframes]


def train_classifier(scans, gt_times, gt_poses, config: PipelineConfig,
                     single_thread: bool = False):
    """Run the pipeline through registration, label candidates against
    ground truth, fit the verifier and pick the F1-optimal threshold.

    Returns (classifier, result); the labeled candidates stay on the result.
    """
    result = run_slam(scans, config, classifier=None, enable_loops=True,
                      single_thread=single_thread)
    kf_gt = label_candidates(result, gt_times, gt_poses, config)
    if not result.candidates:
        raise ValueError("no loop candidates were retrieved; the sequence "
                         "has no admissible keyframe pairs")
    feats = np.stack([feature_vector(c) for c in result.candidates])
    labels = np.array([c.label for c in result.candidates], dtype=float)
    clf = LoopClassifier().fit(feats, labels)

    # Threshold from the training run: inference never scores failed
    # registrations, so sweep only over the registered ones.
    scored = [c for c in result.candidates if c.reg_ok]
    for cand in scored:
        cand.y_loop = clf.score(feature_vector(cand))
    criteria = DetectionCriteria(config.label_trans, config.label_rot,
                                 config.gtp_radius)
    gtp = count_gtp([p for p in kf_gt if p is not None], criteria,
                    config.exclusion_gap)
    rows = pr_curve(scored, gtp, criteria)
    clf.y_th = f1_optimal_threshold(rows)
    return clf, result


def evaluate_run(result: SlamResult, gt_times, gt_poses,
                 config: PipelineConfig, kitti_lengths=None) -> dict:
    """Detection counts plus trajectory metrics for odometry and optimized
    trajectories, evaluated at the keyframes."""
    from .evaluation import ate, kitti_metric

    criteria = DetectionCriteria(config.label_trans, config.label_rot,
                                 config.gtp_radius)
    kf_gt = keyframe_ground_truth(result, gt_times, gt_poses)
    have = [i for i, p in enumerate(kf_gt) if p is not None]
    gt_list = [kf_gt[i] for i in have]
    odo_list = [result.keyframes[i].pose for i in have]
    opt_list = [result.graph.nodes[i] for i in have]

    counts = classify_loops(result.loops, kf_gt, criteria,
                            config.exclusion_gap)
    metrics = dict(counts)
    lengths = kitti_lengths if kitti_lengths is not None \
        else config.kitti_lengths
    try:
        metrics["t_rel_odom"], metrics["r_rel_odom"] = \
            kitti_metric(odo_list, gt_list, lengths)
        metrics["t_rel_opt"], metrics["r_rel_opt"] = \
            kitti_metric(opt_list, gt_list, lengths)
    except ValueError:
        pass  # trajectory shorter than the smallest segment
    metrics["ate_odom"] = ate(odo_list, gt_list)
    metrics["ate_opt"] = ate(opt_list, gt_list)
    return metrics


# --- artifacts ----------------------------------------------------------------

def write_artifacts(result: SlamResult, out_dir, config: PipelineConfig) -> None:
    os.makedirs(out_dir, exist_ok=True)
    save_tum(os.path.join(out_dir, "odometry.tum"), result.scan_times,
             result.odometry_poses)
    save_tum(os.path.join(out_dir, "optimized.tum"), result.keyframe_times(),
             result.optimized_poses())
    result.matrices.export(out_dir)
    result.graph.save_g2o(os.path.join(out_dir, "graph.g2o"))
    config.save(os.path.join(out_dir, "config.yaml"))
    save_candidate_log(os.path.join(out_dir, "candidates.csv"),
                       result.candidates)
    save_loop_list(os.path.join(out_dir, "loops.csv"), result.loops)


_CAND_HEADER = ("q,c,mode,d_filtered,d_joint,d_cc,d_odom,C_f,C_a,C_o,"
                "reg_ok,y,accepted,label,terr,rerr")


def save_candidate_log(path, candidates) -> None:
    with open(path, "w") as f:
        f.write(_CAND_HEADER + "\n")
        for c in candidates:
            q = c.quality
            y = "nan" if c.y_loop is None else f"{c.y_loop:.9g}"
            label = "" if c.label is None else str(c.label)
            f.write(f"{c.query_index},{c.candidate_index},{c.mode.value},"
                    f"{c.d_filtered:.9g},{c.d_joint:.9g},{c.d_cc:.9g},"
                    f"{c.d_odom:.9g},{q.c_f:.9g},{q.c_a:.9g},{q.c_o},"
                    f"{int(c.reg_ok)},{y},{int(c.accepted)},{label},"
                    f"{c.t_err:.9g},{c.r_err:.9g}\n")


def load_candidate_log(path) -> list[LoopCandidate]:
    out = []
    with open(path) as f:
        header = f.readline().strip()
        if header != _CAND_HEADER:
            raise ValueError(f"unexpected candidate log header: {header!r}")
        for line in f:
            parts = line.strip().split(",")
            if len(parts) != 16:
                continue
            cand = LoopCandidate(int(parts[0]), int(parts[1]),
                                 ViewpointMode(parts[2]), float(parts[3]),
                                 float(parts[4]), float(parts[5]),
                                 float(parts[6]))
            cand.quality = AlignmentQuality(float(parts[7]), float(parts[8]),
                                            int(float(parts[9])))
            cand.reg_ok = parts[10] == "1"
            cand.y_loop = None if parts[11] == "nan" else float(parts[11])
            cand.accepted = parts[12] == "1"
            cand.label = int(parts[13]) if parts[13] else None
            cand.t_err = float(parts[14])
            cand.r_err = float(parts[15])
            out.append(cand)
    return out


def save_loop_list(path, loops) -> None:
    from .geometry import rotation_to_quat
    with open(path, "w") as f:
        f.write("q,c,mode,y,tx,ty,tz,qw,qx,qy,qz\n")
        for c in loops:
            qw, qx, qy, qz = rotation_to_quat(c.rel_pose.rotation)
            tx, ty, tz = c.rel_pose.translation
            y = "nan" if c.y_loop is None else f"{c.y_loop:.9g}"
            f.write(f"{c.query_index},{c.candidate_index},{c.mode.value},{y},"
                    f"{tx:.9g},{ty:.9g},{tz:.9g},"
                    f"{qw:.9g},{qx:.9g},{qy:.9g},{qz:.9g}\n")


def load_loop_list(path) -> list[LoopCandidate]:
    out = []
    with open(path) as f:
        f.readline()
        for line in f:
            parts = line.strip().split(",")
            if len(parts) != 11:
                continue
            cand = LoopCandidate(int(parts[0]), int(parts[1]),
                                 ViewpointMode(parts[2]), 0.0, 0.0, 0.0, 0.0)
            cand.y_loop = None if parts[3] == "nan" else float(parts[3])
            quat = [float(parts[7]), float(parts[8]), float(parts[9]),
                    float(parts[10])]
            cand.rel_pose = Pose(quat_to_rotation(quat),
                                 [float(parts[4]), float(parts[5]),
                                  float(parts[6])])
            cand.reg_ok = True
            cand.accepted = True
            out.append(cand)
    return out
