"""Shared fixtures: simulated sequences and pipeline runs are expensive, so
they are built once per session and reused across test modules."""

import time

import numpy as np
import pytest

from radarloop.config import PipelineConfig
from radarloop.pipeline import (label_candidates, run_slam, train_classifier)
from radarloop.presets import (campus_loop, corridor_with_side_tunnels,
                               radar_profile)
from radarloop.simulator import RadarConfig, simulate_sequence

SESSION_T0 = time.time()

CAMPUS_SEED = 3
CORRIDOR_SEED = 11


@pytest.fixture(scope="session")
def campus_zero():
    """Zero-noise out-and-back campus run (no classifier, loops retrieved)."""
    scene, wps, settings = campus_loop(length=100, seed=1)
    scans, poses, times = simulate_sequence(
        scene, wps, RadarConfig(), speed=settings["speed"],
        scan_rate=settings["scan_rate"], seed=CAMPUS_SEED)
    config = PipelineConfig(seed=CAMPUS_SEED, w=settings["w"])
    result = run_slam(scans, config, classifier=None, enable_loops=True)
    return {"scene": scene, "scans": scans, "gt_poses": poses,
            "gt_times": times, "config": config, "result": result}


@pytest.fixture(scope="session")
def campus_noisy():
    """Noisy campus run: train the verifier, then run the full pipeline."""
    scene, wps, settings = campus_loop(length=100, seed=1)
    radar = radar_profile("short")
    scans, poses, times = simulate_sequence(
        scene, wps, radar, speed=settings["speed"],
        scan_rate=settings["scan_rate"], imu_drift=3.0, imu_noise=0.2,
        seed=CAMPUS_SEED)
    config = PipelineConfig(seed=CAMPUS_SEED, w=settings["w"])
    classifier, train_result = train_classifier(scans, times, poses, config)
    result = run_slam(scans, config, classifier=classifier)
    label_candidates(result, times, poses, config)
    return {"scans": scans, "gt_poses": poses, "gt_times": times,
            "config": config, "classifier": classifier,
            "train_result": train_result, "result": result}


@pytest.fixture(scope="session")
def corridor_noisy():
    """Self-similar corridor run (the wrong-wall failure environment)."""
    scene, wps, settings = corridor_with_side_tunnels(seed=0)
    radar = radar_profile("short")
    scans, poses, times = simulate_sequence(
        scene, wps, radar, speed=settings["speed"],
        scan_rate=settings["scan_rate"], imu_drift=3.0, imu_noise=0.2,
        seed=CORRIDOR_SEED)
    config = PipelineConfig(seed=CORRIDOR_SEED, w=settings["w"])
    classifier, train_result = train_classifier(scans, times, poses, config)
    result = run_slam(scans, config, classifier=classifier)
    label_candidates(result, times, poses, config)
    return {"scans": scans, "gt_poses": poses, "gt_times": times,
            "config": config, "classifier": classifier,
            "train_result": train_result, "result": result}


def keyframe_gt_positions(result, gt_times, gt_poses):
    from radarloop.pipeline import keyframe_ground_truth
    kf_gt = keyframe_ground_truth(result, gt_times, gt_poses)
    assert all(p is not None for p in kf_gt)
    return kf_gt, np.stack([p.translation for p in kf_gt])
