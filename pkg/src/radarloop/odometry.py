"""Instantaneous Doppler+IMU ego-motion: three-point RANSAC velocity,
orientation taken verbatim from the IMU, pose by velocity integration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, quat_to_rotation
from .simulator import RadarScan


@dataclass
class RansacParams:
    max_iterations: int = 100
    inlier_threshold: float = 0.2   # m/s Doppler residual
    min_inlier_fraction: float = 0.3


@dataclass
class OdometryState:
    pose: Pose = field(default_factory=Pose)
    traveled: float = 0.0
    keyframe_marks: list[float] = field(default_factory=list)

    def distance_since_keyframe(self) -> float:
        if not self.keyframe_marks:
            return float("inf")
        return self.traveled - self.keyframe_marks[-1]

    def mark_keyframe(self) -> None:
        self.keyframe_marks.append(self.traveled)


def estimate_ego_velocity(scan: RadarScan, params: RansacParams, seed: int):
    """Three-point RANSAC on Doppler velocities.

    Model: doppler_i = -d_i . v for static points with unit direction d_i.
    Returns (velocity, static_mask) with a least-squares refit on the final
    inlier set, or None when no admissible consensus exists (degenerate
    direction geometry or inlier fraction below the minimum).
    """
    n = len(scan)
    if n < 3:
        return None
    dirs = scan.positions / np.linalg.norm(scan.positions, axis=1,
                                           keepdims=True)
    dop = scan.dopplers
    rng = np.random.default_rng([seed])

    best_mask = None
    best_count = 2
    for _ in range(params.max_iterations):
        idx = rng.choice(n, size=3, replace=False)
        a = dirs[idx]
        if abs(np.linalg.det(a)) < 1e-9:
            continue
        v = np.linalg.solve(a, -dop[idx])
        residual = np.abs(dop + dirs @ v)
        mask = residual <= params.inlier_threshold
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask

    if best_mask is None or best_count < max(3, params.min_inlier_fraction * n):
        return None

    # Refit on consensus, then re-gate once so the returned static set is
    # consistent with the refined velocity.
    for _ in range(2):
        a = dirs[best_mask]
        h = a.T @ a
        if np.linalg.cond(h) > 1e12:
            return None
        v = np.linalg.solve(h, -a.T @ dop[best_mask])
        best_mask = np.abs(dop + dirs @ v) <= params.inlier_threshold
        if best_mask.sum() < 3:
            return None
    if best_mask.sum() < params.min_inlier_fraction * n:
        return None
    return v, best_mask


def integrate(state: OdometryState, velocity: np.ndarray,
              imu_quat: np.ndarray, dt: float) -> OdometryState:
    """Advance the pose: rotation from the IMU, translation by R_imu * v * dt."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    rot = quat_to_rotation(imu_quat)
    velocity = np.asarray(velocity, dtype=float)
    translation = state.pose.translation + rot @ velocity * dt
    return OdometryState(
        pose=Pose(rot, translation),
        traveled=state.traveled + float(np.linalg.norm(velocity)) * dt,
        keyframe_marks=state.keyframe_marks,
    )


def keyframe_due(state: OdometryState, spacing: float) -> bool:
    """True once `spacing` meters have passed since the last keyframe
    (always true before the bootstrap keyframe)."""
    if not state.keyframe_marks:
        return True
    return state.traveled - state.keyframe_marks[-1] >= spacing
