"""Robocentric voxel-grid accumulation of static radar points and
per-keyframe submap snapshots."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose


@dataclass
class Keyframe:
    """Trajectory sample taken every few meters traveled.

    `submap` is an (N, 4) array of x, y, z, intensity in a frame translated
    to the keyframe position but still world-rotation-aligned; the descriptor
    module applies the keyframe yaw.  `pose` is the raw odometry estimate at
    creation and never changes afterwards.
    """

    index: int
    pose: Pose
    submap: np.ndarray
    traveled: float
    timestamp: float = 0.0
    desc_sv: np.ndarray | None = None
    desc_ov: np.ndarray | None = None


class VoxelGrid:
    """World-frame voxel hash holding at most `capacity` points per voxel;
    voxels whose centers drift beyond `radius` of the sensor are evicted."""

    def __init__(self, resolution: float = 1.0, radius: float = 50.0,
                 capacity: int = 20):
        self.resolution = resolution
        self.radius = radius
        self.capacity = capacity
        self._cells: dict[tuple[int, int, int], np.ndarray] = {}

    def __len__(self) -> int:
        return sum(len(v) for v in self._cells.values())

    def insert_points(self, points: np.ndarray, intensities: np.ndarray,
                      pose: Pose) -> None:
        """Add sensor-frame points observed from `pose`; evict out-of-radius
        voxels first so the robocentric bound holds after every call."""
        self._evict(pose.translation)
        if len(points) == 0:
            return
        world = pose.transform(points)
        dist = np.linalg.norm(world - pose.translation, axis=1)
        keep = dist <= self.radius
        if not np.any(keep):
            return
        world = world[keep]
        vals = np.column_stack([world, np.asarray(intensities)[keep]])
        keys = np.floor(world / self.resolution).astype(np.int64)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        for u, key in enumerate(map(tuple, uniq)):
            cell = self._cells.get(key)
            have = 0 if cell is None else len(cell)
            room = self.capacity - have
            if room <= 0:
                continue
            new = vals[inverse == u][:room]
            self._cells[key] = new if cell is None else np.vstack([cell, new])

    def _evict(self, position: np.ndarray) -> None:
        if not self._cells:
            return
        keys = np.array(list(self._cells.keys()), dtype=np.int64)
        centers = (keys + 0.5) * self.resolution
        far = np.linalg.norm(centers - position, axis=1) > self.radius
        for key in map(tuple, keys[far]):
            del self._cells[key]

    def snapshot(self, pose: Pose) -> np.ndarray:
        """All stored points translated to the sensor position (rotation is
        NOT removed; submap axes stay world-aligned).  Returns (N, 4) copy."""
        if not self._cells:
            return np.zeros((0, 4))
        out = np.vstack(list(self._cells.values()))
        out = out.copy()
        out[:, :3] -= pose.translation
        return out


def save_submap(path, submap: np.ndarray) -> None:
    """Debug export: one `x y z intensity` line per point."""
    with open(path, "w") as f:
        for x, y, z, it in submap:
            f.write(f"{x:.9g} {y:.9g} {z:.9g} {it:.9g}\n")


def load_submap(path) -> np.ndarray:
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split()])
    return np.asarray(rows, dtype=float).reshape(-1, 4)
