"""Cartesian grid descriptors of submaps: intensity-sum encoding, 180-degree
double flip for opposing viewpoints, and column-wise cosine distance."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class EncodingMode(enum.Enum):
    MAX_HEIGHT = "max_height"
    MAX_INTENSITY = "max_intensity"
    INTENSITY_SUM = "intensity_sum"


@dataclass
class DescriptorConfig:
    r_lo: float = 30.0     # longitudinal rectangle side, meters
    r_la: float = 30.0     # lateral rectangle side, meters
    n_lo: int = 20
    n_la: int = 20
    mode: EncodingMode = EncodingMode.INTENSITY_SUM
    balance_weight: float = 1000.0

    def __post_init__(self):
        if isinstance(self.mode, str):
            self.mode = EncodingMode(self.mode)
        if self.n_lo < 1 or self.n_la < 1 or self.r_lo <= 0 or self.r_la <= 0:
            raise ValueError("descriptor grid must be non-degenerate")


def encode(submap: np.ndarray, heading_deg: float,
           config: DescriptorConfig) -> np.ndarray:
    """Grid a submap into an (n_lo, n_la) descriptor.

    The submap (world-rotation-aligned, translated to the keyframe) is rotated
    into the heading-aligned frame; the rectangle is centered on the keyframe
    with half of it ahead and half behind.  Rows run longitudinal (forward),
    columns lateral.  Cells without points are -1.
    """
    out = np.full((config.n_lo, config.n_la), -1.0)
    if len(submap) == 0:
        return out
    a = math.radians(heading_deg)
    c, s = math.cos(a), math.sin(a)
    # Rotate by -heading: forward axis becomes +x.
    x = c * submap[:, 0] + s * submap[:, 1]
    y = -s * submap[:, 0] + c * submap[:, 1]
    z = submap[:, 2]
    intensity = submap[:, 3]

    cell_lo = config.r_lo / config.n_lo
    cell_la = config.r_la / config.n_la
    i = np.floor((x + config.r_lo / 2) / cell_lo).astype(np.int64)
    j = np.floor((y + config.r_la / 2) / cell_la).astype(np.int64)
    keep = (i >= 0) & (i < config.n_lo) & (j >= 0) & (j < config.n_la)
    if not np.any(keep):
        return out
    i, j, z, intensity = i[keep], j[keep], z[keep], intensity[keep]
    flat = i * config.n_la + j

    if config.mode is EncodingMode.INTENSITY_SUM:
        acc = np.zeros(config.n_lo * config.n_la)
        np.add.at(acc, flat, intensity)
        vals = acc / config.balance_weight
    elif config.mode is EncodingMode.MAX_INTENSITY:
        acc = np.full(config.n_lo * config.n_la, -np.inf)
        np.maximum.at(acc, flat, intensity)
        vals = acc
    else:
        acc = np.full(config.n_lo * config.n_la, -np.inf)
        np.maximum.at(acc, flat, z)
        vals = acc

    occupied = np.zeros(config.n_lo * config.n_la, dtype=bool)
    occupied[flat] = True
    grid = out.ravel()
    grid[occupied] = vals[occupied]
    return grid.reshape(config.n_lo, config.n_la)


def double_flip(desc: np.ndarray) -> np.ndarray:
    """Reverse both row and column order (180-degree rotation of the grid)."""
    return desc[::-1, ::-1].copy()


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Column-wise cosine distance in [0, 1].

    Per column pair with nonzero norms: 0.5 * (1 - cos similarity); the
    result is the mean over such pairs, or 1 when no valid pair exists.
    """
    if a.shape != b.shape:
        raise ValueError(f"descriptor shape mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    valid = (na > 0) & (nb > 0)
    if not np.any(valid):
        return 1.0
    dots = np.einsum("ij,ij->j", a, b)[valid] / (na[valid] * nb[valid])
    dots = np.clip(dots, -1.0, 1.0)
    return float(np.mean(0.5 * (1.0 - dots)))


def cosine_distance_many(stack: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Vectorized cosine_distance of one query against a (C, n, m) stack."""
    nq = np.linalg.norm(query, axis=0)                       # (m,)
    ns = np.linalg.norm(stack, axis=1)                       # (C, m)
    dots = np.einsum("cij,ij->cj", stack, query)             # (C, m)
    valid = (ns > 0) & (nq[None, :] > 0)
    out = np.ones(len(stack))
    counts = valid.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        sim = np.clip(dots / (ns * nq[None, :]), -1.0, 1.0)
    per_col = np.where(valid, 0.5 * (1.0 - sim), 0.0)
    has = counts > 0
    out[has] = per_col[has].sum(axis=1) / counts[has]
    return out


def save_descriptor(path, desc: np.ndarray) -> None:
    """Comma-separated rows; renders directly as a heatmap by external tools."""
    np.savetxt(path, desc, fmt="%.9g", delimiter=",")


def load_descriptor(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=","))
