"""Coupled odometry/appearance candidate search: dual viewpoint distance
matrices, diagonal sequence filtering and global top-k selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .descriptor import cosine_distance, cosine_distance_many
from .geometry import ViewpointMode, geodesic_angle
from .submap import Keyframe


@dataclass
class OdometrySimilarityParams:
    sigma_trans: float = 0.04   # drift ratio
    sigma_rot: float = 3.0      # degrees
    eps_trans: float = 5.0      # meters of slack before penalizing
    eps_rot: float = 5.0        # degrees of slack


@dataclass
class RetrievalConfig:
    w: int = 6                  # sequence length (15 for the mine preset)
    k: int = 3                  # candidates per query
    exclusion_gap: int = 20     # keyframes; candidate admissible iff q-c > gap
    appearance_weight: float = 0.5


def odometry_similarity(query: Keyframe, candidate: Keyframe, traveled: float,
                        mode: ViewpointMode,
                        params: OdometrySimilarityParams) -> float:
    """Odometry-prior dissimilarity in [0, 1].

    Translation error is the distance between the odometry positions, less
    eps_trans of slack, normalized by distance traveled between the two
    keyframes; rotation error is the geodesic angle to the expected relative
    rotation of the viewpoint mode, less eps_rot.  Both are scored as
    Gaussians and combined multiplicatively.
    """
    if traveled <= 0:
        raise ValueError("traveled distance must be positive")
    t_err = max(np.linalg.norm(query.pose.translation
                               - candidate.pose.translation)
                - params.eps_trans, 0.0) / traveled
    d_theta = geodesic_angle(query.pose.rotation, candidate.pose.rotation,
                             mode.expected_rotation)
    theta_err = max(d_theta - params.eps_rot, 0.0)
    p = math.exp(-t_err ** 2 / (2 * params.sigma_trans ** 2)) \
        * math.exp(-theta_err ** 2 / (2 * params.sigma_rot ** 2))
    return 1.0 - p


def joint_distance(d_cc: float, d_odom: float,
                   appearance_weight: float = 0.5) -> float:
    """Combined distance: weighted descriptor distance plus odometry term."""
    return appearance_weight * d_cc + d_odom


@dataclass
class LoopCandidate:
    """A query/candidate keyframe pair as it flows down the pipeline."""

    query_index: int
    candidate_index: int
    mode: ViewpointMode
    d_filtered: float
    d_joint: float
    d_cc: float
    d_odom: float
    rel_pose: object = None        # sensor-frame relative pose (Pose) once registered
    quality: object = None         # AlignmentQuality once registered
    reg_ok: bool = False
    y_loop: float | None = None
    accepted: bool = False
    label: int | None = None
    t_err: float = float("nan")
    r_err: float = float("nan")


class DistanceMatrices:
    """Growing lower-triangular joint-distance matrices for both viewpoint
    hypotheses, with the per-anchor d_cc / d_odom components retained.

    Row q covers candidates c in [0, q - gap); entries never change after
    insertion (append-only)."""

    def __init__(self, retrieval: RetrievalConfig,
                 similarity: OdometrySimilarityParams):
        self.config = retrieval
        self.params = similarity
        self.rows_sv: list[np.ndarray] = []
        self.rows_ov: list[np.ndarray] = []
        self.cc_sv: list[np.ndarray] = []
        self.cc_ov: list[np.ndarray] = []
        self.od_sv: list[np.ndarray] = []
        self.od_ov: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self.rows_sv)

    def admissible(self, q: int) -> int:
        """Number of admissible candidates for query q."""
        return max(0, q - self.config.exclusion_gap)

    def append_keyframe(self, query: Keyframe, history: list[Keyframe],
                        pose_override: list | None = None) -> None:
        """Add the row for `query` against all admissible prior keyframes.

        `pose_override` (indexed by keyframe) substitutes the poses used in
        the odometry-similarity term, e.g. the current pose-graph estimate.
        """
        q = query.index
        if q != len(self.rows_sv):
            raise ValueError("keyframes must be appended in order")
        n = self.admissible(q)
        cands = history[:n]
        if n == 0:
            for lst in (self.rows_sv, self.rows_ov, self.cc_sv, self.cc_ov,
                        self.od_sv, self.od_ov):
                lst.append(np.zeros(0))
            return

        stack = np.stack([kf.desc_sv for kf in cands])
        cc_sv = cosine_distance_many(stack, query.desc_sv)
        cc_ov = cosine_distance_many(stack, query.desc_ov)

        if pose_override is not None:
            query_pose = pose_override[q]
            cand_poses = [pose_override[kf.index] for kf in cands]
        else:
            query_pose = query.pose
            cand_poses = [kf.pose for kf in cands]
        positions = np.stack([p.translation for p in cand_poses])
        rotations = np.stack([p.rotation for p in cand_poses])
        traveled = query.traveled - np.array([kf.traveled for kf in cands])
        dist = np.linalg.norm(query_pose.translation - positions, axis=1)
        t_err = np.maximum(dist - self.params.eps_trans, 0.0) \
            / np.maximum(traveled, 1e-12)
        od = {}
        for mode in ViewpointMode:
            m = np.einsum("ji,cjk,kl->cil", query_pose.rotation, rotations,
                          mode.expected_rotation)
            tr = np.clip(0.5 * (np.einsum("cii->c", m) - 1.0), -1.0, 1.0)
            theta_err = np.maximum(np.degrees(np.arccos(tr))
                                   - self.params.eps_rot, 0.0)
            od[mode] = 1.0 - (np.exp(-t_err ** 2
                                     / (2 * self.params.sigma_trans ** 2))
                              * np.exp(-theta_err ** 2
                                       / (2 * self.params.sigma_rot ** 2)))

        wgt = self.config.appearance_weight
        self.rows_sv.append(wgt * cc_sv + od[ViewpointMode.SIMILAR])
        self.rows_ov.append(wgt * cc_ov + od[ViewpointMode.OPPOSING])
        self.cc_sv.append(cc_sv)
        self.cc_ov.append(cc_ov)
        self.od_sv.append(od[ViewpointMode.SIMILAR])
        self.od_ov.append(od[ViewpointMode.OPPOSING])

    def sequence_filter(self, q: int, c: int, mode: ViewpointMode,
                        w: int | None = None) -> float:
        """Mean joint distance along the mode's diagonal through (q, c).

        Similar viewpoints average (q-i, c-i); opposing average (q-i, c+i).
        Entries outside the stored triangle are skipped; the anchor itself
        always exists by precondition.
        """
        w = self.config.w if w is None else w
        rows = self.rows_sv if mode is ViewpointMode.SIMILAR else self.rows_ov
        if q >= len(rows) or c >= len(rows[q]):
            raise IndexError(f"no entry at ({q}, {c})")
        total, count = 0.0, 0
        for i in range(w):
            qq = q - i
            cc = c - i if mode is ViewpointMode.SIMILAR else c + i
            if qq < 0 or cc < 0 or cc >= len(rows[qq]):
                continue
            total += rows[qq][cc]
            count += 1
        return total / count

    def filtered_row(self, q: int, mode: ViewpointMode,
                     w: int | None = None) -> np.ndarray:
        """Vectorized sequence_filter over every admissible candidate of q."""
        w = self.config.w if w is None else w
        rows = self.rows_sv if mode is ViewpointMode.SIMILAR else self.rows_ov
        length = len(rows[q])
        acc = np.zeros(length)
        cnt = np.zeros(length)
        for i in range(w):
            qq = q - i
            if qq < 0:
                break
            row = rows[qq]
            if mode is ViewpointMode.SIMILAR:
                m = min(length - i, len(row))
                if m <= 0:
                    continue
                acc[i:i + m] += row[:m]
                cnt[i:i + m] += 1
            else:
                m = min(length, len(row)) - i
                if m <= 0:
                    continue
                acc[:m] += row[i:i + m]
                cnt[:m] += 1
        out = np.full(length, np.inf)
        has = cnt > 0
        out[has] = acc[has] / cnt[has]
        return out

    def retrieve_candidates(self, q: int, k: int | None = None
                            ) -> list[LoopCandidate]:
        """Global top-k by filtered distance across both matrices.

        Ties break toward the lower candidate index, similar before opposing.
        Empty when q has no admissible candidates.
        """
        k = self.config.k if k is None else k
        length = self.admissible(q)
        if length == 0 or q >= len(self.rows_sv):
            return []
        f_sv = self.filtered_row(q, ViewpointMode.SIMILAR)
        f_ov = self.filtered_row(q, ViewpointMode.OPPOSING)
        d = np.concatenate([f_sv, f_ov])
        cand = np.concatenate([np.arange(length), np.arange(length)])
        modes = np.concatenate([np.zeros(length, dtype=int),
                                np.ones(length, dtype=int)])
        order = np.lexsort((modes, cand, d))[:k]
        out = []
        for idx in order:
            c = int(cand[idx])
            mode = ViewpointMode.SIMILAR if modes[idx] == 0 \
                else ViewpointMode.OPPOSING
            joint = self.rows_sv[q][c] if mode is ViewpointMode.SIMILAR \
                else self.rows_ov[q][c]
            cc = self.cc_sv[q][c] if mode is ViewpointMode.SIMILAR \
                else self.cc_ov[q][c]
            od = self.od_sv[q][c] if mode is ViewpointMode.SIMILAR \
                else self.od_ov[q][c]
            out.append(LoopCandidate(q, c, mode, float(d[idx]), float(joint),
                                     float(cc), float(od)))
        return out

    def export(self, directory) -> None:
        """One comma-separated square matrix per file (NaN where no entry)."""
        import os
        n = len(self.rows_sv)
        for name, rows in (("D_sv", self.rows_sv), ("D_ov", self.rows_ov)):
            full = np.full((n, n), np.nan)
            for q, row in enumerate(rows):
                full[q, :len(row)] = row
            np.savetxt(os.path.join(directory, name + ".csv"), full,
                       fmt="%.9g", delimiter=",")
        for name, mode in (("F_sv", ViewpointMode.SIMILAR),
                           ("F_ov", ViewpointMode.OPPOSING)):
            full = np.full((n, n), np.nan)
            for q in range(n):
                row = self.filtered_row(q, mode)
                full[q, :len(row)] = row
            np.savetxt(os.path.join(directory, name + ".csv"), full,
                       fmt="%.9g", delimiter=",")
