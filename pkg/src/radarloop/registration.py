"""Metric submap alignment: Mahalanobis point-to-distribution residuals with
a Huber kernel, Levenberg-damped Gauss-Newton steps, alignment quality
metrics for the verifier."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose, ViewpointMode, se3_exp
from .submap import Keyframe


@dataclass
class RegistrationParams:
    cell_size: float = 2.0
    min_points: int = 5
    cov_floor: float = 1e-4        # m^2 added to covariance diagonals
    corr_radius: float = 4.0       # correspondence gate, meters
    huber_delta: float = 1.0       # on the Mahalanobis distance
    max_iterations: int = 50
    tol: float = 1e-6              # update norm convergence
    min_correspondences: int = 5   # below this at init -> failure
    cf_cap: float = 25.0           # C_f stand-in for failed registrations


@dataclass
class AlignmentQuality:
    c_f: float    # final mean robustified residual
    c_a: float    # average size of the two registered cell sets
    c_o: int      # correspondences in the final iteration


class DistributionMap:
    """Per-cell Gaussians of a submap: means, covariances, surface normals."""

    def __init__(self, means, covariances, normals, counts):
        self.means = means
        self.covariances = covariances
        self.normals = normals
        self.counts = counts
        # Whitener W with ||W e|| = Mahalanobis distance of e.
        vals, vecs = np.linalg.eigh(covariances) if len(means) else \
            (np.zeros((0, 3)), np.zeros((0, 3, 3)))
        self.whiteners = (vecs / np.sqrt(vals)[:, None, :]) \
            .transpose(0, 2, 1) if len(means) else np.zeros((0, 3, 3))

    def __len__(self) -> int:
        return len(self.means)


def build_distributions(points: np.ndarray, cell_size: float = 2.0,
                        min_points: int = 5,
                        cov_floor: float = 1e-4) -> DistributionMap:
    """Voxel-partition a point set; cells with enough points yield a Gaussian
    whose smallest-eigenvalue eigenvector is the surface normal."""
    pts = np.asarray(points, dtype=float)[:, :3]
    if len(pts) == 0:
        return DistributionMap(np.zeros((0, 3)), np.zeros((0, 3, 3)),
                               np.zeros((0, 3)), np.zeros(0, dtype=int))
    # Pack the 3 voxel indices into one int64 (21 bits each) so grouping is a
    # scalar sort instead of a row-wise unique.
    keys = np.floor(pts / cell_size).astype(np.int64) + (1 << 20)
    packed = (keys[:, 0] << 42) | (keys[:, 1] << 21) | keys[:, 2]
    _, inverse, counts = np.unique(packed, return_inverse=True,
                                   return_counts=True)
    n_cells = len(counts)
    sums = np.stack([np.bincount(inverse, weights=pts[:, k],
                                 minlength=n_cells) for k in range(3)], axis=1)
    second = {}
    for a in range(3):
        for b in range(a, 3):
            second[a, b] = np.bincount(inverse,
                                       weights=pts[:, a] * pts[:, b],
                                       minlength=n_cells)

    keep = counts >= min_points
    if not np.any(keep):
        return DistributionMap(np.zeros((0, 3)), np.zeros((0, 3, 3)),
                               np.zeros((0, 3)), np.zeros(0, dtype=int))
    counts = counts[keep]
    means = sums[keep] / counts[:, None]
    cov = np.empty((len(counts), 3, 3))
    for a in range(3):
        for b in range(a, 3):
            cov[:, a, b] = second[a, b][keep] / counts \
                - means[:, a] * means[:, b]
            cov[:, b, a] = cov[:, a, b]
    cov = cov + cov_floor * np.eye(3)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    return DistributionMap(means, cov, normals, counts)


def cell_means(points: np.ndarray, cell_size: float = 2.0,
               min_points: int = 5) -> np.ndarray:
    """Means of the occupied voxel cells with at least `min_points` points
    (the query-side compression; no covariance needed)."""
    pts = np.asarray(points, dtype=float)[:, :3]
    if len(pts) == 0:
        return np.zeros((0, 3))
    keys = np.floor(pts / cell_size).astype(np.int64) + (1 << 20)
    packed = (keys[:, 0] << 42) | (keys[:, 1] << 21) | keys[:, 2]
    _, inverse, counts = np.unique(packed, return_inverse=True,
                                   return_counts=True)
    sums = np.stack([np.bincount(inverse, weights=pts[:, k],
                                 minlength=len(counts)) for k in range(3)],
                    axis=1)
    keep = counts >= min_points
    return sums[keep] / counts[keep, None]


def _huber_rho(r: np.ndarray, delta: float) -> np.ndarray:
    out = 0.5 * r ** 2
    far = r > delta
    out[far] = delta * (r[far] - 0.5 * delta)
    return out


@dataclass
class RegistrationResult:
    pose: Pose
    quality: AlignmentQuality
    converged: bool
    iterations: int
    cost_trace: list    # (correspondence count, summed robust cost) per accept


def register(query, candidate: DistributionMap, initial: Pose,
             params: RegistrationParams | None = None):
    """Align a query submap to a candidate distribution map.

    The query ((N, 3+) points or a prebuilt DistributionMap) is compressed to
    cell means, then iteratively matched to the nearest candidate
    distributions within the correspondence radius.  Points (not a prebuilt
    map) are re-binned at the current estimate each iteration, which removes
    the lattice-phase bias between the two voxelizations near convergence.
    Returns a RegistrationResult, or None when fewer than
    `min_correspondences` pairs exist at the initial pose.
    """
    params = params or RegistrationParams()
    raw_points = None if isinstance(query, DistributionMap) \
        else np.asarray(query, dtype=float)[:, :3]
    if raw_points is None:
        n_query_cells = len(query)
    else:
        n_query_cells = len(cell_means(raw_points, params.cell_size,
                                       params.min_points))
    if n_query_cells == 0 or len(candidate) == 0:
        return None
    tree = cKDTree(candidate.means)
    pose = initial.copy()
    lam = 1e-4
    cost_trace: list[tuple[int, float]] = []
    converged = False
    it = 0

    def bin_query(p: Pose):
        """Query cell means expressed in the candidate frame at pose `p`."""
        nonlocal n_query_cells
        if raw_points is None:
            return query.means @ p.rotation.T + p.translation
        m = cell_means(p.transform(raw_points), params.cell_size,
                       params.min_points)
        n_query_cells = max(len(m), 1) if len(m) else n_query_cells
        return m

    def correspond(tp):
        dist, idx = tree.query(tp, distance_upper_bound=params.corr_radius)
        valid = np.isfinite(dist)
        return idx, valid

    def robust_cost(tp, idx, valid):
        iv = idx[valid]
        e = tp[valid] - candidate.means[iv]
        rvec = np.einsum("nij,nj->ni", candidate.whiteners[iv], e)
        rn = np.linalg.norm(rvec, axis=1)
        return rvec, rn, float(_huber_rho(rn, params.huber_delta).sum())

    for it in range(params.max_iterations):
        tp = bin_query(pose)
        idx, valid = correspond(tp)
        nc = int(valid.sum())
        if it == 0 and nc < params.min_correspondences:
            return None
        if nc < 3:
            break
        iv = idx[valid]
        rvec, rn, cost = robust_cost(tp, idx, valid)
        weights = np.where(rn > params.huber_delta,
                           params.huber_delta / np.maximum(rn, 1e-12), 1.0)

        # J = W [I | -skew(p')] for a left-multiplied se(3) perturbation.
        w = candidate.whiteners[iv]
        tv = tp[valid]
        jac = np.zeros((nc, 3, 6))
        jac[:, :, :3] = w
        sk = np.zeros((nc, 3, 3))
        sk[:, 0, 1] = -tv[:, 2]
        sk[:, 0, 2] = tv[:, 1]
        sk[:, 1, 0] = tv[:, 2]
        sk[:, 1, 2] = -tv[:, 0]
        sk[:, 2, 0] = -tv[:, 1]
        sk[:, 2, 1] = tv[:, 0]
        jac[:, :, 3:] = -np.einsum("nij,njk->nik", w, sk)

        h = np.einsum("n,nij,nik->jk", weights, jac, jac)
        b = np.einsum("n,nij,ni->j", weights, jac, rvec)

        accepted = False
        for _ in range(8):
            try:
                delta = np.linalg.solve(
                    h + lam * np.diag(np.maximum(np.diag(h), 1e-12)), -b)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            step = se3_exp(delta)
            # Same binning and correspondences for the trial evaluation.
            tp_new = tp[valid] @ step.rotation.T + step.translation
            e_new = tp_new - candidate.means[iv]
            rn_new = np.linalg.norm(
                np.einsum("nij,nj->ni", candidate.whiteners[iv], e_new),
                axis=1)
            cost_new = float(_huber_rho(rn_new, params.huber_delta).sum())
            if cost_new <= cost:
                pose = step.compose(pose)
                lam = max(lam / 10.0, 1e-10)
                cost_trace.append((nc, cost_new))
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged = True
            break
        if np.linalg.norm(delta) < params.tol:
            converged = True
            break

    tp = bin_query(pose)
    idx, valid = correspond(tp)
    nc = int(valid.sum())
    if nc > 0:
        _, rn, cost_sum = robust_cost(tp, idx, valid)
        c_f = cost_sum / nc
    else:
        c_f = params.cf_cap
    c_a = 0.5 * (n_query_cells + len(candidate))
    return RegistrationResult(pose, AlignmentQuality(c_f, c_a, nc),
                              converged, it + 1, cost_trace)


def alignment_cost(query_points: np.ndarray, candidate: DistributionMap,
                   pose: Pose, params: RegistrationParams | None = None):
    """(C_f, C_o) of an alignment held fixed at `pose` (no optimization)."""
    params = params or RegistrationParams()
    means = cell_means(pose.transform(
        np.asarray(query_points, dtype=float)[:, :3]), params.cell_size,
        params.min_points)
    if len(means) == 0 or len(candidate) == 0:
        return params.cf_cap, 0
    tree = cKDTree(candidate.means)
    dist, idx = tree.query(means, distance_upper_bound=params.corr_radius)
    valid = np.isfinite(dist)
    nc = int(valid.sum())
    if nc == 0:
        return params.cf_cap, 0
    e = means[valid] - candidate.means[idx[valid]]
    rn = np.linalg.norm(
        np.einsum("nij,nj->ni", candidate.whiteners[idx[valid]], e), axis=1)
    return float(_huber_rho(rn, params.huber_delta).mean()), nc


def initial_guess(query: Keyframe, candidate: Keyframe,
                  mode: ViewpointMode) -> Pose:
    """Registration seed in the world-aligned submap frames.

    Rotation composes the odometry rotations with the mode's expected
    relative rotation; translation is the odometry offset from candidate to
    query.  With coincident odometry poses this is the identity for similar
    viewpoints and yaw(180 deg) for opposing ones.
    """
    rot = candidate.pose.rotation @ mode.expected_rotation \
        @ query.pose.rotation.T
    return Pose(rot, query.pose.translation - candidate.pose.translation)


def loop_relative_pose(reg_pose: Pose, query: Keyframe,
                       candidate: Keyframe) -> Pose:
    """Convert a submap-frame registration into the sensor-frame relative
    pose of the query in the candidate frame (the pose-graph measurement)."""
    rc = candidate.pose.rotation
    return Pose(rc.T @ reg_pose.rotation @ query.pose.rotation,
                rc.T @ reg_pose.translation)
