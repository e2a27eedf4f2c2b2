"""Keyframe pose graph: odometry chain plus verified loop edges, optimized
by damped on-manifold least squares with the first node fixed."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .geometry import (Pose, rotation_to_quat, se3_adjoint, se3_exp, se3_log,
                       skew)


@dataclass
class GraphConfig:
    odo_sigma_trans_frac: float = 0.02   # of edge length, 1 mm floor
    odo_sigma_rot: float = 0.5           # degrees
    loop_sigma_trans: float = 0.5        # meters
    loop_sigma_rot: float = 1.0          # degrees
    max_iterations: int = 100
    rel_tol: float = 1e-9                # relative chi2 decrease
    huber_delta: float = 0.0             # >0 robustifies loop edges


def _diag_information(sigma_t: float, sigma_r_deg: float) -> np.ndarray:
    st = max(sigma_t, 1e-3)
    sr = math.radians(max(sigma_r_deg, 1e-4))
    return np.diag([1 / st ** 2] * 3 + [1 / sr ** 2] * 3)


@dataclass
class Edge:
    i: int
    j: int
    relative: Pose          # measurement X_i^-1 X_j
    information: np.ndarray
    is_loop: bool = False
    score: float = 0.0


class PoseGraph:
    """Nodes are keyframe poses; the odometry chain keeps the graph connected
    and loop edges tie revisits together.  Single-writer; `optimize` works on
    the stored state and writes results back in one pass."""

    def __init__(self, config: GraphConfig | None = None,
                 exclusion_gap: int = 0):
        self.config = config or GraphConfig()
        self.exclusion_gap = exclusion_gap
        self.nodes: list[Pose] = []
        self.edges: list[Edge] = []
        self._odo_from: set[int] = set()
        self._loop_pairs: set[tuple[int, int]] = set()

    def set_root(self, pose: Pose) -> None:
        if self.nodes:
            raise ValueError("root already set")
        self.nodes.append(pose.copy())

    def add_odometry_edge(self, i: int, relative: Pose,
                          information: np.ndarray | None = None) -> None:
        """Append node i+1 at compose(node_i, relative)."""
        if i < 0 or i >= len(self.nodes):
            raise IndexError(f"node {i} does not exist")
        if i in self._odo_from:
            raise ValueError(f"duplicate odometry edge from node {i}")
        if i != len(self.nodes) - 1:
            raise ValueError("odometry edges must extend the chain tail")
        if information is None:
            length = float(np.linalg.norm(relative.translation))
            information = _diag_information(
                self.config.odo_sigma_trans_frac * length,
                self.config.odo_sigma_rot)
        self._check_information(information)
        self.nodes.append(self.nodes[i].compose(relative))
        self.edges.append(Edge(i, i + 1, relative.copy(), information))
        self._odo_from.add(i)

    def add_loop_edge(self, q: int, c: int, relative: Pose, score: float = 0.0,
                      information: np.ndarray | None = None) -> None:
        """Loop measurement: pose of query q expressed in candidate c."""
        if q >= len(self.nodes) or c >= len(self.nodes) or q < 0 or c < 0:
            raise IndexError("loop edge references missing node")
        if q - c <= self.exclusion_gap:
            raise ValueError(
                f"loop edge ({q}, {c}) violates the exclusion gap")
        if (q, c) in self._loop_pairs:
            raise ValueError(f"duplicate loop edge ({q}, {c})")
        if information is None:
            information = _diag_information(self.config.loop_sigma_trans,
                                            self.config.loop_sigma_rot)
        self._check_information(information)
        self.edges.append(Edge(c, q, relative.copy(), information,
                               is_loop=True, score=score))
        self._loop_pairs.add((q, c))

    @staticmethod
    def _check_information(information: np.ndarray) -> None:
        if information.shape != (6, 6) \
                or not np.allclose(information, information.T) \
                or np.any(np.linalg.eigvalsh(information) <= 0):
            raise ValueError("information matrix must be symmetric positive "
                             "definite")

    def loop_edges(self) -> list[Edge]:
        return [e for e in self.edges if e.is_loop]

    # --- optimization -----------------------------------------------------

    def _edge_residual(self, edge: Edge, nodes: list[Pose]):
        t = nodes[edge.i].inverse().compose(nodes[edge.j])
        return se3_log(edge.relative.inverse().compose(t)), t

    def chi2(self, nodes: list[Pose] | None = None) -> float:
        nodes = self.nodes if nodes is None else nodes
        total = 0.0
        for edge in self.edges:
            r, _ = self._edge_residual(edge, nodes)
            total += self._edge_chi2(edge, r)
        return total

    def _edge_chi2(self, edge: Edge, r: np.ndarray) -> float:
        raw = float(r @ edge.information @ r)
        delta = self.config.huber_delta
        if edge.is_loop and delta > 0:
            s = math.sqrt(max(raw, 0.0))
            if s > delta:
                return 2 * delta * s - delta * delta
        return raw

    def _edge_weight(self, edge: Edge, r: np.ndarray) -> float:
        delta = self.config.huber_delta
        if edge.is_loop and delta > 0:
            s = math.sqrt(max(float(r @ edge.information @ r), 1e-300))
            if s > delta:
                return delta / s
        return 1.0

    def optimize(self, max_iterations: int | None = None,
                 rel_tol: float | None = None) -> float:
        """Damped least squares over all nodes but the first.

        Accepted steps never increase chi2; stops on relative chi2 decrease
        below `rel_tol` or after `max_iterations`.  Returns the final chi2.
        """
        self._validate_connected()
        max_iterations = max_iterations or self.config.max_iterations
        rel_tol = self.config.rel_tol if rel_tol is None else rel_tol
        n = len(self.nodes)
        if n <= 1:
            return self.chi2()
        dim = 6 * (n - 1)
        lam = 1e-6
        nodes = [p.copy() for p in self.nodes]
        chi2 = self.chi2(nodes)
        converged = False

        for _ in range(max_iterations):
            if chi2 <= 1e-300:
                break
            rows, cols, vals = [], [], []
            rhs = np.zeros(dim)
            for edge in self.edges:
                r, t = self._edge_residual(edge, nodes)
                weight = self._edge_weight(edge, r)
                jr_inv = np.eye(6) + 0.5 * _ad_se3(r)
                j_j = jr_inv
                j_i = -jr_inv @ se3_adjoint(t.inverse())
                info = weight * edge.information
                blocks = []
                if edge.i > 0:
                    blocks.append((edge.i - 1, j_i))
                if edge.j > 0:
                    blocks.append((edge.j - 1, j_j))
                for bi, ji in blocks:
                    rhs[6 * bi:6 * bi + 6] += ji.T @ info @ r
                    for bj, jj in blocks:
                        block = ji.T @ info @ jj
                        base_r, base_c = 6 * bi, 6 * bj
                        for a in range(6):
                            rows.extend([base_r + a] * 6)
                            cols.extend(range(base_c, base_c + 6))
                            vals.extend(block[a])
            h = scipy.sparse.csr_matrix(
                (vals, (rows, cols)), shape=(dim, dim))
            if np.linalg.norm(rhs, np.inf) < 1e-14:
                break

            accepted = False
            for _ in range(10):
                damped = h + scipy.sparse.diags(
                    lam * np.maximum(h.diagonal(), 1e-12))
                try:
                    delta = scipy.sparse.linalg.spsolve(damped, -rhs)
                except RuntimeError:
                    lam *= 10.0
                    continue
                trial = [nodes[0].copy()]
                for idx in range(1, n):
                    trial.append(nodes[idx].compose(
                        se3_exp(delta[6 * (idx - 1):6 * idx])))
                trial_chi2 = self.chi2(trial)
                if trial_chi2 <= chi2:
                    if chi2 > 0 and (chi2 - trial_chi2) / chi2 < rel_tol:
                        converged = True
                    nodes = trial
                    chi2 = trial_chi2
                    lam = max(lam / 10.0, 1e-12)
                    accepted = True
                    break
                lam *= 10.0
            if not accepted or converged:
                break

        for idx in range(1, n):
            self.nodes[idx] = nodes[idx]
        return chi2

    def _validate_connected(self) -> None:
        n = len(self.nodes)
        if n == 0:
            raise ValueError("empty graph")
        missing = [i for i in range(n - 1) if i not in self._odo_from]
        if missing:
            raise ValueError(f"odometry chain broken at nodes {missing}")

    # --- export -------------------------------------------------------------

    def save_g2o(self, path) -> None:
        """VERTEX_SE3:QUAT / EDGE_SE3:QUAT text dump for external checkers."""
        with open(path, "w") as f:
            for i, pose in enumerate(self.nodes):
                qw, qx, qy, qz = rotation_to_quat(pose.rotation)
                tx, ty, tz = pose.translation
                f.write(f"VERTEX_SE3:QUAT {i} {tx:.9g} {ty:.9g} {tz:.9g} "
                        f"{qx:.9g} {qy:.9g} {qz:.9g} {qw:.9g}\n")
            for edge in self.edges:
                qw, qx, qy, qz = rotation_to_quat(edge.relative.rotation)
                tx, ty, tz = edge.relative.translation
                upper = [f"{edge.information[a, b]:.9g}"
                         for a in range(6) for b in range(a, 6)]
                f.write(f"EDGE_SE3:QUAT {edge.i} {edge.j} "
                        f"{tx:.9g} {ty:.9g} {tz:.9g} "
                        f"{qx:.9g} {qy:.9g} {qz:.9g} {qw:.9g} "
                        + " ".join(upper) + "\n")


def _ad_se3(xi: np.ndarray) -> np.ndarray:
    """se(3) adjoint of a twist [rho, phi]."""
    out = np.zeros((6, 6))
    sp = skew(xi[3:])
    out[:3, :3] = sp
    out[3:, 3:] = sp
    out[:3, 3:] = skew(xi[:3])
    return out
