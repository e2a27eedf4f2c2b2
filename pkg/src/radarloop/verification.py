"""Introspective loop verification: logistic regression over odometry
similarity, descriptor distance and alignment quality, plus training-label
generation and best-candidate selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, ViewpointMode, pose_error
from .retrieval import LoopCandidate

FEATURE_NAMES = ("d_odom", "d_cc", "C_f", "C_a", "C_o", "bias")


class ClassImbalanceError(ValueError):
    """Raised when the training corpus lacks one of the two classes."""


def feature_vector(cand: LoopCandidate) -> np.ndarray:
    """[d_odom, d_cc, C_f, C_a, C_o, 1] for a registered candidate."""
    q = cand.quality
    return np.array([cand.d_odom, cand.d_cc, q.c_f, q.c_a, float(q.c_o), 1.0])


def _sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def loss_and_gradient(theta: np.ndarray, features: np.ndarray,
                      labels: np.ndarray, l2: float = 1e-4):
    """Mean negative log-likelihood with L2 on the non-bias weights.

    The mean (rather than summed) likelihood keeps the optimum invariant
    under duplicating the corpus.  Returns (loss, gradient).
    """
    z = features @ theta
    p = _sigmoid(z)
    eps = 1e-12
    nll = -np.mean(labels * np.log(p + eps)
                   + (1.0 - labels) * np.log(1.0 - p + eps))
    reg_mask = np.ones_like(theta)
    reg_mask[-1] = 0.0
    loss = nll + 0.5 * l2 * np.sum((reg_mask * theta) ** 2)
    grad = features.T @ (p - labels) / len(labels) + l2 * reg_mask * theta
    return loss, grad


@dataclass
class LoopClassifier:
    """Logistic verifier over standardized loop features.

    `theta` acts on z-scored features (bias column untouched); `means` and
    `scales` are stored with the model so raw feature vectors can be scored
    directly.  sklearn-flavored fit/predict_proba are provided alongside the
    single-sample `score`.
    """

    theta: np.ndarray = field(default_factory=lambda: np.zeros(6))
    means: np.ndarray = field(default_factory=lambda: np.zeros(5))
    scales: np.ndarray = field(default_factory=lambda: np.ones(5))
    y_th: float = 0.5
    l2: float = 1e-4

    def standardize(self, features: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(features, dtype=float)).copy()
        x[:, :5] = (x[:, :5] - self.means) / self.scales
        return x

    def fit(self, features: np.ndarray, labels: np.ndarray,
            grad_tol: float = 1e-8, max_iter: int = 200) -> "LoopClassifier":
        """Regularized maximum likelihood via damped Newton iterations."""
        x = np.asarray(features, dtype=float)
        y = np.asarray(labels, dtype=float)
        if x.ndim != 2 or x.shape[1] != 6:
            raise ValueError("expected (N, 6) feature matrix")
        classes = np.unique(y)
        if len(classes) < 2:
            raise ClassImbalanceError(
                f"training corpus has a single class ({int(classes[0])}); "
                "need both positive and negative loop candidates")
        self.means = x[:, :5].mean(axis=0)
        self.scales = x[:, :5].std(axis=0)
        self.scales[self.scales == 0] = 1.0
        xs = self.standardize(x)

        theta = np.zeros(6)
        reg = np.full(6, self.l2)
        reg[-1] = 0.0
        loss, grad = loss_and_gradient(theta, xs, y, self.l2)
        for _ in range(max_iter):
            if np.linalg.norm(grad) < grad_tol:
                break
            p = _sigmoid(xs @ theta)
            w = np.maximum(p * (1.0 - p), 1e-12)
            hess = (xs * w[:, None]).T @ xs / len(y) + np.diag(reg)
            step = np.linalg.solve(hess, grad)
            scale = 1.0
            for _ in range(40):
                cand = theta - scale * step
                new_loss, new_grad = loss_and_gradient(cand, xs, y, self.l2)
                if new_loss <= loss:
                    theta, loss, grad = cand, new_loss, new_grad
                    break
                scale *= 0.5
            else:
                break
        self.theta = theta
        return self

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        """Acceptance probability y_loop for (N, 6) raw feature rows."""
        return _sigmoid(self.standardize(features) @ self.theta)

    def score(self, features: np.ndarray) -> float:
        """y_loop = sigmoid(theta . standardized x) for one feature vector."""
        return float(self.predict_proba(np.asarray(features).reshape(1, 6))[0])

    def accepts(self, y_loop: float) -> bool:
        return y_loop > self.y_th

    # --- model file (structured text) ------------------------------------

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write("# loop verification model\n")
            f.write("features: " + " ".join(FEATURE_NAMES) + "\n")
            f.write("theta: " + " ".join(f"{v:.17g}" for v in self.theta)
                    + "\n")
            f.write("means: " + " ".join(f"{v:.17g}" for v in self.means)
                    + "\n")
            f.write("scales: " + " ".join(f"{v:.17g}" for v in self.scales)
                    + "\n")
            f.write(f"y_th: {self.y_th:.17g}\n")

    @classmethod
    def load(cls, path) -> "LoopClassifier":
        fields: dict[str, list[str]] = {}
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                key, _, rest = line.partition(":")
                fields[key.strip()] = rest.split()
        if fields.get("features") != list(FEATURE_NAMES):
            raise ValueError(f"unexpected feature order in model file {path}")
        return cls(theta=np.array([float(v) for v in fields["theta"]]),
                   means=np.array([float(v) for v in fields["means"]]),
                   scales=np.array([float(v) for v in fields["scales"]]),
                   y_th=float(fields["y_th"][0]))


def train(samples, l2: float = 1e-4) -> LoopClassifier:
    """Fit a verifier from (feature_vector, label) pairs."""
    feats = np.stack([s[0] for s in samples])
    labels = np.array([s[1] for s in samples], dtype=float)
    return LoopClassifier(l2=l2).fit(feats, labels)


def label_candidate(rel_estimate: Pose | None, rel_ground_truth: Pose,
                    trans_threshold: float = 4.0,
                    rot_threshold: float = 2.5):
    """(label, t_err, r_err): positive iff the registered relative pose is
    within both thresholds of ground truth.  Failed registrations (no pose)
    are negative with infinite error."""
    if rel_estimate is None:
        return 0, float("inf"), float("inf")
    t_err, r_err = pose_error(rel_estimate, rel_ground_truth)
    label = int(t_err <= trans_threshold and r_err <= rot_threshold)
    return label, t_err, r_err


def select_best(candidates, y_th: float):
    """Highest-scoring candidate strictly above the threshold, else None."""
    best = None
    for cand in candidates:
        if cand.y_loop is None or cand.y_loop <= y_th:
            continue
        if best is None or cand.y_loop > best.y_loop:
            best = cand
    return best


# --- training corpus file ----------------------------------------------------

def save_corpus(path, candidates) -> None:
    """Line records: qidx cidx mode d_odom d_cc C_f C_a C_o label terr rerr."""
    with open(path, "w") as f:
        f.write("# qidx cidx mode d_odom d_cc C_f C_a C_o label terr rerr\n")
        for c in candidates:
            q = c.quality
            f.write(f"{c.query_index} {c.candidate_index} {c.mode.value} "
                    f"{c.d_odom:.9g} {c.d_cc:.9g} {q.c_f:.9g} {q.c_a:.9g} "
                    f"{q.c_o:.9g} {c.label} {c.t_err:.9g} {c.r_err:.9g}\n")


def load_corpus(path):
    """Read a corpus file back into (features, labels, records)."""
    feats, labels, records = [], [], []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            qidx, cidx = int(parts[0]), int(parts[1])
            mode = ViewpointMode(parts[2])
            d_odom, d_cc, c_f, c_a, c_o = (float(v) for v in parts[3:8])
            label = int(parts[8])
            terr, rerr = float(parts[9]), float(parts[10])
            feats.append([d_odom, d_cc, c_f, c_a, c_o, 1.0])
            labels.append(label)
            records.append((qidx, cidx, mode, terr, rerr))
    return np.asarray(feats), np.asarray(labels), records
