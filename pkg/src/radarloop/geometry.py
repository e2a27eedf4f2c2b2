"""SE(3) poses, rotations and the distance primitives shared by all modules.

Rotations are stored as 3x3 matrices internally; quaternions (w, x, y, z)
appear only at file-format boundaries.  Angles in the public API are degrees.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation as _Rotation


class ViewpointMode(enum.Enum):
    """Loop hypothesis: ~0 deg (similar) or ~180 deg (opposing) relative yaw."""

    SIMILAR = "sv"
    OPPOSING = "ov"

    @property
    def expected_rotation(self) -> np.ndarray:
        """Expected query-vs-candidate relative rotation for this hypothesis."""
        return yaw_rotation(0.0 if self is ViewpointMode.SIMILAR else 180.0)


@dataclass
class Pose:
    """Rigid transform: world point = rotation @ sensor point + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)

    def compose(self, other: "Pose") -> "Pose":
        """Standard SE(3) group composition self * other."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply to an (N, 3) array (or a single 3-vector)."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def yaw_deg(self) -> float:
        """Heading about +z, in degrees."""
        return math.degrees(math.atan2(self.rotation[1, 0], self.rotation[0, 0]))

    def copy(self) -> "Pose":
        return Pose(self.rotation.copy(), self.translation.copy())

    def is_valid(self, tol: float = 1e-9) -> bool:
        err = np.linalg.norm(self.rotation.T @ self.rotation - np.eye(3))
        return bool(err < tol and np.linalg.det(self.rotation) > 0)


def identity() -> Pose:
    return Pose()


def compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def yaw_rotation(angle_deg: float) -> np.ndarray:
    """Rotation about the vertical (+z) axis."""
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def geodesic_angle(rot_a: np.ndarray, rot_b: np.ndarray,
                   delta: np.ndarray | None = None) -> float:
    """Scalar angular difference arccos(0.5 (tr(Ra^-1 Rb delta) - 1)), degrees.

    ``delta`` is the expected relative rotation (identity when omitted).  The
    trace argument is clamped to [-1, 1] so exact matches cannot produce NaN.
    """
    m = rot_a.T @ rot_b
    if delta is not None:
        m = m @ delta
    c = 0.5 * (np.trace(m) - 1.0)
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def rotation_angle_deg(rot: np.ndarray) -> float:
    """Magnitude of a rotation, in degrees."""
    return geodesic_angle(np.eye(3), rot)


def pose_error(estimate: Pose, reference: Pose) -> tuple[float, float]:
    """(translational m, rotational deg) discrepancy between two poses."""
    t_err = float(np.linalg.norm(estimate.translation - reference.translation))
    r_err = geodesic_angle(estimate.rotation, reference.rotation)
    return t_err, r_err


# --- quaternion boundary (w, x, y, z) ------------------------------------

def rotation_to_quat(rot: np.ndarray) -> np.ndarray:
    """Matrix -> unit quaternion (w, x, y, z), w >= 0 for determinism."""
    x, y, z, w = _Rotation.from_matrix(rot).as_quat()
    q = np.array([w, x, y, z])
    if q[0] < 0:
        q = -q
    return q


def quat_to_rotation(quat: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) -> matrix."""
    w, x, y, z = np.asarray(quat, dtype=float)
    return _Rotation.from_quat([x, y, z, w]).as_matrix()


# --- so(3) / se(3) maps ----------------------------------------------------

def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(phi: np.ndarray) -> np.ndarray:
    """Rotation vector (radians) -> rotation matrix."""
    angle = np.linalg.norm(phi)
    if angle < 1e-12:
        return np.eye(3) + skew(phi)
    axis = phi / angle
    k = skew(axis)
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def so3_log(rot: np.ndarray) -> np.ndarray:
    """Rotation matrix -> rotation vector (radians); robust near 0 and pi."""
    return _Rotation.from_matrix(rot).as_rotvec()


def _so3_left_jacobian(phi: np.ndarray) -> np.ndarray:
    angle = np.linalg.norm(phi)
    k = skew(phi)
    if angle < 1e-9:
        return np.eye(3) + 0.5 * k
    a2 = angle * angle
    return (np.eye(3)
            + (1.0 - math.cos(angle)) / a2 * k
            + (angle - math.sin(angle)) / (a2 * angle) * (k @ k))


def se3_exp(xi: np.ndarray) -> Pose:
    """Twist [rho, phi] (m, rad) -> pose."""
    rho, phi = xi[:3], xi[3:]
    rot = so3_exp(phi)
    return Pose(rot, _so3_left_jacobian(phi) @ rho)


def se3_log(pose: Pose) -> np.ndarray:
    """Pose -> twist [rho, phi] (m, rad)."""
    phi = so3_log(pose.rotation)
    v_inv = np.linalg.inv(_so3_left_jacobian(phi))
    return np.concatenate([v_inv @ pose.translation, phi])


def se3_adjoint(pose: Pose) -> np.ndarray:
    """Adjoint of a pose for twist ordering [rho, phi]."""
    ad = np.zeros((6, 6))
    ad[:3, :3] = pose.rotation
    ad[3:, 3:] = pose.rotation
    ad[:3, 3:] = skew(pose.translation) @ pose.rotation
    return ad


# --- TUM trajectory format -------------------------------------------------

def save_tum(path, timestamps, poses) -> None:
    """Write `timestamp tx ty tz qx qy qz qw` lines."""
    with open(path, "w") as f:
        for t, pose in zip(timestamps, poses):
            qw, qx, qy, qz = rotation_to_quat(pose.rotation)
            tx, ty, tz = pose.translation
            f.write(f"{t:.9g} {tx:.9g} {ty:.9g} {tz:.9g} "
                    f"{qx:.9g} {qy:.9g} {qz:.9g} {qw:.9g}\n")


def load_tum(path) -> tuple[np.ndarray, list[Pose]]:
    """Read a TUM trajectory; returns (timestamps, poses)."""
    times, poses = [], []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = [float(v) for v in line.split()]
            if len(vals) != 8:
                raise ValueError(f"malformed TUM line: {line!r}")
            t, tx, ty, tz, qx, qy, qz, qw = vals
            times.append(t)
            poses.append(Pose(quat_to_rotation([qw, qx, qy, qz]),
                              [tx, ty, tz]))
    return np.asarray(times), poses
