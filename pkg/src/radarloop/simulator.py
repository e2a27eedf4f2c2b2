"""Deterministic synthetic generator of 4D radar scan sequences.

Scenes are built from vertical walls, cylinders ("trees"), a ground plane and
optional dynamic objects.  Scans are ray-cast on a uniform azimuth x elevation
beam grid with per-ray angular jitter; every emitted point carries intensity
(reflectivity falloff model) and a Doppler radial velocity consistent with the
commanded sensor velocity.  Everything is reproducible from integer seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, rotation_to_quat, yaw_rotation

# Range at which a reflectivity-1 surface at normal incidence returns
# intensity 1; intensities scale with (REF_RANGE / range)^2.
REF_RANGE = 10.0

_MIN_RANGE = 0.2


@dataclass
class Wall:
    """Vertical rectangle from (x1,y1,0)-(x2,y2,0) up to `height`."""

    start: tuple[float, float]
    end: tuple[float, float]
    height: float = 4.0
    reflectivity: float = 1000.0


@dataclass
class Cylinder:
    """Vertical cylinder standing on the ground plane."""

    center: tuple[float, float]
    radius: float = 0.3
    height: float = 6.0
    reflectivity: float = 800.0


@dataclass
class DynamicObject:
    """Moving cylinder; position advances along `velocity` with scan time."""

    center: tuple[float, float]
    velocity: tuple[float, float, float]
    radius: float = 0.4
    height: float = 1.8
    reflectivity: float = 600.0


@dataclass
class Scene:
    walls: list[Wall] = field(default_factory=list)
    cylinders: list[Cylinder] = field(default_factory=list)
    ground_reflectivity: float = 0.0  # 0 disables the ground plane
    dynamics: list[DynamicObject] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "walls": [[*w.start, *w.end, w.height, w.reflectivity]
                      for w in self.walls],
            "cylinders": [[*c.center, c.radius, c.height, c.reflectivity]
                          for c in self.cylinders],
            "ground_reflectivity": self.ground_reflectivity,
            "dynamics": [[*d.center, *d.velocity, d.radius, d.height,
                          d.reflectivity] for d in self.dynamics],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls(
            walls=[Wall((v[0], v[1]), (v[2], v[3]), v[4], v[5])
                   for v in d.get("walls", [])],
            cylinders=[Cylinder((v[0], v[1]), v[2], v[3], v[4])
                       for v in d.get("cylinders", [])],
            ground_reflectivity=float(d.get("ground_reflectivity", 0.0)),
            dynamics=[DynamicObject((v[0], v[1]), (v[2], v[3], v[4]),
                                    v[5], v[6], v[7])
                      for v in d.get("dynamics", [])],
        )


@dataclass
class RadarConfig:
    """Sensor model: FOV, range gate, per-point noise, beam count."""

    fov_az: float = 80.0          # degrees, full width
    fov_el: float = 30.0          # degrees, full width
    max_range: float = 42.0       # meters (short-range profile; long is 78)
    range_noise: float = 0.0      # sigma, meters
    angular_noise: float = 0.0    # sigma, degrees (per-ray jitter)
    doppler_noise: float = 0.0    # sigma, m/s
    intensity_noise: float = 0.0  # sigma, unitless
    rays_per_scan: int = 480


LONG_RANGE = 78.0


@dataclass
class RadarScan:
    """One radar frame: sensor-frame points plus the IMU orientation."""

    timestamp: float
    positions: np.ndarray                 # (N, 3) sensor frame, meters
    intensities: np.ndarray               # (N,)
    dopplers: np.ndarray                  # (N,) m/s, negative = approaching
    imu_quat: np.ndarray                  # (w, x, y, z), world from sensor

    def __len__(self) -> int:
        return len(self.positions)


def _beam_grid(config: RadarConfig) -> tuple[np.ndarray, np.ndarray]:
    """Uniform az x el beam centers (degrees) covering the FOV."""
    n_az = max(1, int(round(math.sqrt(
        config.rays_per_scan * config.fov_az / max(config.fov_el, 1e-6)))))
    n_el = max(1, int(round(config.rays_per_scan / n_az)))
    az = np.linspace(-config.fov_az / 2, config.fov_az / 2, n_az)
    el = np.linspace(-config.fov_el / 2, config.fov_el / 2, n_el)
    azg, elg = np.meshgrid(az, el)
    return azg.ravel(), elg.ravel()


def _directions(az_deg: np.ndarray, el_deg: np.ndarray) -> np.ndarray:
    az = np.radians(az_deg)
    el = np.radians(el_deg)
    return np.stack([np.cos(el) * np.cos(az),
                     np.cos(el) * np.sin(az),
                     np.sin(el)], axis=1)


def _intersect_walls(origin, dirs, walls):
    """Per-ray (range, cos incidence, reflectivity) against a wall list."""
    n_rays = len(dirs)
    best_t = np.full(n_rays, np.inf)
    best_cos = np.zeros(n_rays)
    best_refl = np.zeros(n_rays)
    if not walls:
        return best_t, best_cos, best_refl
    a = np.array([[w.start[0], w.start[1], 0.0] for w in walls])
    b2 = np.array([[w.end[0], w.end[1]] for w in walls])
    seg = b2 - a[:, :2]
    seg_len = np.linalg.norm(seg, axis=1)
    u = seg / seg_len[:, None]
    normal = np.stack([-u[:, 1], u[:, 0], np.zeros(len(walls))], axis=1)
    heights = np.array([w.height for w in walls])
    refl = np.array([w.reflectivity for w in walls])

    denom = dirs @ normal.T                              # (R, W)
    numer = np.einsum("wk,wk->w", normal, a - origin)    # (W,)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = numer[None, :] / denom
    hit = origin[None, None, :] + t[:, :, None] * dirs[:, None, :]
    s = np.einsum("rwk,wk->rw", hit[:, :, :2] - a[None, :, :2], u)
    ok = ((np.abs(denom) > 1e-12) & (t > _MIN_RANGE)
          & (s >= 0.0) & (s <= seg_len[None, :])
          & (hit[:, :, 2] >= 0.0) & (hit[:, :, 2] <= heights[None, :]))
    t = np.where(ok, t, np.inf)
    idx = np.argmin(t, axis=1)
    rows = np.arange(n_rays)
    best_t = t[rows, idx]
    best_cos = np.abs(denom[rows, idx])
    best_refl = refl[idx]
    best_cos[~np.isfinite(best_t)] = 0.0
    return best_t, best_cos, best_refl


def _intersect_cylinders(origin, dirs, centers, radii, heights, refl):
    """Per-ray (range, cos incidence, reflectivity, index) against cylinders."""
    n_rays = len(dirs)
    best_t = np.full(n_rays, np.inf)
    best_cos = np.zeros(n_rays)
    best_refl = np.zeros(n_rays)
    best_idx = np.full(n_rays, -1)
    if len(centers) == 0:
        return best_t, best_cos, best_refl, best_idx
    d_xy = dirs[:, :2]
    rel = origin[None, :2] - centers                     # (C, 2)
    a = np.einsum("rk,rk->r", d_xy, d_xy)                # (R,)
    b = 2.0 * (d_xy @ rel.T)                             # (R, C)
    c0 = np.einsum("ck,ck->c", rel, rel) - radii ** 2    # (C,)
    disc = b * b - 4.0 * a[:, None] * c0[None, :]
    with np.errstate(invalid="ignore"):
        sq = np.sqrt(np.maximum(disc, 0.0))
        t = (-b - sq) / (2.0 * a[:, None])
    z = origin[2] + t * dirs[:, 2:3]
    ok = (disc > 0.0) & (t > _MIN_RANGE) & (z >= 0.0) & (z <= heights[None, :])
    t = np.where(ok, t, np.inf)
    idx = np.argmin(t, axis=1)
    rows = np.arange(n_rays)
    best_t = t[rows, idx]
    finite = np.isfinite(best_t)
    best_idx = np.where(finite, idx, -1)
    # Incidence against the radial surface normal at the hit point.
    best_cos = np.zeros(n_rays)
    best_refl = np.zeros(n_rays)
    if np.any(finite):
        hit_xy = origin[None, :2] + best_t[finite, None] * d_xy[finite]
        nrm = hit_xy - centers[best_idx[finite]]
        nn = np.linalg.norm(nrm, axis=1)
        nn[nn == 0] = 1.0
        best_cos[finite] = np.abs(
            np.einsum("rk,rk->r", d_xy[finite], nrm / nn[:, None]))
        best_refl[finite] = refl[best_idx[finite]]
    return best_t, best_cos, best_refl, best_idx


def render_scan(scene: Scene, pose: Pose, velocity: np.ndarray,
                config: RadarConfig, seed: int, *, time: float = 0.0,
                timestamp: float | None = None) -> RadarScan:
    """Ray-cast one radar frame from `pose` moving at world `velocity`.

    Deterministic for a given seed.  Dynamic objects are placed at
    center + velocity*time and return Doppler inconsistent with ego motion.
    """
    rng = np.random.default_rng([seed])
    az0, el0 = _beam_grid(config)
    az = az0 + rng.normal(0.0, config.angular_noise, az0.shape)
    el = el0 + rng.normal(0.0, config.angular_noise, el0.shape)
    az = np.clip(az, -config.fov_az / 2, config.fov_az / 2)
    el = np.clip(el, -config.fov_el / 2, config.fov_el / 2)
    dirs_sensor = _directions(az, el)
    dirs_world = dirs_sensor @ pose.rotation.T
    origin = pose.translation
    velocity = np.asarray(velocity, dtype=float)

    t_wall, cos_wall, refl_wall = _intersect_walls(origin, dirs_world,
                                                   scene.walls)
    if scene.cylinders:
        centers = np.array([c.center for c in scene.cylinders])
        radii = np.array([c.radius for c in scene.cylinders])
        heights = np.array([c.height for c in scene.cylinders])
        refl = np.array([c.reflectivity for c in scene.cylinders])
        t_cyl, cos_cyl, refl_cyl, _ = _intersect_cylinders(
            origin, dirs_world, centers, radii, heights, refl)
    else:
        t_cyl = np.full(len(dirs_world), np.inf)
        cos_cyl = refl_cyl = np.zeros(len(dirs_world))

    if scene.dynamics:
        centers = np.array([d.center for d in scene.dynamics]) \
            + time * np.array([d.velocity for d in scene.dynamics])[:, :2]
        radii = np.array([d.radius for d in scene.dynamics])
        heights = np.array([d.height for d in scene.dynamics])
        refl = np.array([d.reflectivity for d in scene.dynamics])
        t_dyn, cos_dyn, refl_dyn, idx_dyn = _intersect_cylinders(
            origin, dirs_world, centers, radii, heights, refl)
    else:
        t_dyn = np.full(len(dirs_world), np.inf)
        cos_dyn = refl_dyn = np.zeros(len(dirs_world))
        idx_dyn = np.full(len(dirs_world), -1)

    if scene.ground_reflectivity > 0:
        dz = dirs_world[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_gnd = np.where(dz < -1e-9, -origin[2] / dz, np.inf)
        t_gnd = np.where(t_gnd > _MIN_RANGE, t_gnd, np.inf)
        cos_gnd = np.abs(dz)
        refl_gnd = np.full(len(dirs_world), scene.ground_reflectivity)
    else:
        t_gnd = np.full(len(dirs_world), np.inf)
        cos_gnd = refl_gnd = np.zeros(len(dirs_world))

    all_t = np.stack([t_wall, t_cyl, t_dyn, t_gnd])
    all_cos = np.stack([cos_wall, cos_cyl, cos_dyn, cos_gnd])
    all_refl = np.stack([refl_wall, refl_cyl, refl_dyn, refl_gnd])
    which = np.argmin(all_t, axis=0)
    cols = np.arange(len(dirs_world))
    rng_true = all_t[which, cols]
    cosinc = all_cos[which, cols]
    reflv = all_refl[which, cols]

    keep = np.isfinite(rng_true) & (rng_true <= config.max_range)
    if not np.any(keep):
        return RadarScan(timestamp if timestamp is not None else time,
                         np.zeros((0, 3)), np.zeros(0), np.zeros(0),
                         rotation_to_quat(pose.rotation))

    rng_true = rng_true[keep]
    cosinc = cosinc[keep]
    reflv = reflv[keep]
    dirs_w = dirs_world[keep]
    dirs_s = dirs_sensor[keep]
    which = which[keep]
    idx_dyn = idx_dyn[keep]

    # Doppler: radial rate of the target relative to the sensor.
    target_vel = np.zeros_like(dirs_w)
    dyn_hit = which == 2
    if np.any(dyn_hit):
        vels = np.array([d.velocity for d in scene.dynamics])
        target_vel[dyn_hit] = vels[idx_dyn[dyn_hit]]
    doppler = np.einsum("rk,rk->r", dirs_w, target_vel - velocity[None, :])
    doppler = doppler + rng.normal(0.0, config.doppler_noise, doppler.shape)

    meas_range = rng_true + rng.normal(0.0, config.range_noise, rng_true.shape)
    meas_range = np.clip(meas_range, _MIN_RANGE, config.max_range)
    positions = dirs_s * meas_range[:, None]

    intensity = reflv * cosinc * (REF_RANGE / rng_true) ** 2
    intensity = intensity + rng.normal(0.0, config.intensity_noise,
                                       intensity.shape)
    intensity = np.maximum(intensity, 0.0)

    return RadarScan(timestamp if timestamp is not None else time,
                     positions, intensity, doppler,
                     rotation_to_quat(pose.rotation))


def simulate_imu(pose: Pose, t: float, drift_rate: float, noise_sigma: float,
                 seed: int) -> np.ndarray:
    """IMU orientation estimate: true pose with accumulating yaw drift.

    drift_rate is degrees/minute about the world vertical; white yaw noise
    of `noise_sigma` degrees is added per sample.  Deterministic in
    (seed, t).
    """
    rng = np.random.default_rng([seed, int(round(t * 1e6)) & 0x7FFFFFFF])
    yaw_off = drift_rate * t / 60.0 + rng.normal(0.0, noise_sigma)
    return rotation_to_quat(yaw_rotation(yaw_off) @ pose.rotation)


def generate_trajectory(waypoints, speed: float, scan_rate: float):
    """Constant-speed piecewise-linear path sampled at `scan_rate`.

    Returns a list of (Pose, world velocity).  Heading follows the travel
    direction; per-sample velocity is the backward difference so that
    integrating velocity reproduces the positions exactly.
    """
    wp = np.asarray(waypoints, dtype=float)
    if wp.ndim != 2 or wp.shape[0] < 2 or wp.shape[1] != 3:
        raise ValueError("need at least two 3D waypoints")
    if speed <= 0:
        raise ValueError("speed must be positive")
    seg = np.diff(wp, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    if np.any(seg_len < 1e-9):
        raise ValueError("coincident consecutive waypoints")
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    n = int(round(total / speed * scan_rate))
    s = np.arange(n) * speed / scan_rate
    pos = np.stack([np.interp(s, cum, wp[:, k]) for k in range(3)], axis=1)
    seg_idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0,
                      len(seg) - 1)
    yaw = np.degrees(np.arctan2(seg[seg_idx, 1], seg[seg_idx, 0]))

    out = []
    dt = 1.0 / scan_rate
    for i in range(n):
        vel = (pos[i] - pos[i - 1]) / dt if i > 0 else (pos[1] - pos[0]) / dt
        out.append((Pose(yaw_rotation(yaw[i]), pos[i]), vel))
    return out


def simulate_sequence(scene: Scene, waypoints, config: RadarConfig, *,
                      speed: float = 2.0, scan_rate: float = 5.0,
                      imu_drift: float = 0.0, imu_noise: float = 0.0,
                      seed: int = 0):
    """Render a full scan sequence along a trajectory.

    Returns (scans, true_poses, timestamps).  Scan i carries the IMU
    orientation estimate; ground truth poses are returned separately.
    """
    traj = generate_trajectory(waypoints, speed, scan_rate)
    scans, poses, times = [], [], []
    for i, (pose, vel) in enumerate(traj):
        t = i / scan_rate
        scan = render_scan(scene, pose, vel, config, seed + 7919 * i,
                           time=t, timestamp=t)
        scan.imu_quat = simulate_imu(pose, t, imu_drift, imu_noise,
                                     seed + 104729)
        scans.append(scan)
        poses.append(pose)
        times.append(t)
    return scans, poses, np.asarray(times)


# --- scan sequence file format ----------------------------------------------

def save_scans(path, scans, config: RadarConfig) -> None:
    """Line-delimited format: header, then S/P records per scan."""
    with open(path, "w") as f:
        f.write(f"#radar {config.fov_az:.9g} {config.fov_el:.9g} "
                f"{config.max_range:.9g}\n")
        for scan in scans:
            qw, qx, qy, qz = scan.imu_quat
            f.write(f"S {scan.timestamp:.9g} {qw:.9g} {qx:.9g} "
                    f"{qy:.9g} {qz:.9g}\n")
            for p, it, dp in zip(scan.positions, scan.intensities,
                                 scan.dopplers):
                f.write(f"P {p[0]:.9g} {p[1]:.9g} {p[2]:.9g} "
                        f"{it:.9g} {dp:.9g}\n")


def load_scans(path):
    """Read a scan sequence file; returns (scans, header dict)."""
    header = {}
    scans: list[RadarScan] = []
    cur_pts: list[list[float]] = []
    cur_meta = None

    def flush():
        if cur_meta is None:
            return
        arr = np.asarray(cur_pts, dtype=float).reshape(-1, 5)
        scans.append(RadarScan(cur_meta[0], arr[:, :3].copy(),
                               arr[:, 3].copy(), arr[:, 4].copy(),
                               np.asarray(cur_meta[1])))

    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#radar"):
                vals = line.split()[1:]
                header = {"fov_az": float(vals[0]), "fov_el": float(vals[1]),
                          "max_range": float(vals[2])}
            elif line.startswith("S "):
                flush()
                vals = [float(v) for v in line.split()[1:]]
                cur_meta = (vals[0], np.array(vals[1:5]))
                cur_pts = []
            elif line.startswith("P "):
                cur_pts.append([float(v) for v in line.split()[1:]])
            else:
                raise ValueError(f"unrecognized scan file line: {line!r}")
    flush()
    return scans, header
