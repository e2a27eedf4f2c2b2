"""Built-in scenes: a self-similar corridor, an out-and-back campus route and
a same-direction forest loop, each paired with a matching trajectory."""

from __future__ import annotations

import numpy as np

from .simulator import Cylinder, DynamicObject, RadarConfig, Scene, Wall

GROUND_REFLECTIVITY = 90.0


def _box(cx: float, cy: float, sx: float, sy: float, height: float,
         reflectivity: float) -> list[Wall]:
    x0, x1 = cx - sx / 2, cx + sx / 2
    y0, y1 = cy - sy / 2, cy + sy / 2
    return [Wall((x0, y0), (x1, y0), height, reflectivity),
            Wall((x1, y0), (x1, y1), height, reflectivity),
            Wall((x1, y1), (x0, y1), height, reflectivity),
            Wall((x0, y1), (x0, y0), height, reflectivity)]


def corridor_with_side_tunnels(length: float = 100.0, width: float = 10.0,
                               tunnel_spacing: float = 20.0,
                               tunnel_width: float = 4.0,
                               tunnel_depth: float = 7.0,
                               seed: int = 0):
    """Mine-like corridor: evenly spaced side tunnels on both walls.

    The periodic tunnel mouths make the scene self-similar along the corridor
    and between its two walls, which is the registration failure case the
    verifier must catch.  Trajectory is out-and-back along the center line.
    """
    h = 5.0
    refl = 1200.0
    half = width / 2
    walls: list[Wall] = []
    # End caps close the world.
    walls.append(Wall((-6.0, -half - 1), (-6.0, half + 1), h, refl))
    walls.append(Wall((length + 6.0, -half - 1), (length + 6.0, half + 1),
                      h, refl))
    mouths = np.arange(tunnel_spacing, length - 1e-6, tunnel_spacing)
    for side in (-1.0, 1.0):
        y = side * half
        prev = -6.0
        for m in mouths:
            walls.append(Wall((prev, y), (m - tunnel_width / 2, y), h, refl))
            # Side tunnel stub: two jambs and an end cap.
            x0, x1 = m - tunnel_width / 2, m + tunnel_width / 2
            y_end = side * (half + tunnel_depth)
            walls.append(Wall((x0, y), (x0, y_end), h, refl))
            walls.append(Wall((x1, y), (x1, y_end), h, refl))
            walls.append(Wall((x0, y_end), (x1, y_end), h, refl))
            prev = x1
        walls.append(Wall((prev, y), (length + 6.0, y), h, refl))
    scene = Scene(walls=walls, ground_reflectivity=GROUND_REFLECTIVITY)
    waypoints = [(0.0, 0.0, 1.0), (length, 0.0, 1.0), (0.0, 0.0, 1.0)]
    settings = {"w": 15, "speed": 2.0, "scan_rate": 5.0}
    return scene, waypoints, settings


def campus_loop(length: float = 100.0, seed: int = 0):
    """Out-and-back route through varied buildings and trees.

    Building sizes, offsets and reflectivities are drawn from `seed` so the
    appearance along the route is distinctive — reverse-pass keyframes should
    match their outbound counterparts and nothing else.
    """
    rng = np.random.default_rng([seed, 11])
    walls: list[Wall] = []
    cylinders: list[Cylinder] = []
    x = -25.0
    side = 1.0
    while x < length + 10.0:
        sx = rng.uniform(6.0, 14.0)
        sy = rng.uniform(5.0, 12.0)
        off = rng.uniform(9.0, 16.0)
        h = rng.uniform(4.0, 9.0)
        refl = rng.uniform(900.0, 1600.0)
        walls.extend(_box(x + sx / 2, side * (off + sy / 2), sx, sy, h, refl))
        if rng.uniform() < 0.5:
            # Occasional building on the other side as well.
            sx2 = rng.uniform(5.0, 10.0)
            sy2 = rng.uniform(4.0, 9.0)
            off2 = rng.uniform(10.0, 18.0)
            walls.extend(_box(x + sx2 / 2, -side * (off2 + sy2 / 2),
                              sx2, sy2, rng.uniform(4.0, 8.0),
                              rng.uniform(900.0, 1600.0)))
        x += sx + rng.uniform(6.0, 14.0)
        side = -side
    n_trees = 30
    for _ in range(n_trees):
        tx = rng.uniform(-20.0, length + 5.0)
        ty = rng.uniform(-8.0, 8.0)
        if abs(ty) < 2.0:
            ty = 2.0 + (ty % 4.0) if ty >= 0 else -2.0 - ((-ty) % 4.0)
        cylinders.append(Cylinder((tx, ty), rng.uniform(0.15, 0.45),
                                  rng.uniform(3.0, 9.0),
                                  rng.uniform(500.0, 1100.0)))
    # Movers head along the route axis: with the forward-looking FOV their
    # Doppler is then inconsistent with ego motion whenever they are visible,
    # so RANSAC can reject them.
    dynamics = [DynamicObject((length * 0.4, -6.0), (1.3, 0.15, 0.0)),
                DynamicObject((length * 0.7, 6.0), (-1.2, -0.2, 0.0))]
    scene = Scene(walls=walls, cylinders=cylinders,
                  ground_reflectivity=GROUND_REFLECTIVITY, dynamics=dynamics)
    # A lead-in leg warms up the submap before the revisited stretch, so the
    # first revisited keyframes already have surround coverage; the return
    # leg stops short of the lead-in for the same reason.
    waypoints = [(-18.0, 0.0, 1.0), (length, 0.0, 1.0), (4.0, 0.0, 1.0)]
    settings = {"w": 6, "speed": 2.0, "scan_rate": 5.0}
    return scene, waypoints, settings


def forest_loop(side: float = 60.0, seed: int = 0):
    """Random-cylinder forest; a square loop traversed twice, same direction."""
    rng = np.random.default_rng([seed, 23])
    cylinders: list[Cylinder] = []
    corners = np.array([[0.0, 0.0], [side, 0.0], [side, side], [0.0, side]])
    n_trees = 220
    tries = 0
    while len(cylinders) < n_trees and tries < 20 * n_trees:
        tries += 1
        p = rng.uniform([-12.0, -12.0], [side + 12.0, side + 12.0])
        # Keep the path itself clear of trunks.
        d = min(_dist_to_segment(p, corners[i], corners[(i + 1) % 4])
                for i in range(4))
        if d < 1.8:
            continue
        cylinders.append(Cylinder(tuple(p), rng.uniform(0.15, 0.5),
                                  rng.uniform(3.0, 10.0),
                                  rng.uniform(450.0, 1000.0)))
    scene = Scene(cylinders=cylinders,
                  ground_reflectivity=GROUND_REFLECTIVITY)
    loop = [(0.0, 0.0, 1.0), (side, 0.0, 1.0), (side, side, 1.0),
            (0.0, side, 1.0)]
    waypoints = loop + loop + [loop[0]]
    settings = {"w": 6, "speed": 2.0, "scan_rate": 5.0}
    return scene, waypoints, settings


def _dist_to_segment(p, a, b) -> float:
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


PRESETS = {
    "corridor_with_side_tunnels": corridor_with_side_tunnels,
    "campus_loop": campus_loop,
    "forest_loop": forest_loop,
}


def build_preset(name: str, seed: int = 0):
    """Look up a preset by name -> (scene, waypoints, settings)."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; "
                       f"choose from {sorted(PRESETS)}")
    return PRESETS[name](seed=seed)


def radar_profile(name: str) -> RadarConfig:
    """Sensor noise/range profiles used by the simulate subcommand."""
    if name == "short":
        return RadarConfig(max_range=42.0, range_noise=0.04,
                           angular_noise=0.15, doppler_noise=0.04,
                           intensity_noise=4.0)
    if name == "long":
        return RadarConfig(max_range=78.0, range_noise=0.08,
                           angular_noise=0.15, doppler_noise=0.04,
                           intensity_noise=4.0)
    if name == "noiseless":
        return RadarConfig(max_range=42.0)
    raise KeyError(f"unknown radar profile {name!r}")
