import math

import numpy as np
import pytest

from radarloop.geometry import Pose, quat_to_rotation, yaw_rotation
from radarloop.presets import build_preset, campus_loop, radar_profile
from radarloop.simulator import (RadarConfig, Scene, Wall, generate_trajectory,
                                 load_scans, render_scan, save_scans,
                                 simulate_imu, simulate_sequence)


def single_wall_scene(distance=20.0, reflectivity=1000.0):
    return Scene(walls=[Wall((distance, -30.0), (distance, 30.0), 8.0,
                             reflectivity)])


class TestTrajectory:
    def test_straight_segment(self):
        traj = generate_trajectory([(0, 0, 0), (100, 0, 0)], speed=1.0,
                                   scan_rate=10.0)
        assert len(traj) == 1000
        pos = np.stack([p.translation for p, _ in traj])
        steps = np.linalg.norm(np.diff(pos, axis=0), axis=1)
        np.testing.assert_allclose(steps, 0.1, atol=1e-9)

    def test_closed_square_returns_to_start(self):
        square = [(0, 0, 0), (20, 0, 0), (20, 20, 0), (0, 20, 0), (0, 0, 0)]
        traj = generate_trajectory(square, speed=2.0, scan_rate=5.0)
        gap = np.linalg.norm(traj[-1][0].translation
                             - traj[0][0].translation)
        assert gap <= 2.0 / 5.0 + 1e-9  # within one sample step

    def test_out_and_back_headings_flip(self):
        traj = generate_trajectory([(0, 0, 0), (40, 0, 0), (0, 0, 0)],
                                   speed=2.0, scan_rate=5.0)
        yaws = np.array([p.yaw_deg() for p, _ in traj])
        n = len(traj)
        assert np.allclose(yaws[: n // 2 - 1], 0.0, atol=1e-9)
        assert np.allclose(np.abs(yaws[n // 2 + 1:]), 180.0, atol=1e-9)

    def test_coincident_waypoints_rejected(self):
        with pytest.raises(ValueError):
            generate_trajectory([(0, 0, 0), (0, 0, 0), (5, 0, 0)], 1.0, 10.0)

    def test_velocity_is_backward_difference(self):
        traj = generate_trajectory([(0, 0, 0), (10, 5, 0)], speed=1.5,
                                   scan_rate=4.0)
        for i in range(1, len(traj)):
            expect = (traj[i][0].translation
                      - traj[i - 1][0].translation) * 4.0
            np.testing.assert_allclose(traj[i][1], expect, atol=1e-12)


class TestRenderScan:
    def test_static_sensor_zero_doppler(self):
        scan = render_scan(single_wall_scene(), Pose(), np.zeros(3),
                           RadarConfig(), seed=0)
        assert len(scan) > 0
        np.testing.assert_allclose(scan.dopplers, 0.0, atol=1e-12)

    def test_head_on_doppler(self):
        # doppler = -(p/|p|) . v exactly at zero noise; the most head-on
        # beam approaches -1 for v = (1,0,0).
        v = np.array([1.0, 0.0, 0.0])
        scan = render_scan(single_wall_scene(), Pose(), v, RadarConfig(),
                           seed=0)
        dirs = scan.positions / np.linalg.norm(scan.positions, axis=1,
                                               keepdims=True)
        np.testing.assert_allclose(scan.dopplers, -dirs @ v, atol=1e-12)
        head_on = int(np.argmax(dirs[:, 0]))
        assert scan.dopplers[head_on] == pytest.approx(-1.0, abs=0.01)

    def test_range_gate(self):
        scan = render_scan(single_wall_scene(distance=50.0), Pose(),
                           np.zeros(3), RadarConfig(max_range=42.0), seed=0)
        assert len(scan) == 0

    def test_fov_containment_with_noise(self):
        config = RadarConfig(range_noise=0.3, angular_noise=1.0,
                             doppler_noise=0.1, intensity_noise=5.0)
        scene, wps, _ = campus_loop(length=40, seed=2)
        scan = render_scan(scene, Pose(yaw_rotation(30.0), [5.0, 0.0, 1.0]),
                           np.array([2.0, 0, 0]), config, seed=4)
        assert len(scan) > 0
        az = np.degrees(np.arctan2(scan.positions[:, 1], scan.positions[:, 0]))
        el = np.degrees(np.arctan2(scan.positions[:, 2],
                                   np.hypot(scan.positions[:, 0],
                                            scan.positions[:, 1])))
        rng = np.linalg.norm(scan.positions, axis=1)
        assert np.all(np.abs(az) <= config.fov_az / 2 + 1e-9)
        assert np.all(np.abs(el) <= config.fov_el / 2 + 1e-9)
        assert np.all(rng <= config.max_range + 1e-9)

    def test_determinism(self):
        config = RadarConfig(range_noise=0.1, angular_noise=0.5,
                             doppler_noise=0.05, intensity_noise=3.0)
        a = render_scan(single_wall_scene(), Pose(), np.zeros(3), config, 7)
        b = render_scan(single_wall_scene(), Pose(), np.zeros(3), config, 7)
        c = render_scan(single_wall_scene(), Pose(), np.zeros(3), config, 8)
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.dopplers, b.dopplers)
        assert not np.array_equal(a.positions, c.positions)

    def test_doppler_consistency_least_squares(self):
        # Independent oracle: zero-noise static scan -> lstsq velocity
        # equals the commanded one.
        scene, wps, _ = campus_loop(length=40, seed=2)
        scene.dynamics = []
        v = np.array([1.3, -0.4, 0.05])
        scan = render_scan(scene, Pose(np.eye(3), [10.0, 0.0, 1.0]), v,
                           RadarConfig(), seed=1)
        dirs = scan.positions / np.linalg.norm(scan.positions, axis=1,
                                               keepdims=True)
        sol, *_ = np.linalg.lstsq(dirs, -scan.dopplers, rcond=None)
        np.testing.assert_allclose(sol, v, atol=1e-9)

    def test_dynamic_object_doppler_inconsistent(self):
        scene = single_wall_scene()
        from radarloop.simulator import DynamicObject
        scene.dynamics = [DynamicObject((10.0, 0.0), (-2.0, 0.0, 0.0),
                                        radius=0.8, height=3.0)]
        scan = render_scan(scene, Pose(), np.zeros(3), RadarConfig(), seed=0)
        rngs = np.linalg.norm(scan.positions, axis=1)
        on_object = rngs < 15.0
        assert np.any(on_object)
        # Static sensor: static returns are 0, the mover approaches at 2 m/s.
        assert np.all(scan.dopplers[on_object] < -1.5)
        assert np.allclose(scan.dopplers[~on_object], 0.0, atol=1e-12)

    def test_intensity_falls_with_range(self):
        near = render_scan(single_wall_scene(10.0), Pose(), np.zeros(3),
                           RadarConfig(), seed=0)
        far = render_scan(single_wall_scene(30.0), Pose(), np.zeros(3),
                          RadarConfig(), seed=0)
        assert near.intensities.max() > far.intensities.max()


class TestImu:
    def test_exact_when_clean(self):
        pose = Pose(yaw_rotation(33.0), [1.0, 2.0, 3.0])
        quat = simulate_imu(pose, t=17.0, drift_rate=0.0, noise_sigma=0.0,
                            seed=5)
        np.testing.assert_allclose(quat_to_rotation(quat), pose.rotation,
                                   atol=1e-12)

    def test_drift_accumulates(self):
        pose = Pose(yaw_rotation(10.0), np.zeros(3))
        quat = simulate_imu(pose, t=120.0, drift_rate=0.5, noise_sigma=0.0,
                            seed=5)
        got = quat_to_rotation(quat)
        np.testing.assert_allclose(got, yaw_rotation(1.0) @ pose.rotation,
                                   atol=1e-12)

    def test_seeded_determinism(self):
        pose = Pose(yaw_rotation(10.0), np.zeros(3))
        a = simulate_imu(pose, 3.0, 1.0, 0.5, seed=9)
        b = simulate_imu(pose, 3.0, 1.0, 0.5, seed=9)
        np.testing.assert_array_equal(a, b)


class TestSequenceAndFiles:
    def test_sequence_determinism(self):
        scene, wps, _ = campus_loop(length=30, seed=2)
        radar = radar_profile("short")
        a = simulate_sequence(scene, wps, radar, speed=2.0, scan_rate=2.0,
                              imu_drift=1.0, imu_noise=0.2, seed=6)
        b = simulate_sequence(scene, wps, radar, speed=2.0, scan_rate=2.0,
                              imu_drift=1.0, imu_noise=0.2, seed=6)
        for sa, sb in zip(a[0], b[0]):
            np.testing.assert_array_equal(sa.positions, sb.positions)
            np.testing.assert_array_equal(sa.imu_quat, sb.imu_quat)

    def test_scan_file_roundtrip(self, tmp_path):
        scene, wps, _ = campus_loop(length=30, seed=2)
        radar = radar_profile("short")
        scans, _, _ = simulate_sequence(scene, wps, radar, speed=2.0,
                                        scan_rate=2.0, seed=6)
        path = tmp_path / "scans.txt"
        save_scans(path, scans, radar)
        text = path.read_text().splitlines()
        assert text[0].startswith("#radar 80 30 42")
        loaded, header = load_scans(path)
        assert header["max_range"] == 42.0
        assert len(loaded) == len(scans)
        for a, b in zip(scans, loaded):
            np.testing.assert_allclose(a.positions, b.positions, atol=1e-7)
            np.testing.assert_allclose(a.dopplers, b.dopplers, atol=1e-7)
            np.testing.assert_allclose(a.imu_quat, b.imu_quat, atol=1e-9)

    def test_scene_dict_roundtrip(self):
        scene, _, _ = campus_loop(length=30, seed=2)
        clone = Scene.from_dict(scene.to_dict())
        assert len(clone.walls) == len(scene.walls)
        assert len(clone.cylinders) == len(scene.cylinders)
        assert clone.ground_reflectivity == scene.ground_reflectivity
        assert len(clone.dynamics) == len(scene.dynamics)

    def test_unknown_preset(self):
        with pytest.raises(KeyError):
            build_preset("volcano")

    def test_long_profile_range(self):
        assert radar_profile("long").max_range == 78.0
        assert radar_profile("short").max_range == 42.0
