import math

import numpy as np
import pytest

from platoonrl import geometry
from platoonrl.sensing import (
    RAY_COUNT,
    Scene,
    SensedVehicle,
    WorldSnapshot,
    build_scene,
    cast_ray,
    cast_rays,
    default_raycast_config,
    sense,
)
from platoonrl.track import VEHICLE_HALF

from oracles import march_ray

V_MAX = 40.0 / 3.6


def empty_snapshot(vehicles):
    return WorldSnapshot(vehicles=vehicles,
                         border_segments=geometry.EMPTY_SEGMENTS.copy(),
                         obstacle_rects=geometry.EMPTY_RECTS.copy(),
                         v_max=V_MAX)


def scene_of(segments=None, rects=None):
    rects = np.asarray(rects, dtype=float) if rects is not None else geometry.EMPTY_RECTS.copy()
    base = [np.asarray(segments, dtype=float)] if segments is not None else []
    base.append(geometry.rects_to_segments(rects))
    return Scene(segments=np.vstack(base) if base else geometry.EMPTY_SEGMENTS.copy(),
                 rects=rects)


def test_ray_hits_wall_dead_ahead():
    scene = scene_of(segments=[[7.0, -5.0, 7.0, 5.0]])
    dist = cast_ray(np.zeros(2), np.array([1.0, 0.0]), 30.0, scene)
    assert dist == pytest.approx(7.0, abs=1e-9)


def test_ray_into_empty_space_returns_range():
    scene = scene_of()
    assert cast_ray(np.zeros(2), np.array([1.0, 0.0]), 30.0, scene) == 30.0


def test_ray_takes_nearest_of_two_obstacles():
    rects = [[5.0, 0.0, 0.5, 0.5, 0.0], [12.0, 0.0, 0.5, 0.5, 0.0]]
    scene = scene_of(rects=rects)
    dist = cast_ray(np.zeros(2), np.array([1.0, 0.0]), 30.0, scene)
    assert dist == pytest.approx(4.5, abs=1e-9)


def test_ray_origin_inside_solid_rect_reads_zero():
    scene = scene_of(rects=[[0.0, 0.0, 2.0, 2.0, 0.0]])
    assert cast_ray(np.zeros(2), np.array([1.0, 0.0]), 30.0, scene) == 0.0


def test_lone_vehicle_sees_nothing():
    snapshot = empty_snapshot({
        "ego": SensedVehicle(np.zeros(2), 0.0, VEHICLE_HALF, 0.0)})
    frame = sense("ego", snapshot)
    assert np.all(frame.distances == 1.0)
    assert frame.speed_norm == 0.0


def test_predecessor_ahead_blocks_forward_ray():
    config = default_raycast_config()
    snapshot = empty_snapshot({
        "ego": SensedVehicle(np.zeros(2), 0.0, VEHICLE_HALF, 0.0),
        "pred": SensedVehicle(np.array([10.0, 0.0]), 0.0, VEHICLE_HALF, 0.0)})
    frame = sense("ego", snapshot, config)
    forward = int(np.argmin(np.abs(config.angles)))   # body-relative angle 0
    # predecessor center 10 m ahead, rear face at 10 - half-length = 8 m
    assert frame.distances[forward] == pytest.approx(8.0 / 30.0, abs=1e-9)
    assert frame.distances[forward] < 1.0
    # cross-check the expected value with the marching oracle
    scene = build_scene(snapshot, exclude_id="ego")
    oracle = march_ray(np.zeros(2), np.array([1.0, 0.0]), 30.0,
                       scene.segments[:0], [((10.0, 0.0), VEHICLE_HALF, 0.0)])
    assert frame.distances[forward] * 30.0 == pytest.approx(oracle, abs=2e-3)


def test_unknown_vehicle_id_raises():
    snapshot = empty_snapshot({
        "ego": SensedVehicle(np.zeros(2), 0.0, VEHICLE_HALF, 0.0)})
    with pytest.raises(ValueError, match="unknown vehicle"):
        sense("ghost", snapshot)


def test_speed_normalization():
    snapshot = empty_snapshot({
        "ego": SensedVehicle(np.zeros(2), 0.0, VEHICLE_HALF, V_MAX / 2.0)})
    assert sense("ego", snapshot).speed_norm == pytest.approx(0.5)


def test_raycast_config_shape():
    config = default_raycast_config()
    assert len(config.angles) == RAY_COUNT == 16
    assert np.all(np.diff(config.angles) > 0)
    assert config.angles[0] == -np.pi
    assert config.angles[-1] < np.pi


def _random_scene(rng):
    segments = []
    for _ in range(rng.integers(0, 4)):
        p = rng.uniform(-20.0, 20.0, size=2)
        q = p + rng.uniform(-15.0, 15.0, size=2)
        segments.append([p[0], p[1], q[0], q[1]])
    rects = []
    for _ in range(rng.integers(0, 4)):
        rects.append([rng.uniform(-18.0, 18.0), rng.uniform(-18.0, 18.0),
                      rng.uniform(0.5, 3.0), rng.uniform(0.5, 2.0),
                      rng.uniform(-math.pi, math.pi)])
    segs = np.asarray(segments, dtype=float) if segments else geometry.EMPTY_SEGMENTS.copy()
    rect_arr = np.asarray(rects, dtype=float) if rects else geometry.EMPTY_RECTS.copy()
    return segs, rect_arr


def test_cast_ray_matches_marching_oracle():
    """cast_ray vs 1 mm ray marching over randomized scenes, within 2 mm."""
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(300):
        segs, rects = _random_scene(rng)
        scene = scene_of(segments=segs, rects=rects)
        angle = rng.uniform(-math.pi, math.pi)
        direction = np.array([math.cos(angle), math.sin(angle)])
        origin = rng.uniform(-5.0, 5.0, size=2)
        fast = cast_ray(origin, direction, 30.0, scene)
        slow = march_ray(origin, direction, 30.0, segs,
                         [((r[0], r[1]), (r[2], r[3]), r[4]) for r in rects])
        worst = max(worst, abs(fast - slow))
    assert worst <= 2e-3


def test_adding_geometry_never_increases_distances():
    rng = np.random.default_rng(5)
    config = default_raycast_config()
    for _ in range(50):
        segs, rects = _random_scene(rng)
        scene = scene_of(segments=segs, rects=rects)
        angles = rng.uniform(-math.pi, math.pi) + config.angles
        base = cast_rays(np.zeros(2), angles, 30.0, scene)
        extra_rect = np.array([[rng.uniform(-10, 10), rng.uniform(-10, 10),
                                1.0, 1.0, rng.uniform(-math.pi, math.pi)]])
        bigger = scene_of(segments=segs, rects=np.vstack([rects, extra_rect])
                          if rects.size else extra_rect)
        denser = cast_rays(np.zeros(2), angles, 30.0, bigger)
        assert np.all(denser <= base + 1e-12)


def test_frame_invariance_under_rotation():
    """Rotating scene and vehicle together leaves the frame unchanged."""
    rng = np.random.default_rng(9)
    theta = 0.83
    rot = np.array([[math.cos(theta), -math.sin(theta)],
                    [math.sin(theta), math.cos(theta)]])
    obstacles = [[8.0, 1.0, 1.0, 0.8, 0.4], [-4.0, -6.0, 2.0, 1.0, -0.9]]
    vehicles = {
        "ego": SensedVehicle(np.array([1.0, 2.0]), 0.3, VEHICLE_HALF, 3.0),
        "other": SensedVehicle(np.array([9.0, 4.0]), -0.5, VEHICLE_HALF, 2.0),
    }
    snap_a = WorldSnapshot(vehicles=vehicles,
                           border_segments=geometry.EMPTY_SEGMENTS.copy(),
                           obstacle_rects=np.array(obstacles), v_max=V_MAX)
    rotated_obstacles = []
    for cx, cz, hx, hz, yaw in obstacles:
        c = rot @ np.array([cx, cz])
        rotated_obstacles.append([c[0], c[1], hx, hz, yaw + theta])
    rotated_vehicles = {
        vid: SensedVehicle(rot @ v.position, v.heading + theta, v.half, v.speed)
        for vid, v in vehicles.items()}
    snap_b = WorldSnapshot(vehicles=rotated_vehicles,
                           border_segments=geometry.EMPTY_SEGMENTS.copy(),
                           obstacle_rects=np.array(rotated_obstacles), v_max=V_MAX)
    frame_a = sense("ego", snap_a)
    frame_b = sense("ego", snap_b)
    assert np.allclose(frame_a.distances, frame_b.distances, atol=1e-9)
    assert frame_a.speed_norm == pytest.approx(frame_b.speed_norm, abs=1e-12)
