import math

import numpy as np
import pytest

from platoonrl import geometry
from platoonrl.track import (
    VEHICLE_HALF,
    Obstacle,
    TrackError,
    arc_progress,
    build_borders,
    check_collision,
    checkpoint_crossed,
    load_builtin_track,
    load_track,
    place_checkpoints,
)

from oracles import rect_hits_segments_sampled, rects_overlap_sampled

STRAIGHT_200 = """
[meta]
name = unit-straight
lane_width = 4.0
[centerline]
0 0
200 0
[start]
1 -2 0
[finish]
200 -6 200 6
"""

BUILTIN_NAMES = ["training_1300m", "straight_750m", "urban_1000m", "smoke_200m"]


@pytest.fixture(scope="module")
def straight():
    return load_track(STRAIGHT_200)


def test_straight_track_length(straight):
    assert straight.total_length == pytest.approx(200.0, abs=1e-6)


def test_missing_lane_width_is_validation_error():
    text = STRAIGHT_200.replace("lane_width = 4.0", "")
    with pytest.raises(TrackError, match="lane_width"):
        load_track(text)


def test_lane_too_narrow_rejected():
    text = STRAIGHT_200.replace("lane_width = 4.0", "lane_width = 1.5")
    with pytest.raises(TrackError, match="narrow"):
        load_track(text)


def test_parse_error_reports_line_number():
    text = STRAIGHT_200.replace("200 0", "200 zero")
    with pytest.raises(TrackError, match=r"line \d+"):
        load_track(text)


def test_training_track_is_1300m():
    track = load_builtin_track("training_1300m")
    assert track.total_length == pytest.approx(1300.0, abs=0.5)


@pytest.mark.parametrize("name,length", [
    ("straight_750m", 750.0), ("urban_1000m", 1000.0), ("smoke_200m", 200.0)])
def test_bundled_track_lengths(name, length):
    assert load_builtin_track(name).total_length == pytest.approx(length, abs=0.5)


def test_borders_straight_offsets():
    centerline = np.array([[0.0, 0.0], [100.0, 0.0]])
    left, right = build_borders(centerline, 4.0, 4.0)
    assert np.allclose(left[:, 1], 4.0)
    assert np.allclose(right[:, 1], -4.0)


def test_borders_arc_radii_differ_by_twice_halfwidth():
    # quarter circle of radius 20 centered at (0, 20), sampled at 0.5 degrees
    radius, halfwidth = 20.0, 4.0
    angles = np.linspace(0.0, math.pi / 2.0, 181)
    centerline = np.stack([radius * np.sin(angles),
                           radius * (1.0 - np.cos(angles))], axis=1)
    left, right = build_borders(centerline, halfwidth, halfwidth)
    center = np.array([0.0, radius])
    r_left = np.hypot(left[:, 0], left[:, 1] - radius).mean()
    r_right = np.hypot(right[:, 0], right[:, 1] - radius).mean()
    # the turn bends left, so the left border is the inner one
    assert r_left == pytest.approx(radius - halfwidth, abs=5e-3)
    assert r_right == pytest.approx(radius + halfwidth, abs=5e-3)
    assert r_right - r_left == pytest.approx(2.0 * halfwidth, abs=1e-2)


def test_borders_degenerate_centerline_rejected():
    with pytest.raises(TrackError):
        build_borders(np.array([[0.0, 0.0]]), 4.0, 4.0)
    with pytest.raises(TrackError):
        build_borders(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]), 4.0, 4.0)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_border_vertices_at_exact_offset(name):
    """Every border vertex sits at road_halfwidth from its source segment."""
    track = load_builtin_track(name)
    for border in (track.border_left, track.border_right):
        for i in range(len(track.centerline) - 1):
            a = track.centerline[i]
            b = track.centerline[i + 1]
            for vertex in (border[2 * i], border[2 * i + 1]):
                d = _point_segment_distance(vertex, a, b)
                assert abs(d - track.road_halfwidth) < 1e-6


def _point_segment_distance(p, a, b):
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    closest = a + t * ab
    return float(np.hypot(*(p - closest)))


def test_checkpoint_count_and_layout(straight):
    assert len(straight.checkpoints_right) == 20
    assert len(straight.checkpoints_left) == 20
    for cp in straight.checkpoints_right:
        mid = cp.midpoint
        assert mid[1] == pytest.approx(-straight.lane_width / 2.0, abs=1e-9)
    for cp in straight.checkpoints_left:
        assert cp.midpoint[1] == pytest.approx(straight.lane_width / 2.0, abs=1e-9)
    indices = [cp.index for cp in straight.checkpoints_right]
    assert indices == sorted(indices) == list(range(20))
    arcs = [cp.arc_s for cp in straight.checkpoints_right]
    assert all(b > a for a, b in zip(arcs, arcs[1:]))


def test_place_checkpoints_respacing(straight):
    right, left = place_checkpoints(straight, 25.0)
    assert len(right) == len(left) == 8
    with pytest.raises(TrackError):
        place_checkpoints(straight, 500.0)
    with pytest.raises(TrackError):
        place_checkpoints(straight, 0.0)


def test_checkpoints_are_not_physical(straight):
    # vehicle centered right on a checkpoint segment, nothing else nearby
    cp = straight.checkpoints_right[4]
    report = check_collision((cp.midpoint, 0.0), VEHICLE_HALF, straight)
    assert not report.collided


def test_collision_empty_scene(straight):
    report = check_collision((np.array([50.0, -2.0]), 0.0), VEHICLE_HALF, straight)
    assert report == check_collision((np.array([50.0, -2.0]), 0.0),
                                     VEHICLE_HALF, straight)
    assert not report.collided
    assert report.kind is None and report.other_id is None


def test_collision_beyond_border(straight):
    # footprint half-width 0.9; center 0.1 m beyond the right border at z=-4
    pose = (np.array([50.0, -4.1]), 0.0)
    report = check_collision(pose, VEHICLE_HALF, straight)
    assert report.collided and report.kind == "border"
    assert rect_hits_segments_sampled(pose[0], VEHICLE_HALF, 0.0,
                                      straight.border_segments)


def test_collision_vehicle_priority(straight):
    pose = (np.array([50.0, -2.0]), 0.0)
    others = [("veh2", np.array([50.0, -2.0]), 0.0, VEHICLE_HALF)]
    report = check_collision(pose, VEHICLE_HALF, straight, others)
    assert report.collided and report.kind == "vehicle" and report.other_id == "veh2"


def test_collision_with_obstacle(straight):
    obstacle = Obstacle(center=(52.0, -2.0), half=(1.5, 0.8))
    report = check_collision((np.array([50.0, -2.0]), 0.0), VEHICLE_HALF,
                             straight, extra_obstacles=[obstacle])
    assert report.collided and report.kind == "static_obstacle"


def test_collision_against_sampling_oracle():
    """check_collision agrees with 1 cm boundary sampling on random scenes."""
    track = load_track(STRAIGHT_200)
    rng = np.random.default_rng(7)
    mismatches = 0
    for _ in range(1000):
        pos = np.array([rng.uniform(5.0, 195.0), rng.uniform(-6.0, 6.0)])
        heading = rng.uniform(-math.pi, math.pi)
        obstacles = [Obstacle(center=(rng.uniform(5.0, 195.0), rng.uniform(-5.0, 5.0)),
                              half=(rng.uniform(1.0, 3.0), rng.uniform(1.0, 2.0)),
                              yaw=rng.uniform(-math.pi, math.pi))
                     for _ in range(rng.integers(0, 3))]
        others = [("other", np.array([rng.uniform(5.0, 195.0), rng.uniform(-6.0, 6.0)]),
                   rng.uniform(-math.pi, math.pi), VEHICLE_HALF)
                  for _ in range(rng.integers(0, 2))]
        report = check_collision((pos, heading), VEHICLE_HALF, track, others,
                                 extra_obstacles=obstacles)
        hit_vehicle = any(
            rects_overlap_sampled(pos, VEHICLE_HALF, heading, o[1], o[3], o[2])
            for o in others)
        hit_obstacle = any(
            rects_overlap_sampled(pos, VEHICLE_HALF, heading, o.center, o.half, o.yaw)
            for o in obstacles)
        hit_border = rect_hits_segments_sampled(pos, VEHICLE_HALF, heading,
                                                track.border_segments)
        expect_collided = hit_vehicle or hit_obstacle or hit_border
        if report.collided != expect_collided:
            mismatches += 1
            continue
        if report.collided:
            expect_kind = ("vehicle" if hit_vehicle
                           else "static_obstacle" if hit_obstacle else "border")
            if report.kind != expect_kind:
                mismatches += 1
    assert mismatches == 0


def test_checkpoint_crossed_gating(straight):
    cps = straight.checkpoints_right
    before = np.array([29.0, -2.0])
    after = np.array([31.0, -2.0])
    # checkpoint index 2 sits at arc 30
    assert checkpoint_crossed(before, after, cps, 2) == ("right", 2)
    assert checkpoint_crossed(before, after, cps, 3) is None
    assert checkpoint_crossed(after, after, cps, 2) is None
    assert checkpoint_crossed(before, after, cps, len(cps)) is None


def test_arc_progress_endpoints(straight):
    start_pos = straight.start_poses[0][0]
    assert arc_progress(start_pos, straight) <= straight.lane_width
    finish_mid = straight.finish.mean(axis=0)
    assert abs(arc_progress(finish_mid, straight) - straight.total_length) \
        <= straight.lane_width
    assert arc_progress(np.array([100.0, 0.0]), straight) == pytest.approx(100.0, abs=1e-6)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_arc_progress_at_finish_every_bundled_track(name):
    track = load_builtin_track(name)
    finish_mid = track.finish.mean(axis=0)
    assert abs(arc_progress(finish_mid, track) - track.total_length) <= track.lane_width


def test_builtin_tracks_have_expected_structure():
    urban = load_builtin_track("urban_1000m")
    assert len(urban.obstacles) >= 3
    assert len(urban.start_poses) == 8
    smoke = load_builtin_track("smoke_200m")
    assert not smoke.borders_enabled
    assert smoke.border_segments.size == 0
    assert smoke.obstacles == []


def test_urban_narrow_passage_gap():
    """Two obstacles leave a 1.5 x vehicle-width clear gap somewhere."""
    urban = load_builtin_track("urban_1000m")
    target = 1.5 * (2.0 * VEHICLE_HALF[1])
    best = None
    for i, a in enumerate(urban.obstacles):
        for b in urban.obstacles[i + 1:]:
            centers = np.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1])
            gap = centers - a.half[1] - b.half[1]
            if best is None or abs(gap - target) < abs(best - target):
                best = gap
    assert best == pytest.approx(target, abs=0.05)
