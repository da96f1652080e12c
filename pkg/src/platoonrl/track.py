"""Drivable world model: two-lane road, borders, checkpoints, obstacles.

Tracks load from a line-oriented text format (see `load_track`). All derived
geometry (borders, checkpoints, arc-length table) is materialized at load
time; a TrackModel is immutable afterwards and safe to share across rollout
workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from . import geometry

# Footprint of every simulated vehicle (typical sedan), meters.
VEHICLE_LENGTH = 4.0
VEHICLE_WIDTH = 1.8
VEHICLE_HALF = (VEHICLE_LENGTH / 2.0, VEHICLE_WIDTH / 2.0)

DEFAULT_LANE_WIDTH = 4.0
DEFAULT_CHECKPOINT_SPACING = 10.0

RIGHT = "right"
LEFT = "left"


class TrackError(ValueError):
    """Raised on track file parse or validation failures."""


@dataclass(frozen=True)
class Obstacle:
    """Axis-oriented rigid box: center (x, z), half extents, yaw in rad."""

    center: tuple[float, float]
    half: tuple[float, float]
    yaw: float = 0.0

    def as_row(self) -> np.ndarray:
        return np.array([self.center[0], self.center[1],
                         self.half[0], self.half[1], self.yaw])


@dataclass(frozen=True)
class Checkpoint:
    """Non-physical crossing segment at a lane center, indexed by arc length."""

    index: int
    lane: str
    p1: tuple[float, float]
    p2: tuple[float, float]
    arc_s: float

    @property
    def midpoint(self) -> np.ndarray:
        return np.array([(self.p1[0] + self.p2[0]) / 2.0,
                         (self.p1[1] + self.p2[1]) / 2.0])


@dataclass(frozen=True)
class CollisionReport:
    collided: bool
    kind: Optional[str] = None          # border | static_obstacle | vehicle
    other_id: Optional[str] = None


@dataclass
class TrackModel:
    name: str
    lane_width: float
    road_halfwidth: float
    centerline: np.ndarray              # (N, 2)
    cum_s: np.ndarray                   # (N,)
    total_length: float
    border_left: np.ndarray             # (M, 2)
    border_right: np.ndarray            # (M, 2)
    border_segments: np.ndarray         # (S, 4); empty when borders disabled
    checkpoints_right: list[Checkpoint]
    checkpoints_left: list[Checkpoint]
    obstacles: list[Obstacle]
    obstacle_rects: np.ndarray          # (K, 5)
    start_poses: list[tuple[np.ndarray, float]]
    finish: np.ndarray                  # (2, 2) segment endpoints
    borders_enabled: bool = True
    checkpoint_spacing: float = DEFAULT_CHECKPOINT_SPACING
    _all_border_segments: np.ndarray = field(default=None, repr=False)

    def point_at(self, s: float) -> tuple[np.ndarray, np.ndarray]:
        """Centerline point and unit tangent at arc length s (clamped)."""
        s = min(max(s, 0.0), self.total_length)
        idx = int(np.searchsorted(self.cum_s, s, side="right")) - 1
        idx = min(max(idx, 0), len(self.centerline) - 2)
        seg_len = self.cum_s[idx + 1] - self.cum_s[idx]
        t = (s - self.cum_s[idx]) / seg_len
        p = self.centerline[idx] + t * (self.centerline[idx + 1] - self.centerline[idx])
        tangent = (self.centerline[idx + 1] - self.centerline[idx]) / seg_len
        return p, tangent


def build_borders(centerline: np.ndarray, lane_width: float,
                  road_halfwidth: float) -> tuple[np.ndarray, np.ndarray]:
    """Left/right border polylines at +-road_halfwidth from the centerline."""
    if road_halfwidth < lane_width:
        raise TrackError("road_halfwidth must be >= lane_width (two-lane road)")
    centerline = np.asarray(centerline, dtype=float)
    if centerline.ndim != 2 or centerline.shape[0] < 2:
        raise TrackError("centerline needs at least two points")
    try:
        left = geometry.offset_polyline(centerline, road_halfwidth)
        right = geometry.offset_polyline(centerline, -road_halfwidth)
    except ValueError as exc:
        raise TrackError(str(exc)) from exc
    return left, right


def _lane_checkpoints(centerline: np.ndarray, cum_s: np.ndarray,
                      lane_width: float, spacing: float, lane: str) -> list[Checkpoint]:
    total = float(cum_s[-1])
    if spacing <= 0.0:
        raise TrackError("checkpoint spacing must be positive")
    if spacing > total:
        raise TrackError("checkpoint spacing larger than track length")
    side = -1.0 if lane == RIGHT else 1.0
    count = int(math.floor(total / spacing + 1e-9))
    out: list[Checkpoint] = []
    for k in range(1, count + 1):
        s = min(k * spacing, total)
        idx = min(int(np.searchsorted(cum_s, s, side="right")) - 1,
                  len(centerline) - 2)
        seg = centerline[idx + 1] - centerline[idx]
        tangent = seg / np.hypot(*seg)
        normal = geometry.left_normal(tangent)
        t = (s - cum_s[idx]) / (cum_s[idx + 1] - cum_s[idx])
        on_center = centerline[idx] + t * seg
        inner = on_center                      # lane boundary at the centerline
        outer = on_center + side * lane_width * normal
        out.append(Checkpoint(index=k - 1, lane=lane,
                              p1=(inner[0], inner[1]), p2=(outer[0], outer[1]),
                              arc_s=float(s)))
    return out


def place_checkpoints(track: TrackModel,
                      spacing: float) -> tuple[list[Checkpoint], list[Checkpoint]]:
    """Checkpoint sequences for the right and left lanes at the given spacing."""
    right = _lane_checkpoints(track.centerline, track.cum_s, track.lane_width,
                              spacing, RIGHT)
    left = _lane_checkpoints(track.centerline, track.cum_s, track.lane_width,
                             spacing, LEFT)
    return right, left


def check_collision(pose: tuple[Sequence[float], float],
                    vehicle_footprint: tuple[float, float],
                    track: TrackModel,
                    other_vehicles: Sequence[tuple[str, Sequence[float], float, tuple[float, float]]] = (),
                    extra_obstacles: Sequence[Obstacle] = ()) -> CollisionReport:
    """Footprint intersection against vehicles, obstacles, then borders.

    `other_vehicles` entries are (id, position, heading, half_extents).
    Checkpoints and the finish segment are non-physical and never collide.
    """
    position, heading = pose
    for other_id, other_pos, other_heading, other_half in other_vehicles:
        if geometry.rect_overlaps_rect(position, vehicle_footprint, heading,
                                       other_pos, other_half, other_heading):
            return CollisionReport(True, kind="vehicle", other_id=other_id)
    for obstacle in list(track.obstacles) + list(extra_obstacles):
        if geometry.rect_overlaps_rect(position, vehicle_footprint, heading,
                                       obstacle.center, obstacle.half, obstacle.yaw):
            return CollisionReport(True, kind="static_obstacle")
    if track.borders_enabled and geometry.rect_intersects_segments(
            position, vehicle_footprint, heading, track.border_segments):
        return CollisionReport(True, kind="border")
    return CollisionReport(False)


def checkpoint_crossed(prev_position: Sequence[float], position: Sequence[float],
                       lane_checkpoints: Sequence[Checkpoint],
                       next_index: int) -> Optional[tuple[str, int]]:
    """Crossing of checkpoint `next_index` by the movement segment, if any.

    Out-of-order crossings are ignored: only the smallest uncollected index
    can be collected, once per vehicle per episode.
    """
    if next_index >= len(lane_checkpoints):
        return None
    dx = position[0] - prev_position[0]
    dz = position[1] - prev_position[1]
    if dx * dx + dz * dz == 0.0:
        return None
    cp = lane_checkpoints[next_index]
    move = np.array([[prev_position[0], prev_position[1], position[0], position[1]]])
    gate = np.array([[cp.p1[0], cp.p1[1], cp.p2[0], cp.p2[1]]])
    if geometry.segments_cross(move, gate)[0]:
        return cp.lane, cp.index
    return None


def arc_progress(position: Sequence[float], track: TrackModel) -> float:
    """Arc length along the centerline of the closest centerline point."""
    s, _ = geometry.project_to_polyline(position, track.centerline, track.cum_s)
    return s


# ---------------------------------------------------------------------------
# Track file format
#
#   # comment
#   [meta]
#   name = straight-test
#   lane_width = 4.0
#   borders = on            (optional, default on)
#   checkpoint_spacing = 10 (optional, default 10)
#   [centerline]
#   x z                     (one point per line, meters)
#   [obstacles]
#   cx cz hx hz yaw_rad     (optional section)
#   [start]
#   x z heading_rad         (one per platoon slot, leader first)
#   [finish]
#   x1 z1 x2 z2
# ---------------------------------------------------------------------------

_SECTIONS = ("meta", "centerline", "obstacles", "start", "finish")


def load_track(text: str) -> TrackModel:
    """Parse and fully derive a TrackModel from track-file contents."""
    meta: dict[str, str] = {}
    centerline_pts: list[tuple[float, float]] = []
    obstacles: list[Obstacle] = []
    starts: list[tuple[np.ndarray, float]] = []
    finish: Optional[np.ndarray] = None
    section: Optional[str] = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise TrackError(f"line {lineno}: unknown section [{section}]")
            continue
        if section is None:
            raise TrackError(f"line {lineno}: content before any section header")
        if section == "meta":
            if "=" not in line:
                raise TrackError(f"line {lineno}: expected key = value in [meta]")
            key, value = (part.strip() for part in line.split("=", 1))
            meta[key.lower()] = value
            continue
        fields = line.split()
        try:
            values = [float(f) for f in fields]
        except ValueError:
            raise TrackError(f"line {lineno}: expected numeric fields, got {line!r}")
        if section == "centerline":
            if len(values) != 2:
                raise TrackError(f"line {lineno}: centerline point needs 2 values")
            centerline_pts.append((values[0], values[1]))
        elif section == "obstacles":
            if len(values) != 5:
                raise TrackError(f"line {lineno}: obstacle needs 5 values")
            obstacles.append(Obstacle(center=(values[0], values[1]),
                                      half=(values[2], values[3]), yaw=values[4]))
        elif section == "start":
            if len(values) != 3:
                raise TrackError(f"line {lineno}: start pose needs 3 values")
            starts.append((np.array(values[0:2]), values[2]))
        elif section == "finish":
            if len(values) != 4:
                raise TrackError(f"line {lineno}: finish needs 4 values")
            finish = np.array([[values[0], values[1]], [values[2], values[3]]])

    if "lane_width" not in meta:
        raise TrackError("missing required meta key lane_width")
    try:
        lane_width = float(meta["lane_width"])
    except ValueError:
        raise TrackError("lane_width must be numeric")
    if lane_width <= VEHICLE_WIDTH:
        raise TrackError(f"lane too narrow: lane_width {lane_width} must exceed "
                         f"vehicle width {VEHICLE_WIDTH}")
    if len(centerline_pts) < 2:
        raise TrackError("centerline needs at least two points")
    if not starts:
        raise TrackError("missing [start] poses")
    if finish is None:
        raise TrackError("missing [finish] segment")

    borders_enabled = meta.get("borders", "on").lower() != "off"
    spacing = float(meta.get("checkpoint_spacing", DEFAULT_CHECKPOINT_SPACING))

    centerline = np.array(centerline_pts)
    deltas = np.diff(centerline, axis=0)
    if np.any(np.hypot(deltas[:, 0], deltas[:, 1]) < 1e-9):
        raise TrackError("consecutive centerline points must be distinct")
    cum_s = geometry.polyline_arclength(centerline)
    total_length = float(cum_s[-1])

    road_halfwidth = lane_width
    left, right = build_borders(centerline, lane_width, road_halfwidth)
    border_segments = np.vstack([geometry.polyline_to_segments(left),
                                 geometry.polyline_to_segments(right)])
    cps_right = _lane_checkpoints(centerline, cum_s, lane_width, spacing, RIGHT)
    cps_left = _lane_checkpoints(centerline, cum_s, lane_width, spacing, LEFT)

    obstacle_rects = (np.vstack([o.as_row() for o in obstacles])
                      if obstacles else geometry.EMPTY_RECTS.copy())

    return TrackModel(
        name=meta.get("name", "unnamed"),
        lane_width=lane_width,
        road_halfwidth=road_halfwidth,
        centerline=centerline,
        cum_s=cum_s,
        total_length=total_length,
        border_left=left,
        border_right=right,
        border_segments=border_segments if borders_enabled else geometry.EMPTY_SEGMENTS.copy(),
        checkpoints_right=cps_right,
        checkpoints_left=cps_left,
        obstacles=obstacles,
        obstacle_rects=obstacle_rects,
        start_poses=starts,
        finish=finish,
        borders_enabled=borders_enabled,
        checkpoint_spacing=spacing,
        _all_border_segments=border_segments,
    )


def load_track_file(path) -> TrackModel:
    with open(path, "r", encoding="utf-8") as handle:
        return load_track(handle.read())


def builtin_track_path(name: str):
    """Filesystem path of a bundled track (training_1300m, straight_750m, ...)."""
    resource = resources.files("platoonrl").joinpath("tracks", f"{name}.track")
    if not resource.is_file():
        raise TrackError(f"no builtin track named {name!r}")
    return resource


def load_builtin_track(name: str) -> TrackModel:
    return load_track(builtin_track_path(name).read_text(encoding="utf-8"))
