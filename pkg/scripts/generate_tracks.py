"""Regenerate the bundled track files under src/platoonrl/tracks/.

Run from the repository root:  PYTHONPATH=src python scripts/generate_tracks.py
Each track ends with a filler straight sized so the centerline polyline
length hits the nominal driving distance exactly.
"""

from __future__ import annotations

import math
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from platoonrl import geometry  # noqa: E402

OUT_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "platoonrl", "tracks")


class PathBuilder:
    def __init__(self):
        self.points = [np.array([0.0, 0.0])]
        self.heading = 0.0

    def straight(self, length: float):
        tip = self.points[-1] + length * geometry.heading_vector(self.heading)
        self.points.append(tip)

    def arc(self, radius: float, angle: float, step_rad: float = 0.02):
        """Constant-radius turn; positive angle turns left."""
        steps = max(8, int(math.ceil(abs(angle) / step_rad)))
        side = 1.0 if angle > 0 else -1.0
        center = self.points[-1] + radius * side * geometry.left_normal(
            geometry.heading_vector(self.heading))
        start_angle = math.atan2(self.points[-1][1] - center[1],
                                 self.points[-1][0] - center[0])
        for i in range(1, steps + 1):
            a = start_angle + side * abs(angle) * i / steps
            self.points.append(center + radius * np.array([math.cos(a), math.sin(a)]))
        self.heading = geometry.normalize_angle(self.heading + angle)

    def length(self) -> float:
        return float(geometry.polyline_arclength(np.array(self.points))[-1])

    def fill_straight_to(self, target: float):
        remaining = target - self.length()
        assert remaining > 1.0, f"layout already {self.length():.1f} m, target {target}"
        self.straight(remaining)

    def point_at(self, s: float):
        pts = np.array(self.points)
        cum = geometry.polyline_arclength(pts)
        idx = min(int(np.searchsorted(cum, s, side="right")) - 1, len(pts) - 2)
        seg = pts[idx + 1] - pts[idx]
        seg_len = float(np.hypot(*seg))
        t = (s - cum[idx]) / seg_len
        return pts[idx] + t * seg, seg / seg_len


def lane_obstacle(builder: PathBuilder, s: float, lateral: float,
                  half=(1.5, 0.8)) -> str:
    point, tangent = builder.point_at(s)
    center = point + lateral * geometry.left_normal(tangent)
    yaw = math.atan2(tangent[1], tangent[0])
    return f"{center[0]:.3f} {center[1]:.3f} {half[0]:.3f} {half[1]:.3f} {yaw:.6f}"


def start_lines(builder: PathBuilder, slots: int, lead_s: float, gap: float,
                lateral: float = -2.0) -> list[str]:
    lines = []
    for i in range(slots):
        s = lead_s - i * gap
        point, tangent = builder.point_at(s)
        pos = point + lateral * geometry.left_normal(tangent)
        heading = math.atan2(tangent[1], tangent[0])
        lines.append(f"{pos[0]:.3f} {pos[1]:.3f} {heading:.6f}")
    return lines


def finish_line(builder: PathBuilder, halfspan: float) -> str:
    point, tangent = builder.point_at(builder.length())
    normal = geometry.left_normal(tangent)
    p1 = point - halfspan * normal
    p2 = point + halfspan * normal
    return f"{p1[0]:.3f} {p1[1]:.3f} {p2[0]:.3f} {p2[1]:.3f}"


def write_track(filename: str, name: str, builder: PathBuilder,
                obstacles: list[str], starts: list[str], finish: str,
                header: str, borders: str = "on"):
    lines = [f"# {header}", "[meta]", f"name = {name}", "lane_width = 4.0"]
    if borders != "on":
        lines.append(f"borders = {borders}")
    lines.append("[centerline]")
    for p in builder.points:
        lines.append(f"{p[0]:.6f} {p[1]:.6f}")
    if obstacles:
        lines.append("[obstacles]")
        lines.extend(obstacles)
    lines.append("[start]")
    lines.extend(starts)
    lines.append("[finish]")
    lines.append(finish)
    path = os.path.join(OUT_DIR, filename)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {path}: {builder.length():.6f} m, {len(builder.points)} points")


def training_track():
    b = PathBuilder()
    b.straight(200)
    b.arc(30, math.radians(90))
    b.straight(150)
    b.arc(25, math.radians(-90))
    b.straight(150)
    b.arc(30, math.radians(-90))
    b.straight(100)
    b.arc(25, math.radians(90))
    b.straight(120)
    b.arc(35, math.radians(180))
    b.fill_straight_to(1300.0)
    obstacles = [
        lane_obstacle(b, 120.0, -2.0),   # right lane, first straight
        lane_obstacle(b, 330.0, -2.0),   # right lane, second straight
        lane_obstacle(b, 620.0, 2.0),    # left lane block
        lane_obstacle(b, 980.0, -2.0),   # right lane, after the u-turn
    ]
    starts = start_lines(b, 8, 72.0, 10.0)
    write_track("training_1300m.track", "training-loop-1300m", b, obstacles,
                starts, finish_line(b, 6.0),
                "Training track: 1300 m with sweeping turns and lane-change obstacles")


def straight_track():
    b = PathBuilder()
    b.straight(750.0)
    starts = start_lines(b, 8, 72.0, 10.0)
    write_track("straight_750m.track", "straight-750m", b, [],
                starts, finish_line(b, 8.0),
                "Straight test track: 750 m, no obstacles, no turns")


def urban_track():
    b = PathBuilder()
    b.straight(120)
    b.arc(20, math.radians(90))
    b.straight(80)
    b.arc(15, math.radians(-90))
    b.straight(120)
    b.arc(12, math.radians(-90))
    b.straight(60)
    b.arc(12, math.radians(90))
    b.straight(80)
    b.arc(18, math.radians(180))
    b.straight(100)
    b.arc(20, math.radians(-90))
    b.fill_straight_to(1000.0)
    # Narrow passage: two boxes flanking the right lane, clear gap of
    # 1.5 x vehicle width = 2.7 m centered on the right-lane center.
    gap_half = 0.5 * 1.5 * 1.8
    box_half = (1.0, 0.3)
    passage_s = 300.0
    obstacles = [
        lane_obstacle(b, 60.0, -2.0),
        lane_obstacle(b, passage_s, -2.0 - gap_half - box_half[1], half=box_half),
        lane_obstacle(b, passage_s, -2.0 + gap_half + box_half[1], half=box_half),
        lane_obstacle(b, 520.0, -2.0),
        lane_obstacle(b, 780.0, 2.0),
    ]
    starts = start_lines(b, 8, 72.0, 10.0)
    write_track("urban_1000m.track", "urban-1000m", b, obstacles,
                starts, finish_line(b, 6.0),
                "Urban test track: 1000 m, tight turns, obstacles, narrow passage")


def smoke_track():
    b = PathBuilder()
    b.straight(200.0)
    starts = start_lines(b, 1, 1.0, 10.0)
    write_track("smoke_200m.track", "smoke-straight-200m", b, [],
                starts, finish_line(b, 12.0),
                "Smoke-training track: straight 200 m, borders disabled, no obstacles",
                borders="off")


if __name__ == "__main__":
    os.makedirs(OUT_DIR, exist_ok=True)
    training_track()
    straight_track()
    urban_track()
    smoke_track()
