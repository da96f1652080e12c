"""16-ray depth perception against borders, obstacles, and other vehicles.

Rays originate at the vehicle center, spread evenly over the full circle
relative to the body heading, and report normalized distances (1.0 = no hit
within range). Checkpoints and the finish segment are invisible to rays.
All queries are pure reads over an immutable world snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import geometry

RAY_COUNT = 16


@dataclass(frozen=True)
class RaycastConfig:
    angles: np.ndarray      # (16,) rad, body-relative, evenly spanning [-pi, pi)
    ray_range: float        # m


def default_raycast_config(ray_range: float = 30.0) -> RaycastConfig:
    angles = -np.pi + np.arange(RAY_COUNT) * (2.0 * np.pi / RAY_COUNT)
    return RaycastConfig(angles=angles, ray_range=ray_range)


@dataclass(frozen=True)
class SensorFrame:
    distances: np.ndarray   # (16,) in [0, 1]
    speed_norm: float       # in [0, 1]


@dataclass(frozen=True)
class SensedVehicle:
    position: np.ndarray
    heading: float
    half: tuple[float, float]
    speed: float


@dataclass(frozen=True)
class WorldSnapshot:
    """Immutable scene the sensors read: active vehicles plus static geometry."""

    vehicles: Mapping[str, SensedVehicle]
    border_segments: np.ndarray     # (S, 4)
    obstacle_rects: np.ndarray      # (K, 5) static boxes + crashed vehicles
    v_max: float


@dataclass(frozen=True)
class Scene:
    """Ray-castable geometry: solid rectangles plus bare segments."""

    segments: np.ndarray            # (S, 4), includes rectangle edges
    rects: np.ndarray               # (K, 5), for origin-inside tests


def build_scene(snapshot: WorldSnapshot, exclude_id: str | None = None) -> Scene:
    rect_rows = [snapshot.obstacle_rects] if snapshot.obstacle_rects.size else []
    for vid, vehicle in snapshot.vehicles.items():
        if vid == exclude_id:
            continue
        rect_rows.append(np.array([[vehicle.position[0], vehicle.position[1],
                                    vehicle.half[0], vehicle.half[1],
                                    vehicle.heading]]))
    rects = np.vstack(rect_rows) if rect_rows else geometry.EMPTY_RECTS.copy()
    segments = np.vstack([snapshot.border_segments,
                          geometry.rects_to_segments(rects)])
    return Scene(segments=segments, rects=rects)


def cast_ray(origin, direction, ray_range: float, scene: Scene) -> float:
    """Distance to the nearest geometry along a unit direction, capped at range.

    A ray starting inside a solid rectangle reads 0.
    """
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    if scene.rects.size and geometry.points_in_rects(origin, scene.rects).any():
        return 0.0
    dist = geometry.rays_segments_min_dist(origin, direction[None, :],
                                           scene.segments, ray_range)
    return float(dist[0])


def cast_rays(origin, world_angles: np.ndarray, ray_range: float,
              scene: Scene) -> np.ndarray:
    origin = np.asarray(origin, dtype=float)
    directions = np.stack([np.cos(world_angles), np.sin(world_angles)], axis=1)
    dists = geometry.rays_segments_min_dist(origin, directions,
                                            scene.segments, ray_range)
    if scene.rects.size and geometry.points_in_rects(origin, scene.rects).any():
        dists[:] = 0.0
    return dists


def sense(vehicle_id: str, snapshot: WorldSnapshot,
          config: RaycastConfig | None = None) -> SensorFrame:
    """SensorFrame for one vehicle; the ego footprint never blocks its own rays."""
    if config is None:
        config = default_raycast_config()
    if vehicle_id not in snapshot.vehicles:
        raise ValueError(f"unknown vehicle id {vehicle_id!r}")
    ego = snapshot.vehicles[vehicle_id]
    scene = build_scene(snapshot, exclude_id=vehicle_id)
    world_angles = ego.heading + config.angles
    dists = cast_rays(ego.position, world_angles, config.ray_range, scene)
    distances = np.clip(dists / config.ray_range, 0.0, 1.0)
    speed_norm = float(np.clip(ego.speed / snapshot.v_max, 0.0, 1.0))
    return SensorFrame(distances=distances, speed_norm=speed_norm)
