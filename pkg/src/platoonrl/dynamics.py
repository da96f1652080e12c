"""Kinematic bicycle model stepped at a fixed 0.02 s cadence.

The update is a pure function of (state, command, params, dt): commands are
clamped, speed is floored at zero (no reverse gear), and heading is wrapped
to (-pi, pi]. Identical inputs produce bit-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import normalize_angle

DT = 0.02  # seconds per simulation step


@dataclass(frozen=True)
class VehicleState:
    position: np.ndarray    # (x, z) meters
    heading: float          # radians, in (-pi, pi]
    speed: float            # m/s, in [0, v_max]


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float        # m
    max_steer_angle: float  # rad
    max_accel: float        # m/s^2
    max_brake: float        # m/s^2
    v_max: float            # m/s


@dataclass(frozen=True)
class ControlCommand:
    steering: float         # [-1, 1]
    throttle: float         # [-1, 1]


def default_params() -> VehicleParams:
    """Sedan-like defaults; top speed 40 km/h."""
    return VehicleParams(wheelbase=2.5, max_steer_angle=0.5,
                         max_accel=3.0, max_brake=6.0, v_max=40.0 / 3.6)


def step_vehicle(state: VehicleState, command: ControlCommand,
                 params: VehicleParams, dt: float = DT) -> VehicleState:
    """Advance one timestep: clamp inputs, integrate speed then pose."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    steering = min(max(command.steering, -1.0), 1.0)
    throttle = min(max(command.throttle, -1.0), 1.0)

    steer_angle = steering * params.max_steer_angle
    accel = throttle * (params.max_accel if throttle >= 0.0 else params.max_brake)
    speed = min(max(state.speed + accel * dt, 0.0), params.v_max)
    heading = normalize_angle(
        state.heading + (speed / params.wheelbase) * math.tan(steer_angle) * dt)
    position = state.position + speed * dt * np.array(
        [math.cos(heading), math.sin(heading)])
    return VehicleState(position=position, heading=heading, speed=speed)
