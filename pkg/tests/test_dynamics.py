import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from platoonrl.dynamics import (
    ControlCommand,
    VehicleState,
    default_params,
    step_vehicle,
)


def make_state(x=0.0, z=0.0, heading=0.0, speed=0.0):
    return VehicleState(position=np.array([x, z]), heading=heading, speed=speed)


def test_straight_line_advance():
    params = default_params()
    state = make_state(speed=10.0)
    nxt = step_vehicle(state, ControlCommand(0.0, 0.0), params, dt=0.02)
    assert nxt.position[0] == pytest.approx(0.2, abs=1e-12)
    assert nxt.position[1] == pytest.approx(0.0, abs=1e-12)
    assert nxt.speed == 10.0
    assert nxt.heading == 0.0


def test_circle_closure_matches_closed_form():
    """Constant steer at constant speed traces radius wheelbase/tan(delta);
    after one full period the vehicle is back at the start."""
    params = default_params()
    steering = 0.6
    delta = steering * params.max_steer_angle
    radius = params.wheelbase / math.tan(delta)
    steps = 3000
    dt = 0.02
    speed = 2.0 * math.pi * radius / (steps * dt)   # one lap in exactly `steps`
    state = make_state(speed=speed)
    start = state.position.copy()
    for _ in range(steps):
        state = step_vehicle(state, ControlCommand(steering, 0.0), params, dt)
    assert np.hypot(*(state.position - start)) < 0.1


def test_speed_clamps_at_v_max():
    params = default_params()
    state = make_state(speed=params.v_max)
    nxt = step_vehicle(state, ControlCommand(0.0, 1.0), params)
    assert nxt.speed == params.v_max


def test_no_reverse():
    params = default_params()
    state = make_state(speed=0.5)
    for _ in range(20):
        state = step_vehicle(state, ControlCommand(0.0, -1.0), params)
    assert state.speed == 0.0


def test_default_params_top_speed_is_40_kmh():
    params = default_params()
    assert params.v_max * 3.6 == pytest.approx(40.0, rel=1e-12)
    assert all(v > 0 for v in (params.wheelbase, params.max_steer_angle,
                               params.max_accel, params.max_brake, params.v_max))


def test_default_params_full_steer_turning_radius():
    params = default_params()
    radius = params.wheelbase / math.tan(params.max_steer_angle)
    assert radius == pytest.approx(2.5 / math.tan(0.5), rel=1e-12)
    assert radius == pytest.approx(4.576, abs=5e-3)


def test_mirror_symmetry_across_initial_heading():
    params = default_params()
    rng = np.random.default_rng(3)
    commands = [(float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)))
                for _ in range(200)]
    a = make_state(speed=5.0)
    b = make_state(speed=5.0)
    for steer, throttle in commands:
        a = step_vehicle(a, ControlCommand(steer, throttle), params)
        b = step_vehicle(b, ControlCommand(-steer, throttle), params)
    assert a.position[0] == pytest.approx(b.position[0], abs=1e-9)
    assert a.position[1] == pytest.approx(-b.position[1], abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-2.0, 2.0), st.floats(-2.0, 2.0)),
                min_size=1, max_size=60),
       st.floats(0.0, 40.0 / 3.6))
def test_speed_stays_in_bounds(commands, speed0):
    params = default_params()
    state = make_state(speed=speed0)
    for steer, throttle in commands:
        state = step_vehicle(state, ControlCommand(steer, throttle), params)
        assert 0.0 <= state.speed <= params.v_max
        assert -math.pi < state.heading <= math.pi


def test_stationary_with_zero_throttle_never_moves():
    params = default_params()
    state = make_state()
    for _ in range(100):
        state = step_vehicle(state, ControlCommand(1.0, 0.0), params)
    assert np.array_equal(state.position, np.zeros(2))
    assert state.speed == 0.0


def test_step_is_bit_deterministic():
    params = default_params()
    state = make_state(x=3.0, z=-1.0, heading=0.7, speed=4.2)
    cmd = ControlCommand(0.31, -0.44)
    first = step_vehicle(state, cmd, params)
    for _ in range(50):
        again = step_vehicle(state, cmd, params)
        assert np.array_equal(first.position, again.position)
        assert first.heading == again.heading
        assert first.speed == again.speed


def test_dt_must_be_positive():
    with pytest.raises(ValueError):
        step_vehicle(make_state(), ControlCommand(0.0, 0.0), default_params(), dt=0.0)
