import math

import numpy as np
import pytest

from platoonrl.comms import FOLLOWER, LEADER, build_topology
from platoonrl.rewards import (
    CaringTracker,
    EventKind,
    RewardConfig,
    RewardEvent,
    event_reward,
    follower_velocity_penalty,
    gap,
    gap_penalty,
    leader_velocity_penalty,
    phase_for_step,
    step_reward,
)

CFG = RewardConfig()


def test_gap_examples():
    assert gap((0.0, 0.0), (0.0, 0.0)) == 0.0
    assert gap((0.0, 0.0), (3.0, 4.0)) == 5.0


def test_gap_is_symmetric():
    rng = np.random.default_rng(2)
    for _ in range(100):
        a = rng.uniform(-100, 100, size=2)
        b = rng.uniform(-100, 100, size=2)
        assert gap(a, b) == gap(b, a)


def test_leader_velocity_penalty_values():
    cfg = RewardConfig(v_desired=CFG.v_max)
    assert leader_velocity_penalty(cfg.v_desired, cfg) == 0.0
    assert leader_velocity_penalty(0.0, cfg) == pytest.approx(-1.0)
    assert leader_velocity_penalty(cfg.v_max / 2.0, cfg) == pytest.approx(-0.25)


def test_follower_velocity_penalty_values():
    assert follower_velocity_penalty(3.0, 3.0, CFG) == 0.0
    assert follower_velocity_penalty(CFG.v_max, 0.0, CFG) == pytest.approx(-1.0)
    assert follower_velocity_penalty(2.0, 7.0, CFG) == \
        follower_velocity_penalty(7.0, 2.0, CFG)


def test_gap_penalty_endpoints_and_clamp():
    assert gap_penalty(10.0, CFG) == 0.0
    assert gap_penalty(30.0, CFG) == pytest.approx(-1.0)
    assert gap_penalty(50.0, CFG) == -1.0
    assert gap_penalty(20.0, CFG) == pytest.approx(-0.25)


def test_gap_penalty_monotone_then_flat():
    errors = np.linspace(0.0, 25.0, 200)
    values = [gap_penalty(CFG.g_desired + e, CFG) for e in errors]
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
    flat = [gap_penalty(g, CFG) for g in (31.0, 40.0, 500.0)]
    assert flat == [-1.0, -1.0, -1.0]
    assert all(-1.0 <= v <= 0.0 for v in values)


def test_phase_boundaries():
    assert phase_for_step(0) == 1
    assert phase_for_step(9_999_999) == 1
    assert phase_for_step(10_000_000) == 2
    assert phase_for_step(14_999_999) == 2
    assert phase_for_step(15_000_000) == 3
    assert phase_for_step(24_999_999) == 3
    with pytest.raises(ValueError):
        phase_for_step(-1)


def test_event_table_matches_published_values():
    expected = {
        EventKind.RIGHT_CHECKPOINT: (1.0, 1.0, 1.0),
        EventKind.LEFT_CHECKPOINT: (-0.1, -1.0, -2.0),
        EventKind.FINISH_LINE: (100.0, 100.0, 100.0),
        EventKind.FOLLOWER_FINISH_CARING: (50.0, 50.0, 50.0),
        EventKind.CRASH: (-10.0, -10.0, -50.0),
    }
    for kind, values in expected.items():
        for phase, value in zip((1, 2, 3), values):
            assert event_reward(kind, phase, CFG) == value


def test_step_reward_leader_at_desired_speed():
    cfg = RewardConfig(v_desired=5.0)
    assert step_reward(LEADER, 5.0, 0.0, None, [], 1, cfg) == 0.0


def test_step_reward_follower_with_checkpoint():
    events = [RewardEvent(EventKind.RIGHT_CHECKPOINT, "b")]
    total = step_reward(FOLLOWER, 4.0, 4.0, 10.0, events, 1, CFG)
    assert total == pytest.approx(1.0)


def test_step_reward_worst_case_phase3():
    events = [RewardEvent(EventKind.CRASH, "b")]
    total = step_reward(FOLLOWER, CFG.v_max, 0.0, 42.0, events, 3, CFG)
    assert total == pytest.approx(-52.0)


def test_step_reward_role_mismatch():
    with pytest.raises(ValueError):
        step_reward(LEADER, 5.0, 0.0, 12.0, [], 1, CFG)
    with pytest.raises(ValueError):
        step_reward(FOLLOWER, 5.0, 5.0, None, [], 1, CFG)


def test_caring_credits_direct_predecessor():
    topo = build_topology(["a", "b", "c"])
    tracker = CaringTracker()
    events = tracker.caring_events(RewardEvent(EventKind.FINISH_LINE, "c"), topo)
    assert events == [RewardEvent(EventKind.FOLLOWER_FINISH_CARING, "b")]


def test_leader_finish_emits_no_caring():
    topo = build_topology(["a", "b", "c"])
    tracker = CaringTracker()
    assert tracker.caring_events(RewardEvent(EventKind.FINISH_LINE, "a"), topo) == []


def test_caring_once_per_episode():
    topo = build_topology(["a", "b", "c"])
    tracker = CaringTracker()
    first = tracker.caring_events(RewardEvent(EventKind.FINISH_LINE, "c"), topo)
    second = tracker.caring_events(RewardEvent(EventKind.FINISH_LINE, "c"), topo)
    assert len(first) == 1 and second == []
    tracker.reset()
    assert len(tracker.caring_events(
        RewardEvent(EventKind.FINISH_LINE, "c"), topo)) == 1


def test_crash_caring_defaults_off_and_can_be_enabled():
    topo = build_topology(["a", "b"])
    off = CaringTracker(caring_on_crash=False)
    assert off.caring_events(RewardEvent(EventKind.CRASH, "b"), topo) == []
    on = CaringTracker(caring_on_crash=True)
    events = on.caring_events(RewardEvent(EventKind.CRASH, "b"), topo)
    assert events == [RewardEvent(EventKind.FOLLOWER_CRASH_CARING, "a")]
    assert on.caring_events(RewardEvent(EventKind.CRASH, "b"), topo) == []


def test_caring_unknown_subject_rejected():
    topo = build_topology(["a", "b"])
    with pytest.raises(ValueError):
        CaringTracker().caring_events(RewardEvent(EventKind.FINISH_LINE, "zz"), topo)


def test_caring_totals_match_finished_followers():
    """Across an episode, caring received = 50 x direct followers finished."""
    topo = build_topology(["a", "b", "c", "d"])
    tracker = CaringTracker()
    received: dict[str, float] = {vid: 0.0 for vid in topo.order}
    for finisher in ("d", "c", "b", "d"):    # d finishing twice is suppressed
        for event in tracker.caring_events(
                RewardEvent(EventKind.FINISH_LINE, finisher), topo):
            received[event.vehicle_id] += event_reward(event.kind, 2, CFG)
    assert received == {"a": 50.0, "b": 50.0, "c": 50.0, "d": 0.0}


def test_dense_penalties_are_nonpositive_and_bounded():
    rng = np.random.default_rng(8)
    for _ in range(300):
        v1 = rng.uniform(0.0, CFG.v_max)
        v2 = rng.uniform(0.0, CFG.v_max)
        g = rng.uniform(0.0, 100.0)
        assert -1.0 <= leader_velocity_penalty(v1, CFG) <= 0.0
        assert -1.0 <= follower_velocity_penalty(v1, v2, CFG) <= 0.0
        assert -1.0 <= gap_penalty(g, CFG) <= 0.0


def test_config_validation():
    with pytest.raises(ValueError):
        RewardConfig(g_desired=30.0, g_max=30.0)
    with pytest.raises(ValueError):
        RewardConfig(gap_normalizer=0.0)
