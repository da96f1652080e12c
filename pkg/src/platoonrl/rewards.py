"""Reward engine: dense per-step penalties, discrete events, curriculum.

Dense penalties apply every 0.02 s step: the leader is penalized for missing
the platoon's desired velocity, followers for velocity mismatch with their
predecessor and for gap error. The gap penalty is 0 at the 10 m desired gap,
-1 at the 30 m maximum allowable gap, and stays -1 beyond it. Discrete
events (checkpoints, finish, crash, caring credit) take per-phase values;
penalty magnitudes grow over three curriculum phases of training progress.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .comms import FOLLOWER, LEADER, PlatoonTopology

# Curriculum phase boundaries in global training steps.
PHASE2_START = 10_000_000
PHASE3_START = 15_000_000
PHASES = (1, 2, 3)

V_MAX_DEFAULT = 40.0 / 3.6   # 40 km/h top speed


class EventKind(enum.Enum):
    RIGHT_CHECKPOINT = "checkpoint_r"
    LEFT_CHECKPOINT = "checkpoint_l"
    FINISH_LINE = "finish"
    FOLLOWER_FINISH_CARING = "caring"
    CRASH = "crash"
    # Only emitted when caring-on-crash is enabled in the config.
    FOLLOWER_CRASH_CARING = "crash_caring"


@dataclass(frozen=True)
class RewardEvent:
    kind: EventKind
    vehicle_id: str         # the vehicle credited or penalized


def _default_event_table() -> dict[EventKind, tuple[float, float, float]]:
    return {
        EventKind.RIGHT_CHECKPOINT: (1.0, 1.0, 1.0),
        EventKind.LEFT_CHECKPOINT: (-0.1, -1.0, -2.0),
        EventKind.FINISH_LINE: (100.0, 100.0, 100.0),
        EventKind.FOLLOWER_FINISH_CARING: (50.0, 50.0, 50.0),
        EventKind.CRASH: (-10.0, -10.0, -50.0),
        EventKind.FOLLOWER_CRASH_CARING: (-10.0, -10.0, -50.0),
    }


@dataclass
class RewardConfig:
    v_max: float = V_MAX_DEFAULT
    v_desired: float = V_MAX_DEFAULT    # platoon target speed (leader)
    g_desired: float = 10.0             # m
    g_max: float = 30.0                 # m, maximum allowable gap
    gap_normalizer: float = 20.0        # m; 20 makes the penalty hit -1 at g_max
    dt: float = 0.02
    caring_on_crash: bool = False
    event_table: dict[EventKind, tuple[float, float, float]] = field(
        default_factory=_default_event_table)

    def __post_init__(self):
        if not (0.0 < self.g_desired < self.g_max):
            raise ValueError("need 0 < g_desired < g_max")
        if self.gap_normalizer <= 0.0:
            raise ValueError("gap_normalizer must be positive")
        for kind in EventKind:
            values = self.event_table.get(kind)
            if values is None or len(values) != len(PHASES):
                raise ValueError(f"event table missing per-phase values for {kind}")


def gap(ego_pos: Sequence[float], pred_pos: Sequence[float]) -> float:
    """Euclidean distance between ego and predecessor positions."""
    return math.hypot(ego_pos[0] - pred_pos[0], ego_pos[1] - pred_pos[1])


def leader_velocity_penalty(v_l: float, config: RewardConfig) -> float:
    error = v_l - config.v_desired
    return -((error / config.v_max) ** 2)


def follower_velocity_penalty(v_f: float, v_pred: float, config: RewardConfig) -> float:
    error = v_f - v_pred
    return -((error / config.v_max) ** 2)


def gap_penalty(g: float, config: RewardConfig) -> float:
    """0 at the desired gap, -1 at the maximum gap, clamped at -1 beyond."""
    error = (g - config.g_desired) / config.gap_normalizer
    return -min(1.0, error * error)


def phase_for_step(global_step: int) -> int:
    if global_step < 0:
        raise ValueError("global_step must be non-negative")
    if global_step < PHASE2_START:
        return 1
    if global_step < PHASE3_START:
        return 2
    return 3


def event_reward(kind: EventKind, phase: int, config: Optional[RewardConfig] = None) -> float:
    if phase not in PHASES:
        raise ValueError(f"invalid curriculum phase {phase}")
    table = (config.event_table if config is not None else _default_event_table())
    return table[kind][phase - 1]


def step_reward(role: str, v: float, v_ref: float, g: Optional[float],
                events: Sequence[RewardEvent], phase: int,
                config: RewardConfig) -> float:
    """Total reward for one vehicle for one step: dense penalties + events.

    Leaders pass v_ref = the platoon's desired velocity marker (ignored; the
    config's v_desired is used) and g = None; followers pass their
    predecessor's speed and the measured gap.
    """
    if role == LEADER:
        if g is not None:
            raise ValueError("leader must not supply a gap")
        total = leader_velocity_penalty(v, config)
    elif role == FOLLOWER:
        if g is None:
            raise ValueError("follower must supply a gap")
        total = follower_velocity_penalty(v, v_ref, config) + gap_penalty(g, config)
    else:
        raise ValueError(f"unknown role {role!r}")
    for event in events:
        total += event_reward(event.kind, phase, config)
    return total


class CaringTracker:
    """Routes caring credit to predecessors, at most once per vehicle per episode."""

    def __init__(self, caring_on_crash: bool = False):
        self.caring_on_crash = caring_on_crash
        self._credited_finish: set[str] = set()
        self._credited_crash: set[str] = set()

    def reset(self) -> None:
        self._credited_finish.clear()
        self._credited_crash.clear()

    def caring_events(self, event: RewardEvent,
                      topology: PlatoonTopology) -> list[RewardEvent]:
        """Caring events triggered by a finish or crash of `event.vehicle_id`."""
        subject = event.vehicle_id
        if subject not in topology.order:
            raise ValueError(f"event subject {subject!r} not in topology")
        predecessor = topology.predecessor_of.get(subject)
        if predecessor is None:
            return []   # the leader has nobody caring for it
        if event.kind is EventKind.FINISH_LINE:
            if subject in self._credited_finish:
                return []
            self._credited_finish.add(subject)
            return [RewardEvent(EventKind.FOLLOWER_FINISH_CARING, predecessor)]
        if event.kind is EventKind.CRASH and self.caring_on_crash:
            if subject in self._credited_crash:
                return []
            self._credited_crash.add(subject)
            return [RewardEvent(EventKind.FOLLOWER_CRASH_CARING, predecessor)]
        return []
