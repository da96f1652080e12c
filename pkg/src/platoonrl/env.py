"""Episode engine driving a platoon on a track.

One PlatoonEnv owns the mutable world: vehicle states, checkpoint progress,
the live communication chain, and crashed-vehicle wreckage. Stepping is
synchronous: all active vehicles integrate simultaneously, then collisions,
checkpoint/finish crossings, and rewards are resolved.

Episode semantics: a crash ends that vehicle's episode immediately and its
footprint becomes a static obstacle. Reaching the finish line despawns the
vehicle physically but leaves its episode open until the environment episode
ends, so caring credit earned from a follower finishing later still lands
inside the episode. The environment episode ends when every vehicle has
finished, crashed, or been removed, or when the step cap is hit.

Two chains are maintained: the live chain over active vehicles (spliced on
any deactivation) drives message exchange, observation assembly, and dense
reward roles; the caring chain is spliced only on failures, so a finished
predecessor still collects credit when its follower finishes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import comms, rewards, sensing, track as track_mod
from .geometry import segments_cross
from .dynamics import ControlCommand, VehicleParams, VehicleState, default_params, step_vehicle
from .rewards import EventKind, RewardConfig, RewardEvent
from .track import VEHICLE_HALF, Obstacle, TrackModel

LEADER_REMOVED = "leader_removed"

DEFAULT_STEP_CAP = 10_000
START_SPEED_FRAC = 0.3      # reset speeds drawn from [0, 0.3 * v_max]
START_JITTER_M = 1.0        # longitudinal spawn jitter
OBSTACLE_JITTER_M = 8.0     # per-environment obstacle shift along the road


@dataclass
class VehicleSlot:
    vid: str
    state: VehicleState
    active: bool = True
    crashed: bool = False
    finished: bool = False
    removed: bool = False
    episode_open: bool = True
    next_cp_right: int = 0
    next_cp_left: int = 0
    cum_reward: float = 0.0
    last_active_step: int = 0
    event_ledger: list[tuple[int, EventKind, float]] = field(default_factory=list)


@dataclass(frozen=True)
class StepEvent:
    step: int
    kind: str               # EventKind.value or "leader_removed"
    vehicle_id: str
    value: float


@dataclass(frozen=True)
class VehicleStepInfo:
    vehicle_id: str
    role: str
    position: np.ndarray
    heading: float
    speed: float
    gap_error: Optional[float]
    reward: float
    cum_reward: float
    events: tuple[str, ...]


@dataclass(frozen=True)
class StepResult:
    step: int
    rewards: dict[str, float]
    dones: dict[str, bool]          # episodes closed this step
    infos: dict[str, VehicleStepInfo]
    events: list[StepEvent]
    env_done: bool


@dataclass(frozen=True)
class EpisodeStats:
    vehicle_id: str
    cum_reward: float
    length: int
    crashed: bool
    finished: bool


class PlatoonEnv:
    def __init__(self, track: TrackModel, platoon_size: int,
                 reward_config: Optional[RewardConfig] = None,
                 vehicle_params: Optional[VehicleParams] = None,
                 raycast_config: Optional[sensing.RaycastConfig] = None,
                 seed: int = 0, env_index: int = 0, v2v: bool = True,
                 randomize_resets: bool = True, jitter_obstacles: bool = False,
                 step_cap: int = DEFAULT_STEP_CAP):
        if platoon_size < 1:
            raise ValueError("platoon needs at least one vehicle")
        if platoon_size > len(track.start_poses):
            raise ValueError(f"track has {len(track.start_poses)} start slots, "
                             f"requested platoon of {platoon_size}")
        self.platoon_size = platoon_size
        self.reward_config = reward_config or RewardConfig()
        self.vehicle_params = vehicle_params or default_params()
        self.raycast_config = raycast_config or sensing.default_raycast_config()
        self.v2v = v2v
        self.randomize_resets = randomize_resets
        self.step_cap = step_cap
        self.ids = tuple(f"v{i + 1}" for i in range(platoon_size))
        self.rng = np.random.default_rng([seed, env_index])

        if jitter_obstacles and track.obstacles:
            jittered = self._jitter_obstacles(track)
            track = replace(track, obstacles=jittered,
                            obstacle_rects=np.vstack([o.as_row() for o in jittered]))
        self.track = track

        self.completed_episodes: list[EpisodeStats] = []
        self.slots: dict[str, VehicleSlot] = {}
        self.reset()

    # -- lifecycle ---------------------------------------------------------

    def _jitter_obstacles(self, track: TrackModel) -> list[Obstacle]:
        """Shift each obstacle along the local road direction; this gives
        parallel environments distinct layouts on the same track design."""
        out = []
        for obstacle in track.obstacles:
            s = track_mod.arc_progress(obstacle.center, track)
            _, tangent = track.point_at(s)
            shift = self.rng.uniform(-OBSTACLE_JITTER_M, OBSTACLE_JITTER_M)
            center = (obstacle.center[0] + shift * tangent[0],
                      obstacle.center[1] + shift * tangent[1])
            out.append(Obstacle(center=center, half=obstacle.half, yaw=obstacle.yaw))
        return out

    def reset(self) -> dict[str, np.ndarray]:
        self.step_count = 0
        self.crashed_obstacles: list[Obstacle] = []
        self.comm_topology = comms.build_topology(self.ids)
        self.caring_topology = comms.build_topology(self.ids)
        self.caring = rewards.CaringTracker(self.reward_config.caring_on_crash)
        self.slots = {}
        for vid, (position, heading) in zip(self.ids, self.track.start_poses):
            pos = np.array(position, dtype=float)
            speed = 0.0
            if self.randomize_resets:
                speed = float(self.rng.uniform(0.0, START_SPEED_FRAC
                                               * self.vehicle_params.v_max))
                pos = pos + self.rng.uniform(-START_JITTER_M, START_JITTER_M) \
                    * np.array([np.cos(heading), np.sin(heading)])
            self.slots[vid] = VehicleSlot(
                vid=vid, state=VehicleState(position=pos, heading=heading,
                                            speed=speed))
        return self.observations()

    @property
    def env_done(self) -> bool:
        no_actives = not any(slot.active for slot in self.slots.values())
        return no_actives or self.step_count >= self.step_cap

    def active_ids(self) -> list[str]:
        return [vid for vid in self.ids if self.slots[vid].active]

    # -- perception --------------------------------------------------------

    def snapshot(self) -> sensing.WorldSnapshot:
        vehicles = {
            vid: sensing.SensedVehicle(position=slot.state.position,
                                       heading=slot.state.heading,
                                       half=VEHICLE_HALF,
                                       speed=slot.state.speed)
            for vid, slot in self.slots.items() if slot.active}
        rect_rows = ([self.track.obstacle_rects] if self.track.obstacle_rects.size else [])
        rect_rows += [o.as_row()[None, :] for o in self.crashed_obstacles]
        obstacle_rects = (np.vstack(rect_rows) if rect_rows
                          else np.zeros((0, 5)))
        return sensing.WorldSnapshot(vehicles=vehicles,
                                     border_segments=self.track.border_segments,
                                     obstacle_rects=obstacle_rects,
                                     v_max=self.vehicle_params.v_max)

    def observations(self) -> dict[str, np.ndarray]:
        """35-value observation per active vehicle.

        With V2V disabled every vehicle is assembled leader-style (zero-filled
        sharing slots) even though reward roles are unchanged.
        """
        snapshot = self.snapshot()
        frames = {vid: sensing.sense(vid, snapshot, self.raycast_config)
                  for vid in self.active_ids()}
        messages = (comms.exchange(frames, self.comm_topology, self.step_count)
                    if self.v2v else {})
        obs: dict[str, np.ndarray] = {}
        for vid in self.active_ids():
            incoming = messages.get(vid)
            if incoming is None:
                obs[vid] = comms.assemble_observation(frames[vid], None, None)
            else:
                predecessor = self.comm_topology.predecessor_of[vid]
                g = rewards.gap(self.slots[vid].state.position,
                                self.slots[predecessor].state.position)
                obs[vid] = comms.assemble_observation(frames[vid], g, incoming,
                                                      self.reward_config.g_max)
        return obs

    # -- perturbations -----------------------------------------------------

    def remove_vehicle(self, vid: str) -> StepEvent:
        """Simulate a malfunction: the vehicle leaves the world immediately
        and both chains splice around it (the lead role passes to the first
        follower when the leader is removed)."""
        slot = self.slots[vid]
        if not slot.active:
            raise ValueError(f"{vid} is not active")
        slot.active = False
        slot.removed = True
        slot.last_active_step = max(self.step_count - 1, 0)
        self._close_episode(slot)
        self.comm_topology = comms.reassign_leader(self.comm_topology, vid)
        self.caring_topology = comms.reassign_leader(self.caring_topology, vid)
        return StepEvent(step=self.step_count, kind=LEADER_REMOVED,
                         vehicle_id=vid, value=0.0)

    # -- stepping ----------------------------------------------------------

    def step(self, actions: dict[str, np.ndarray], phase: int) -> StepResult:
        if self.env_done:
            raise RuntimeError("environment episode is over; call reset()")
        active = self.active_ids()
        prev_states = {vid: self.slots[vid].state for vid in active}

        for vid in active:
            action = np.asarray(actions[vid], dtype=float)
            command = ControlCommand(steering=float(action[0]),
                                     throttle=float(action[1]))
            self.slots[vid].state = step_vehicle(prev_states[vid], command,
                                                 self.vehicle_params,
                                                 self.reward_config.dt)

        events_by_vehicle: dict[str, list[RewardEvent]] = {vid: [] for vid in self.ids}
        crashed_now: list[str] = []
        finished_now: list[str] = []

        # collisions are resolved on the simultaneous new poses
        for vid in active:
            slot = self.slots[vid]
            others = [(o, self.slots[o].state.position, self.slots[o].state.heading,
                       VEHICLE_HALF) for o in active if o != vid]
            report = track_mod.check_collision(
                (slot.state.position, slot.state.heading), VEHICLE_HALF,
                self.track, others, extra_obstacles=self.crashed_obstacles)
            if report.collided:
                events_by_vehicle[vid].append(RewardEvent(EventKind.CRASH, vid))
                crashed_now.append(vid)
                continue
            right = track_mod.checkpoint_crossed(
                prev_states[vid].position, slot.state.position,
                self.track.checkpoints_right, slot.next_cp_right)
            if right is not None:
                slot.next_cp_right += 1
                events_by_vehicle[vid].append(
                    RewardEvent(EventKind.RIGHT_CHECKPOINT, vid))
            left = track_mod.checkpoint_crossed(
                prev_states[vid].position, slot.state.position,
                self.track.checkpoints_left, slot.next_cp_left)
            if left is not None:
                slot.next_cp_left += 1
                events_by_vehicle[vid].append(
                    RewardEvent(EventKind.LEFT_CHECKPOINT, vid))
            if self._crossed_finish(prev_states[vid].position, slot.state.position):
                events_by_vehicle[vid].append(RewardEvent(EventKind.FINISH_LINE, vid))
                finished_now.append(vid)

        for vid in finished_now:
            base = RewardEvent(EventKind.FINISH_LINE, vid)
            for care in self.caring.caring_events(base, self.caring_topology):
                events_by_vehicle[care.vehicle_id].append(care)
        for vid in crashed_now:
            base = RewardEvent(EventKind.CRASH, vid)
            for care in self.caring.caring_events(base, self.caring_topology):
                events_by_vehicle[care.vehicle_id].append(care)

        step_rewards, infos, step_events = self._resolve_rewards(
            active, events_by_vehicle, phase)

        dones: dict[str, bool] = {}
        for vid in crashed_now:
            slot = self.slots[vid]
            slot.active = False
            slot.crashed = True
            slot.last_active_step = self.step_count
            self.crashed_obstacles.append(Obstacle(
                center=(slot.state.position[0], slot.state.position[1]),
                half=VEHICLE_HALF, yaw=slot.state.heading))
            self._close_episode(slot)
            dones[vid] = True
            self.comm_topology = comms.reassign_leader(self.comm_topology, vid)
            self.caring_topology = comms.reassign_leader(self.caring_topology, vid)
        for vid in finished_now:
            slot = self.slots[vid]
            slot.active = False
            slot.finished = True
            slot.last_active_step = self.step_count
            # the episode stays open for late caring credit
            self.comm_topology = comms.reassign_leader(self.comm_topology, vid)

        self.step_count += 1
        env_done = self.env_done
        if env_done:
            for vid in self.ids:
                slot = self.slots[vid]
                if slot.episode_open:
                    if slot.active:
                        slot.last_active_step = self.step_count - 1
                    self._close_episode(slot)
                    dones[vid] = True

        return StepResult(step=self.step_count - 1, rewards=step_rewards,
                          dones=dones, infos=infos, events=step_events,
                          env_done=env_done)

    def _crossed_finish(self, prev_pos, pos) -> bool:
        move = np.array([[prev_pos[0], prev_pos[1], pos[0], pos[1]]])
        gate = np.array([[self.track.finish[0, 0], self.track.finish[0, 1],
                          self.track.finish[1, 0], self.track.finish[1, 1]]])
        return bool(segments_cross(move, gate)[0])

    def _resolve_rewards(self, active, events_by_vehicle, phase):
        cfg = self.reward_config
        step_rewards: dict[str, float] = {}
        infos: dict[str, VehicleStepInfo] = {}
        step_events: list[StepEvent] = []

        for vid in self.ids:
            slot = self.slots[vid]
            events = events_by_vehicle[vid]
            was_active = vid in active
            if not was_active and not events:
                continue
            if was_active:
                role = self.comm_topology.role_of(vid)
                gap_error = None
                if role == comms.FOLLOWER:
                    predecessor = self.comm_topology.predecessor_of[vid]
                    g = rewards.gap(slot.state.position,
                                    self.slots[predecessor].state.position)
                    v_ref = self.slots[predecessor].state.speed
                    gap_error = g - cfg.g_desired
                    reward = rewards.step_reward(role, slot.state.speed, v_ref,
                                                 g, events, phase, cfg)
                else:
                    reward = rewards.step_reward(role, slot.state.speed, 0.0,
                                                 None, events, phase, cfg)
            else:
                # inactive recipient of late caring credit: events only
                role = self.caring_topology.role_of(vid) \
                    if vid in self.caring_topology.order else comms.FOLLOWER
                gap_error = None
                reward = sum(rewards.event_reward(e.kind, phase, cfg)
                             for e in events)
            slot.cum_reward += reward
            step_rewards[vid] = reward
            for event in events:
                value = rewards.event_reward(event.kind, phase, cfg)
                slot.event_ledger.append((self.step_count, event.kind, value))
                step_events.append(StepEvent(step=self.step_count,
                                             kind=event.kind.value,
                                             vehicle_id=vid, value=value))
            infos[vid] = VehicleStepInfo(
                vehicle_id=vid, role=role, position=slot.state.position.copy(),
                heading=slot.state.heading, speed=slot.state.speed,
                gap_error=gap_error, reward=reward, cum_reward=slot.cum_reward,
                events=tuple(e.kind.value for e in events))
        return step_rewards, infos, step_events

    def _close_episode(self, slot: VehicleSlot) -> None:
        if not slot.episode_open:
            return
        slot.episode_open = False
        self.completed_episodes.append(EpisodeStats(
            vehicle_id=slot.vid, cum_reward=slot.cum_reward,
            length=slot.last_active_step + 1, crashed=slot.crashed,
            finished=slot.finished))

    def drain_episode_stats(self) -> list[EpisodeStats]:
        out = self.completed_episodes
        self.completed_episodes = []
        return out
