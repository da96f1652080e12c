"""Scenario evaluation harness: deterministic rollouts and gap metrics.

Five test scenarios probe the platoon: (1) scalability at larger platoon
sizes, (2) cooperation under a scripted aggressive leader slowdown, (3)
decentralization by removing the leader mid-run, (4) the full urban test
track, and (5) traffic throughput with V2V on versus off.

Evaluation always drives the policy's mean action (no exploration noise) and
resets without randomization, so reruns produce byte-identical traces. The
report for each run is computed by parsing the written trace back in, which
keeps the report and the trace file consistent by construction. Gaps whose
vehicles leave the world (a removed leader, a crashed vehicle) simply stop
producing samples; such inactive gaps are excluded from the metrics and the
exclusion is noted in the report.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import policy as policy_mod
from .dynamics import default_params
from .env import LEADER_REMOVED, PlatoonEnv
from .policy import PolicyParameters
from .rewards import RewardConfig
from .track import TrackModel

DT = 0.02
DEFAULT_PLATOON = 8
DEFAULT_MAX_STEPS = 10_000

TRACE_HEADER = ("step", "time_s", "vehicle_id", "role", "x", "z", "heading",
                "speed", "gap_error", "reward", "cum_reward", "event")

# one event per trace row; the most consequential wins
_EVENT_PRIORITY = ("crash", "finish", "leader_removed", "caring",
                   "crash_caring", "checkpoint_r", "checkpoint_l")
_EVENT_TRACE_NAME = {"crash_caring": "caring"}

SCENARIO_TRACKS = {1: "straight", 2: "straight", 3: "straight",
                   4: "urban", 5: "urban"}


@dataclass(frozen=True)
class LeaderSpeedProfile:
    """Scripted leader maneuver: cruise, drop to a low speed and hold it for
    about ten seconds, then accelerate back to the previous speed."""

    start_step: int = 1500
    hold_steps: int = 500           # 10 s at the 0.02 s timestep
    low_speed_frac: float = 0.25    # fraction of top speed to hold


class _ProfileController:
    def __init__(self, profile: LeaderSpeedProfile, v_max: float):
        self.profile = profile
        self.v_max = v_max
        self.recorded_speed: Optional[float] = None
        self.released = False

    def throttle_override(self, step: int, speed: float) -> Optional[float]:
        p = self.profile
        if self.released or step < p.start_step:
            return None
        if self.recorded_speed is None:
            self.recorded_speed = speed
        if step < p.start_step + p.hold_steps:
            low = p.low_speed_frac * self.v_max
            return float(np.clip(3.0 * (low - speed) / self.v_max, -1.0, 1.0))
        if speed >= self.recorded_speed - 0.05:
            self.released = True
            return None
        return 1.0


@dataclass
class ScenarioSpec:
    scenario_id: int
    track: TrackModel
    platoon_size: int = DEFAULT_PLATOON
    max_steps: int = DEFAULT_MAX_STEPS
    leader_profile: Optional[LeaderSpeedProfile] = None     # scenario 2
    remove_leader_at_step: Optional[int] = None             # scenario 3
    v2v: bool = True

    def __post_init__(self):
        if self.scenario_id not in (1, 2, 3, 4, 5):
            raise ValueError(f"unknown scenario id {self.scenario_id}; valid: 1-5")
        if self.scenario_id == 3 and self.remove_leader_at_step is None:
            raise ValueError("scenario 3 requires remove_leader_at_step")
        if self.scenario_id == 2 and self.leader_profile is None:
            raise ValueError("scenario 2 requires a leader speed profile")
        if self.scenario_id not in (2,) and self.leader_profile is not None:
            raise ValueError("leader profile only applies to scenario 2")
        if self.scenario_id not in (3,) and self.remove_leader_at_step is not None:
            raise ValueError("leader removal only applies to scenario 3")


def default_spec(scenario_id: int, straight_track: TrackModel,
                 urban_track: TrackModel, platoon_size: int = DEFAULT_PLATOON,
                 max_steps: int = DEFAULT_MAX_STEPS,
                 remove_leader_at_step: int = 1500,
                 leader_profile: Optional[LeaderSpeedProfile] = None
                 ) -> ScenarioSpec:
    if scenario_id not in SCENARIO_TRACKS:
        raise ValueError(f"unknown scenario id {scenario_id}; valid: 1-5")
    track = straight_track if SCENARIO_TRACKS[scenario_id] == "straight" else urban_track
    return ScenarioSpec(
        scenario_id=scenario_id, track=track, platoon_size=platoon_size,
        max_steps=max_steps,
        leader_profile=((leader_profile or LeaderSpeedProfile())
                        if scenario_id == 2 else None),
        remove_leader_at_step=(remove_leader_at_step if scenario_id == 3
                               else None))


@dataclass(frozen=True)
class TraceRow:
    step: int
    time_s: float
    vehicle_id: str
    role: str
    x: float
    z: float
    heading: float
    speed: float
    gap_error: Optional[float]
    reward: float
    cum_reward: float
    event: str


@dataclass(frozen=True)
class GapMetrics:
    gap_index: int          # gap i sits between vehicles i and i+1
    rmse: float
    std: float
    max_signed: float       # largest-|e| error, sign preserved, later sample wins ties
    stall: float            # mean error over the final 5% of the gap's samples
    samples: int


@dataclass(frozen=True)
class ScenarioReport:
    scenario_id: int
    variant: str            # "default" | "v2v_on" | "v2v_off"
    track_name: str
    platoon_size: int
    gaps: list[GapMetrics]
    crash_count: int
    finished: int
    throughput_per_min: float
    sim_minutes: float
    trace_path: Optional[Path]
    notes: tuple[str, ...] = ()


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def compute_metrics(rows: Sequence[TraceRow]) -> tuple[list[GapMetrics], int]:
    """Per-gap error statistics and the crash count from a trace.

    Gap i is the series of gap errors logged by follower vehicle v{i+1};
    steps where a gap's vehicles are not both active contribute no samples.
    Gaps that never produced a sample are excluded; a gap with fewer than 20
    samples violates the metrics precondition.
    """
    if not rows:
        raise ValueError("empty trace")
    series: dict[str, list[float]] = {}
    crash_count = 0
    for row in rows:
        if row.event == "crash":
            crash_count += 1
        if row.gap_error is not None:
            series.setdefault(row.vehicle_id, []).append(row.gap_error)

    def follower_index(vid: str) -> int:
        return int(vid[1:])

    metrics = []
    for vid in sorted(series, key=follower_index):
        errors = np.asarray(series[vid])
        n = len(errors)
        if n < 20:
            raise ValueError(f"gap of {vid} has only {n} samples; need >= 20")
        abs_errors = np.abs(errors)
        # later sample wins ties for the signed maximum
        max_idx = n - 1 - int(np.argmax(abs_errors[::-1]))
        tail = max(1, int(math.ceil(0.05 * n)))
        metrics.append(GapMetrics(
            gap_index=follower_index(vid) - 1,
            rmse=float(np.sqrt(np.mean(errors ** 2))),
            std=float(errors.std()),
            max_signed=float(errors[max_idx]),
            stall=float(errors[-tail:].mean()),
            samples=n,
        ))
    return metrics, crash_count


def throughput(rows: Sequence[TraceRow]) -> float:
    """Vehicles finished per simulated minute, to the last finish event."""
    finishes = [row.time_s for row in rows if row.event == "finish"]
    if not finishes:
        return 0.0
    minutes = max(finishes) / 60.0
    return len(finishes) / minutes


def relative_throughput_change(on: float, off: float) -> float:
    if off == 0.0:
        return math.inf if on > 0.0 else 0.0
    return (on - off) / off


# ---------------------------------------------------------------------------
# Trace I/O
# ---------------------------------------------------------------------------

def write_trace(path: Path, rows: Sequence[TraceRow]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(TRACE_HEADER)
        for row in rows:
            writer.writerow([
                row.step, f"{row.time_s:.2f}", row.vehicle_id, row.role,
                f"{row.x:.6f}", f"{row.z:.6f}", f"{row.heading:.6f}",
                f"{row.speed:.6f}",
                "" if row.gap_error is None else f"{row.gap_error:.6f}",
                f"{row.reward:.6f}", f"{row.cum_reward:.6f}", row.event,
            ])


def read_trace(path: Path) -> list[TraceRow]:
    rows: list[TraceRow] = []
    with open(path, "r", newline="") as handle:
        reader = csv.reader(handle)
        for lineno, record in enumerate(reader, start=1):
            if lineno == 1:
                if tuple(record) != TRACE_HEADER:
                    raise ValueError(f"line 1: unexpected trace header {record}")
                continue
            if not record:
                continue
            if len(record) != len(TRACE_HEADER):
                raise ValueError(f"line {lineno}: expected "
                                 f"{len(TRACE_HEADER)} fields, got {len(record)}")
            try:
                rows.append(TraceRow(
                    step=int(record[0]), time_s=float(record[1]),
                    vehicle_id=record[2], role=record[3],
                    x=float(record[4]), z=float(record[5]),
                    heading=float(record[6]), speed=float(record[7]),
                    gap_error=None if record[8] == "" else float(record[8]),
                    reward=float(record[9]), cum_reward=float(record[10]),
                    event=record[11]))
            except ValueError as exc:
                raise ValueError(f"line {lineno}: malformed trace row: {exc}")
    if not rows:
        raise ValueError("empty trace")
    return rows


# ---------------------------------------------------------------------------
# Scenario execution
# ---------------------------------------------------------------------------

def _pick_event(events: tuple[str, ...]) -> str:
    for name in _EVENT_PRIORITY:
        if name in events:
            return _EVENT_TRACE_NAME.get(name, name)
    return "none"


def _load_params(checkpoint) -> PolicyParameters:
    if isinstance(checkpoint, PolicyParameters):
        return checkpoint
    params, _, _ = policy_mod.load_checkpoint(checkpoint)
    return params


def _run_single(spec: ScenarioSpec, params: PolicyParameters,
                reward_config: RewardConfig, v2v: bool, variant: str,
                trace_path: Path) -> ScenarioReport:
    env = PlatoonEnv(spec.track, spec.platoon_size, reward_config=reward_config,
                     seed=0, env_index=0, v2v=v2v, randomize_resets=False,
                     step_cap=spec.max_steps)
    profile = (_ProfileController(spec.leader_profile, env.vehicle_params.v_max)
               if spec.leader_profile else None)
    rows: list[TraceRow] = []
    notes: list[str] = []

    for step in range(spec.max_steps):
        if env.env_done:
            break
        if spec.remove_leader_at_step == step:
            leader = env.comm_topology.leader
            event = env.remove_vehicle(leader)
            slot = env.slots[leader]
            rows.append(TraceRow(
                step=step, time_s=step * reward_config.dt, vehicle_id=leader,
                role="leader", x=slot.state.position[0], z=slot.state.position[1],
                heading=slot.state.heading, speed=slot.state.speed,
                gap_error=None, reward=0.0, cum_reward=slot.cum_reward,
                event=LEADER_REMOVED))
            notes.append(f"leader {leader} removed at step {step}; "
                         "its gap is inactive afterwards and excluded")
        obs = env.observations()
        acting = list(obs)
        if not acting:
            break
        stacked = np.stack([obs[vid] for vid in acting])
        means, _ = policy_mod.forward_batch(params, stacked)
        actions = {vid: means[i] for i, vid in enumerate(acting)}
        if profile is not None:
            leader = env.comm_topology.leader
            if leader in actions:
                override = profile.throttle_override(
                    step, env.slots[leader].state.speed)
                if override is not None:
                    actions[leader] = np.array([actions[leader][0], override])
        result = env.step(actions, phase=3)
        for vid, info in result.infos.items():
            rows.append(TraceRow(
                step=result.step, time_s=(result.step + 1) * reward_config.dt,
                vehicle_id=vid, role=info.role, x=info.position[0],
                z=info.position[1], heading=info.heading, speed=info.speed,
                gap_error=info.gap_error, reward=info.reward,
                cum_reward=info.cum_reward, event=_pick_event(info.events)))

    write_trace(trace_path, rows)
    parsed = read_trace(trace_path)
    gaps, crash_count = compute_metrics(parsed)
    finished = sum(1 for row in parsed if row.event == "finish")
    per_min = throughput(parsed)
    finish_times = [row.time_s for row in parsed if row.event == "finish"]
    sim_minutes = (max(finish_times) if finish_times
                   else len({row.step for row in parsed}) * reward_config.dt) / 60.0
    return ScenarioReport(
        scenario_id=spec.scenario_id, variant=variant,
        track_name=spec.track.name, platoon_size=spec.platoon_size,
        gaps=gaps, crash_count=crash_count, finished=finished,
        throughput_per_min=per_min, sim_minutes=sim_minutes,
        trace_path=trace_path, notes=tuple(notes))


def run_scenario(spec: ScenarioSpec, checkpoint,
                 reward_config: Optional[RewardConfig] = None,
                 out_dir: Path = Path(".")) -> list[ScenarioReport]:
    """Run one scenario deterministically; scenario 5 runs twice (V2V on/off)."""
    params = _load_params(checkpoint)
    reward_config = reward_config or RewardConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if spec.scenario_id == 5:
        reports = []
        for v2v, variant in ((True, "v2v_on"), (False, "v2v_off")):
            trace_path = out_dir / f"trace_scenario5_{variant}.csv"
            reports.append(_run_single(spec, params, reward_config, v2v,
                                       variant, trace_path))
        return reports
    trace_path = out_dir / f"trace_scenario{spec.scenario_id}.csv"
    return [_run_single(spec, params, reward_config, spec.v2v, "default",
                        trace_path)]


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------

def render_report(report: ScenarioReport) -> str:
    lines = [f"Scenario {report.scenario_id} ({report.variant}) on "
             f"{report.track_name}, platoon of {report.platoon_size}"]
    if report.gaps:
        lines.append(f"  {'gap':>4} {'rmse_m':>9} {'std_m':>9} "
                     f"{'max_m':>9} {'stall_m':>9} {'samples':>8}")
        for gap in report.gaps:
            lines.append(f"  {gap.gap_index:>4} {gap.rmse:>9.3f} "
                         f"{gap.std:>9.3f} {gap.max_signed:>9.3f} "
                         f"{gap.stall:>9.3f} {gap.samples:>8}")
    else:
        lines.append("  (no inter-vehicle gaps: platoon of one)")
    lines.append(f"  crashes {report.crash_count} | finished {report.finished} "
                 f"| throughput {report.throughput_per_min:.3f} vehicles/min "
                 f"| simulated {report.sim_minutes:.2f} min")
    for note in report.notes:
        lines.append(f"  note: {note}")
    return "\n".join(lines)


def render_comparison(on: ScenarioReport, off: ScenarioReport) -> str:
    change = relative_throughput_change(on.throughput_per_min,
                                        off.throughput_per_min)
    return ("Throughput with V2V on vs off: "
            f"{on.throughput_per_min:.3f} vs {off.throughput_per_min:.3f} "
            f"vehicles/min (relative change {change:+.2%})")


def write_report_csv(path: Path, reports: Sequence[ScenarioReport]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(("scenario", "variant", "record", "gap", "rmse_m",
                         "std_m", "max_m", "stall_m", "samples", "crashes",
                         "finished", "throughput_per_min"))
        for report in reports:
            for gap in report.gaps:
                writer.writerow((report.scenario_id, report.variant, "gap",
                                 gap.gap_index, f"{gap.rmse:.6f}",
                                 f"{gap.std:.6f}", f"{gap.max_signed:.6f}",
                                 f"{gap.stall:.6f}", gap.samples, "", "", ""))
            writer.writerow((report.scenario_id, report.variant, "summary",
                             "", "", "", "", "", "", report.crash_count,
                             report.finished,
                             f"{report.throughput_per_min:.6f}"))
