"""Predecessor-follower V2V layer: topology, message exchange, observations.

Each vehicle communicates only with the vehicle directly ahead of it, so the
per-step message count is exactly N-1 and communication cost stays linear in
platoon size. Losing a vehicle splices the chain; losing the leader promotes
the first follower.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .sensing import RAY_COUNT, SensorFrame

OBS_DIM = 35            # 16 ego rays + ego speed + gap + 16 shared rays + shared speed
GAP_OBS_MAX = 30.0      # m, gap normalizer for the observation (max allowable gap)

LEADER = "leader"
FOLLOWER = "follower"


@dataclass(frozen=True)
class V2VMessage:
    sender: str
    shared_distances: np.ndarray    # (16,) in [0, 1]
    shared_speed_norm: float
    step: int


@dataclass(frozen=True)
class PlatoonTopology:
    order: tuple[str, ...]              # leader first
    predecessor_of: Mapping[str, str]   # follower -> predecessor
    leader: Optional[str]

    def role_of(self, vehicle_id: str) -> str:
        return LEADER if vehicle_id == self.leader else FOLLOWER

    def check(self) -> None:
        """Raise if the chain invariants are violated."""
        if not self.order:
            if self.predecessor_of or self.leader is not None:
                raise ValueError("empty topology must have no leader or links")
            return
        if self.leader != self.order[0]:
            raise ValueError("leader must be the first vehicle in order")
        if len(set(self.order)) != len(self.order):
            raise ValueError("duplicate vehicle ids in topology")
        if len(self.predecessor_of) != len(self.order) - 1:
            raise ValueError("chain must have exactly N-1 predecessor links")
        if self.leader in self.predecessor_of:
            raise ValueError("leader cannot have a predecessor")
        for follower, predecessor in self.predecessor_of.items():
            if follower not in self.order or predecessor not in self.order:
                raise ValueError("link references a vehicle outside the platoon")
        # walking the chain from the leader must visit every vehicle once
        successor = {pred: fol for fol, pred in self.predecessor_of.items()}
        seen = [self.leader]
        while seen[-1] in successor:
            seen.append(successor[seen[-1]])
        if tuple(seen) != self.order:
            raise ValueError("predecessor links do not form the platoon chain")


def build_topology(ordered_ids: Sequence[str]) -> PlatoonTopology:
    """Chain topology from an ordered id list, first id leading."""
    ids = tuple(ordered_ids)
    if not ids:
        raise ValueError("platoon needs at least one vehicle")
    if len(set(ids)) != len(ids):
        raise ValueError("vehicle ids must be distinct")
    predecessor_of = {ids[i]: ids[i - 1] for i in range(1, len(ids))}
    topo = PlatoonTopology(order=ids, predecessor_of=predecessor_of, leader=ids[0])
    topo.check()
    return topo


def exchange(frames: Mapping[str, SensorFrame], topology: PlatoonTopology,
             step: int = 0) -> dict[str, V2VMessage]:
    """Per-step sharing: each follower receives its predecessor's frame."""
    messages: dict[str, V2VMessage] = {}
    for follower, predecessor in topology.predecessor_of.items():
        if predecessor not in frames:
            raise ValueError(f"missing sensor frame for {predecessor!r}")
        frame = frames[predecessor]
        messages[follower] = V2VMessage(sender=predecessor,
                                        shared_distances=frame.distances,
                                        shared_speed_norm=frame.speed_norm,
                                        step=step)
    return messages


def reassign_leader(topology: PlatoonTopology, failed_id: str) -> PlatoonTopology:
    """Remove a vehicle and re-close the chain.

    A failed leader hands the lead role to its first follower; a mid-chain
    failure splices its follower onto its predecessor. Removing the only
    vehicle yields the empty (terminal) topology.
    """
    if failed_id not in topology.order:
        raise ValueError(f"unknown vehicle id {failed_id!r}")
    remaining = tuple(vid for vid in topology.order if vid != failed_id)
    if not remaining:
        return PlatoonTopology(order=(), predecessor_of={}, leader=None)
    new_topo = build_topology(remaining)
    new_topo.check()
    return new_topo


def assemble_observation(ego: SensorFrame, gap: Optional[float],
                         incoming: Optional[V2VMessage],
                         gap_max: float = GAP_OBS_MAX) -> np.ndarray:
    """35-value observation: ego rays, ego speed, gap, shared rays, shared speed.

    Followers supply both gap and incoming message; leaders supply neither
    and get zero-filled V2V slots (indices 17..34).
    """
    if (gap is None) != (incoming is None):
        raise ValueError("gap and incoming message must both be present or absent")
    obs = np.zeros(OBS_DIM)
    obs[0:RAY_COUNT] = ego.distances
    obs[RAY_COUNT] = ego.speed_norm
    if incoming is not None:
        obs[RAY_COUNT + 1] = min(max(gap / gap_max, 0.0), 1.0)
        obs[RAY_COUNT + 2:2 * RAY_COUNT + 2] = incoming.shared_distances
        obs[2 * RAY_COUNT + 2] = incoming.shared_speed_norm
    return obs
