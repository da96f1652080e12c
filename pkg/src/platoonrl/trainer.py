"""Decentralized multi-agent PPO on a shared parameter set.

Every vehicle in every parallel environment acts through the same policy
snapshot; per-agent trajectories are pooled into one update. Rollouts run
sequentially over the environment pool with per-environment random streams,
so single-threaded execution is the deterministic reference behavior.

A vehicle whose episode is still open but who has physically left the world
(finished, waiting for the environment episode to end) contributes padding
steps: zero observations, no action, but any late caring reward is recorded
so GAE propagates it back into the steps that earned it. Padding steps are
masked out of the policy/value update itself.
"""

from __future__ import annotations

import csv
import pickle
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import policy as policy_mod
from .env import PlatoonEnv
from .policy import Minibatch, PolicyParameters, PPOLossConfig
from .rewards import RewardConfig, phase_for_step
from .track import TrackModel

STATS_HEADER = ("global_step", "mean_cum_reward", "mean_episode_len",
                "crash_rate", "policy_loss", "value_loss", "entropy")


@dataclass
class PPOConfig:
    discount: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    learning_rate: float = 3e-4
    epochs: int = 3
    minibatch_size: int = 1024
    horizon: int = 2048             # steps per environment per update
    entropy_coef: float = 5e-3
    value_coef: float = 0.5
    total_steps: int = 25_000_000
    n_envs: int = 2
    platoon_size: int = 3
    step_cap: int = 10_000
    stats_every: int = 20_000
    checkpoint_every: int = 10      # updates between checkpoints
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not (0.0 < self.discount <= 1.0 and 0.0 < self.gae_lambda <= 1.0):
            raise ValueError("discount and gae_lambda must be in (0, 1]")
        if self.clip_eps <= 0.0:
            raise ValueError("clip_eps must be positive")
        if self.total_steps <= 0:
            raise ValueError("total_steps must be positive")

    def loss_config(self) -> PPOLossConfig:
        return PPOLossConfig(clip_eps=self.clip_eps, value_coef=self.value_coef,
                             entropy_coef=self.entropy_coef)


@dataclass
class Trajectory:
    obs: np.ndarray             # (T, obs_dim)
    actions: np.ndarray         # (T, act_dim) pre-clamp samples
    log_probs: np.ndarray       # (T,)
    rewards: np.ndarray         # (T,)
    values: np.ndarray          # (T,)
    dones: np.ndarray           # (T,) 0.0 / 1.0
    active: np.ndarray          # (T,) bool, False on padding steps
    bootstrap_value: float = 0.0


def compute_gae(trajectory: Trajectory, gamma: float,
                lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Exponentially weighted advantage sums and value targets.

    delta_t = r_t + gamma * v_{t+1} * (1 - done_t) - v_t with v_T taken from
    the trajectory's bootstrap value (0 when the last step is terminal).
    """
    rewards = np.asarray(trajectory.rewards, dtype=float)
    values = np.asarray(trajectory.values, dtype=float)
    dones = np.asarray(trajectory.dones, dtype=float)
    if not (len(rewards) == len(values) == len(dones)):
        raise ValueError("trajectory sequences must have equal length")
    next_values = np.append(values[1:], trajectory.bootstrap_value)
    deltas = rewards + gamma * next_values * (1.0 - dones) - values
    advantages = np.zeros(len(rewards))
    gae = 0.0
    for t in reversed(range(len(rewards))):
        gae = deltas[t] + gamma * lam * (1.0 - dones[t]) * gae
        advantages[t] = gae
    return advantages, advantages + values


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(m=np.zeros(size), v=np.zeros(size), t=0)

    def copy(self) -> "AdamState":
        return AdamState(m=self.m.copy(), v=self.v.copy(), t=self.t)


def adam_step(flat_params: np.ndarray, flat_grad: np.ndarray, state: AdamState,
              lr: float, beta1: float, beta2: float, eps: float) -> np.ndarray:
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * flat_grad
    state.v = beta2 * state.v + (1.0 - beta2) * flat_grad * flat_grad
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    return flat_params - lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# Rollouts
# ---------------------------------------------------------------------------

def collect_rollouts(envs: list[PlatoonEnv], params: PolicyParameters,
                     horizon: int, global_step: int,
                     action_rngs: list[np.random.Generator]
                     ) -> tuple[list[Trajectory], int]:
    """Step every environment `horizon` times under one parameter snapshot.

    Returns one trajectory per vehicle slot per environment (all of length
    `horizon`) and the advanced global step counter. Environments reset
    themselves when their episode ends mid-horizon.
    """
    n_envs = len(envs)
    trajectories: list[Trajectory] = []
    for env_index, env in enumerate(envs):
        rng = action_rngs[env_index]
        obs_dim = policy_mod.OBS_DIM
        act_dim = params.act_dim
        slots = env.ids
        buf = {vid: Trajectory(obs=np.zeros((horizon, obs_dim)),
                               actions=np.zeros((horizon, act_dim)),
                               log_probs=np.zeros(horizon),
                               rewards=np.zeros(horizon),
                               values=np.zeros(horizon),
                               dones=np.zeros(horizon),
                               active=np.zeros(horizon, dtype=bool))
               for vid in slots}
        closed = {vid: False for vid in slots}   # episode closed, awaiting reset

        for h in range(horizon):
            if env.env_done:
                env.reset()
                closed = {vid: False for vid in slots}
            phase = phase_for_step(global_step + h * n_envs)
            obs = env.observations()
            acting = [vid for vid in slots if vid in obs]
            stacked = np.stack([obs[vid] for vid in acting])
            actions, log_probs, values, raws = policy_mod.sample_actions_batch(
                params, stacked, rng)
            result = env.step({vid: actions[i] for i, vid in enumerate(acting)},
                              phase)
            for i, vid in enumerate(acting):
                traj = buf[vid]
                traj.obs[h] = stacked[i]
                traj.actions[h] = raws[i]
                traj.log_probs[h] = log_probs[i]
                traj.values[h] = values[i]
                traj.rewards[h] = result.rewards.get(vid, 0.0)
                traj.dones[h] = 1.0 if result.dones.get(vid, False) else 0.0
                traj.active[h] = True
            for vid in slots:
                if vid in obs:
                    continue
                traj = buf[vid]
                traj.rewards[h] = result.rewards.get(vid, 0.0)
                if closed[vid]:
                    traj.dones[h] = 1.0     # dead padding: no value flow
                else:
                    traj.dones[h] = 1.0 if result.dones.get(vid, False) else 0.0
            for vid, done in result.dones.items():
                if done:
                    closed[vid] = True

        # bootstrap open episodes with the value of the next observation
        if not env.env_done:
            obs = env.observations()
            acting = [vid for vid in slots if vid in obs]
            if acting:
                stacked = np.stack([obs[vid] for vid in acting])
                _, tail_values = policy_mod.forward_batch(params, stacked)
                for i, vid in enumerate(acting):
                    buf[vid].bootstrap_value = float(tail_values[i])
        trajectories.extend(buf[vid] for vid in slots)

    return trajectories, global_step + n_envs * horizon


# ---------------------------------------------------------------------------
# Updates
# ---------------------------------------------------------------------------

def normalize_advantages(advantages: np.ndarray) -> np.ndarray:
    """Exact mean-0 / std-1 normalization (population std, no epsilon)."""
    centered = advantages - advantages.mean()
    std = centered.std()
    if std == 0.0:
        return np.zeros_like(centered)
    return centered / std


def ppo_update(params: PolicyParameters, trajectories: list[Trajectory],
               config: PPOConfig, adam: AdamState,
               shuffle_rng: np.random.Generator
               ) -> tuple[PolicyParameters, AdamState, dict[str, float]]:
    """Clipped-surrogate update over the pooled active samples.

    A non-finite loss anywhere aborts the whole update and returns the
    original parameters and optimizer state unchanged.
    """
    if not trajectories:
        raise ValueError("no trajectories to update from")
    obs_rows, action_rows, old_lp, adv, ret = [], [], [], [], []
    for traj in trajectories:
        advantages, returns = compute_gae(traj, config.discount, config.gae_lambda)
        mask = traj.active
        obs_rows.append(traj.obs[mask])
        action_rows.append(traj.actions[mask])
        old_lp.append(traj.log_probs[mask])
        adv.append(advantages[mask])
        ret.append(returns[mask])
    obs = np.vstack(obs_rows)
    actions = np.vstack(action_rows)
    old_log_probs = np.concatenate(old_lp)
    advantages = normalize_advantages(np.concatenate(adv))
    returns = np.concatenate(ret)
    n = len(obs)
    if n == 0:
        raise ValueError("trajectories contain no active samples")

    loss_cfg = config.loss_config()
    flat = params.flat()
    trial_adam = adam.copy()
    losses: list[dict[str, float]] = []
    try:
        for _ in range(config.epochs):
            order = shuffle_rng.permutation(n)
            for start in range(0, n, config.minibatch_size):
                idx = order[start:start + config.minibatch_size]
                batch = Minibatch(obs=obs[idx], actions=actions[idx],
                                  old_log_probs=old_log_probs[idx],
                                  advantages=advantages[idx],
                                  returns=returns[idx])
                grads, stats = policy_mod.gradients(params.with_flat(flat),
                                                    batch, loss_cfg)
                flat = adam_step(flat, grads.flat(), trial_adam,
                                 config.learning_rate, config.adam_beta1,
                                 config.adam_beta2, config.adam_eps)
                losses.append(stats)
        if not np.all(np.isfinite(flat)):
            raise ValueError("non-finite parameters after update")
    except ValueError:
        return params, adam, {"aborted": 1.0, "policy_loss": float("nan"),
                              "value_loss": float("nan"),
                              "entropy": float("nan"),
                              "first_policy_loss": float("nan")}

    stats = {
        "aborted": 0.0,
        "policy_loss": float(np.mean([s["policy_loss"] for s in losses])),
        "value_loss": float(np.mean([s["value_loss"] for s in losses])),
        "entropy": float(np.mean([s["entropy"] for s in losses])),
        "first_policy_loss": losses[0]["policy_loss"],
    }
    return params.with_flat(flat), trial_adam, stats


# ---------------------------------------------------------------------------
# Full training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainSettings:
    track: TrackModel
    out_dir: Path
    seed: int
    ppo: PPOConfig = field(default_factory=PPOConfig)
    rewards: RewardConfig = field(default_factory=RewardConfig)
    v2v: bool = True
    jitter_obstacles: bool = True
    config_hash: str = ""


@dataclass
class TrainResult:
    final_checkpoint: Path
    stats_path: Path
    global_step: int
    updates: int
    params: PolicyParameters


def _make_envs(settings: TrainSettings) -> list[PlatoonEnv]:
    cfg = settings.ppo
    return [PlatoonEnv(settings.track, cfg.platoon_size,
                       reward_config=settings.rewards, seed=settings.seed,
                       env_index=i, v2v=settings.v2v,
                       randomize_resets=True,
                       jitter_obstacles=settings.jitter_obstacles and i > 0,
                       step_cap=cfg.step_cap)
            for i in range(cfg.n_envs)]


def _stats_row(window: list, upd_stats: dict, at_step: int,
               previous: Optional[dict]) -> dict:
    if window:
        row = {
            "mean_cum_reward": float(np.mean([e.cum_reward for e in window])),
            "mean_episode_len": float(np.mean([e.length for e in window])),
            "crash_rate": float(np.mean([1.0 if e.crashed else 0.0
                                         for e in window])),
        }
    elif previous is not None:
        row = {key: previous[key] for key in
               ("mean_cum_reward", "mean_episode_len", "crash_rate")}
    else:
        row = {"mean_cum_reward": float("nan"),
               "mean_episode_len": float("nan"), "crash_rate": float("nan")}
    row["global_step"] = at_step
    row["policy_loss"] = upd_stats.get("policy_loss", float("nan"))
    row["value_loss"] = upd_stats.get("value_loss", float("nan"))
    row["entropy"] = upd_stats.get("entropy", float("nan"))
    return row


def train(settings: TrainSettings,
          resume_from: Optional[Path] = None) -> TrainResult:
    """Alternate rollout collection and PPO updates until total steps.

    Emits a stats CSV row every `stats_every` global steps, checkpoints every
    `checkpoint_every` updates plus a final checkpoint, and writes a resume
    sidecar (`.state.pkl`) next to each checkpoint so an interrupted run can
    continue bit-identically.
    """
    cfg = settings.ppo
    out_dir = Path(settings.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    stats_path = out_dir / "stats.csv"

    if resume_from is not None:
        params, global_step, saved_hash = policy_mod.load_checkpoint(resume_from)
        if settings.config_hash and saved_hash and saved_hash != settings.config_hash:
            raise ValueError("checkpoint was trained under a different config")
        sidecar = Path(str(resume_from) + ".state.pkl")
        with open(sidecar, "rb") as handle:
            state = pickle.load(handle)
        envs = state["envs"]
        adam = state["adam"]
        action_rngs = state["action_rngs"]
        shuffle_rng = state["shuffle_rng"]
        update_idx = state["update_idx"]
        next_stats_at = state["next_stats_at"]
        window = state["window"]
        previous_row = state["previous_row"]
        stats_handle = open(stats_path, "a", newline="")
        writer = csv.writer(stats_handle)
    else:
        params = policy_mod.init_policy(settings.seed)
        adam = AdamState.zeros(params.flat().size)
        envs = _make_envs(settings)
        action_rngs = [np.random.default_rng([settings.seed, 1000 + i])
                       for i in range(cfg.n_envs)]
        shuffle_rng = np.random.default_rng([settings.seed, 2000])
        global_step = 0
        update_idx = 0
        next_stats_at = cfg.stats_every
        window = []
        previous_row = None
        stats_handle = open(stats_path, "w", newline="")
        writer = csv.writer(stats_handle)
        writer.writerow(STATS_HEADER)

    def save(path: Path) -> None:
        policy_mod.save_checkpoint(path, params, global_step,
                                   settings.config_hash)
        with open(str(path) + ".state.pkl", "wb") as handle:
            pickle.dump({"envs": envs, "adam": adam,
                         "action_rngs": action_rngs,
                         "shuffle_rng": shuffle_rng,
                         "update_idx": update_idx,
                         "next_stats_at": next_stats_at,
                         "window": window,
                         "previous_row": previous_row}, handle)

    upd_stats: dict[str, float] = {}
    try:
        while global_step < cfg.total_steps:
            trajectories, global_step = collect_rollouts(
                envs, params, cfg.horizon, global_step, action_rngs)
            params, adam, upd_stats = ppo_update(params, trajectories, cfg,
                                                 adam, shuffle_rng)
            update_idx += 1
            for env in envs:
                window.extend(env.drain_episode_stats())
            while next_stats_at <= global_step:
                row = _stats_row(window, upd_stats, next_stats_at, previous_row)
                writer.writerow([row[key] for key in STATS_HEADER])
                stats_handle.flush()
                previous_row = row
                window = []
                next_stats_at += cfg.stats_every
            if cfg.checkpoint_every > 0 and update_idx % cfg.checkpoint_every == 0:
                save(ckpt_dir / f"ckpt_{global_step:012d}.npz")
    finally:
        stats_handle.close()

    final_path = out_dir / "checkpoint_final.npz"
    save(final_path)
    return TrainResult(final_checkpoint=final_path, stats_path=stats_path,
                       global_step=global_step, updates=update_idx,
                       params=params)
