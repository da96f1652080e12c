"""Shared stochastic driving policy: tanh MLP trunk, Gaussian action head.

The default network is 35 -> 256 -> 256 -> 256 with a 2-unit action head
(steering, throttle means squashed by tanh), state-independent per-dimension
log-std, and a scalar value head off the same trunk. Forward passes, action
sampling, and the PPO composite-loss gradients are implemented directly on
numpy arrays; gradients are exact reverse-mode derivatives of the scalar
loss, checked against finite differences in the test suite.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

OBS_DIM = 35
ACT_DIM = 2
DEFAULT_HIDDEN = (256, 256, 256)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class PolicyParameters:
    weights: list[np.ndarray]       # trunk, each (out, in)
    biases: list[np.ndarray]        # trunk, each (out,)
    action_w: np.ndarray            # (act_dim, hidden)
    action_b: np.ndarray            # (act_dim,)
    value_w: np.ndarray             # (1, hidden)
    value_b: np.ndarray             # (1,)
    log_std: np.ndarray             # (act_dim,)

    @property
    def obs_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def act_dim(self) -> int:
        return self.action_w.shape[0]

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.obs_dim, *(w.shape[0] for w in self.weights), self.act_dim)

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases, self.action_w, self.action_b,
                self.value_w, self.value_b, self.log_std]

    def zeros_like(self) -> "PolicyParameters":
        return PolicyParameters(
            weights=[np.zeros_like(w) for w in self.weights],
            biases=[np.zeros_like(b) for b in self.biases],
            action_w=np.zeros_like(self.action_w),
            action_b=np.zeros_like(self.action_b),
            value_w=np.zeros_like(self.value_w),
            value_b=np.zeros_like(self.value_b),
            log_std=np.zeros_like(self.log_std),
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, flat: np.ndarray) -> "PolicyParameters":
        out = self.zeros_like()
        offset = 0
        for target, src in zip(out.arrays(), self.arrays()):
            n = src.size
            target[...] = flat[offset:offset + n].reshape(src.shape)
            offset += n
        if offset != flat.size:
            raise ValueError("flat vector size mismatch")
        return out


@dataclass(frozen=True)
class ActionSample:
    action: np.ndarray      # (act_dim,), clamped to [-1, 1]
    log_prob: float         # density of the pre-clamp sample
    value: float
    raw_action: np.ndarray  # pre-clamp Gaussian sample


def _orthogonal(rng: np.random.Generator, shape: tuple[int, int],
                gain: float) -> np.ndarray:
    rows, cols = shape
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))     # deterministic sign convention
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_policy(seed: int, obs_dim: int = OBS_DIM,
                hidden: tuple[int, ...] = DEFAULT_HIDDEN,
                act_dim: int = ACT_DIM) -> PolicyParameters:
    """Deterministic init: orthogonal weights, zero biases, log-std ln(0.5).

    The action head uses a small gain so initial action means sit near zero.
    """
    rng = np.random.default_rng(seed)
    sizes = (obs_dim, *hidden)
    weights = [_orthogonal(rng, (sizes[i + 1], sizes[i]), gain=1.0)
               for i in range(len(hidden))]
    biases = [np.zeros(size) for size in hidden]
    action_w = _orthogonal(rng, (act_dim, hidden[-1]), gain=0.01)
    value_w = _orthogonal(rng, (1, hidden[-1]), gain=1.0)
    return PolicyParameters(
        weights=weights,
        biases=biases,
        action_w=action_w,
        action_b=np.zeros(act_dim),
        value_w=value_w,
        value_b=np.zeros(1),
        log_std=np.full(act_dim, math.log(0.5)),
    )


def _forward_trunk(params: PolicyParameters, obs: np.ndarray) -> list[np.ndarray]:
    """Hidden activations per layer (post-tanh), input first."""
    activations = [obs]
    h = obs
    for w, b in zip(params.weights, params.biases):
        h = np.tanh(h @ w.T + b)
        activations.append(h)
    return activations


def forward_batch(params: PolicyParameters,
                  obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(means, values) for a (B, obs_dim) observation batch."""
    obs = np.asarray(obs, dtype=float)
    if obs.ndim != 2 or obs.shape[1] != params.obs_dim:
        raise ValueError(f"expected (B, {params.obs_dim}) observations, "
                         f"got {obs.shape}")
    if not np.all(np.isfinite(obs)):
        raise ValueError("observations must be finite")
    h = _forward_trunk(params, obs)[-1]
    means = np.tanh(h @ params.action_w.T + params.action_b)
    values = (h @ params.value_w.T + params.value_b)[:, 0]
    return means, values


def forward(params: PolicyParameters, obs: np.ndarray) -> tuple[np.ndarray, float]:
    """Deterministic action mean (components in (-1, 1)) and state value."""
    obs = np.asarray(obs, dtype=float)
    if obs.ndim != 1 or obs.shape[0] != params.obs_dim:
        raise ValueError(f"expected a length-{params.obs_dim} observation, "
                         f"got shape {obs.shape}")
    means, values = forward_batch(params, obs[None, :])
    return means[0], float(values[0])


def gaussian_log_prob(x: np.ndarray, mean: np.ndarray,
                      log_std: np.ndarray) -> np.ndarray:
    """Per-sample diagonal-Gaussian log density, summed over action dims."""
    z = (x - mean) / np.exp(log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) \
        - 0.5 * _LOG_2PI * x.shape[-1]


def entropy(log_std: np.ndarray) -> float:
    return float(np.sum(log_std) + 0.5 * len(log_std) * (1.0 + _LOG_2PI))


def sample_action(params: PolicyParameters, obs: np.ndarray,
                  rng: np.random.Generator) -> ActionSample:
    """Gaussian sample around the squashed mean, clamped to the action box."""
    mean, value = forward(params, obs)
    std = np.exp(params.log_std)
    raw = mean + std * rng.standard_normal(params.act_dim)
    log_prob = float(gaussian_log_prob(raw, mean, params.log_std))
    return ActionSample(action=np.clip(raw, -1.0, 1.0), log_prob=log_prob,
                        value=value, raw_action=raw)


def sample_actions_batch(params: PolicyParameters, obs: np.ndarray,
                         rng: np.random.Generator
                         ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(clamped actions, log_probs, values, raw actions) for a batch."""
    means, values = forward_batch(params, obs)
    std = np.exp(params.log_std)
    raw = means + std * rng.standard_normal(means.shape)
    log_probs = gaussian_log_prob(raw, means, params.log_std)
    return np.clip(raw, -1.0, 1.0), log_probs, values, raw


# ---------------------------------------------------------------------------
# PPO composite loss and its exact gradients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PPOLossConfig:
    clip_eps: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 5e-3


@dataclass
class Minibatch:
    obs: np.ndarray             # (B, obs_dim)
    actions: np.ndarray         # (B, act_dim), pre-clamp samples
    old_log_probs: np.ndarray   # (B,)
    advantages: np.ndarray      # (B,)
    returns: np.ndarray         # (B,)

    def __len__(self) -> int:
        return len(self.obs)


def clipped_surrogate(ratio: np.ndarray, advantages: np.ndarray,
                      clip_eps: float) -> np.ndarray:
    """Per-sample pessimistic surrogate min(r*A, clip(r)*A)."""
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantages
    return np.minimum(unclipped, clipped)


def ppo_loss(params: PolicyParameters, batch: Minibatch,
             cfg: PPOLossConfig) -> dict[str, float]:
    """Scalar composite loss and its components (no gradients)."""
    means, values = forward_batch(params, batch.obs)
    log_probs = gaussian_log_prob(batch.actions, means, params.log_std)
    ratio = np.exp(log_probs - batch.old_log_probs)
    surrogate = clipped_surrogate(ratio, batch.advantages, cfg.clip_eps)
    policy_loss = -float(np.mean(surrogate))
    value_loss = float(np.mean((values - batch.returns) ** 2))
    ent = entropy(params.log_std)
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * ent
    return {"loss": loss, "policy_loss": policy_loss,
            "value_loss": value_loss, "entropy": ent}


def gradients(params: PolicyParameters, batch: Minibatch,
              cfg: PPOLossConfig) -> tuple[PolicyParameters, dict[str, float]]:
    """Exact reverse-mode gradients of the PPO composite loss.

    Returns a parameter-shaped gradient set plus the loss components.
    Raises on a non-finite loss.
    """
    if len(batch) == 0:
        raise ValueError("minibatch must be nonempty")
    n = float(len(batch))

    activations = _forward_trunk(params, np.asarray(batch.obs, dtype=float))
    h = activations[-1]
    means = np.tanh(h @ params.action_w.T + params.action_b)
    values = (h @ params.value_w.T + params.value_b)[:, 0]

    std = np.exp(params.log_std)
    z = (batch.actions - means) / std
    log_probs = -0.5 * np.sum(z * z, axis=1) - np.sum(params.log_std) \
        - 0.5 * _LOG_2PI * params.act_dim
    ratio = np.exp(log_probs - batch.old_log_probs)
    unclipped = ratio * batch.advantages
    clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * batch.advantages
    surrogate = np.minimum(unclipped, clipped)
    policy_loss = -float(np.mean(surrogate))
    value_loss = float(np.mean((values - batch.returns) ** 2))
    ent = entropy(params.log_std)
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * ent
    if not math.isfinite(loss):
        raise ValueError("non-finite PPO loss")

    grads = params.zeros_like()

    # surrogate path: gradient flows only where the unclipped branch is active
    active = (unclipped <= clipped).astype(float)
    d_log_prob = -(1.0 / n) * batch.advantages * active * ratio       # (B,)
    d_mean = d_log_prob[:, None] * (z / std)                          # (B, A)
    grads.log_std[:] = d_log_prob @ (z * z - 1.0)
    grads.log_std -= cfg.entropy_coef                                 # entropy bonus

    d_value = cfg.value_coef * 2.0 * (values - batch.returns) / n     # (B,)

    # action head (tanh squash) and value head share the trunk output
    d_za = d_mean * (1.0 - means * means)
    grads.action_w[:] = d_za.T @ h
    grads.action_b[:] = d_za.sum(axis=0)
    grads.value_w[:] = (d_value[None, :] @ h)
    grads.value_b[:] = d_value.sum()
    d_h = d_za @ params.action_w + d_value[:, None] @ params.value_w

    for i in reversed(range(len(params.weights))):
        h_out = activations[i + 1]
        d_z = d_h * (1.0 - h_out * h_out)
        grads.weights[i][:] = d_z.T @ activations[i]
        grads.biases[i][:] = d_z.sum(axis=0)
        d_h = d_z @ params.weights[i]

    stats = {"loss": loss, "policy_loss": policy_loss,
             "value_loss": value_loss, "entropy": ent}
    return grads, stats


# ---------------------------------------------------------------------------
# Checkpoints: versioned npz holding shapes, float64 parameters, step, hash
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: PolicyParameters, step: int,
                    config_hash: str = "") -> None:
    """Write a bit-exact, versioned parameter container."""
    payload = {
        "format_version": np.array(CHECKPOINT_VERSION, dtype=np.int64),
        "layer_sizes": np.array(params.layer_sizes, dtype=np.int64),
        "train_step": np.array(step, dtype=np.int64),
        "config_hash": np.array(config_hash),
        "n_trunk": np.array(len(params.weights), dtype=np.int64),
        "action_w": params.action_w.astype(np.float64),
        "action_b": params.action_b.astype(np.float64),
        "value_w": params.value_w.astype(np.float64),
        "value_b": params.value_b.astype(np.float64),
        "log_std": params.log_std.astype(np.float64),
    }
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        payload[f"w{i}"] = w.astype(np.float64)
        payload[f"b{i}"] = b.astype(np.float64)
    with open(path, "wb") as handle:
        np.savez(handle, **payload)


def load_checkpoint(path) -> tuple[PolicyParameters, int, str]:
    """Read a checkpoint back: (params, train_step, config_hash)."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        n_trunk = int(data["n_trunk"])
        params = PolicyParameters(
            weights=[data[f"w{i}"] for i in range(n_trunk)],
            biases=[data[f"b{i}"] for i in range(n_trunk)],
            action_w=data["action_w"],
            action_b=data["action_b"],
            value_w=data["value_w"],
            value_b=data["value_b"],
            log_std=data["log_std"],
        )
        return params, int(data["train_step"]), str(data["config_hash"])


def checksum(params: PolicyParameters) -> str:
    digest = hashlib.sha256()
    for array in params.arrays():
        digest.update(np.ascontiguousarray(array, dtype=np.float64).tobytes())
        digest.update(str(array.shape).encode())
    return digest.hexdigest()
