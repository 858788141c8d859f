"""Clipped-surrogate PPO with GAE and a KL-adaptive learning rate.

Agents expose ``evaluate(batch) -> (mean, log_std, value)`` over a dict of
tensors plus a ``store``; the buffer is agnostic to the observation keys.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch

from .nn import StructuralError
from .policy import gaussian_entropy, gaussian_kl, gaussian_log_prob


@dataclass(frozen=True)
class PPOConfig:
    clip: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    epochs: int = 5
    minibatches: int = 4
    entropy_coef: float = 0.005
    value_coef: float = 1.0
    learning_rate: float = 1e-3
    adaptive_lr: bool = True
    desired_kl: float = 0.01
    max_kl: float = 0.1
    lr_bounds: tuple[float, float] = (1e-5, 1e-2)
    max_grad_norm: float = 1.0
    horizon: int = 24

    def __post_init__(self):
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            raise ValueError("gamma and lambda must lie in (0, 1]")
        if self.epochs < 1 or self.minibatches < 1 or self.horizon < 1:
            raise ValueError("epochs, minibatches and horizon must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


class PPOError(FloatingPointError):
    def __init__(self, message: str, minibatch: int | None = None):
        super().__init__(message)
        self.minibatch = minibatch


@dataclass
class PPOState:
    learning_rate: float


def compute_gae(rewards, values, dones, last_values, gamma: float = 0.99, lam: float = 0.95):
    """Raw advantages and returns over a ``(T, ...)`` rollout.

    ``dones`` cut both the bootstrap and the trace; ``last_values`` bootstraps
    the step after the final one.
    """
    rewards = torch.as_tensor(rewards, dtype=torch.float64)
    values = torch.as_tensor(values, dtype=torch.float64)
    dones = torch.as_tensor(dones, dtype=torch.float64)
    last_values = torch.as_tensor(last_values, dtype=torch.float64)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise StructuralError(f"compute_gae: rewards {tuple(rewards.shape)}, values {tuple(values.shape)}, dones {tuple(dones.shape)} differ")
    if last_values.shape != rewards.shape[1:]:
        raise StructuralError(f"compute_gae: bootstrap {tuple(last_values.shape)} vs step {tuple(rewards.shape[1:])}")
    adv = torch.zeros_like(rewards)
    running = torch.zeros_like(last_values)
    next_value = last_values
    for t in range(rewards.shape[0] - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


def normalize_advantages(adv: torch.Tensor) -> torch.Tensor:
    if adv.numel() < 2:
        return adv
    return (adv - adv.mean()) / (adv.std() + 1e-8)


class RolloutBuffer:
    """Fixed-horizon storage for ``n_envs`` parallel environments."""

    def __init__(self, horizon: int, n_envs: int, action_dim: int):
        self.horizon, self.n_envs = horizon, n_envs
        self.obs: dict[str, list[torch.Tensor]] = {}
        self.actions = torch.zeros(horizon, n_envs, action_dim)
        self.log_probs = torch.zeros(horizon, n_envs)
        self.values = torch.zeros(horizon, n_envs)
        self.rewards = torch.zeros(horizon, n_envs, dtype=torch.float64)
        self.dones = torch.zeros(horizon, n_envs)
        self.means = torch.zeros(horizon, n_envs, action_dim)
        self.log_stds = torch.zeros(horizon, n_envs, action_dim)
        self.terrain_labels = torch.zeros(horizon, n_envs, dtype=torch.int64)
        self.step = 0
        self.advantages: torch.Tensor | None = None
        self.returns: torch.Tensor | None = None

    @property
    def full(self) -> bool:
        return self.step == self.horizon

    def clear(self) -> None:
        self.step = 0
        self.obs = {}
        self.advantages = self.returns = None

    def add(self, obs: dict, action, log_prob, value, reward, done, mean, log_std, terrain_label=None) -> None:
        if self.full:
            raise StructuralError("rollout buffer is already full")
        t = self.step
        for k, v in obs.items():
            self.obs.setdefault(k, []).append(torch.as_tensor(v, dtype=torch.float32))
        self.actions[t] = torch.as_tensor(action)
        self.log_probs[t] = torch.as_tensor(log_prob)
        self.values[t] = torch.as_tensor(value)
        self.rewards[t] = torch.as_tensor(reward, dtype=torch.float64)
        self.dones[t] = torch.as_tensor(done, dtype=torch.float32)
        self.means[t] = torch.as_tensor(mean)
        self.log_stds[t] = torch.as_tensor(log_std)
        if terrain_label is not None:
            self.terrain_labels[t] = torch.as_tensor(terrain_label)
        self.step += 1

    def finish(self, last_values, gamma: float, lam: float) -> None:
        if not self.full:
            raise StructuralError(f"rollout buffer holds {self.step}/{self.horizon} steps")
        adv, ret = compute_gae(self.rewards, self.values.double(), self.dones, torch.as_tensor(last_values).double(), gamma, lam)
        self.advantages, self.returns = adv.float(), ret.float()

    def flat(self) -> dict[str, torch.Tensor]:
        n = self.horizon * self.n_envs
        out = {k: torch.stack(v).reshape(n, *v[0].shape[1:]) for k, v in self.obs.items()}
        out["_actions"] = self.actions.reshape(n, -1)
        out["_log_probs"] = self.log_probs.reshape(n)
        out["_values"] = self.values.reshape(n)
        out["_means"] = self.means.reshape(n, -1)
        out["_log_stds"] = self.log_stds.reshape(n, -1)
        out["_advantages"] = self.advantages.reshape(n)
        out["_returns"] = self.returns.reshape(n)
        return out


def _split(batch: dict) -> tuple[dict, dict]:
    obs = {k: v for k, v in batch.items() if not k.startswith("_")}
    extra = {k: v for k, v in batch.items() if k.startswith("_")}
    return obs, extra


def ppo_loss(agent, batch: dict, cfg: PPOConfig, normalize: bool = True) -> tuple[torch.Tensor, dict]:
    """Clipped surrogate + value MSE - entropy bonus, reductions in float64."""
    obs, x = _split(batch)
    mean, log_std, value = agent.evaluate(obs)
    adv = x["_advantages"].double()
    if normalize:
        adv = normalize_advantages(adv)
    log_prob = gaussian_log_prob(x["_actions"], mean, log_std).double()
    ratio = torch.exp(log_prob - x["_log_probs"].double())
    surrogate = -torch.min(ratio * adv, ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv).mean()
    value_loss = ((x["_returns"].double() - value.double()) ** 2).mean()
    entropy = gaussian_entropy(log_std).double().mean()
    loss = surrogate + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    with torch.no_grad():
        kl = gaussian_kl(x["_means"], x["_log_stds"], mean, log_std).mean()
        clipped = ((ratio - 1.0).abs() > cfg.clip).double().mean()
    stats = {
        "loss_policy": float(surrogate.detach()),
        "loss_value": float(value_loss.detach()),
        "entropy": float(entropy.detach()),
        "kl": float(kl),
        "clip_fraction": float(clipped),
    }
    return loss, stats


def measure_kl(agent, batch: dict) -> float:
    obs, x = _split(batch)
    with torch.no_grad():
        mean, log_std = agent.distribution(obs)
        return float(gaussian_kl(x["_means"], x["_log_stds"], mean, log_std).mean())


def ppo_update(buffer: RolloutBuffer, agent, cfg: PPOConfig, state: PPOState, generator: torch.Generator | None = None) -> dict:
    """Epoch x minibatch sweeps over a finished buffer; mutates ``state.learning_rate``.

    After every epoch the KL of the whole batch against the behaviour policy
    is measured; if it exceeds ``cfg.max_kl`` that epoch is undone, the
    learning rate halved and the update stopped.
    """
    if buffer.advantages is None:
        raise StructuralError("ppo_update called before advantages were computed")
    store = agent.store
    batch = buffer.flat()
    n = batch["_actions"].shape[0]
    mb_size = max(1, n // cfg.minibatches)
    generator = generator if generator is not None else torch.Generator().manual_seed(0)
    lo, hi = cfg.lr_bounds
    sums: dict[str, float] = {}
    count = 0
    start_snapshot = store.snapshot()
    reverted = False
    for _ in range(cfg.epochs):
        epoch_snapshot = store.snapshot()
        perm = torch.randperm(n, generator=generator)
        for m in range(cfg.minibatches):
            idx = perm[m * mb_size : (m + 1) * mb_size] if m < cfg.minibatches - 1 else perm[m * mb_size :]
            if idx.numel() == 0:
                continue
            mb = {k: v[idx] for k, v in batch.items()}
            loss, stats = ppo_loss(agent, mb, cfg)
            if not torch.isfinite(loss):
                store.restore(start_snapshot)
                raise PPOError(f"non-finite PPO loss in minibatch {count}", minibatch=count)
            if cfg.adaptive_lr:
                if stats["kl"] > 2.0 * cfg.desired_kl:
                    state.learning_rate = max(lo, state.learning_rate / 2.0)
                elif 0.0 < stats["kl"] < 0.5 * cfg.desired_kl:
                    state.learning_rate = min(hi, state.learning_rate * 2.0)
            store.backward(loss)
            store.clip_grad_norm(cfg.max_grad_norm)
            store.adam_step(state.learning_rate)
            for k, v in stats.items():
                sums[k] = sums.get(k, 0.0) + v
            count += 1
        if measure_kl(agent, batch) > cfg.max_kl:
            store.restore(epoch_snapshot)
            state.learning_rate = max(lo, state.learning_rate / 2.0)
            reverted = True
            break
    out = {k: v / max(count, 1) for k, v in sums.items()}
    out["kl_final"] = measure_kl(agent, batch)
    out["learning_rate"] = state.learning_rate
    out["reverted"] = reverted
    out.setdefault("kl", out["kl_final"])
    return out


def act(agent, obs: dict, generator: torch.Generator, deterministic: bool = False):
    """Sample actions; returns ``(action, log_prob, value, mean, log_std)`` without graph."""
    with torch.no_grad():
        mean, log_std, value = agent.evaluate(obs)
        if deterministic:
            action = mean
        else:
            action = mean + torch.exp(log_std) * torch.randn(mean.shape, generator=generator)
        return action, gaussian_log_prob(action, mean, log_std), value, mean, log_std


def timeout_bootstrap(reward, value, timeouts, gamma: float):
    """Add the discounted value back for episodes cut by the time limit."""
    return np.asarray(reward, dtype=np.float64) + gamma * np.asarray(value, dtype=np.float64) * np.asarray(timeouts, dtype=np.float64)
