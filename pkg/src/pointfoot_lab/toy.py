"""A 2D point-mass velocity-tracking task for checking the PPO machinery."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import nn
from .nn import MLPSpec, ParameterStore
from .policy import LOG_STD_RANGE
from .ppo import PPOConfig, PPOState, RolloutBuffer, act, ppo_update, timeout_bootstrap


@dataclass(frozen=True)
class PointMassConfig:
    dt: float = 0.05
    time_constant: float = 0.2
    max_speed: float = 1.0
    sigma: float = 0.25
    episode_steps: int = 100
    command_resample: int = 50


class PointMassEnv:
    """Velocity follows a first-order lag towards ``max_speed * action``.

    Reward per step is ``exp(-|v - v_cmd|^2 / sigma)``, so the maximum is 1.
    """

    obs_dim = 4
    action_dim = 2

    def __init__(self, n_envs: int, seed: int = 0, cfg: PointMassConfig = PointMassConfig()):
        self.n, self.cfg = n_envs, cfg
        self.rng = np.random.default_rng(seed)
        self.vel = np.zeros((n_envs, 2))
        self.cmd = np.zeros((n_envs, 2))
        self.t = np.zeros(n_envs, dtype=np.int64)
        self.reset(np.ones(n_envs, dtype=bool))

    def reset(self, mask) -> None:
        k = int(mask.sum())
        self.vel[mask] = self.rng.uniform(-0.2, 0.2, size=(k, 2))
        self.cmd[mask] = self.rng.uniform(-1.0, 1.0, size=(k, 2)) * 0.8
        self.t[mask] = 0

    def observe(self) -> np.ndarray:
        return np.concatenate([self.vel, self.cmd], axis=-1)

    def step(self, action):
        c = self.cfg
        a = np.clip(np.asarray(action, dtype=np.float64), -1.5, 1.5)
        alpha = c.dt / c.time_constant
        self.vel = (1 - alpha) * self.vel + alpha * c.max_speed * a
        reward = np.exp(-np.sum((self.vel - self.cmd) ** 2, axis=-1) / c.sigma)
        self.t += 1
        resample = (self.t % c.command_resample == 0)
        if resample.any():
            self.cmd[resample] = self.rng.uniform(-1.0, 1.0, size=(int(resample.sum()), 2)) * 0.8
        timeout = self.t >= c.episode_steps
        self.reset(timeout)
        return self.observe(), reward, timeout


class MLPAgent:
    def __init__(self, obs_dim: int, action_dim: int, seed: int = 0, hidden=(64, 64), init_std: float = 0.5):
        gen = torch.Generator().manual_seed(seed)
        self.store = ParameterStore()
        self.actor = nn.add_mlp(self.store, MLPSpec("actor", (obs_dim, *hidden, action_dim)), gen, out_gain=0.01)
        self.critic = nn.add_mlp(self.store, MLPSpec("critic", (obs_dim, *hidden, 1)), gen)
        self.store.add("log_std", torch.full((action_dim,), float(np.log(init_std))))

    def distribution(self, obs: dict):
        mean = nn.mlp_forward(self.store, self.actor, obs["obs"])
        return mean, self.store["log_std"].clamp(*LOG_STD_RANGE).expand_as(mean)

    def evaluate(self, obs: dict):
        mean, log_std = self.distribution(obs)
        return mean, log_std, nn.mlp_forward(self.store, self.critic, obs["obs"]).squeeze(-1)


def train_point_mass(
    seed: int = 0, iterations: int = 200, n_envs: int = 64, cfg: PPOConfig = PPOConfig(), agent: MLPAgent | None = None
) -> list[float]:
    """Returns the mean per-step reward of every iteration's rollout; ``agent`` is trained in place if given."""
    torch.manual_seed(seed)
    env = PointMassEnv(n_envs, seed)
    agent = MLPAgent(env.obs_dim, env.action_dim, seed) if agent is None else agent
    state = PPOState(cfg.learning_rate)
    gen = torch.Generator().manual_seed(seed)
    history = []
    obs = env.observe()
    for _ in range(iterations):
        buf = RolloutBuffer(cfg.horizon, n_envs, env.action_dim)
        total = 0.0
        for _ in range(cfg.horizon):
            o = {"obs": torch.as_tensor(obs, dtype=torch.float32)}
            action, logp, value, mean, log_std = act(agent, o, gen)
            obs, reward, timeout = env.step(action.numpy())
            total += float(reward.mean())
            buf.add(o, action, logp, value, timeout_bootstrap(reward, value.numpy(), timeout, cfg.gamma), timeout, mean, log_std)
        with torch.no_grad():
            _, _, last = agent.evaluate({"obs": torch.as_tensor(obs, dtype=torch.float32)})
        buf.finish(last, cfg.gamma, cfg.lam)
        ppo_update(buf, agent, cfg, state, gen)
        history.append(total / cfg.horizon)
    return history
