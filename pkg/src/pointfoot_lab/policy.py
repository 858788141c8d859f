"""Teacher, student and blind policy networks.

Observation layouts:

* teacher ``s_t = [o_t(29), o_p(11), m_t(121)]`` plus a terrain one-hot ``t_p``;
* student ``o_t^H`` (five stacked ``o_t``, oldest first) plus a 48x64 depth image;
* blind ``o_t^H`` only.

All networks read their weights from a :class:`~pointfoot_lab.nn.ParameterStore`
under fixed name prefixes, so teacher heads can be copied into students and
whole stores can be checkpointed by name.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch

from . import nn
from .biped import BASE_HEIGHT_TARGET, BipedModel
from .nn import MLPSpec, ParameterStore

LOG_STD_RANGE = (-4.0, 1.0)
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PolicyConfig:
    obs_dim: int = 29
    priv_dim: int = 11
    scan_dim: int = 121
    n_terrain: int = 4
    action_dim: int = 6
    history: int = 5
    latent_dim: int = 64
    n_experts: int = 4
    expert_hidden: tuple[int, ...] = (256, 128)
    gate_hidden: tuple[int, ...] = (128, 128)
    gate_query: int = 64
    n_heads: int = 4
    head_hidden: tuple[int, ...] = (128, 64)
    value_hidden: tuple[int, ...] = (256, 128)
    blind_hidden: tuple[int, ...] = (256, 128)
    student_hidden: int = 128
    depth_shape: tuple[int, int] = (48, 64)
    use_moe: bool = True
    init_std: float = 1.0

    @property
    def state_dim(self) -> int:
        return self.obs_dim + self.priv_dim + self.scan_dim

    @property
    def critic_dim(self) -> int:
        return self.state_dim + self.n_terrain

    @property
    def history_dim(self) -> int:
        return self.history * self.obs_dim

    @property
    def experts(self) -> int:
        return self.n_experts if self.use_moe else 1

    def to_dict(self) -> dict:
        return asdict(self)


# fixed input normalisation for o_t: (o - offset) * scale
def _obs_offset_scale(obs_dim: int) -> tuple[torch.Tensor, torch.Tensor]:
    offset = np.zeros(obs_dim)
    scale = np.ones(obs_dim)
    scale[0:3] = 0.25  # base angular velocity
    offset[6:12] = BipedModel.default_joint_pos
    scale[12:18] = 0.05  # joint velocity
    return torch.tensor(offset, dtype=torch.float32), torch.tensor(scale, dtype=torch.float32)


_OBS_OFFSET, _OBS_SCALE = _obs_offset_scale(29)


def normalize_obs(o: torch.Tensor) -> torch.Tensor:
    """Scale one or more stacked ``o_t`` frames along the last axis."""
    frames = o.shape[-1] // _OBS_SCALE.shape[0]
    offset = _OBS_OFFSET.to(o.dtype).repeat(frames)
    scale = _OBS_SCALE.to(o.dtype).repeat(frames)
    return (o - offset) * scale


def teacher_state(obs, priv, heights) -> torch.Tensor:
    """Network-ready ``s_t`` with o_t normalised and the scan centred on the nominal height."""
    return torch.cat([normalize_obs(obs), priv, heights - BASE_HEIGHT_TARGET], dim=-1)


# -- specs -------------------------------------------------------------------------------

def _gate_spec(cfg: PolicyConfig) -> MLPSpec:
    return MLPSpec("gate/mlp", (cfg.critic_dim, *cfg.gate_hidden, cfg.gate_query))


def _expert_spec(cfg: PolicyConfig, i: int) -> MLPSpec:
    return MLPSpec(f"expert{i}", (cfg.state_dim, *cfg.expert_hidden, cfg.latent_dim))


def _head_spec(cfg: PolicyConfig) -> MLPSpec:
    return MLPSpec("head/mlp", (cfg.latent_dim + cfg.obs_dim, *cfg.head_hidden, cfg.action_dim))


def _value_spec(cfg: PolicyConfig) -> MLPSpec:
    return MLPSpec("value", (cfg.critic_dim, *cfg.value_hidden, 1))


def _blind_spec(cfg: PolicyConfig) -> MLPSpec:
    return MLPSpec("blind", (cfg.history_dim, *cfg.blind_hidden, cfg.latent_dim))


def _proprio_spec(cfg: PolicyConfig) -> MLPSpec:
    return MLPSpec("student/proprio", (cfg.history_dim, cfg.student_hidden), out_activation="elu")


def _conv_flat_dim(cfg: PolicyConfig) -> int:
    h, w = cfg.depth_shape
    for _ in range(2):
        h, w = (h + 2 - 3) // 2 + 1, (w + 2 - 3) // 2 + 1
    return 32 * h * w


def _add_head(store: ParameterStore, cfg: PolicyConfig, gen: torch.Generator) -> None:
    nn.add_mlp(store, _head_spec(cfg), gen, out_gain=0.01)
    store.add("head/log_std", torch.full((cfg.action_dim,), math.log(cfg.init_std)))


def _add_value(store: ParameterStore, cfg: PolicyConfig, gen: torch.Generator) -> None:
    nn.add_mlp(store, _value_spec(cfg), gen)


def build_teacher(cfg: PolicyConfig = PolicyConfig(), seed: int = 0) -> ParameterStore:
    """MoE encoder, gate, action head and privileged value net in one store."""
    gen = torch.Generator().manual_seed(seed)
    store = ParameterStore()
    if cfg.use_moe:
        nn.add_mlp(store, _gate_spec(cfg), gen)
        store.add("gate/keys", torch.randn(cfg.n_experts, cfg.gate_query, generator=gen, dtype=torch.float64))
    for i in range(cfg.experts):
        nn.add_mlp(store, _expert_spec(cfg, i), gen)
    _add_head(store, cfg, gen)
    _add_value(store, cfg, gen)
    return store


def build_student(cfg: PolicyConfig = PolicyConfig(), seed: int = 0) -> ParameterStore:
    gen = torch.Generator().manual_seed(seed)
    store = ParameterStore()
    nn.add_conv2d(store, "student/conv0", 1, 16, 3, gen)
    nn.add_conv2d(store, "student/conv1", 16, 32, 3, gen)
    nn.add_linear(store, "student/depth_fc", _conv_flat_dim(cfg), cfg.student_hidden, gen)
    nn.add_mlp(store, _proprio_spec(cfg), gen)
    nn.add_gru(store, "student/gru", 2 * cfg.student_hidden, cfg.student_hidden, gen)
    nn.add_linear(store, "student/out", cfg.student_hidden, cfg.latent_dim, gen)
    _add_head(store, cfg, gen)
    return store


def build_blind(cfg: PolicyConfig = PolicyConfig(), seed: int = 0) -> ParameterStore:
    gen = torch.Generator().manual_seed(seed)
    store = ParameterStore()
    nn.add_mlp(store, _blind_spec(cfg), gen)
    _add_head(store, cfg, gen)
    _add_value(store, cfg, gen)
    return store


def copy_head(src: ParameterStore, dst: ParameterStore) -> None:
    dst.copy_from(src, "head/", "head/")


# -- forward -----------------------------------------------------------------------------

def gate(s_t: torch.Tensor, t_p: torch.Tensor, store: ParameterStore, cfg: PolicyConfig = PolicyConfig()) -> torch.Tensor:
    """Expert weights ``(B, n_experts)`` on the probability simplex."""
    query = nn.mlp_forward(store, _gate_spec(cfg), torch.cat([s_t, t_p], dim=-1))
    scores = nn.attention_scores(query, store["gate/keys"], cfg.n_heads).mean(dim=1)
    return nn.softmax(scores, dim=-1)


def expert_outputs(s_t: torch.Tensor, store: ParameterStore, cfg: PolicyConfig = PolicyConfig()) -> torch.Tensor:
    return torch.stack([nn.mlp_forward(store, _expert_spec(cfg, i), s_t) for i in range(cfg.experts)], dim=1)


def teacher_encode(
    s_t: torch.Tensor,
    t_p: torch.Tensor,
    store: ParameterStore,
    cfg: PolicyConfig = PolicyConfig(),
    weights: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Returns ``(z_T, gate weights)``; ``weights`` overrides the gate when given."""
    experts = expert_outputs(s_t, store, cfg)
    if not cfg.use_moe:
        return experts[:, 0], torch.ones(s_t.shape[0], 1, dtype=s_t.dtype)
    if weights is None:
        weights = gate(s_t, t_p, store, cfg)
    return torch.einsum("bk,bkd->bd", weights, experts), weights


def blind_encode(history: torch.Tensor, store: ParameterStore, cfg: PolicyConfig = PolicyConfig()) -> torch.Tensor:
    return nn.mlp_forward(store, _blind_spec(cfg), normalize_obs(history))


def student_encode(
    history: torch.Tensor,
    depth: torch.Tensor,
    hidden: torch.Tensor,
    store: ParameterStore,
    cfg: PolicyConfig = PolicyConfig(),
) -> tuple[torch.Tensor, torch.Tensor]:
    """One recurrent step: ``(z_S, hidden')``."""
    x = depth.reshape(depth.shape[0], 1, *cfg.depth_shape)
    x = torch.nn.functional.elu(nn.conv2d_forward(store, "student/conv0", x, stride=2, padding=1))
    x = torch.nn.functional.elu(nn.conv2d_forward(store, "student/conv1", x, stride=2, padding=1))
    x = torch.nn.functional.elu(nn.linear(store, "student/depth_fc", x.flatten(1)))
    p = nn.mlp_forward(store, _proprio_spec(cfg), normalize_obs(history))
    _, hidden = nn.gru_cell(store, "student/gru", torch.cat([x, p], dim=-1), hidden)
    return nn.linear(store, "student/out", hidden), hidden


def action_head(z: torch.Tensor, o_t: torch.Tensor, store: ParameterStore, cfg: PolicyConfig = PolicyConfig()):
    """Gaussian policy ``(mean, log_std)`` with a state-independent clamped log-std."""
    mean = nn.mlp_forward(store, _head_spec(cfg), torch.cat([z, normalize_obs(o_t)], dim=-1))
    log_std = store["head/log_std"].clamp(*LOG_STD_RANGE).expand_as(mean)
    return mean, log_std


def value_net(s_t: torch.Tensor, t_p: torch.Tensor, store: ParameterStore, cfg: PolicyConfig = PolicyConfig()) -> torch.Tensor:
    return nn.mlp_forward(store, _value_spec(cfg), torch.cat([s_t, t_p], dim=-1)).squeeze(-1)


# -- Gaussian helpers ----------------------------------------------------------------------

def gaussian_log_prob(action, mean, log_std) -> torch.Tensor:
    z = (action - mean) * torch.exp(-log_std)
    return (-0.5 * z * z - log_std - 0.5 * _LOG_2PI).sum(dim=-1)


def gaussian_entropy(log_std) -> torch.Tensor:
    return (log_std + 0.5 * (1.0 + _LOG_2PI)).sum(dim=-1)


def gaussian_kl(mean_old, log_std_old, mean_new, log_std_new) -> torch.Tensor:
    """KL(old || new) per sample."""
    var_old = torch.exp(2 * log_std_old)
    var_new = torch.exp(2 * log_std_new)
    kl = log_std_new - log_std_old + (var_old + (mean_old - mean_new) ** 2) / (2 * var_new) - 0.5
    return kl.sum(dim=-1)


# -- agents: the interface PPO trains against ------------------------------------------------

class TeacherAgent:
    """Privileged MoE teacher with its value net; batches carry obs/priv/heights/terrain."""

    keys = ("obs", "priv", "heights", "terrain")

    def __init__(self, cfg: PolicyConfig = PolicyConfig(), seed: int = 0, store: ParameterStore | None = None):
        self.cfg = cfg
        self.store = build_teacher(cfg, seed) if store is None else store

    def latent(self, batch: dict) -> tuple[torch.Tensor, torch.Tensor]:
        s = teacher_state(batch["obs"], batch["priv"], batch["heights"])
        return teacher_encode(s, batch["terrain"], self.store, self.cfg)

    def distribution(self, batch: dict):
        z, _ = self.latent(batch)
        return action_head(z, batch["obs"], self.store, self.cfg)

    def value(self, batch: dict) -> torch.Tensor:
        s = teacher_state(batch["obs"], batch["priv"], batch["heights"])
        return value_net(s, batch["terrain"], self.store, self.cfg)

    def evaluate(self, batch: dict):
        s = teacher_state(batch["obs"], batch["priv"], batch["heights"])
        z, _ = teacher_encode(s, batch["terrain"], self.store, self.cfg)
        mean, log_std = action_head(z, batch["obs"], self.store, self.cfg)
        return mean, log_std, value_net(s, batch["terrain"], self.store, self.cfg)


class BlindAgent(TeacherAgent):
    """History-only actor with the privileged critic (the Blind ablation)."""

    keys = ("obs", "history", "priv", "heights", "terrain")

    def __init__(self, cfg: PolicyConfig = PolicyConfig(), seed: int = 0, store: ParameterStore | None = None):
        self.cfg = cfg
        self.store = build_blind(cfg, seed) if store is None else store

    def latent(self, batch: dict):
        return blind_encode(batch["history"], self.store, self.cfg), None

    def distribution(self, batch: dict):
        z, _ = self.latent(batch)
        return action_head(z, batch["obs"], self.store, self.cfg)

    def evaluate(self, batch: dict):
        mean, log_std = self.distribution(batch)
        return mean, log_std, self.value(batch)


class StudentAgent:
    """Depth + history recurrent student; keeps its own hidden state across steps."""

    def __init__(self, cfg: PolicyConfig = PolicyConfig(), seed: int = 0, store: ParameterStore | None = None):
        self.cfg = cfg
        self.store = build_student(cfg, seed) if store is None else store
        self.hidden: torch.Tensor | None = None

    def reset(self, n: int, done: np.ndarray | None = None) -> None:
        if self.hidden is None or done is None or self.hidden.shape[0] != n:
            self.hidden = torch.zeros(n, self.cfg.student_hidden)
            return
        keep = torch.as_tensor(~np.asarray(done, dtype=bool), dtype=self.hidden.dtype)[:, None]
        self.hidden = self.hidden * keep

    def detach(self) -> None:
        if self.hidden is not None:
            self.hidden = self.hidden.detach()

    def step(self, batch: dict):
        if self.hidden is None:
            self.reset(batch["obs"].shape[0])
        z, self.hidden = student_encode(batch["history"], batch["depth"], self.hidden, self.store, self.cfg)
        mean, log_std = action_head(z, batch["obs"], self.store, self.cfg)
        return z, mean, log_std


def agent_for(kind: str, cfg: PolicyConfig, seed: int = 0, store: ParameterStore | None = None):
    kinds = {"teacher": TeacherAgent, "blind": BlindAgent, "student": StudentAgent}
    if kind not in kinds:
        raise ValueError(f"unknown policy kind {kind!r}")
    return kinds[kind](cfg, seed, store)
