"""Student distillation: action imitation plus Barlow Twins latent alignment."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
import torch

from . import nn
from .nn import MLPSpec, ParameterStore, StructuralError

BARLOW_MODES = ("standard", "literal")


class DegenerateColumnWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class DistillConfig:
    barlow_lambda: float = 0.005
    barlow_mode: str = "standard"
    use_barlow: bool = True
    learning_rate: float = 1e-3
    max_grad_norm: float = 1.0
    horizon: int = 24
    min_batch: int = 64
    std_eps: float = 1e-8

    def __post_init__(self):
        if self.barlow_mode not in BARLOW_MODES:
            raise ValueError(f"barlow_mode must be one of {BARLOW_MODES}, got {self.barlow_mode!r}")
        if self.barlow_lambda < 0:
            raise ValueError("barlow_lambda must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AlignmentBatch:
    z_student: torch.Tensor
    z_teacher: torch.Tensor
    teacher_actions: torch.Tensor
    student_actions: torch.Tensor

    def __post_init__(self):
        b = self.z_student.shape[0]
        for name in ("z_teacher", "teacher_actions", "student_actions"):
            if getattr(self, name).shape[0] != b:
                raise StructuralError(f"alignment batch: {name} rows {getattr(self, name).shape[0]} != {b}")
        if self.z_student.shape != self.z_teacher.shape:
            raise StructuralError(f"latent shapes {tuple(self.z_student.shape)} and {tuple(self.z_teacher.shape)} differ")


def standardize(z: torch.Tensor, eps: float = 1e-8) -> tuple[torch.Tensor, torch.Tensor]:
    """Column-standardise over the batch (population std); returns ``(z_hat, valid)``."""
    centered = z - z.mean(dim=0, keepdim=True)
    std = centered.pow(2).mean(dim=0).sqrt()
    valid = std > eps
    safe = torch.where(valid, std, torch.ones_like(std))
    return torch.where(valid, centered / safe, torch.zeros_like(centered)), valid


def cross_correlation(z_a: torch.Tensor, z_b: torch.Tensor, eps: float = 1e-8):
    """Batch cross-correlation ``C`` (D_a x D_b) of standardised latents.

    Returns ``(C, valid_a, valid_b)``; degenerate (constant) columns give
    zero rows/columns, are flagged invalid and raise a warning.
    """
    if z_a.dim() != 2 or z_b.dim() != 2 or z_a.shape[0] != z_b.shape[0]:
        raise StructuralError(f"cross_correlation: shapes {tuple(z_a.shape)} and {tuple(z_b.shape)} are incompatible")
    if z_a.shape[0] < 2:
        raise StructuralError("cross_correlation needs a batch of at least 2")
    za, valid_a = standardize(z_a, eps)
    zb, valid_b = standardize(z_b, eps)
    if not (bool(valid_a.all()) and bool(valid_b.all())):
        warnings.warn(
            f"excluding degenerate latent columns: student {int((~valid_a).sum())}, teacher {int((~valid_b).sum())}",
            DegenerateColumnWarning,
            stacklevel=2,
        )
    return za.T @ zb / z_a.shape[0], valid_a, valid_b


def barlow_loss(C: torch.Tensor, lam: float = 0.005, mode: str = "standard", valid_a=None, valid_b=None):
    """Returns ``(total, diagonal term, off-diagonal term)``.

    ``standard`` drives off-diagonal entries to 0; ``literal`` uses ``(1 - C_ij)^2``.
    Pairs involving an invalid column are left out of both sums.
    """
    if C.dim() != 2 or C.shape[0] != C.shape[1]:
        raise StructuralError(f"barlow_loss needs a square matrix, got {tuple(C.shape)}")
    if mode not in BARLOW_MODES:
        raise ValueError(f"unknown Barlow mode {mode!r}")
    d = C.shape[0]
    va = torch.ones(d, dtype=torch.bool) if valid_a is None else valid_a
    vb = torch.ones(d, dtype=torch.bool) if valid_b is None else valid_b
    pair = (va[:, None] & vb[None, :]).to(C.dtype)
    eye = torch.eye(d, dtype=C.dtype)
    diag = (((1.0 - torch.diagonal(C)) ** 2) * torch.diagonal(pair)).sum()
    off = C if mode == "standard" else 1.0 - C
    offdiag = lam * ((off**2) * pair * (1.0 - eye)).sum()
    return diag + offdiag, diag, offdiag


def distill_loss(batch: AlignmentBatch, cfg: DistillConfig = DistillConfig()):
    """MSE(student mean, teacher mean) plus the alignment terms; float64 reductions."""
    mse = ((batch.student_actions.double() - batch.teacher_actions.double()) ** 2).mean()
    stats = {"loss_mse": float(mse.detach()), "loss_bt_diag": float("nan"), "loss_bt_offdiag": float("nan")}
    if not cfg.use_barlow:
        return mse, stats
    if batch.z_student.shape[0] < cfg.min_batch:
        raise StructuralError(f"alignment batch of {batch.z_student.shape[0]} < {cfg.min_batch} rows")
    C, va, vb = cross_correlation(batch.z_student.double(), batch.z_teacher.double(), cfg.std_eps)
    if not (bool(va.any()) and bool(vb.any())):
        return mse, stats
    total, diag, off = barlow_loss(C, cfg.barlow_lambda, cfg.barlow_mode, va, vb)
    stats["loss_bt_diag"] = float(diag.detach())
    stats["loss_bt_offdiag"] = float(off.detach())
    return mse + total, stats


def distill_step(store: ParameterStore, batch: AlignmentBatch, cfg: DistillConfig = DistillConfig()) -> dict:
    """One Adam step of the student store on the distillation loss."""
    if batch.z_teacher.requires_grad or batch.teacher_actions.requires_grad:
        raise ValueError("teacher outputs must be detached")
    loss, stats = distill_loss(batch, cfg)
    if not torch.isfinite(loss):
        raise FloatingPointError("non-finite distillation loss")
    store.backward(loss)
    stats["grad_norm"] = store.clip_grad_norm(cfg.max_grad_norm)
    store.adam_step(cfg.learning_rate)
    stats["loss_total"] = float(loss.detach())
    return stats


# -- synthetic task ------------------------------------------------------------------------

class SyntheticLinearTask:
    """Teacher is a fixed linear map of an 8-dim state; the student sees a noisy 4-dim projection.

    States live on a 4-dim subspace so the projection keeps the information
    the teacher uses; the student optimum is limited only by sensor noise.
    """

    def __init__(self, seed: int = 0, state_dim: int = 8, obs_dim: int = 4, action_dim: int = 6, latent_dim: int = 64, noise: float = 0.01):
        rng = np.random.default_rng(seed)
        self.rng = rng
        self.basis = rng.normal(size=(state_dim, obs_dim)) / np.sqrt(obs_dim)
        self.teacher_latent = torch.tensor(rng.normal(size=(latent_dim, state_dim)) / np.sqrt(state_dim), dtype=torch.float32)
        self.teacher_action = torch.tensor(rng.normal(size=(action_dim, latent_dim)) / np.sqrt(latent_dim), dtype=torch.float32)
        projection = np.linalg.pinv(self.basis)  # obs_dim x state_dim
        self.projection = projection
        self.noise, self.obs_dim, self.latent_dim, self.action_dim = noise, obs_dim, latent_dim, action_dim

    def sample(self, batch: int):
        """Returns ``(student obs, teacher state)``."""
        u = self.rng.normal(size=(batch, self.obs_dim))
        state = u @ self.basis.T
        obs = state @ self.projection.T + self.noise * self.rng.normal(size=(batch, self.obs_dim))
        return torch.tensor(obs, dtype=torch.float32), torch.tensor(state, dtype=torch.float32)


def run_synthetic_distillation(seed: int = 0, steps: int = 2000, batch: int = 256, cfg: DistillConfig = DistillConfig()):
    """Train a small student on :class:`SyntheticLinearTask`.

    Returns ``(per-step action MSE, frozen teacher store)``.
    """
    task = SyntheticLinearTask(seed)
    gen = torch.Generator().manual_seed(seed)
    store = ParameterStore()
    enc = nn.add_mlp(store, MLPSpec("enc", (task.obs_dim, 128, task.latent_dim)), gen)
    head = nn.add_mlp(store, MLPSpec("head", (task.latent_dim, task.action_dim)), gen, out_gain=0.01)
    teacher = ParameterStore()
    teacher.add("latent", task.teacher_latent)
    teacher.add("action", task.teacher_action)
    teacher.freeze()
    history = []
    for _ in range(steps):
        obs, state = task.sample(batch)
        z_t = state @ teacher["latent"].T
        a_t = z_t @ teacher["action"].T
        z_s = nn.mlp_forward(store, enc, obs)
        a_s = nn.mlp_forward(store, head, z_s)
        stats = distill_step(store, AlignmentBatch(z_s, z_t, a_t, a_s), cfg)
        history.append(stats["loss_mse"])
    return history, teacher


# -- rollouts ---------------------------------------------------------------------------------

@dataclass
class StudentRollout:
    batch: AlignmentBatch
    obs: dict
    episodes: list
    applied_actions: np.ndarray  # (horizon, n_envs, 6), exactly what the simulator received
    terrain_levels: list


def _tensors(obs: dict) -> dict:
    return {k: torch.as_tensor(v) for k, v in obs.items()}


def teacher_outputs(teacher, obs_t: dict) -> tuple[torch.Tensor, torch.Tensor]:
    """Teacher latent and deterministic action, without a graph."""
    from .policy import action_head

    with torch.no_grad():
        z, _ = teacher.latent(obs_t)
        mean, _ = action_head(z, obs_t["obs"], teacher.store, teacher.cfg)
    return z, mean


def collect_student_rollouts(env, student, teacher, horizon: int, obs: dict, on_step=None) -> StudentRollout:
    """Step ``env`` with the student's mean actions while recording both policies.

    Student outputs keep their graph for truncated backpropagation through
    time over the horizon; teacher outputs are detached.
    """
    if student.cfg.latent_dim != teacher.cfg.latent_dim:
        raise StructuralError(f"student latent {student.cfg.latent_dim} != teacher latent {teacher.cfg.latent_dim}")
    zs, as_, zt, at, applied, episodes, levels = [], [], [], [], [], [], []
    if student.hidden is None:
        student.reset(env.n)
    for _ in range(horizon):
        obs_t = _tensors(obs)
        z_t, a_t = teacher_outputs(teacher, obs_t)
        z_s, mean, _ = student.step(obs_t)
        action = mean.detach().numpy().astype(np.float64)
        obs, reward, done, info = env.step(action)
        if on_step is not None:
            on_step(env, action, reward, info)
        student.reset(env.n, done)
        zs.append(z_s)
        as_.append(mean)
        zt.append(z_t)
        at.append(a_t)
        applied.append(action)
        episodes.extend(info["episodes"])
        levels.append(env.terrain_level)
    batch = AlignmentBatch(torch.cat(zs), torch.cat(zt), torch.cat(at), torch.cat(as_))
    return StudentRollout(batch, obs, episodes, np.stack(applied), levels)
