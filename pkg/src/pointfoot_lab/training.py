"""Teacher PPO training, student distillation and evaluation runs."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .biped import CONTROL_DT, SimulationFault, Termination
from .config import ConfigError, RunConfig, save_config
from .distill import DistillConfig, collect_student_rollouts, distill_step
from .env import EnvConfig, LocomotionEnv
from .metrics import EpisodeWindow, MetricsWriter, TraceWriter
from .nn import CheckpointError, ParameterStore, load_checkpoint, save_checkpoint
from .plotting import plot_metrics
from .policy import BlindAgent, PolicyConfig, StudentAgent, TeacherAgent, copy_head
from .ppo import PPOError, PPOState, RolloutBuffer, act, ppo_update, timeout_bootstrap
from .rewards import RewardFault
from .terrain import TerrainType

log = logging.getLogger(__name__)


class NumericalFault(RuntimeError):
    pass


_NUMERICAL = (SimulationFault, PPOError, RewardFault, FloatingPointError)


# -- run directory --------------------------------------------------------------------

def source_digest() -> str:
    root = Path(__file__).resolve().parent
    h = hashlib.sha256()
    for path in sorted(root.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def prepare_run_dir(out: str | Path, cfg: RunConfig, phase: str, extra: dict | None = None) -> Path:
    out = Path(out)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    manifest = {
        "phase": phase,
        "seed": cfg.seed,
        "variant": cfg.ablation.name,
        "package_version": __version__,
        "source_digest": source_digest(),
        "torch_version": torch.__version__,
        "numpy_version": np.__version__,
    }
    manifest.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def save_policy(path: Path, store: ParameterStore, kind: str, policy_cfg: PolicyConfig, iteration: int, seed: int) -> None:
    meta = {"kind": kind, "policy": policy_cfg.to_dict(), "iteration": iteration, "seed": seed}
    save_checkpoint(path, {f"policy/{k}": v for k, v in store.numpy_dict().items()}, meta)


def _policy_cfg_from_meta(meta: dict) -> PolicyConfig:
    raw = dict(meta["policy"])
    for k, v in raw.items():
        if isinstance(v, list):
            raw[k] = tuple(v)
    return PolicyConfig(**raw)


def load_policy(path: str | Path, expect: tuple[str, ...] | None = None):
    """Rebuild the agent stored in a checkpoint; returns ``(agent, meta)``."""
    tensors, meta = load_checkpoint(path)
    kind = meta.get("kind")
    if expect is not None and kind not in expect:
        raise CheckpointError(f"{path}: expected a {' or '.join(expect)} checkpoint, found {kind!r}")
    try:
        pcfg = _policy_cfg_from_meta(meta)
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: unreadable policy metadata ({exc})") from None
    agent = {"teacher": TeacherAgent, "blind": BlindAgent, "student": StudentAgent}[kind](pcfg)
    names = {k[len("policy/"):] for k in tensors if k.startswith("policy/")}
    if names != set(agent.store.names()):
        raise CheckpointError(f"{path}: parameter set does not match a {kind} network with the stored config")
    agent.store.load_numpy(tensors, prefix="policy/")
    return agent, meta


# -- helpers -----------------------------------------------------------------------------

def _obs_tensors(obs: dict, keys) -> dict:
    return {k: torch.as_tensor(obs[k]) for k in keys}


def _env_config(cfg: RunConfig, use_depth: bool, n_envs: int | None) -> EnvConfig:
    return replace(cfg.env, use_depth=use_depth, n_envs=n_envs or cfg.env.n_envs)


def _seed_everything(seed: int) -> torch.Generator:
    torch.manual_seed(seed)
    return torch.Generator().manual_seed(seed)


@dataclass
class RunResult:
    out: Path
    metrics: Path
    checkpoint: Path
    iterations: int


# -- teacher ---------------------------------------------------------------------------

def train_teacher(cfg: RunConfig, out: str | Path, iterations: int | None = None, n_envs: int | None = None, trace: bool = False) -> RunResult:
    """PPO on the privileged teacher, or on the blind policy when depth is ablated."""
    iterations = cfg.teacher_iterations if iterations is None else iterations
    kind = "teacher" if cfg.ablation.use_depth else "blind"
    pcfg = replace(cfg.policy, use_moe=cfg.ablation.use_moe)
    out = prepare_run_dir(out, cfg, f"train-{kind}", {"iterations": iterations, "n_envs": n_envs or cfg.env.n_envs})
    gen = _seed_everything(cfg.seed)
    agent = TeacherAgent(pcfg, cfg.seed) if kind == "teacher" else BlindAgent(pcfg, cfg.seed)
    env = LocomotionEnv(_env_config(cfg, False, n_envs), cfg.seed)
    ppo_cfg = cfg.ppo
    state = PPOState(ppo_cfg.learning_rate)
    window = EpisodeWindow(cfg.metrics_window)
    tracer = TraceWriter(out / "trace.csv") if trace else None
    metrics_path = out / "metrics.csv"
    ckpt_dir = out / "checkpoints"
    obs = env.observe()
    writer = MetricsWriter(metrics_path)
    try:
        for it in range(1, iterations + 1):
            buf = RolloutBuffer(ppo_cfg.horizon, env.n, pcfg.action_dim)
            for _ in range(ppo_cfg.horizon):
                o = _obs_tensors(obs, agent.keys)
                action, logp, value, mean, log_std = act(agent, o, gen)
                if tracer is not None:
                    prev_state = env.state
                obs, reward, done, info = env.step(action.numpy())
                if tracer is not None:
                    tracer.record(prev_state if done[tracer.env_id] else env.state, action.numpy(), reward, info["reward_terms"], CONTROL_DT)
                window.extend(info["episodes"])
                reward = timeout_bootstrap(reward, value.numpy(), info["timeouts"], ppo_cfg.gamma)
                buf.add(o, action, logp, value, reward, done, mean, log_std, env.curriculum.terrain_types)
            with torch.no_grad():
                last = agent.value(_obs_tensors(obs, agent.keys))
            buf.finish(last, ppo_cfg.gamma, ppo_cfg.lam)
            stats = ppo_update(buf, agent, ppo_cfg, state, gen)
            row = {"iter": it, "terrain_level": env.terrain_level, "kl": stats["kl_final"]}
            row.update({k: stats[k] for k in ("loss_policy", "loss_value")})
            row.update(window.summary())
            writer.write(row)
            if it % cfg.checkpoint_interval == 0:
                save_policy(ckpt_dir / f"{kind}_{it:06d}.ckpt", agent.store, kind, pcfg, it, cfg.seed)
    except _NUMERICAL as exc:
        raise NumericalFault(f"numerical fault during {kind} training: {exc}") from exc
    finally:
        writer.close()
        if tracer is not None:
            tracer.close()
    final = ckpt_dir / f"{kind}_final.ckpt"
    save_policy(final, agent.store, kind, pcfg, iterations, cfg.seed)
    _plot_run(metrics_path, out)
    return RunResult(out, metrics_path, final, iterations)


# -- student -----------------------------------------------------------------------------

def train_student(
    cfg: RunConfig,
    teacher_checkpoint: str | Path,
    out: str | Path,
    iterations: int | None = None,
    n_envs: int | None = None,
    trace: bool = False,
) -> RunResult:
    iterations = cfg.student_iterations if iterations is None else iterations
    teacher, meta = load_policy(teacher_checkpoint, expect=("teacher",))
    teacher.store.freeze()
    scfg = replace(cfg.policy, use_moe=teacher.cfg.use_moe)
    if scfg.latent_dim != teacher.cfg.latent_dim or scfg.action_dim != teacher.cfg.action_dim:
        raise CheckpointError(f"{teacher_checkpoint}: teacher latent/action dims do not match the student config")
    dcfg: DistillConfig = replace(cfg.distill, use_barlow=cfg.ablation.use_barlow)
    extra = {"iterations": iterations, "teacher_checkpoint": str(teacher_checkpoint), "n_envs": n_envs or cfg.env.n_envs}
    out = prepare_run_dir(out, cfg, "train-student", extra)
    _seed_everything(cfg.seed)
    student = StudentAgent(scfg, cfg.seed)
    copy_head(teacher.store, student.store)
    env = LocomotionEnv(_env_config(cfg, True, n_envs), cfg.seed)
    window = EpisodeWindow(cfg.metrics_window)
    tracer = TraceWriter(out / "trace.csv") if trace else None
    metrics_path = out / "metrics.csv"
    ckpt_dir = out / "checkpoints"

    def on_step(env, action, reward, info):
        if tracer is not None:
            tracer.record(env.state, action, reward, info["reward_terms"], CONTROL_DT)

    obs = env.observe()
    student.reset(env.n)
    writer = MetricsWriter(metrics_path)
    try:
        for it in range(1, iterations + 1):
            roll = collect_student_rollouts(env, student, teacher, dcfg.horizon, obs, on_step)
            obs = roll.obs
            window.extend(roll.episodes)
            stats = distill_step(student.store, roll.batch, dcfg)
            student.detach()
            row = {"iter": it, "terrain_level": env.terrain_level}
            row.update({k: stats[k] for k in ("loss_mse", "loss_bt_diag", "loss_bt_offdiag")})
            row.update(window.summary())
            writer.write(row)
            if it % cfg.checkpoint_interval == 0:
                save_policy(ckpt_dir / f"student_{it:06d}.ckpt", student.store, "student", scfg, it, cfg.seed)
    except _NUMERICAL as exc:
        raise NumericalFault(f"numerical fault during student training: {exc}") from exc
    finally:
        writer.close()
        if tracer is not None:
            tracer.close()
    final = ckpt_dir / "student_final.ckpt"
    save_policy(final, student.store, "student", scfg, iterations, cfg.seed)
    _plot_run(metrics_path, out)
    return RunResult(out, metrics_path, final, iterations)


def _plot_run(metrics_path: Path, out: Path) -> None:
    plot_metrics([metrics_path], out / "plots", names=[out.name])


# -- evaluation ---------------------------------------------------------------------------

class Actor:
    """Deterministic (mean-action) controller built from any policy checkpoint."""

    def __init__(self, agent, kind: str):
        self.agent, self.kind = agent, kind
        self.needs_depth = kind == "student"

    def reset(self, n: int, done=None) -> None:
        if self.kind == "student":
            self.agent.reset(n, done)

    def __call__(self, obs: dict) -> np.ndarray:
        with torch.no_grad():
            t = {k: torch.as_tensor(v) for k, v in obs.items()}
            if self.kind == "student":
                _, mean, _ = self.agent.step(t)
            else:
                mean, _ = self.agent.distribution(t)
        return mean.numpy().astype(np.float64)


def load_actor(path: str | Path) -> Actor:
    agent, meta = load_policy(path)
    return Actor(agent, meta["kind"])


@dataclass
class EvalReport:
    velocity_error: float
    height_error: float
    survival_time: float
    episodes: int
    per_terrain: dict

    def to_dict(self) -> dict:
        return asdict(self)


def eval_env_config(cfg: RunConfig, use_depth: bool, n_envs: int | None = None) -> EnvConfig:
    ev = cfg.evaluation
    return replace(
        cfg.env,
        n_envs=n_envs or ev.n_envs,
        use_depth=use_depth,
        curriculum=False,
        init_level=min(ev.level, cfg.env.max_level),
        episode_length=ev.duration,
        terrain_proportions=ev.terrain_proportions,
    )


def evaluate_actor(actor, env_cfg: EnvConfig, seed: int, post_step=None) -> EvalReport:
    """Run every environment for exactly one episode (capped at the episode length).

    ``post_step(env)`` may edit the simulator after each control step; it is
    a test hook for oracle playback.
    """
    env = LocomotionEnv(env_cfg, seed)
    n = env.n
    obs = env.observe()
    if hasattr(actor, "reset"):
        actor.reset(n)
    active = np.ones(n, dtype=bool)
    survival = np.zeros(n)
    vel_err = np.zeros(n)
    height_err = np.zeros(n)
    samples = np.zeros(n)
    max_steps = int(round(env_cfg.episode_length / CONTROL_DT)) + 2
    for _ in range(max_steps):
        if not active.any():
            break
        command = env.commands[:, :2].copy()
        obs, _, done, info = env.step(actor(obs))
        if post_step is not None:
            post_step(env)
            obs = env.observe()
        state = env.state
        v = np.nan_to_num(state.base_lin_vel_body()[:, :2])
        live = active & ~done
        vel_err[live] += np.linalg.norm(command[live] - v[live], axis=-1)
        height_err[live] += np.abs(env.cfg.rewards.base_height_target - state.base_height[live])
        samples[live] += 1
        for ep in info["episodes"]:
            if active[ep.env_id]:
                survival[ep.env_id] = min(ep.duration, env_cfg.episode_length)
                active[ep.env_id] = False
        if hasattr(actor, "reset"):
            actor.reset(n, done)
    survival[active] = env_cfg.episode_length
    has = samples > 0
    per_env_v = np.where(has, vel_err / np.maximum(samples, 1), np.nan)
    per_env_h = np.where(has, height_err / np.maximum(samples, 1), np.nan)
    types = env.curriculum.terrain_types
    per_terrain = {}
    for t in TerrainType:
        m = types == int(t)
        if m.any():
            per_terrain[t.name.lower()] = {
                "velocity_error": _nanmean(per_env_v[m]),
                "height_error": _nanmean(per_env_h[m]),
                "survival_time": float(survival[m].mean()),
                "episodes": int(m.sum()),
            }
    return EvalReport(_nanmean(per_env_v), _nanmean(per_env_h), float(survival.mean()), n, per_terrain)


def _nanmean(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.nanmean(x)) if np.any(np.isfinite(x)) else float("nan")


def evaluate(checkpoint: str | Path, cfg: RunConfig, out: str | Path | None = None, n_envs: int | None = None) -> EvalReport:
    actor = load_actor(checkpoint)
    env_cfg = eval_env_config(cfg, actor.needs_depth, n_envs)
    try:
        report = evaluate_actor(actor, env_cfg, cfg.evaluation.seed)
    except _NUMERICAL as exc:
        raise NumericalFault(f"numerical fault during evaluation: {exc}") from exc
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report


__all__ = [
    "ConfigError",
    "EvalReport",
    "NumericalFault",
    "RunResult",
    "Termination",
    "evaluate",
    "evaluate_actor",
    "load_policy",
    "train_student",
    "train_teacher",
]
