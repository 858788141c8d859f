"""Vectorised locomotion environment: curriculum terrain, biped, rewards and sensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import biped
from .biped import (
    CONTROL_DT,
    DECIMATION,
    SIM_DT,
    CommandRanges,
    DomainRandomization,
    ObservationNoise,
    PDController,
    RobotState,
    Termination,
    TerminationConfig,
    TerrainView,
)
from .depthcam import CameraModel, CameraRandomization, preprocess_depth, render_depth_batch
from .rewards import TERM_NAMES, RewardConfig, compute_rewards
from .rotations import yaw_from_quat
from .terrain import N_TERRAIN_TYPES, CurriculumState, ScanPattern, build_terrain_bank, curriculum_update, heights_at

PROPRIO_DIM = 18


@dataclass(frozen=True)
class EnvConfig:
    n_envs: int = 64
    max_level: int = 9
    init_level: int = 0
    terrain_proportions: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    terrain_extent: float = 8.0
    cell_size: float = 0.05
    terrain_seed: int = 0
    curriculum: bool = True
    promote_above: float = 0.8
    demote_below: float = 0.4
    graduation: str = "clamp"
    min_command_distance: float = 1.0
    spawn_jitter: float = 0.2
    episode_length: float = 20.0
    action_clip: float = 5.0
    only_positive_rewards: bool = True  # clip the per-step training reward at zero
    history: int = 5
    use_depth: bool = False
    depth_interval: int = 5
    depth_shape: tuple[int, int] = (48, 64)
    commands: CommandRanges = field(default_factory=CommandRanges)
    domain: DomainRandomization = field(default_factory=DomainRandomization)
    noise: ObservationNoise = field(default_factory=ObservationNoise)
    camera: CameraModel = field(default_factory=CameraModel)
    camera_randomization: CameraRandomization = field(default_factory=CameraRandomization)
    rewards: RewardConfig = field(default_factory=RewardConfig)
    pd: PDController = field(default_factory=PDController)
    scan: ScanPattern = field(default_factory=ScanPattern)

    def __post_init__(self):
        p = np.asarray(self.terrain_proportions, dtype=np.float64)
        if p.shape != (N_TERRAIN_TYPES,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
            raise ValueError("terrain_proportions must be 4 non-negative numbers summing to 1")
        if self.n_envs < 1:
            raise ValueError("n_envs must be >= 1")
        if not 0 <= self.init_level <= self.max_level:
            raise ValueError("init_level must lie in [0, max_level]")


def assign_terrain_types(n: int, proportions) -> np.ndarray:
    """Deterministic per-env terrain types matching the proportions as closely as possible."""
    counts = np.floor(np.asarray(proportions) * n).astype(np.int64)
    remainder = np.asarray(proportions) * n - counts
    for k in np.argsort(-remainder, kind="stable")[: n - counts.sum()]:
        counts[k] += 1
    return np.repeat(np.arange(N_TERRAIN_TYPES), counts)


@dataclass
class EpisodeRecord:
    env_id: int
    terrain_type: int
    level: int
    length: int
    duration: float
    reward: float
    terms: dict
    reason: int
    outcome: float


class LocomotionEnv:
    """``n_envs`` independent bipeds on curriculum tiles, stepped at the control rate."""

    def __init__(self, cfg: EnvConfig = EnvConfig(), seed: int = 0):
        self.cfg = cfg
        self.n = cfg.n_envs
        ss = np.random.SeedSequence(seed)
        self.rng, self.noise_rng, self.push_rng = (np.random.default_rng(s) for s in ss.spawn(3))
        self.bank = build_terrain_bank(cfg.max_level, cfg.terrain_extent, cfg.cell_size, cfg.terrain_seed)
        self.tiles = self.bank.flat_tiles()
        self.tile_max = self.tiles.reshape(self.tiles.shape[0], -1).max(axis=1)
        types = assign_terrain_types(self.n, cfg.terrain_proportions)
        self.curriculum = CurriculumState(np.full(self.n, cfg.init_level), types, cfg.max_level)
        self.termination = TerminationConfig(episode_length=cfg.episode_length)
        self.model = biped.BipedModel()
        self.steps_per_push = max(1, int(round(cfg.domain.push_interval / CONTROL_DT)))
        self.steps_per_command = max(1, int(round(cfg.commands.resample_interval / CONTROL_DT)))
        self._allocate()
        self.reset_all()

    # -- setup ---------------------------------------------------------------------

    def _allocate(self) -> None:
        n, cfg = self.n, self.cfg
        self.view = TerrainView(self.tiles, np.zeros(n, dtype=np.int64), self.bank.origin, self.bank.cell_size)
        self.params = biped.default_domain(n)
        self.commands = np.zeros((n, 3))
        self.cam_offset = np.tile(np.asarray(cfg.camera.mount_offset, dtype=np.float64), (n, 1))
        self.cam_pitch = np.full(n, cfg.camera.mount_pitch)
        self.cam_fov = np.full(n, cfg.camera.horizontal_fov)
        self.sensor_ring = np.zeros((n, DECIMATION, PROPRIO_DIM))
        self.history = np.zeros((n, cfg.history, biped.OBS_DIM))
        self.depth = np.zeros((n, *cfg.depth_shape), dtype=np.float32)
        self.episode_step = np.zeros(n, dtype=np.int64)
        self.episode_reward = np.zeros(n)
        self.episode_terms = np.zeros((n, len(TERM_NAMES)))
        self.progress = np.zeros(n)
        self.command_distance = np.zeros(n)
        self.obs = np.zeros((n, biped.OBS_DIM))
        self.state: RobotState | None = None

    def reset_all(self) -> dict:
        ids = np.arange(self.n)
        self.state = None
        self._reset(ids)
        return self.observe()

    def _reset(self, ids: np.ndarray) -> None:
        cfg, k = self.cfg, ids.shape[0]
        if k == 0:
            return
        self.params.assign(biped.sample_domain(self.rng, k, cfg.domain), ids)
        self.commands[ids] = biped.sample_commands(self.rng, k, cfg.commands)
        self.view.tile_idx[ids] = self.bank.tile_index(self.curriculum.levels[ids], self.curriculum.terrain_types[ids])
        cr = cfg.camera_randomization
        self.cam_offset[ids, 0] = cfg.camera.mount_offset[0] + self.rng.uniform(*cr.position_x, size=k)
        self.cam_offset[ids, 1] = cfg.camera.mount_offset[1] + self.rng.uniform(*cr.position_y, size=k)
        self.cam_pitch[ids] = cfg.camera.mount_pitch + self.rng.uniform(*cr.pitch, size=k)
        self.cam_fov[ids] = cfg.camera.horizontal_fov if cr.fov is None else self.rng.uniform(*cr.fov, size=k)
        xy = self.rng.uniform(-cfg.spawn_jitter, cfg.spawn_jitter, size=(k, 2))
        yaw = self.rng.uniform(-np.pi, np.pi, size=k)
        sub_view = TerrainView(self.tiles, self.view.tile_idx[ids], self.view.origin, self.view.cell_size)
        fresh = biped.initial_state(k, sub_view, _select_params(self.params, ids), self.model, xy, yaw)
        biped.update_body_contacts(fresh, sub_view, _select_params(self.params, ids), self.model)
        if self.state is None:
            self.state = fresh
        else:
            self.state.assign(fresh, ids)
        self.sensor_ring[ids] = biped.proprio_snapshot(fresh)[:, None, :]
        self.episode_step[ids] = 0
        self.episode_reward[ids] = 0.0
        self.episode_terms[ids] = 0.0
        self.progress[ids] = 0.0
        self.command_distance[ids] = 0.0
        obs = self._observe_proprio(ids)
        self.history[ids] = obs[:, None, :]
        if cfg.use_depth:
            self._render(ids)

    # -- sensing -----------------------------------------------------------------

    def _observe_proprio(self, ids: np.ndarray | None = None) -> np.ndarray:
        ids = np.arange(self.n) if ids is None else ids
        delay = np.clip(np.rint(self.params.step_delay[ids] / SIM_DT).astype(np.int64), 0, DECIMATION - 1)
        sensed = self.sensor_ring[ids, DECIMATION - 1 - delay]
        state = self.state if ids.shape[0] == self.n else self.state.select(ids)
        obs = biped.assemble_observation(state, self.commands[ids], self.noise_rng, self.cfg.noise, sensed)
        self.obs[ids] = obs
        return obs

    def _render(self, ids: np.ndarray) -> None:
        cfg = self.cfg
        raw = render_depth_batch(
            self.tiles,
            self.view.tile_idx[ids],
            self.view.origin,
            self.view.cell_size,
            self.state.base_pos[ids],
            self.state.base_quat[ids],
            self.cam_offset[ids],
            self.cam_pitch[ids],
            self.cam_fov[ids],
            cfg.camera,
            self.tile_max,
        )
        self.depth[ids] = preprocess_depth(raw, cfg.camera.near, cfg.camera.far, cfg.depth_shape)

    def height_scan(self) -> np.ndarray:
        s = self.state
        yaw = yaw_from_quat(s.base_quat)[:, None]
        off = self.cfg.scan.offsets()
        c, si = np.cos(yaw), np.sin(yaw)
        px = s.base_pos[:, 0:1] + c * off[:, 0] - si * off[:, 1]
        py = s.base_pos[:, 1:2] + si * off[:, 0] + c * off[:, 1]
        h = heights_at(self.tiles, self.view.tile_idx, self.view.origin, self.view.cell_size, px, py)
        return np.clip(s.base_pos[:, 2:3] - h, -1.0, 1.0)

    def observe(self) -> dict:
        """Float32 observation bundle for every environment."""
        terrain = np.zeros((self.n, N_TERRAIN_TYPES), dtype=np.float32)
        terrain[np.arange(self.n), self.curriculum.terrain_types] = 1.0
        out = {
            "obs": self.obs.astype(np.float32),
            "priv": biped.assemble_privileged(self.state, self.params, self.cfg.domain).astype(np.float32),
            "heights": self.height_scan().astype(np.float32),
            "terrain": terrain,
            "history": self.history.reshape(self.n, -1).astype(np.float32),
        }
        if self.cfg.use_depth:
            out["depth"] = self.depth.copy()
        return out

    # -- stepping ----------------------------------------------------------------

    def step(self, action):
        """Apply one action per env for ``DECIMATION`` substeps.

        Returns ``(obs bundle, reward, done, info)``; finished environments are
        reset before the bundle is assembled, ``info["episodes"]`` holds their
        :class:`EpisodeRecord`.
        """
        cfg = self.cfg
        action = np.clip(np.asarray(action, dtype=np.float64).reshape(self.n, 6), -cfg.action_clip, cfg.action_clip)
        if not np.all(np.isfinite(action)):
            raise biped.SimulationFault("non-finite action")
        s = self.state
        s.action = action.copy()
        s.touchdown[:] = False
        prev = s.copy()
        v_before = s.base_lin_vel.copy()
        for _ in range(DECIMATION):
            tau, raw = biped.pd_torque(action, s.joint_pos, s.joint_vel, cfg.pd, self.params.kp_factor, self.params.kd_factor, return_raw=True)
            s = biped.step(s, tau, self.view, self.params, SIM_DT, self.model)
            s.torque, s.torque_raw = tau, raw
            self.sensor_ring = np.roll(self.sensor_ring, -1, axis=1)
            self.sensor_ring[:, -1] = biped.proprio_snapshot(s)
        biped.update_body_contacts(s, self.view, self.params, self.model)
        s.base_lin_acc = (s.base_lin_vel - v_before) / CONTROL_DT
        self.state = s

        faulted = s.faulted.copy()
        scored = s
        if faulted.any():
            scored = s.copy()
            scored.assign(prev.select(faulted), faulted)
            scored.base_lin_acc[faulted] = 0.0
        breakdown = compute_rewards(prev, scored, self.commands, cfg.rewards)
        reward = np.where(faulted, 0.0, breakdown.total)
        if cfg.only_positive_rewards:
            reward = np.maximum(reward, 0.0)
        self.episode_reward += reward
        self.episode_terms += np.where(faulted[:, None], 0.0, np.stack([breakdown.weighted[k] for k in TERM_NAMES], axis=-1))
        s.prev_action = action.copy()
        self.episode_step += 1

        cmd_xy = self.commands[:, :2]
        cmd_speed = np.linalg.norm(cmd_xy, axis=-1)
        vel = np.nan_to_num(s.base_lin_vel_body()[:, :2])
        along = np.sum(vel * cmd_xy, axis=-1) / np.maximum(cmd_speed, 1e-9)
        self.progress += np.clip(along, 0.0, cmd_speed) * CONTROL_DT
        self.command_distance += cmd_speed * CONTROL_DT

        reason = biped.check_termination(s, self.termination)
        done = reason != Termination.ALIVE
        timeouts = reason == Termination.TIMEOUT
        episodes = self._finish(np.flatnonzero(done), reason, breakdown.unweighted)

        alive = np.flatnonzero(~done)
        push = alive[(self.episode_step[alive] % self.steps_per_push == 0)]
        if push.size and cfg.domain.enabled and cfg.domain.push_velocity > 0:
            self.state = biped.apply_push(self.state, self.push_rng, cfg.domain.push_velocity, push)
        resample = alive[(self.episode_step[alive] % self.steps_per_command == 0)]
        if resample.size:
            self.commands[resample] = biped.sample_commands(self.rng, resample.size, cfg.commands)

        self._observe_proprio()
        self.history = np.roll(self.history, -1, axis=1)
        self.history[:, -1] = self.obs
        self._reset(np.flatnonzero(done))
        if cfg.use_depth:
            due = alive[(self.episode_step[alive] % cfg.depth_interval == 0)]
            if due.size:
                self._render(due)
        info = {"timeouts": timeouts, "reason": reason, "episodes": episodes, "reward_terms": breakdown.weighted}
        return self.observe(), reward, done, info

    def episode_outcome(self, ids: np.ndarray, reason: np.ndarray) -> np.ndarray:
        """Progress along the commanded direction over the distance expected for a full episode."""
        elapsed = np.maximum(self.episode_step[ids] * CONTROL_DT, CONTROL_DT)
        expected = self.command_distance[ids] / elapsed * self.cfg.episode_length
        survived = np.minimum(elapsed / self.cfg.episode_length, 1.0)
        ratio = self.progress[ids] / np.maximum(expected, 1e-9)
        small = expected < self.cfg.min_command_distance
        outcome = np.where(small, np.where(reason[ids] == Termination.TIMEOUT, 1.0, survived), ratio)
        return np.clip(outcome, 0.0, 1.0)

    def _finish(self, ids: np.ndarray, reason: np.ndarray, unweighted: dict) -> list[EpisodeRecord]:
        if ids.size == 0:
            return []
        outcome = self.episode_outcome(ids, reason)
        records = [
            EpisodeRecord(
                env_id=int(i),
                terrain_type=int(self.curriculum.terrain_types[i]),
                level=int(self.curriculum.levels[i]),
                length=int(self.episode_step[i]),
                duration=float(self.episode_step[i] * CONTROL_DT),
                reward=float(self.episode_reward[i]),
                terms=dict(zip(TERM_NAMES, self.episode_terms[i].tolist())),
                reason=int(reason[i]),
                outcome=float(o),
            )
            for i, o in zip(ids, outcome)
        ]
        if self.cfg.curriculum:
            self.curriculum = curriculum_update(
                self.curriculum, outcome, self.rng, ids, self.cfg.promote_above, self.cfg.demote_below, self.cfg.graduation
            )
        return records

    @property
    def terrain_level(self) -> float:
        return self.curriculum.mean_level


def _select_params(params: biped.DomainParams, ids) -> biped.DomainParams:
    return biped.DomainParams(**{k: getattr(params, k)[ids].copy() for k in params.__dataclass_fields__})
