"""Locomotion reward terms.

Each term is a pure function of consecutive control-step states and returns
one unweighted value per environment. :func:`compute_rewards` weights them,
scales by the control period and sums.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .biped import BASE_HEIGHT_TARGET, CONTROL_DT, LEFT, RIGHT, RobotState, gait_phases, reference_foot_height

DEFAULT_WEIGHTS = {
    "lin_vel_tracking": 7.5,
    "ang_vel_tracking": 4.0,
    "lin_vel_z": -0.5,
    "ang_vel_xy": -0.06,
    "orientation": -6.0,
    "base_height": -10.0,
    "joint_acc": -2.5e-7,
    "action_rate": -0.01,
    "feet_air_time": 60.0,
    "joint_torque": -2.5e-5,
    "feet_contact_force": -0.01,
    "feet_distance": -100.0,
    "unbalance_feet_height": -60.0,
    "unbalance_feet_air_time": -300.0,
    "collision": -30.0,
    "torque_limit": -0.1,
    "target_feet_height": -6.0,
    "feet_position_x": -3.0,
    "hip_position": -1.5,
    "feet_contact_number": 2.5,
    "lin_vel_smooth": -0.05,
    "survival": -0.05,
    "feet_velocity": -0.5,
}

TERM_NAMES = tuple(DEFAULT_WEIGHTS)
HIP_ROLL_JOINTS = (0, 3)


class RewardFault(FloatingPointError):
    def __init__(self, term: str):
        super().__init__(f"reward term {term!r} produced a non-finite value")
        self.term = term


@dataclass(frozen=True)
class RewardConfig:
    weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    base_height_target: float = BASE_HEIGHT_TARGET
    tracking_sigma: float = 0.25  # exp(-||e||^2 / sigma) == exp(-4 ||e||^2)
    max_contact_force: float = 120.0
    min_air_time: float = 0.1
    max_air_time: float = 0.5
    nominal_feet_distance: float = 0.2
    torque_limit: float = 30.0
    near_ground: float = 0.05
    default_hip_pos: tuple[float, float] = (0.0, 0.0)
    dt: float = CONTROL_DT
    # literal renderings of rows whose printed form is kept behind a switch
    feet_air_time_mode: str = "touchdown"  # or "literal"
    feet_velocity_mode: str = "abs"  # or "signed"
    feet_distance_mode: str = "nominal"  # or "literal"
    contact_force_mode: str = "excess"  # or "literal"

    def __post_init__(self):
        missing = set(TERM_NAMES) - set(self.weights)
        extra = set(self.weights) - set(TERM_NAMES)
        if missing or extra:
            raise ValueError(f"reward weights must cover every term exactly (missing={sorted(missing)}, unknown={sorted(extra)})")
        if not all(np.isfinite(w) for w in self.weights.values()):
            raise ValueError("reward weights must be finite")


@dataclass
class RewardBreakdown:
    unweighted: dict
    weighted: dict
    total: np.ndarray


def _body_vel(state: RobotState) -> np.ndarray:
    return state.base_lin_vel_body()


def r_lin_vel_tracking(cur: RobotState, cmd, cfg: RewardConfig) -> np.ndarray:
    err = np.sum((cmd[:, :2] - _body_vel(cur)[:, :2]) ** 2, axis=-1)
    return np.exp(-err / cfg.tracking_sigma)


def r_ang_vel_tracking(cur: RobotState, cmd, cfg: RewardConfig) -> np.ndarray:
    err = (cmd[:, 2] - cur.base_ang_vel[:, 2]) ** 2
    return np.exp(-err / cfg.tracking_sigma)


def r_lin_vel_z(cur: RobotState) -> np.ndarray:
    return _body_vel(cur)[:, 2] ** 2


def r_ang_vel_xy(cur: RobotState) -> np.ndarray:
    return np.sum(cur.base_ang_vel[:, :2] ** 2, axis=-1)


def r_orientation(cur: RobotState) -> np.ndarray:
    return np.sum(cur.projected_gravity()[:, :2] ** 2, axis=-1)


def r_base_height(cur: RobotState, cfg: RewardConfig) -> np.ndarray:
    return np.abs(cfg.base_height_target - cur.base_height)


def r_joint_acc(prev: RobotState, cur: RobotState, cfg: RewardConfig) -> np.ndarray:
    return np.sum(((cur.joint_vel - prev.joint_vel) / cfg.dt) ** 2, axis=-1)


def r_action_rate(prev_action, action) -> np.ndarray:
    return np.sum((action - prev_action) ** 2, axis=-1)


def r_feet_air_time(cur: RobotState, cfg: RewardConfig) -> np.ndarray:
    """Touchdown reward: sum over feet landing this step of min(t_air, cap) - t_min."""
    if cfg.feet_air_time_mode == "literal":
        return np.linalg.norm(np.maximum(cur.air_time, cfg.min_air_time), axis=-1)
    gain = np.minimum(cur.touchdown_air_time, cfg.max_air_time) - cfg.min_air_time
    return np.sum(np.where(cur.touchdown, gain, 0.0), axis=-1)


def r_joint_torque(cur: RobotState) -> np.ndarray:
    return np.sum(cur.torque**2, axis=-1)


def r_feet_contact_force(cur: RobotState, cfg: RewardConfig) -> np.ndarray:
    excess = cur.contact_force - cfg.max_contact_force
    if cfg.contact_force_mode != "literal":
        excess = np.maximum(excess, 0.0)
    return np.sum(excess**2, axis=-1)


def r_feet_distance(cur: RobotState, cfg: RewardConfig) -> np.ndarray:
    gap = cur.foot_pos[:, LEFT, :2] - cur.foot_pos[:, RIGHT, :2]
    if cfg.feet_distance_mode == "literal":
        return np.sum(gap**2, axis=-1)
    return np.abs(np.linalg.norm(gap, axis=-1) - cfg.nominal_feet_distance)


def r_unbalance_feet_height(cur: RobotState) -> np.ndarray:
    landed = cur.touchdown.any(axis=-1)
    return np.where(landed, np.abs(cur.last_swing_peak[:, LEFT] - cur.last_swing_peak[:, RIGHT]), 0.0)


def r_unbalance_feet_air_time(cur: RobotState) -> np.ndarray:
    landed = cur.touchdown.any(axis=-1)
    return np.where(landed, np.abs(cur.last_air_time[:, LEFT] - cur.last_air_time[:, RIGHT]), 0.0)


def r_collision(cur: RobotState) -> np.ndarray:
    return cur.collisions.astype(np.float64)


def r_torque_limit(cur: RobotState, cfg: RewardConfig) -> np.ndarray:
    return np.sum(np.maximum(np.abs(cur.torque_raw) - cfg.torque_limit, 0.0), axis=-1)


def r_target_feet_height(cur: RobotState, t=None) -> np.ndarray:
    t = cur.gait_time if t is None else np.asarray(t, dtype=np.float64)
    target = np.stack([reference_foot_height(t, LEFT), reference_foot_height(t, RIGHT)], axis=-1)
    return np.sum(np.abs(target - cur.foot_heights), axis=-1)


def r_feet_position_x(cur: RobotState) -> np.ndarray:
    return np.abs(cur.foot_pos[:, LEFT, 0] - cur.foot_pos[:, RIGHT, 0])


def r_hip_position(cur: RobotState, cfg: RewardConfig) -> np.ndarray:
    return np.sum(np.abs(cur.joint_pos[:, list(HIP_ROLL_JOINTS)] - np.asarray(cfg.default_hip_pos)), axis=-1)


def r_feet_contact_number(cur: RobotState) -> np.ndarray:
    """+1 per foot whose contact matches the reference phase (1 = stance), -1 otherwise."""
    expected = gait_phases(cur.gait_time) == 1
    return np.sum(np.where(expected == cur.contact, 1.0, -1.0), axis=-1)


def r_lin_vel_smooth(prev: RobotState, cur: RobotState) -> np.ndarray:
    return np.linalg.norm(cur.base_lin_acc[:, :2] - prev.base_lin_acc[:, :2], axis=-1)


def r_survival(cur: RobotState) -> np.ndarray:
    return np.ones(cur.n)


def r_feet_velocity(cur: RobotState, cfg: RewardConfig) -> np.ndarray:
    vz = cur.foot_vel_world[..., 2]
    if cfg.feet_velocity_mode != "signed":
        vz = np.abs(vz)
    return np.sum(vz * (cur.foot_heights < cfg.near_ground), axis=-1)


def compute_rewards(
    prev: RobotState,
    cur: RobotState,
    cmd,
    cfg: RewardConfig = RewardConfig(),
    prev_action=None,
    action=None,
) -> RewardBreakdown:
    cmd = np.broadcast_to(np.asarray(cmd, dtype=np.float64), (cur.n, 3))
    prev_action = cur.prev_action if prev_action is None else np.asarray(prev_action)
    action = cur.action if action is None else np.asarray(action)
    terms = {
        "lin_vel_tracking": r_lin_vel_tracking(cur, cmd, cfg),
        "ang_vel_tracking": r_ang_vel_tracking(cur, cmd, cfg),
        "lin_vel_z": r_lin_vel_z(cur),
        "ang_vel_xy": r_ang_vel_xy(cur),
        "orientation": r_orientation(cur),
        "base_height": r_base_height(cur, cfg),
        "joint_acc": r_joint_acc(prev, cur, cfg),
        "action_rate": r_action_rate(prev_action, action),
        "feet_air_time": r_feet_air_time(cur, cfg),
        "joint_torque": r_joint_torque(cur),
        "feet_contact_force": r_feet_contact_force(cur, cfg),
        "feet_distance": r_feet_distance(cur, cfg),
        "unbalance_feet_height": r_unbalance_feet_height(cur),
        "unbalance_feet_air_time": r_unbalance_feet_air_time(cur),
        "collision": r_collision(cur),
        "torque_limit": r_torque_limit(cur, cfg),
        "target_feet_height": r_target_feet_height(cur),
        "feet_position_x": r_feet_position_x(cur),
        "hip_position": r_hip_position(cur, cfg),
        "feet_contact_number": r_feet_contact_number(cur),
        "lin_vel_smooth": r_lin_vel_smooth(prev, cur),
        "survival": r_survival(cur),
        "feet_velocity": r_feet_velocity(cur, cfg),
    }
    weighted = {}
    total = np.zeros(cur.n)
    for name in TERM_NAMES:
        value = terms[name]
        if not np.all(np.isfinite(value)):
            raise RewardFault(name)
        weighted[name] = cfg.weights[name] * value * cfg.dt
        total = total + weighted[name]
    return RewardBreakdown(unweighted=terms, weighted=weighted, total=total)
