"""Reduced-order point-foot biped.

The floating base is a single rigid box that carries all of the mass. Each leg
is a hip-roll / hip-pitch / knee chain whose joints are driven by PD torque
through a reflected inertia; leg links are massless, so the legs only act on
the base through the spring-damper contacts at their foot points. Friction is
a tangential anchor spring capped by the Coulomb cone.

Every array carries a leading environment axis.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, fields

import numpy as np

from .rotations import normalize, quat_from_euler, quat_from_rotvec, quat_mul, quat_rotate_inverse, quat_to_matrix
from .terrain import HeightField, TerrainBank, heights_at

GRAVITY = 9.81
SIM_DT = 0.005
DECIMATION = 4
CONTROL_DT = SIM_DT * DECIMATION
GAIT_PERIOD = 0.5
FEET_HEIGHT_MAX = 0.03
BASE_HEIGHT_TARGET = 0.66
N_JOINTS = 6
LEFT, RIGHT = 0, 1
OBS_DIM = 29
PRIV_DIM = 11


class SimulationFault(RuntimeError):
    pass


@dataclass(frozen=True)
class BipedModel:
    base_mass: float = 12.0
    base_size: tuple[float, float, float] = (0.25, 0.3, 0.25)
    hip_offset: tuple[float, float] = (0.1, -0.2)  # (|y|, z) in the base frame
    thigh_length: float = 0.25
    shank_length: float = 0.25
    joint_inertia: float = 0.05
    contact_stiffness: float = 4000.0
    contact_damping: float = 100.0
    friction_stiffness: float = 2000.0
    friction_damping: float = 20.0  # 60 rings at SIM_DT against the base pitch inertia
    contact_threshold: float = 1.0
    default_joint_pos: tuple[float, ...] = (0.0, 0.4, -0.8, 0.0, 0.4, -0.8)
    joint_lower: tuple[float, ...] = (-0.5, -1.2, -2.4, -0.5, -1.2, -2.4)
    joint_upper: tuple[float, ...] = (0.5, 1.5, -0.05, 0.5, 1.5, -0.05)

    def inertia(self, mass) -> np.ndarray:
        a, b, c = self.base_size
        mass = np.asarray(mass, dtype=np.float64)[..., None]
        return mass / 12.0 * np.array([b * b + c * c, a * a + c * c, a * a + b * b])

    def hip_positions(self) -> np.ndarray:
        y, z = self.hip_offset
        return np.array([[0.0, y, z], [0.0, -y, z]])

    def base_corners(self) -> np.ndarray:
        a, b, c = self.base_size
        return np.array([[sx * a / 2, sy * b / 2, -c / 2] for sx in (-1, 1) for sy in (-1, 1)])


@dataclass(frozen=True)
class PDController:
    kp: float = 40.0
    kd: float = 2.0
    default_joint_pos: tuple[float, ...] = BipedModel.default_joint_pos
    action_scale: float = 0.25
    torque_limit: float = 30.0

    def __post_init__(self):
        if self.kp <= 0 or self.kd <= 0:
            raise ValueError("PD gains must be positive")


def pd_torque(action, joint_pos, joint_vel, pd: PDController = PDController(), kp_factor=1.0, kd_factor=1.0, return_raw=False):
    """PD torque towards ``default + action_scale * action``, clamped to the torque limit."""
    action = np.asarray(action, dtype=np.float64)
    joint_pos = np.asarray(joint_pos, dtype=np.float64)
    joint_vel = np.asarray(joint_vel, dtype=np.float64)
    if not (np.all(np.isfinite(action)) and np.all(np.isfinite(joint_pos)) and np.all(np.isfinite(joint_vel))):
        raise SimulationFault("non-finite PD input")
    kp = pd.kp * np.asarray(kp_factor, dtype=np.float64)[..., None]
    kd = pd.kd * np.asarray(kd_factor, dtype=np.float64)[..., None]
    target = np.asarray(pd.default_joint_pos) + pd.action_scale * action
    raw = kp * (target - joint_pos) - kd * joint_vel
    tau = np.clip(raw, -pd.torque_limit, pd.torque_limit)
    return (tau, raw) if return_raw else tau


# -- gait clock --------------------------------------------------------------

def gait_phase(t, foot: int, period: float = GAIT_PERIOD):
    """Reference phase C_i: 0 while sin(2*pi*t/T + theta_i) >= 0 (swing), else 1 (stance).

    The sine sign is evaluated on the wrapped phase so the schedule is exactly
    periodic in floating point (theta_left = 0, theta_right = pi).
    """
    frac = np.mod(np.asarray(t, dtype=np.float64), period) / period
    if foot == LEFT:
        c = np.where(frac <= 0.5, 0, 1)
    else:
        c = np.where((frac >= 0.5) | (frac == 0.0), 0, 1)
    return c if np.ndim(c) else int(c)


def gait_phases(t, period: float = GAIT_PERIOD) -> np.ndarray:
    return np.stack([gait_phase(t, LEFT, period), gait_phase(t, RIGHT, period)], axis=-1)


def reference_foot_height(t, foot: int, period: float = GAIT_PERIOD, h_max: float = FEET_HEIGHT_MAX):
    t = np.asarray(t, dtype=np.float64)
    swing = 1 - gait_phase(t, foot, period)
    h = 0.5 * np.maximum(h_max * (1.0 - np.cos(4.0 * np.pi * t / period)), 0.0) * swing
    return h if np.ndim(h) else float(h)


# -- terrain access ------------------------------------------------------------

@dataclass
class TerrainView:
    """Per-environment tile lookup shared by the stepper, scans and rewards."""

    tiles: np.ndarray
    tile_idx: np.ndarray
    origin: tuple[float, float]
    cell_size: float

    @classmethod
    def from_field(cls, hf: HeightField, n_envs: int = 1) -> "TerrainView":
        return cls(hf.heights[None], np.zeros(n_envs, dtype=np.int64), hf.origin, hf.cell_size)

    @classmethod
    def from_bank(cls, bank: TerrainBank, tile_idx) -> "TerrainView":
        return cls(bank.flat_tiles(), np.asarray(tile_idx, dtype=np.int64), bank.origin, bank.cell_size)

    def height(self, x, y, with_gradient=False):
        return heights_at(self.tiles, self.tile_idx, self.origin, self.cell_size, x, y, with_gradient)


# -- state -----------------------------------------------------------------------

@dataclass
class RobotState:
    base_pos: np.ndarray
    base_quat: np.ndarray
    base_lin_vel: np.ndarray  # world frame
    base_ang_vel: np.ndarray  # base frame
    joint_pos: np.ndarray
    joint_vel: np.ndarray
    foot_pos: np.ndarray  # base frame, (N, 2, 3)
    foot_pos_world: np.ndarray
    foot_vel_world: np.ndarray
    foot_heights: np.ndarray  # above terrain
    contact: np.ndarray
    contact_force: np.ndarray
    air_time: np.ndarray
    touchdown: np.ndarray
    touchdown_air_time: np.ndarray
    last_air_time: np.ndarray
    swing_peak: np.ndarray
    last_swing_peak: np.ndarray
    friction_anchor: np.ndarray
    anchored: np.ndarray
    gait_time: np.ndarray
    episode_time: np.ndarray
    prev_action: np.ndarray
    action: np.ndarray
    torque: np.ndarray
    torque_raw: np.ndarray
    base_lin_acc: np.ndarray  # world frame, finite difference over the last control step
    base_height: np.ndarray  # above terrain under the base
    collisions: np.ndarray
    base_contact: np.ndarray
    faulted: np.ndarray

    @property
    def n(self) -> int:
        return self.base_pos.shape[0]

    def copy(self) -> "RobotState":
        return RobotState(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def assign(self, other: "RobotState", env_ids) -> None:
        for f in fields(self):
            getattr(self, f.name)[env_ids] = getattr(other, f.name)

    def select(self, env_ids) -> "RobotState":
        return RobotState(**{f.name: getattr(self, f.name)[env_ids].copy() for f in fields(self)})

    def projected_gravity(self) -> np.ndarray:
        g = np.zeros_like(self.base_pos)
        g[:, 2] = -1.0
        return quat_rotate_inverse(self.base_quat, g)

    def base_lin_vel_body(self) -> np.ndarray:
        return quat_rotate_inverse(self.base_quat, self.base_lin_vel)


@dataclass
class DomainParams:
    payload: np.ndarray
    com_shift: np.ndarray  # metres, base frame
    kp_factor: np.ndarray
    kd_factor: np.ndarray
    friction: np.ndarray
    restitution: np.ndarray
    step_delay: np.ndarray  # seconds

    @property
    def n(self) -> int:
        return self.payload.shape[0]

    def assign(self, other: "DomainParams", env_ids) -> None:
        for f in fields(self):
            getattr(self, f.name)[env_ids] = getattr(other, f.name)


@dataclass(frozen=True)
class DomainRandomization:
    payload: tuple[float, float] = (-1.0, 2.0)
    com_shift_x: tuple[float, float] = (-0.03, 0.03)
    com_shift_y: tuple[float, float] = (-0.02, 0.02)
    com_shift_z: tuple[float, float] = (-0.03, 0.03)
    kp_factor: tuple[float, float] = (0.8, 1.2)
    kd_factor: tuple[float, float] = (0.8, 1.2)
    friction: tuple[float, float] = (0.2, 1.6)
    restitution: tuple[float, float] = (0.0, 1.0)
    step_delay: tuple[float, float] = (0.0, 0.015)
    push_velocity: float = 0.5
    push_interval: float = 10.0
    enabled: bool = True


def nominal_domain(n: int, ranges: DomainRandomization = DomainRandomization()) -> DomainParams:
    """Midpoint of every randomisation range."""
    mid = lambda r: np.full(n, 0.5 * (r[0] + r[1]))  # noqa: E731
    return DomainParams(
        payload=mid(ranges.payload),
        com_shift=np.stack([mid(ranges.com_shift_x), mid(ranges.com_shift_y), mid(ranges.com_shift_z)], axis=-1),
        kp_factor=mid(ranges.kp_factor),
        kd_factor=mid(ranges.kd_factor),
        friction=mid(ranges.friction),
        restitution=mid(ranges.restitution),
        step_delay=mid(ranges.step_delay),
    )


def default_domain(n: int) -> DomainParams:
    """Unperturbed robot: no payload, no CoM shift, unit gain factors, no delay."""
    return DomainParams(
        payload=np.zeros(n),
        com_shift=np.zeros((n, 3)),
        kp_factor=np.ones(n),
        kd_factor=np.ones(n),
        friction=np.ones(n),
        restitution=np.zeros(n),
        step_delay=np.zeros(n),
    )


def sample_domain(rng: np.random.Generator, n: int, ranges: DomainRandomization = DomainRandomization()) -> DomainParams:
    if not ranges.enabled:
        return default_domain(n)
    u = lambda r: rng.uniform(r[0], r[1], size=n)  # noqa: E731
    return DomainParams(
        payload=u(ranges.payload),
        com_shift=np.stack([u(ranges.com_shift_x), u(ranges.com_shift_y), u(ranges.com_shift_z)], axis=-1),
        kp_factor=u(ranges.kp_factor),
        kd_factor=u(ranges.kd_factor),
        friction=u(ranges.friction),
        restitution=u(ranges.restitution),
        step_delay=u(ranges.step_delay),
    )


@dataclass(frozen=True)
class CommandRanges:
    lin_vel_x: tuple[float, float] = (-0.5, 0.5)
    lin_vel_y: tuple[float, float] = (-0.2, 0.2)
    ang_vel_z: tuple[float, float] = (-0.5, 0.5)
    resample_interval: float = 5.0


def sample_commands(rng: np.random.Generator, n: int, ranges: CommandRanges = CommandRanges()) -> np.ndarray:
    return np.stack(
        [
            rng.uniform(*ranges.lin_vel_x, size=n),
            rng.uniform(*ranges.lin_vel_y, size=n),
            rng.uniform(*ranges.ang_vel_z, size=n),
        ],
        axis=-1,
    )


# -- kinematics ------------------------------------------------------------------

def leg_kinematics(joint_pos, joint_vel, model: BipedModel = BipedModel()):
    """Foot and knee positions in the base frame plus foot velocity from joint motion.

    Returns ``(foot (N,2,3), foot_rate (N,2,3), knee (N,2,3))``.
    """
    q = np.asarray(joint_pos).reshape(-1, 2, 3)
    qd = np.asarray(joint_vel).reshape(-1, 2, 3)
    l1, l2 = model.thigh_length, model.shank_length
    roll, pitch, knee = q[..., 0], q[..., 1], q[..., 2]
    droll, dpitch, dknee = qd[..., 0], qd[..., 1], qd[..., 2]
    s1, c1 = np.sin(pitch), np.cos(pitch)
    s12, c12 = np.sin(pitch + knee), np.cos(pitch + knee)
    sr, cr = np.sin(roll), np.cos(roll)

    x = -l1 * s1 - l2 * s12
    z = -l1 * c1 - l2 * c12
    dx = -l1 * c1 * dpitch - l2 * c12 * (dpitch + dknee)
    dz = l1 * s1 * dpitch + l2 * s12 * (dpitch + dknee)
    hips = model.hip_positions()
    foot = hips + np.stack([x, -z * sr, z * cr], axis=-1)
    rate = np.stack([dx, -dz * sr - z * cr * droll, dz * cr - z * sr * droll], axis=-1)
    kx, kz = -l1 * s1, -l1 * c1
    knee_pos = hips + np.stack([kx, -kz * sr, kz * cr], axis=-1)
    return foot, rate, knee_pos


def _cross(a, b):
    return np.cross(a, b)


# -- construction ------------------------------------------------------------------

def initial_state(
    n: int,
    terrain: TerrainView,
    params: DomainParams | None = None,
    model: BipedModel = BipedModel(),
    xy=None,
    yaw=None,
    joint_pos=None,
) -> RobotState:
    """Robot standing at rest in its static contact equilibrium."""
    params = default_domain(n) if params is None else params
    xy = np.zeros((n, 2)) if xy is None else np.asarray(xy, dtype=np.float64).reshape(n, 2)
    yaw = np.zeros(n) if yaw is None else np.broadcast_to(np.asarray(yaw, dtype=np.float64), (n,))
    q = np.tile(model.default_joint_pos, (n, 1)) if joint_pos is None else np.array(joint_pos, dtype=np.float64).reshape(n, 6)
    quat = quat_from_euler(np.zeros(n), np.zeros(n), yaw)
    foot_b, _, _ = leg_kinematics(q, np.zeros_like(q), model)
    rel = foot_b - params.com_shift[:, None, :]
    rot = quat_to_matrix(quat)
    rel_w = np.einsum("nij,nkj->nki", rot, rel)
    foot_xy = xy[:, None, :] + rel_w[..., :2]
    ground = terrain.height(foot_xy[..., 0], foot_xy[..., 1])
    mass = model.base_mass + params.payload
    sink = mass * GRAVITY / (2.0 * model.contact_stiffness)
    base_z = np.max(ground - rel_w[..., 2], axis=1) - sink
    pos = np.concatenate([xy, base_z[:, None]], axis=-1)
    foot_w = pos[:, None, :] + rel_w
    zeros2 = np.zeros((n, 2))
    state = RobotState(
        base_pos=pos,
        base_quat=quat,
        base_lin_vel=np.zeros((n, 3)),
        base_ang_vel=np.zeros((n, 3)),
        joint_pos=q,
        joint_vel=np.zeros((n, 6)),
        foot_pos=foot_b,
        foot_pos_world=foot_w,
        foot_vel_world=np.zeros((n, 2, 3)),
        foot_heights=foot_w[..., 2] - terrain.height(foot_w[..., 0], foot_w[..., 1]),
        contact=np.ones((n, 2), dtype=bool),
        contact_force=np.tile(mass[:, None] * GRAVITY / 2.0, (1, 2)),
        air_time=zeros2.copy(),
        touchdown=np.zeros((n, 2), dtype=bool),
        touchdown_air_time=zeros2.copy(),
        last_air_time=zeros2.copy(),
        swing_peak=zeros2.copy(),
        last_swing_peak=zeros2.copy(),
        friction_anchor=foot_w.copy(),
        anchored=np.ones((n, 2), dtype=bool),
        gait_time=np.zeros(n),
        episode_time=np.zeros(n),
        prev_action=np.zeros((n, 6)),
        action=np.zeros((n, 6)),
        torque=np.zeros((n, 6)),
        torque_raw=np.zeros((n, 6)),
        base_lin_acc=np.zeros((n, 3)),
        base_height=base_z - terrain.height(xy[:, 0], xy[:, 1]),
        collisions=np.zeros(n, dtype=np.int64),
        base_contact=np.zeros(n, dtype=bool),
        faulted=np.zeros(n, dtype=bool),
    )
    return state


# -- dynamics --------------------------------------------------------------------------

def step(
    state: RobotState,
    tau,
    terrain: TerrainView,
    params: DomainParams,
    dt: float = SIM_DT,
    model: BipedModel = BipedModel(),
    external_force=None,
) -> RobotState:
    """Advance one physics substep. Returns a new state; faulted envs are flagged, not raised."""
    s = state.copy()
    tau = np.asarray(tau, dtype=np.float64)
    n = s.n

    # joints: semi-implicit Euler, hard stops zero the velocity
    s.joint_vel = s.joint_vel + dt * tau / model.joint_inertia
    s.joint_pos = s.joint_pos + dt * s.joint_vel
    lo, hi = np.asarray(model.joint_lower), np.asarray(model.joint_upper)
    hit = (s.joint_pos < lo) | (s.joint_pos > hi)
    s.joint_pos = np.clip(s.joint_pos, lo, hi)
    s.joint_vel = np.where(hit, 0.0, s.joint_vel)

    foot_b, foot_rate, _ = leg_kinematics(s.joint_pos, s.joint_vel, model)
    rot = quat_to_matrix(s.base_quat)
    lever_b = foot_b - params.com_shift[:, None, :]
    lever_w = np.einsum("nij,nkj->nki", rot, lever_b)
    foot_w = s.base_pos[:, None, :] + lever_w
    omega_w = np.einsum("nij,nj->ni", rot, s.base_ang_vel)
    foot_v = (
        s.base_lin_vel[:, None, :]
        + _cross(np.broadcast_to(omega_w[:, None, :], lever_w.shape), lever_w)
        + np.einsum("nij,nkj->nki", rot, foot_rate)
    )

    # contact: penalty spring-damper along the terrain normal
    ground, gx, gy = terrain.height(foot_w[..., 0], foot_w[..., 1], with_gradient=True)
    normal = np.stack([-gx, -gy, np.ones_like(gx)], axis=-1)
    normal /= np.linalg.norm(normal, axis=-1, keepdims=True)
    depth = (ground - foot_w[..., 2]) * normal[..., 2]
    touching = depth > 0.0
    v_n = np.einsum("nki,nki->nk", foot_v, normal)
    damping = model.contact_damping * (1.0 - 0.5 * params.restitution)[:, None]
    f_n = np.where(touching, np.maximum(model.contact_stiffness * depth - damping * v_n, 0.0), 0.0)

    # friction: anchor spring in the tangent plane, capped at mu * f_n
    new_anchor = touching & ~s.anchored
    anchor = np.where(new_anchor[..., None], foot_w, s.friction_anchor)
    disp = foot_w - anchor
    disp_t = disp - np.einsum("nki,nki->nk", disp, normal)[..., None] * normal
    v_t = foot_v - v_n[..., None] * normal
    f_t = -model.friction_stiffness * disp_t - model.friction_damping * v_t
    cap = params.friction[:, None] * f_n
    mag = np.linalg.norm(f_t, axis=-1)
    slipping = mag > cap
    scale = np.where(slipping, cap / np.maximum(mag, 1e-12), 1.0)
    f_t = f_t * scale[..., None]
    # slide the anchor so the spring alone would deliver the capped force
    slid = foot_w + (f_t + model.friction_damping * v_t) / model.friction_stiffness
    anchor = np.where((slipping & touching)[..., None], slid, anchor)
    f_t = np.where(touching[..., None], f_t, 0.0)
    s.friction_anchor = np.where(touching[..., None], anchor, foot_w)
    s.anchored = touching
    f_foot = f_n[..., None] * normal + f_t

    # floating base
    mass = model.base_mass + params.payload
    force = f_foot.sum(axis=1)
    force[:, 2] -= mass * GRAVITY
    if external_force is not None:
        force = force + external_force
    acc = force / mass[:, None]
    s.base_pos = s.base_pos + dt * s.base_lin_vel + 0.5 * dt * dt * acc
    s.base_lin_vel = s.base_lin_vel + dt * acc

    torque_w = _cross(lever_w, f_foot).sum(axis=1)
    torque_b = np.einsum("nji,nj->ni", rot, torque_w)
    inertia = model.inertia(mass)
    w = s.base_ang_vel
    w_dot = (torque_b - _cross(w, inertia * w)) / inertia
    s.base_ang_vel = w + dt * w_dot
    s.base_quat = normalize(quat_mul(s.base_quat, quat_from_rotvec(s.base_ang_vel * dt)))

    # contact bookkeeping
    in_contact = f_n > model.contact_threshold
    touchdown = in_contact & ~s.contact
    liftoff = ~in_contact & s.contact
    s.touchdown = s.touchdown | touchdown
    s.touchdown_air_time = np.where(touchdown, s.air_time, s.touchdown_air_time)
    s.last_air_time = np.where(touchdown, s.air_time, s.last_air_time)
    s.last_swing_peak = np.where(touchdown, s.swing_peak, s.last_swing_peak)
    s.air_time = np.where(in_contact, 0.0, s.air_time + dt)
    s.contact = in_contact
    s.contact_force = np.linalg.norm(f_foot, axis=-1)

    s.foot_pos = foot_b
    s.foot_pos_world = foot_w
    s.foot_vel_world = foot_v
    s.foot_heights = foot_w[..., 2] - ground
    s.swing_peak = np.where(liftoff, s.foot_heights, np.where(in_contact, 0.0, np.maximum(s.swing_peak, s.foot_heights)))
    s.gait_time = s.gait_time + dt
    s.episode_time = s.episode_time + dt

    speed = np.linalg.norm(s.base_lin_vel, axis=-1)
    finite = np.all(np.isfinite(s.base_pos), axis=-1) & np.all(np.isfinite(s.base_quat), axis=-1) & np.isfinite(speed)
    s.faulted = s.faulted | ~finite | (np.linalg.norm(np.nan_to_num(s.base_pos, nan=1e9), axis=-1) > 100.0) | (np.nan_to_num(speed, nan=1e9) > 20.0)
    return s


def update_body_contacts(state: RobotState, terrain: TerrainView, params: DomainParams, model: BipedModel = BipedModel()) -> None:
    """Refresh base height, non-foot collision count and base-ground contact in place."""
    n = state.n
    rot = quat_to_matrix(state.base_quat)
    _, _, knee = leg_kinematics(state.joint_pos, state.joint_vel, model)
    hips = np.broadcast_to(model.hip_positions(), knee.shape)
    foot = state.foot_pos
    body_points = np.concatenate(
        [
            np.broadcast_to(model.base_corners(), (n, 4, 3)),
            knee,
            0.5 * (hips + knee),
            0.5 * (knee + foot),
        ],
        axis=1,
    ) - params.com_shift[:, None, :]
    world = state.base_pos[:, None, :] + np.einsum("nij,nkj->nki", rot, body_points)
    below = world[..., 2] < terrain.height(world[..., 0], world[..., 1])
    state.collisions = below.sum(axis=1).astype(np.int64)
    state.base_contact = below[:, :4].any(axis=1)
    state.base_height = state.base_pos[:, 2] - terrain.height(state.base_pos[:, 0], state.base_pos[:, 1])


def mechanical_energy(state: RobotState, params: DomainParams, model: BipedModel = BipedModel()) -> np.ndarray:
    mass = model.base_mass + params.payload
    inertia = model.inertia(mass)
    kinetic = 0.5 * mass * np.sum(state.base_lin_vel**2, axis=-1) + 0.5 * np.sum(inertia * state.base_ang_vel**2, axis=-1)
    return kinetic + mass * GRAVITY * state.base_pos[:, 2]


def apply_push(state: RobotState, rng: np.random.Generator, max_velocity: float = 0.5, env_ids=None) -> RobotState:
    """Add a horizontal base-velocity impulse of magnitude at most ``max_velocity``."""
    s = state.copy()
    ids = np.arange(s.n) if env_ids is None else np.asarray(env_ids)
    mag = rng.uniform(0.0, max_velocity, size=ids.shape[0])
    ang = rng.uniform(-np.pi, np.pi, size=ids.shape[0])
    s.base_lin_vel[ids, 0] += mag * np.cos(ang)
    s.base_lin_vel[ids, 1] += mag * np.sin(ang)
    return s


# -- observations ------------------------------------------------------------------------

@dataclass(frozen=True)
class ObservationNoise:
    ang_vel: float = 0.2
    gravity: float = 0.05
    joint_pos: float = 0.01
    joint_vel: float = 0.1
    enabled: bool = True


def proprio_snapshot(state: RobotState) -> np.ndarray:
    """The sensed part of o_t, ``(N, 18)``: angular velocity, gravity, joint pos, joint vel."""
    return np.concatenate([state.base_ang_vel, state.projected_gravity(), state.joint_pos, state.joint_vel], axis=-1)


def assemble_observation(
    state: RobotState,
    command,
    rng: np.random.Generator | None = None,
    noise: ObservationNoise = ObservationNoise(),
    sensed: np.ndarray | None = None,
) -> np.ndarray:
    """o_t = [w(3), g(3), theta(6), theta_dot(6), a_prev(6), c(3), p(2)].

    ``sensed`` substitutes a delayed proprio snapshot for the current one.
    """
    sensed = proprio_snapshot(state) if sensed is None else np.array(sensed, dtype=np.float64)
    if rng is not None and noise.enabled:
        scale = np.concatenate(
            [np.full(3, noise.ang_vel), np.full(3, noise.gravity), np.full(6, noise.joint_pos), np.full(6, noise.joint_vel)]
        )
        sensed = sensed + rng.uniform(-1.0, 1.0, size=sensed.shape) * scale
    command = np.broadcast_to(np.asarray(command, dtype=np.float64), (state.n, 3))
    phase = gait_phases(state.gait_time).astype(np.float64)
    return np.concatenate([sensed, state.prev_action, command, phase], axis=-1)


def _normalize(x, lo, hi):
    x = np.asarray(x, dtype=np.float64)
    if hi == lo:  # randomisation switched off for this parameter
        return np.zeros_like(x)
    return 2.0 * (x - lo) / (hi - lo) - 1.0


PRIV_VEL_SCALE = (0.5, 0.2, 0.5)


def assemble_privileged(state: RobotState, params: DomainParams, ranges: DomainRandomization = DomainRandomization()) -> np.ndarray:
    """o_p = [payload, CoM shift(3), kp factor, kd factor, friction, restitution, base velocity(3)]."""
    vel = state.base_lin_vel_body() / np.asarray(PRIV_VEL_SCALE)
    return np.concatenate(
        [
            _normalize(params.payload, *ranges.payload)[:, None],
            _normalize(params.com_shift[:, 0], *ranges.com_shift_x)[:, None],
            _normalize(params.com_shift[:, 1], *ranges.com_shift_y)[:, None],
            _normalize(params.com_shift[:, 2], *ranges.com_shift_z)[:, None],
            _normalize(params.kp_factor, *ranges.kp_factor)[:, None],
            _normalize(params.kd_factor, *ranges.kd_factor)[:, None],
            _normalize(params.friction, *ranges.friction)[:, None],
            _normalize(params.restitution, *ranges.restitution)[:, None],
            vel,
        ],
        axis=-1,
    )


# -- termination -------------------------------------------------------------------------

class Termination(enum.IntEnum):
    ALIVE = 0
    FAULT = 1
    TILT = 2
    BASE_CONTACT = 3
    CLEARANCE = 4
    TIMEOUT = 5


@dataclass(frozen=True)
class TerminationConfig:
    min_clearance: float = 0.3
    max_tilt_deg: float = 60.0
    episode_length: float = 20.0


def check_termination(state: RobotState, cfg: TerminationConfig = TerminationConfig()) -> np.ndarray:
    """Per-env :class:`Termination` code; TIMEOUT is the only non-failure ending."""
    g = state.projected_gravity()
    tilted = g[:, 2] > -np.cos(np.radians(cfg.max_tilt_deg))
    reason = np.full(state.n, Termination.ALIVE, dtype=np.int64)
    # later assignments win, so list from lowest to highest priority
    reason = np.where(state.episode_time > cfg.episode_length + 1e-9, Termination.TIMEOUT, reason)
    reason = np.where(state.base_height < cfg.min_clearance, Termination.CLEARANCE, reason)
    reason = np.where(state.base_contact, Termination.BASE_CONTACT, reason)
    reason = np.where(tilted, Termination.TILT, reason)
    reason = np.where(state.faulted, Termination.FAULT, reason)
    return reason
