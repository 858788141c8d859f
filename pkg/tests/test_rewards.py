import math

import numpy as np
import pytest

from pointfoot_lab.biped import TerrainView, initial_state
from pointfoot_lab.rewards import (
    DEFAULT_WEIGHTS,
    TERM_NAMES,
    RewardConfig,
    RewardFault,
    compute_rewards,
    r_feet_air_time,
    r_feet_contact_number,
    r_feet_velocity,
    r_lin_vel_tracking,
    r_target_feet_height,
)
from pointfoot_lab.rotations import quat_from_euler
from pointfoot_lab.terrain import generate_terrain

_TERRAIN = TerrainView.from_field(generate_terrain("plane", 0.0), 1)


def make_state(**values):
    s = initial_state(1, _TERRAIN)
    for k, v in values.items():
        arr = getattr(s, k)
        arr[0] = np.asarray(v, dtype=arr.dtype)
    return s


# -- scalar oracle -------------------------------------------------------------------
# Written independently of the vectorised implementation: plain floats and loops.

def _rot(q):
    w, x, y, z = q
    return [
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ]


def _to_body(q, v):
    r = _rot(q)
    return [sum(r[i][j] * v[i] for i in range(3)) for j in range(3)]


def _phase(t, theta):
    return 0 if math.sin(2 * math.pi * t / 0.5 + theta) >= 0 else 1


def _ref_height(t, theta):
    return 0.5 * max(0.03 * (1 - math.cos(4 * math.pi * t / 0.5)), 0.0) * (1 - _phase(t, theta))


def oracle(prev, cur, cmd, prev_action, action):
    """Hand-rolled per-term values for a single environment."""
    p = {k: np.asarray(getattr(prev, k)[0]).tolist() for k in ("joint_vel", "base_lin_acc")}
    c = {f: np.asarray(getattr(cur, f)[0]).tolist() for f in cur.__dataclass_fields__}
    vb = _to_body(c["base_quat"], c["base_lin_vel"])
    g = _to_body(c["base_quat"], [0.0, 0.0, -1.0])
    w = c["base_ang_vel"]
    t = c["gait_time"]
    thetas = (0.0, math.pi)
    touch = c["touchdown"]
    any_touch = touch[0] or touch[1]
    d = {}
    d["lin_vel_tracking"] = math.exp(-4 * ((cmd[0] - vb[0]) ** 2 + (cmd[1] - vb[1]) ** 2))
    d["ang_vel_tracking"] = math.exp(-4 * (cmd[2] - w[2]) ** 2)
    d["lin_vel_z"] = vb[2] ** 2
    d["ang_vel_xy"] = w[0] ** 2 + w[1] ** 2
    d["orientation"] = g[0] ** 2 + g[1] ** 2
    d["base_height"] = abs(0.66 - c["base_height"])
    d["joint_acc"] = sum(((a - b) / 0.02) ** 2 for a, b in zip(c["joint_vel"], p["joint_vel"]))
    d["action_rate"] = sum((a - b) ** 2 for a, b in zip(action, prev_action))
    d["feet_air_time"] = sum(min(c["touchdown_air_time"][i], 0.5) - 0.1 for i in range(2) if touch[i])
    d["joint_torque"] = sum(x * x for x in c["torque"])
    d["feet_contact_force"] = sum(max(f - 120.0, 0.0) ** 2 for f in c["contact_force"])
    fl, fr = c["foot_pos"]
    d["feet_distance"] = abs(math.hypot(fl[0] - fr[0], fl[1] - fr[1]) - 0.2)
    d["unbalance_feet_height"] = abs(c["last_swing_peak"][0] - c["last_swing_peak"][1]) if any_touch else 0.0
    d["unbalance_feet_air_time"] = abs(c["last_air_time"][0] - c["last_air_time"][1]) if any_touch else 0.0
    d["collision"] = float(c["collisions"])
    d["torque_limit"] = sum(max(abs(x) - 30.0, 0.0) for x in c["torque_raw"])
    d["target_feet_height"] = sum(abs(_ref_height(t, thetas[i]) - c["foot_heights"][i]) for i in range(2))
    d["feet_position_x"] = abs(fl[0] - fr[0])
    d["hip_position"] = abs(c["joint_pos"][0]) + abs(c["joint_pos"][3])
    d["feet_contact_number"] = sum(1.0 if (_phase(t, thetas[i]) == 1) == c["contact"][i] else -1.0 for i in range(2))
    a, ap = c["base_lin_acc"], p["base_lin_acc"]
    d["lin_vel_smooth"] = math.sqrt((a[0] - ap[0]) ** 2 + (a[1] - ap[1]) ** 2)
    d["survival"] = 1.0
    d["feet_velocity"] = sum(abs(c["foot_vel_world"][i][2]) * (1.0 if c["foot_heights"][i] < 0.05 else 0.0) for i in range(2))
    weighted = {k: DEFAULT_WEIGHTS[k] * v * 0.02 for k, v in d.items()}
    return d, weighted, sum(weighted.values())


# -- fixtures --------------------------------------------------------------------------

def _fixtures():
    out = []
    # exact tracking at rest, standing height
    out.append(("standing", make_state(base_height=0.66, gait_time=0.125), make_state(), [0, 0, 0]))
    # |v - cmd| = 0.5 gives exp(-1); left foot at the 0.03 m apex target with height 0
    out.append(
        ("tracking_exp_minus_one", make_state(base_lin_vel=[0.2, 0.0, 0.0], gait_time=0.125, foot_heights=[0.0, 0.0]), make_state(), [0.5, 0.4, 0.0])
    )
    # both feet mismatch their phase at t = 0.125 (left should swing, right stance)
    out.append(("contact_mismatch", make_state(gait_time=0.125, contact=[True, False]), make_state(), [0, 0, 0]))
    out.append(("contact_match", make_state(gait_time=0.125, contact=[False, True]), make_state(), [0, 0, 0]))
    out.append(("contact_half", make_state(gait_time=0.125, contact=[True, True]), make_state(), [0, 0, 0]))
    # touchdown events
    out.append(
        (
            "touchdown",
            make_state(touchdown=[True, False], touchdown_air_time=[0.25, 0.0], last_air_time=[0.25, 0.3], last_swing_peak=[0.04, 0.01], gait_time=0.3),
            make_state(),
            [0.1, 0, 0],
        )
    )
    out.append(
        ("short_touchdown", make_state(touchdown=[True, True], touchdown_air_time=[0.05, 0.7], last_air_time=[0.05, 0.7], gait_time=0.61), make_state(), [0, 0, 0])
    )
    # foot velocity near the ground and just above the threshold
    out.append(
        ("feet_velocity", make_state(foot_heights=[0.04, 0.06], foot_vel_world=[[0, 0, 0.2], [0, 0, -0.7]], gait_time=0.2), make_state(), [0, 0, 0])
    )
    # tilted, spinning, with overloaded torques and heavy contact
    out.append(
        (
            "tilted_overloaded",
            make_state(
                base_quat=quat_from_euler(0.2, -0.1, 0.7),
                base_lin_vel=[0.3, -0.2, 0.1],
                base_ang_vel=[0.4, -0.3, 0.2],
                base_height=0.55,
                torque=[5, -10, 30, -30, 2, 0],
                torque_raw=[5, -10, 45, -33, 2, 0],
                contact_force=[150.0, 90.0],
                collisions=3,
                joint_pos=[0.1, 0.4, -0.8, -0.2, 0.5, -0.9],
                joint_vel=[1, -2, 0.5, 0, 3, -1],
                base_lin_acc=[0.5, -0.5, 1.0],
                gait_time=0.37,
                prev_action=[0.1] * 6,
                action=[0.3, -0.2, 0.0, 0.1, 0.5, -0.4],
            ),
            make_state(joint_vel=[0.5, -1.5, 0.0, 0.2, 2.0, -1.5], base_lin_acc=[0.1, 0.2, 0.0]),
            [0.4, -0.1, 0.3],
        )
    )
    # random fixtures with every field perturbed
    rng = np.random.default_rng(2024)
    for k in range(4):
        cur = make_state(
            base_quat=quat_from_euler(*rng.uniform(-0.4, 0.4, 3)),
            base_lin_vel=rng.uniform(-1, 1, 3),
            base_ang_vel=rng.uniform(-1, 1, 3),
            base_height=rng.uniform(0.4, 0.8),
            joint_pos=rng.uniform(-1, 1, 6),
            joint_vel=rng.uniform(-5, 5, 6),
            foot_pos=rng.uniform(-0.4, 0.4, (2, 3)),
            foot_vel_world=rng.uniform(-1, 1, (2, 3)),
            foot_heights=rng.uniform(0.0, 0.1, 2),
            contact=rng.random(2) < 0.5,
            contact_force=rng.uniform(0, 200, 2),
            touchdown=rng.random(2) < 0.5,
            touchdown_air_time=rng.uniform(0, 0.8, 2),
            last_air_time=rng.uniform(0, 0.8, 2),
            last_swing_peak=rng.uniform(0, 0.08, 2),
            torque=rng.uniform(-30, 30, 6),
            torque_raw=rng.uniform(-50, 50, 6),
            collisions=int(rng.integers(0, 5)),
            base_lin_acc=rng.uniform(-2, 2, 3),
            gait_time=rng.uniform(0.01, 3.0),
            prev_action=rng.uniform(-1, 1, 6),
            action=rng.uniform(-1, 1, 6),
        )
        prev = make_state(joint_vel=rng.uniform(-5, 5, 6), base_lin_acc=rng.uniform(-2, 2, 3))
        out.append((f"random_{k}", cur, prev, rng.uniform(-0.5, 0.5, 3).tolist()))
    return out


FIXTURES = _fixtures()


def test_fixture_count():
    assert len(FIXTURES) >= 10


@pytest.mark.parametrize("name,cur,prev,cmd", FIXTURES, ids=[f[0] for f in FIXTURES])
def test_fixture_matches_oracle(name, cur, prev, cmd):
    br = compute_rewards(prev, cur, cmd)
    unweighted, weighted, total = oracle(prev, cur, cmd, cur.prev_action[0].tolist(), cur.action[0].tolist())
    assert set(br.unweighted) == set(TERM_NAMES) == set(unweighted)
    for k in TERM_NAMES:
        assert abs(br.unweighted[k][0] - unweighted[k]) < 1e-9, k
        assert abs(br.weighted[k][0] - weighted[k]) < 1e-9, k
    assert abs(br.total[0] - total) < 1e-9
    assert abs(br.total[0] - sum(br.weighted[k][0] for k in TERM_NAMES)) < 1e-9


def test_worked_values():
    _, cur, prev, cmd = FIXTURES[1]
    br = compute_rewards(prev, cur, cmd)
    assert br.unweighted["lin_vel_tracking"][0] == pytest.approx(math.exp(-1), abs=1e-12)
    assert br.unweighted["target_feet_height"][0] == pytest.approx(0.03, abs=1e-12)
    values = {compute_rewards(f[2], f[1], f[3]).unweighted["feet_contact_number"][0] for f in FIXTURES[2:5]}
    assert values == {-2.0, 0.0, 2.0}


def test_twenty_three_terms_and_weights():
    assert len(TERM_NAMES) == 23
    assert DEFAULT_WEIGHTS["lin_vel_tracking"] == 7.5 and DEFAULT_WEIGHTS["unbalance_feet_air_time"] == -300.0
    with pytest.raises(ValueError):
        RewardConfig(weights={"lin_vel_tracking": 1.0})
    with pytest.raises(ValueError):
        RewardConfig(weights={**DEFAULT_WEIGHTS, "bogus": 1.0})


def test_feet_velocity_examples():
    cfg = RewardConfig()
    assert r_feet_velocity(make_state(foot_heights=[0.06, 0.06], foot_vel_world=[[0, 0, 3.0], [0, 0, -3.0]]), cfg)[0] == 0.0
    assert r_feet_velocity(make_state(foot_heights=[0.04, 0.2], foot_vel_world=[[0, 0, 0.2], [0, 0, 0]]), cfg)[0] == pytest.approx(0.2)
    assert r_feet_velocity(make_state(foot_heights=[0.02, 0.02], foot_vel_world=[[0, 0, 0.1], [0, 0, -0.1]]), cfg)[0] == pytest.approx(0.2)
    signed = RewardConfig(feet_velocity_mode="signed")
    assert r_feet_velocity(make_state(foot_heights=[0.02, 0.02], foot_vel_world=[[0, 0, 0.1], [0, 0, -0.1]]), signed)[0] == pytest.approx(0.0)


def test_target_feet_height_examples():
    assert r_target_feet_height(make_state(foot_heights=[0.01, 0.0]), 0.125)[0] == pytest.approx(0.02)
    assert r_target_feet_height(make_state(foot_heights=[0.03, 0.005]), 0.125)[0] == pytest.approx(0.005)
    assert r_target_feet_height(make_state(foot_heights=[0.0, 0.0]), 0.0)[0] == 0.0


def test_feet_air_time_examples():
    cfg = RewardConfig()
    assert r_feet_air_time(make_state(touchdown=[False, False], touchdown_air_time=[0.3, 0.3]), cfg)[0] == 0.0
    assert r_feet_air_time(make_state(touchdown=[True, False], touchdown_air_time=[0.25, 0.0]), cfg)[0] == pytest.approx(0.15)
    assert r_feet_air_time(make_state(touchdown=[True, False], touchdown_air_time=[0.05, 0.0]), cfg)[0] == pytest.approx(-0.05)


def test_contact_number_range():
    values = set()
    for t in np.linspace(0.01, 1.0, 37):
        for contact in ([True, True], [False, False], [True, False], [False, True]):
            values.add(r_feet_contact_number(make_state(gait_time=t, contact=contact))[0])
    assert values == {-2.0, 0.0, 2.0}


def test_tracking_decreases_with_error():
    cfg = RewardConfig()
    cmd = np.array([[0.3, 0.0, 0.0]])
    vals = [r_lin_vel_tracking(make_state(base_lin_vel=[0.3 + e, 0, 0]), cmd, cfg)[0] for e in (0.0, 0.1, 0.2, 0.4)]
    assert vals[0] == 1.0 and all(a > b for a, b in zip(vals, vals[1:]))


def test_penalty_signs():
    for name, cur, prev, cmd in FIXTURES:
        br = compute_rewards(prev, cur, cmd)
        for k in TERM_NAMES:
            if DEFAULT_WEIGHTS[k] < 0:
                assert br.weighted[k][0] <= 0.0
            elif k in ("lin_vel_tracking", "ang_vel_tracking"):
                assert br.weighted[k][0] >= 0.0


def test_pure_and_bit_identical():
    _, cur, prev, cmd = FIXTURES[8]
    a = compute_rewards(prev, cur, cmd)
    b = compute_rewards(prev.copy(), cur.copy(), list(cmd))
    assert all(np.array_equal(a.weighted[k], b.weighted[k]) for k in TERM_NAMES)
    assert np.array_equal(a.total, b.total)


def test_non_finite_term_names_the_term():
    cur = make_state(base_height=np.nan)
    with pytest.raises(RewardFault) as err:
        compute_rewards(make_state(), cur, [0, 0, 0])
    assert err.value.term == "base_height"
