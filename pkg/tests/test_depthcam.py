import math

import numpy as np
import pytest

from oracles import brute_force_depth
from pointfoot_lab.depthcam import (
    CameraModel,
    CameraRandomization,
    preprocess_depth,
    randomize_camera,
    read_pgm,
    render_depth,
    write_pgm,
)
from pointfoot_lab.rotations import quat_from_euler
from pointfoot_lab.terrain import TerrainType, generate_terrain


def _down(width=9, height=9, mode="z", fov=60.0):
    return CameraModel(width, height, fov, (0.0, 0.0, 0.0), -90.0, 0.05, 2.0, mode)


def test_straight_down_over_plane_z_depth():
    hf = generate_terrain("plane", 0.0)
    img = render_depth(hf, [0.3, -0.2, 0.6, 1, 0, 0, 0], _down())
    assert img.pixels.shape == (9, 9)
    assert np.allclose(img.pixels, 0.6, atol=1e-9)
    assert abs(img.pixels[4, 4] - 0.6) < 1e-5


def test_straight_down_over_plane_range_mode():
    hf = generate_terrain("plane", 0.0)
    model = _down(mode="range")
    img = render_depth(hf, [0.0, 0.0, 0.6, 1, 0, 0, 0], model)
    rays = model.ray_directions()
    cos = 1.0 / np.linalg.norm(rays, axis=-1)
    assert np.allclose(img.pixels, 0.6 / cos, atol=1e-9)
    assert abs(img.pixels[4, 4] - 0.6) < 1e-5


def test_horizon_rays_read_far():
    hf = generate_terrain("plane", 0.0)
    model = CameraModel(8, 6, 87.0, (0.0, 0.0, 0.0), 30.0, 0.05, 2.0)  # looking up
    img = render_depth(hf, [0, 0, 0.6, 1, 0, 0, 0], model)
    assert np.all(img.pixels == 2.0)


def test_pixels_clipped_and_finite():
    hf = generate_terrain("stair", 1.0, 8.0, 0.05, 0)
    model = CameraModel(32, 24)
    img = render_depth(hf, [0.45, 0.0, 0.3, 1, 0, 0, 0], model)
    assert np.all(np.isfinite(img.pixels))
    assert img.pixels.min() >= model.near and img.pixels.max() <= model.far


@pytest.mark.parametrize("kind", list(TerrainType))
def test_matches_brute_force_oracle(kind):
    rng = np.random.default_rng(int(kind))
    hf = generate_terrain(kind, rng.uniform(0.3, 1.0), 8.0, 0.05, int(kind) + 10)
    for mode in ("z", "range"):
        for _ in range(13):
            model = CameraModel(12, 9, rng.uniform(60, 100), (0.15, 0.0, 0.05), rng.uniform(-80, -10), 0.05, 2.0, mode)
            x, y = rng.uniform(-2.5, 2.5, 2)
            ground = float(hf.heights[int((x + 4) / 0.05), int((y + 4) / 0.05)])
            q = quat_from_euler(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-math.pi, math.pi))
            pos = np.array([x, y, ground + rng.uniform(0.3, 0.8)])
            fast = render_depth(hf, np.concatenate([pos, q]), model).pixels
            slow = brute_force_depth(hf, pos, q, model)
            assert np.max(np.abs(fast - slow)) < 1e-5


def test_randomize_camera_ranges():
    base = CameraModel()
    rng = np.random.default_rng(0)
    for _ in range(200):
        m = randomize_camera(base, rng)
        assert abs(m.mount_offset[0] - base.mount_offset[0]) <= 0.005
        assert abs(m.mount_offset[1] - base.mount_offset[1]) <= 0.010
        assert m.mount_offset[2] == base.mount_offset[2]
        assert abs(m.mount_pitch - base.mount_pitch) <= 1.0
        assert 86.0 <= m.horizontal_fov <= 88.0
    assert base == CameraModel()
    zero = CameraRandomization((0, 0), (0, 0), (0, 0), (87.0, 87.0))
    assert randomize_camera(base, rng, zero) == base


@pytest.mark.parametrize("kwargs", [dict(horizontal_fov=180.0), dict(near=2.0, far=1.0), dict(width=0), dict(depth_mode="disparity")])
def test_invalid_camera(kwargs):
    with pytest.raises(ValueError):
        CameraModel(**kwargs)


def test_invalid_pose():
    with pytest.raises(ValueError):
        render_depth(generate_terrain("plane", 0.0), [0, 0, float("nan"), 1, 0, 0, 0], CameraModel())


def test_preprocess_and_pgm(tmp_path):
    pixels = np.linspace(0.0, 3.0, 96 * 128).reshape(96, 128)
    out = preprocess_depth(pixels, 0.05, 2.0)
    assert out.shape == (48, 64) and out.dtype == np.float32
    assert out.min() >= -0.5 and out.max() <= 0.5
    write_pgm(pixels, tmp_path / "d.pgm")
    back = read_pgm(tmp_path / "d.pgm")
    assert back.shape == (96, 128)
    assert np.array_equal(back, np.rint(pixels * 1000).astype(int))
