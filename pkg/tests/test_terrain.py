import math

import numpy as np
import pytest

from pointfoot_lab.terrain import (
    CurriculumState,
    HeightField,
    ScanPattern,
    TerrainParameterError,
    TerrainType,
    build_terrain_bank,
    curriculum_update,
    generate_terrain,
    height_scan,
    heights_at,
    sample_height,
    sample_height_and_gradient,
    write_heightfield_csv,
)


def test_plane_is_flat():
    hf = generate_terrain(TerrainType.PLANE, 0.7, 8.0, 0.05, 42)
    assert hf.heights.shape == (161, 161)
    assert np.all(hf.heights == 0.0)


def test_stair_tread_rise_at_full_difficulty():
    hf = generate_terrain("stair", 1.0, 8.0, 0.05, 7)
    profile = hf.heights[:, 80]
    rises = np.unique(np.round(np.diff(profile), 12))
    assert set(rises) <= {-0.15, 0.0, 0.15}
    assert np.isclose(np.abs(np.diff(profile)).max(), 0.15, atol=1e-12)
    assert np.all(hf.heights[:, 0] == hf.heights[:, -1])  # varies along x only


def test_slope_gradient():
    hf = generate_terrain(TerrainType.SLOPE, 0.5, 8.0, 0.05, 7)
    grad = np.abs(np.diff(hf.heights, axis=0)) / hf.cell_size
    assert abs(grad.max() - math.tan(math.radians(15.0))) < 1e-6


@pytest.mark.parametrize("kind", list(TerrainType))
@pytest.mark.parametrize("difficulty", [0.0, 0.3, 1.0])
def test_height_bounds(kind, difficulty):
    hf = generate_terrain(kind, difficulty, 8.0, 0.05, 3)
    h = np.abs(hf.heights)
    assert np.all(np.isfinite(hf.heights))
    if kind == TerrainType.ROUGH:
        assert h.max() <= 0.05 * difficulty + 1e-12
    elif kind == TerrainType.SLOPE:
        assert h.max() <= math.tan(math.radians(30 * difficulty)) * 4.0 + 1e-9
    elif kind == TerrainType.STAIR:
        assert h.max() <= 0.15 * difficulty * math.ceil(4.0 / 0.3) + 1e-9
    else:
        assert h.max() == 0.0


def test_generation_is_deterministic():
    a = generate_terrain("rough", 0.8, 8.0, 0.05, 11)
    b = generate_terrain("rough", 0.8, 8.0, 0.05, 11)
    c = generate_terrain("rough", 0.8, 8.0, 0.05, 12)
    assert np.array_equal(a.heights, b.heights)
    assert not np.array_equal(a.heights, c.heights)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(kind="slope", difficulty=1.5),
        dict(kind="slope", difficulty=-0.1),
        dict(kind="slope", difficulty=float("nan")),
        dict(kind="slope", difficulty=0.5, extent=-1.0),
        dict(kind="slope", difficulty=0.5, cell_size=0.0),
        dict(kind="lava", difficulty=0.5),
    ],
)
def test_parameter_errors(kwargs):
    with pytest.raises(TerrainParameterError):
        generate_terrain(**kwargs)


def test_sample_height_on_nodes_and_centres():
    hf = generate_terrain("rough", 1.0, 2.0, 0.05, 5)
    ix, iy = 13, 27
    x = hf.origin[0] + ix * hf.cell_size
    y = hf.origin[1] + iy * hf.cell_size
    assert sample_height(hf, x, y) == pytest.approx(hf.heights[ix, iy], abs=1e-12)
    corners = hf.heights[ix : ix + 2, iy : iy + 2].mean()
    assert sample_height(hf, x + 0.025, y + 0.025) == pytest.approx(corners, abs=1e-12)


def test_sample_height_continuous_across_cells():
    hf = generate_terrain("rough", 1.0, 2.0, 0.05, 9)
    rng = np.random.default_rng(0)
    for _ in range(200):
        i = rng.integers(1, 39)
        x_edge = hf.origin[0] + i * hf.cell_size
        y = rng.uniform(-0.9, 0.9)
        left = sample_height(hf, np.nextafter(x_edge, -np.inf), y)
        right = sample_height(hf, x_edge, y)
        assert abs(left - right) < 1e-9


def test_out_of_bounds_clamps():
    hf = generate_terrain("slope", 1.0, 8.0, 0.05, 0)
    assert sample_height(hf, 100.0, 0.0) == pytest.approx(hf.heights[-1, 80])
    assert sample_height(hf, -100.0, -100.0) == pytest.approx(hf.heights[0, 0])


def test_gradient_matches_finite_difference():
    hf = generate_terrain("rough", 1.0, 2.0, 0.05, 4)
    rng = np.random.default_rng(1)
    x, y = rng.uniform(-0.9, 0.9, 50), rng.uniform(-0.9, 0.9, 50)
    _, gx, gy = sample_height_and_gradient(hf, x, y)
    e = 1e-7
    fx = (sample_height(hf, x + e, y) - sample_height(hf, x - e, y)) / (2 * e)
    fy = (sample_height(hf, x, y + e) - sample_height(hf, x, y - e)) / (2 * e)
    assert np.allclose(gx, fx, atol=1e-5) and np.allclose(gy, fy, atol=1e-5)


def test_height_scan_flat():
    hf = generate_terrain("plane", 0.0)
    scan = height_scan(hf, [1.0, -0.5, 0.66], 0.3)
    assert scan.shape == (121,)
    assert np.allclose(scan, 0.66)
    assert ScanPattern().size == 121


def _single_step_field():
    n = 81
    heights = np.zeros((n, n))
    heights[40:, :] = 0.15  # edge between x = -0.05 and x = 0
    return HeightField((-2.0, -2.0), 0.05, heights, TerrainType.STAIR, 1.0, 0)


def test_height_scan_over_step_edge():
    hf = _single_step_field()
    scan = height_scan(hf, [0.0, 0.0, 0.66], 0.0).reshape(11, 11)
    assert set(np.round(scan.ravel(), 12)) == {0.66, 0.51}
    assert np.allclose(scan[:5], 0.66) and np.allclose(scan[5:], 0.51)
    # yaw-aligned: rotating the base by 90 degrees moves the edge to the other scan axis
    rotated = height_scan(hf, [0.0, 0.0, 0.66], math.pi / 2).reshape(11, 11)
    assert np.allclose(rotated[:, :6], 0.51) and np.allclose(rotated[:, 6:], 0.66)


def test_height_scan_clips():
    hf = _single_step_field()
    assert np.all(height_scan(hf, [0.0, 0.0, 5.0], 0.0) == 1.0)
    assert np.all(height_scan(hf, [0.0, 0.0, -5.0], 0.0) == -1.0)


def test_bank_lookup_matches_field():
    bank = build_terrain_bank(max_level=3, extent=4.0, cell_size=0.05, seed=2)
    rng = np.random.default_rng(3)
    tiles = bank.flat_tiles()
    for level in range(4):
        for kind in TerrainType:
            hf = bank.field(level, int(kind))
            x, y = rng.uniform(-2.5, 2.5, (1, 7)), rng.uniform(-2.5, 2.5, (1, 7))
            got = heights_at(tiles, [bank.tile_index(level, int(kind))], bank.origin, bank.cell_size, x, y)
            assert np.allclose(got, sample_height(hf, x, y), atol=1e-12)


def test_csv_export_round_trip(tmp_path):
    hf = generate_terrain("stair", 0.6, 2.0, 0.05, 0)
    path = tmp_path / "terrain.csv"
    write_heightfield_csv(hf, path)
    back = np.loadtxt(path, delimiter=",")
    assert back.shape == hf.heights.shape
    assert np.allclose(back, hf.heights, atol=1e-9)


# -- curriculum -----------------------------------------------------------------------

def _state(levels, max_level=9):
    levels = np.asarray(levels)
    return CurriculumState(levels, np.zeros_like(levels), max_level)


def test_curriculum_promote_demote_rules():
    s = curriculum_update(_state([3, 0, 5, 5]), [0.9, 0.1, 0.5, 0.3])
    assert s.levels.tolist() == [4, 0, 5, 4]
    assert s.promotions.tolist() == [1, 0, 0, 0]
    assert s.demotions.tolist() == [0, 1, 0, 1]


def test_curriculum_thresholds_are_strict():
    s = curriculum_update(_state([4, 4]), [0.8, 0.4])
    assert s.levels.tolist() == [4, 4]


def test_curriculum_top_level_clamp_and_resample():
    s = curriculum_update(_state([9, 9]), [0.9, 0.95])
    assert s.levels.tolist() == [9, 9]
    rng = np.random.default_rng(0)
    draws = []
    for _ in range(2000):
        draws.append(curriculum_update(_state([9]), [0.9], rng=rng, graduation="resample").levels[0])
    draws = np.asarray(draws)
    assert draws.min() == 0 and draws.max() == 9
    counts = np.bincount(draws, minlength=10)
    assert counts.min() > 120  # roughly uniform over 10 levels
    again = [curriculum_update(_state([9]), [0.9], rng=np.random.default_rng(5), graduation="resample").levels[0] for _ in range(2)]
    assert again[0] == again[1]


def test_curriculum_subset_and_errors():
    s = curriculum_update(_state([1, 2, 3]), [0.9], env_ids=[1])
    assert s.levels.tolist() == [1, 3, 3]
    with pytest.raises(TerrainParameterError):
        curriculum_update(_state([1]), [1.5])
    with pytest.raises(TerrainParameterError):
        curriculum_update(_state([9]), [0.9], graduation="resample")
    with pytest.raises(TerrainParameterError):
        CurriculumState(np.array([10]), np.array([0]), 9)


def test_curriculum_always_success_is_monotone():
    s = _state(np.zeros(16, dtype=int))
    means = [s.mean_level]
    for _ in range(15):
        s = curriculum_update(s, np.ones(16))
        means.append(s.mean_level)
    assert all(b >= a for a, b in zip(means, means[1:]))
    assert means[-1] == 9
