"""Procedural heightfield terrains, height queries and the terrain curriculum."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

MAX_STAIR_HEIGHT = 0.15
MAX_SLOPE_DEG = 30.0
MAX_ROUGH_AMPLITUDE = 0.05

STEP_WIDTH = 0.3
PLATFORM_HALF_WIDTH = 0.5
ROUGH_NOISE_SPACING = 0.2


class TerrainParameterError(ValueError):
    pass


class TerrainType(enum.IntEnum):
    PLANE = 0
    ROUGH = 1
    SLOPE = 2
    STAIR = 3

    @classmethod
    def parse(cls, value: "TerrainType | str | int") -> "TerrainType":
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise TerrainParameterError(f"unknown terrain kind {value!r}") from None
        return cls(value)


N_TERRAIN_TYPES = len(TerrainType)


@dataclass(frozen=True)
class HeightField:
    """Elevation grid. ``heights[ix, iy]`` is the height at ``origin + (ix, iy) * cell_size``."""

    origin: tuple[float, float]
    cell_size: float
    heights: np.ndarray
    terrain_type: TerrainType
    difficulty: float
    seed: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.heights.shape

    @property
    def extent(self) -> tuple[float, float]:
        nx, ny = self.heights.shape
        return (nx - 1) * self.cell_size, (ny - 1) * self.cell_size


def _check_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise TerrainParameterError(f"{name} must be finite, got {value}")
    return value


def generate_terrain(
    kind: TerrainType | str | int,
    difficulty: float,
    extent: float = 8.0,
    cell_size: float = 0.05,
    seed: int = 0,
) -> HeightField:
    """Build a square terrain tile centred on the local origin.

    Slopes and stairs vary along x only and rise away from a flat central
    platform, so a robot spawned at the centre meets them walking forward or
    backward. Rough terrain is uniform noise on a 0.2 m lattice, bilinearly
    upsampled so the amplitude bound holds on every node.
    """
    kind = TerrainType.parse(kind)
    difficulty = _check_finite("difficulty", difficulty)
    extent = _check_finite("extent", extent)
    cell_size = _check_finite("cell_size", cell_size)
    if not 0.0 <= difficulty <= 1.0:
        raise TerrainParameterError(f"difficulty must lie in [0, 1], got {difficulty}")
    if extent <= 0.0 or cell_size <= 0.0:
        raise TerrainParameterError("extent and cell_size must be positive")
    n_cells = int(round(extent / cell_size))
    if n_cells < 2:
        raise TerrainParameterError("extent must span at least two cells")

    n = n_cells + 1
    centre = n_cells // 2
    dist = np.abs(np.arange(n) - centre)
    platform = int(round(PLATFORM_HALF_WIDTH / cell_size))
    past_platform = np.maximum(dist - platform, 0)

    if kind == TerrainType.PLANE:
        heights = np.zeros((n, n))
    elif kind == TerrainType.SLOPE:
        grade = math.tan(math.radians(difficulty * MAX_SLOPE_DEG))
        profile = grade * cell_size * past_platform
        heights = np.repeat(profile[:, None], n, axis=1)
    elif kind == TerrainType.STAIR:
        step_cells = max(1, int(round(STEP_WIDTH / cell_size)))
        # ceil division in integer space keeps tread edges exactly on nodes
        n_steps = (past_platform + step_cells - 1) // step_cells
        profile = difficulty * MAX_STAIR_HEIGHT * n_steps
        heights = np.repeat(profile[:, None], n, axis=1)
    else:
        amp = difficulty * MAX_ROUGH_AMPLITUDE
        rng = np.random.default_rng(seed)
        stride = max(1, int(round(ROUGH_NOISE_SPACING / cell_size)))
        n_coarse = n_cells // stride + 2
        coarse = rng.uniform(-amp, amp, size=(n_coarse, n_coarse))
        idx = np.arange(n) / stride
        i0 = np.floor(idx).astype(int)
        w = idx - i0
        rows = coarse[i0] * (1.0 - w)[:, None] + coarse[i0 + 1] * w[:, None]
        heights = rows[:, i0] * (1.0 - w)[None, :] + rows[:, i0 + 1] * w[None, :]

    half = n_cells * cell_size / 2.0
    return HeightField(
        origin=(-half, -half),
        cell_size=cell_size,
        heights=np.ascontiguousarray(heights, dtype=np.float64),
        terrain_type=kind,
        difficulty=difficulty,
        seed=int(seed),
    )


def _grid_coords(hf: HeightField, x, y):
    nx, ny = hf.heights.shape
    gx = np.clip((np.asarray(x, dtype=np.float64) - hf.origin[0]) / hf.cell_size, 0.0, nx - 1.0)
    gy = np.clip((np.asarray(y, dtype=np.float64) - hf.origin[1]) / hf.cell_size, 0.0, ny - 1.0)
    ix = np.minimum(np.floor(gx).astype(np.int64), nx - 2)
    iy = np.minimum(np.floor(gy).astype(np.int64), ny - 2)
    return ix, iy, gx - ix, gy - iy


def sample_height(hf: HeightField, x, y):
    """Bilinear terrain height; queries outside the grid clamp to the border."""
    ix, iy, fx, fy = _grid_coords(hf, x, y)
    h = hf.heights
    h00, h10 = h[ix, iy], h[ix + 1, iy]
    h01, h11 = h[ix, iy + 1], h[ix + 1, iy + 1]
    out = (h00 * (1 - fx) + h10 * fx) * (1 - fy) + (h01 * (1 - fx) + h11 * fx) * fy
    return out if np.ndim(out) else float(out)


def sample_height_and_gradient(hf: HeightField, x, y):
    """Height plus (dh/dx, dh/dy) of the bilinear patch; zero slope along clamped axes."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    ix, iy, fx, fy = _grid_coords(hf, x, y)
    h = hf.heights
    h00, h10 = h[ix, iy], h[ix + 1, iy]
    h01, h11 = h[ix, iy + 1], h[ix + 1, iy + 1]
    height = (h00 * (1 - fx) + h10 * fx) * (1 - fy) + (h01 * (1 - fx) + h11 * fx) * fy
    dx = ((h10 - h00) * (1 - fy) + (h11 - h01) * fy) / hf.cell_size
    dy = ((h01 - h00) * (1 - fx) + (h11 - h10) * fx) / hf.cell_size
    nx, ny = h.shape
    x_rel = (x - hf.origin[0]) / hf.cell_size
    y_rel = (y - hf.origin[1]) / hf.cell_size
    dx = np.where((x_rel < 0) | (x_rel > nx - 1), 0.0, dx)
    dy = np.where((y_rel < 0) | (y_rel > ny - 1), 0.0, dy)
    return height, dx, dy


@dataclass(frozen=True)
class ScanPattern:
    """Square, yaw-aligned grid of scan points around the base."""

    points_per_side: int = 11
    spacing: float = 0.1

    @property
    def size(self) -> int:
        return self.points_per_side**2

    def offsets(self) -> np.ndarray:
        half = (self.points_per_side - 1) / 2.0
        ticks = (np.arange(self.points_per_side) - half) * self.spacing
        gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=-1)


def height_scan(hf: HeightField, base_pos, base_yaw, pattern: ScanPattern = ScanPattern()) -> np.ndarray:
    """Base height minus terrain height at each scan point, clipped to [-1, 1].

    ``base_pos`` is ``(..., 3)`` and ``base_yaw`` broadcasts against its
    leading dimensions; the result has shape ``(..., pattern.size)``.
    """
    base_pos = np.asarray(base_pos, dtype=np.float64)
    yaw = np.asarray(base_yaw, dtype=np.float64)[..., None]
    offsets = pattern.offsets()
    c, s = np.cos(yaw), np.sin(yaw)
    px = base_pos[..., 0:1] + c * offsets[:, 0] - s * offsets[:, 1]
    py = base_pos[..., 1:2] + s * offsets[:, 0] + c * offsets[:, 1]
    return np.clip(base_pos[..., 2:3] - sample_height(hf, px, py), -1.0, 1.0)


def write_heightfield_csv(hf: HeightField, path: str | Path) -> None:
    """Row-major dump: one x-row per line, comma-separated heights in metres."""
    np.savetxt(path, hf.heights, delimiter=",", fmt="%.9g")


@dataclass(frozen=True)
class TerrainBank:
    """All (level, type) tiles, stacked for vectorised and compiled lookups."""

    tiles: np.ndarray  # (levels, types, nx, ny)
    origin: tuple[float, float]
    cell_size: float
    max_level: int

    def tile_index(self, level, terrain_type):
        return np.asarray(level) * N_TERRAIN_TYPES + np.asarray(terrain_type)

    def flat_tiles(self) -> np.ndarray:
        nl, nt, nx, ny = self.tiles.shape
        return self.tiles.reshape(nl * nt, nx, ny)

    def field(self, level: int, terrain_type: int) -> HeightField:
        return HeightField(
            origin=self.origin,
            cell_size=self.cell_size,
            heights=self.tiles[level, terrain_type],
            terrain_type=TerrainType(terrain_type),
            difficulty=level / self.max_level if self.max_level else 0.0,
            seed=-1,
        )


def build_terrain_bank(max_level: int = 9, extent: float = 8.0, cell_size: float = 0.05, seed: int = 0) -> TerrainBank:
    tiles = []
    origin = None
    for level in range(max_level + 1):
        row = []
        difficulty = level / max_level if max_level else 0.0
        for kind in TerrainType:
            hf = generate_terrain(kind, difficulty, extent, cell_size, seed + level * N_TERRAIN_TYPES + int(kind))
            origin = hf.origin
            row.append(hf.heights)
        tiles.append(row)
    return TerrainBank(np.ascontiguousarray(tiles), origin, cell_size, max_level)


def heights_at(tiles: np.ndarray, tile_idx, origin, cell_size, x, y, with_gradient: bool = False):
    """Per-environment bilinear lookup into a stack of tiles (``tiles[k, ix, iy]``).

    ``tile_idx`` has one entry per row of ``x``/``y``; extra trailing axes of
    ``x``/``y`` are query points sharing that tile.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _, nx, ny = tiles.shape
    gx_raw = (x - origin[0]) / cell_size
    gy_raw = (y - origin[1]) / cell_size
    gx = np.clip(gx_raw, 0.0, nx - 1.0)
    gy = np.clip(gy_raw, 0.0, ny - 1.0)
    ix = np.minimum(gx.astype(np.int64), nx - 2)
    iy = np.minimum(gy.astype(np.int64), ny - 2)
    fx = gx - ix
    fy = gy - iy
    k = np.asarray(tile_idx).reshape((-1,) + (1,) * (x.ndim - 1))
    k = np.broadcast_to(k, x.shape)
    h00 = tiles[k, ix, iy]
    h10 = tiles[k, ix + 1, iy]
    h01 = tiles[k, ix, iy + 1]
    h11 = tiles[k, ix + 1, iy + 1]
    height = (h00 * (1 - fx) + h10 * fx) * (1 - fy) + (h01 * (1 - fx) + h11 * fx) * fy
    if not with_gradient:
        return height
    dx = ((h10 - h00) * (1 - fy) + (h11 - h01) * fy) / cell_size
    dy = ((h01 - h00) * (1 - fx) + (h11 - h10) * fx) / cell_size
    dx = np.where((gx_raw < 0) | (gx_raw > nx - 1), 0.0, dx)
    dy = np.where((gy_raw < 0) | (gy_raw > ny - 1), 0.0, dy)
    return height, dx, dy


@dataclass
class CurriculumState:
    levels: np.ndarray
    terrain_types: np.ndarray
    max_level: int = 9
    promotions: np.ndarray = field(default=None)
    demotions: np.ndarray = field(default=None)

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=np.int64)
        self.terrain_types = np.asarray(self.terrain_types, dtype=np.int64)
        if self.promotions is None:
            self.promotions = np.zeros_like(self.levels)
        if self.demotions is None:
            self.demotions = np.zeros_like(self.levels)
        if self.levels.min(initial=0) < 0 or self.levels.max(initial=0) > self.max_level:
            raise TerrainParameterError("curriculum level outside [0, max_level]")

    @property
    def mean_level(self) -> float:
        return float(self.levels.mean())

    def difficulty(self) -> np.ndarray:
        return self.levels / self.max_level if self.max_level else np.zeros(self.levels.shape)


def curriculum_update(
    state: CurriculumState,
    outcome,
    rng: np.random.Generator | None = None,
    env_ids=None,
    promote_above: float = 0.8,
    demote_below: float = 0.4,
    graduation: str = "clamp",
) -> CurriculumState:
    """Promote/demote the selected environments from their episode outcomes.

    ``outcome`` is the normalised episode progress in [0, 1]. With
    ``graduation="resample"`` an environment succeeding at the top level is
    moved to a uniformly drawn level; ``"clamp"`` keeps it at the top.
    """
    outcome = np.asarray(outcome, dtype=np.float64)
    if env_ids is None:
        env_ids = np.arange(state.levels.shape[0])
    env_ids = np.asarray(env_ids, dtype=np.int64)
    outcome = np.broadcast_to(outcome, env_ids.shape)
    if np.any((outcome < 0) | (outcome > 1)) or not np.all(np.isfinite(outcome)):
        raise TerrainParameterError("episode outcome must lie in [0, 1]")
    if graduation not in ("clamp", "resample"):
        raise TerrainParameterError(f"unknown graduation mode {graduation!r}")

    levels = state.levels.copy()
    promotions = state.promotions.copy()
    demotions = state.demotions.copy()
    current = levels[env_ids]
    up = outcome > promote_above
    down = outcome < demote_below
    new = np.where(up, current + 1, np.where(down, current - 1, current))
    if graduation == "resample":
        graduated = up & (current >= state.max_level)
        if np.any(graduated):
            if rng is None:
                raise TerrainParameterError("resample graduation needs an rng")
            new[graduated] = rng.integers(0, state.max_level + 1, size=int(graduated.sum()))
    levels[env_ids] = np.clip(new, 0, state.max_level)
    np.add.at(promotions, env_ids, up.astype(np.int64))
    np.add.at(demotions, env_ids, down.astype(np.int64))
    return replace(state, levels=levels, promotions=promotions, demotions=demotions)
