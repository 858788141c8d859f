"""Depth images ray-cast against heightfield tiles.

Rays are marched cell by cell with a 2D DDA over the elevation grid. Inside a
cell the terrain is the bilinear patch of its four corner heights, so the ray
height gap is a quadratic in the ray parameter and the first crossing is solved
in closed form. Cells whose corner maximum lies below the ray segment are
skipped without solving.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numba
import numpy as np

from .rotations import quat_to_matrix
from .terrain import HeightField

DEPTH_MODES = ("z", "range")


@dataclass(frozen=True)
class CameraModel:
    width: int = 128
    height: int = 96
    horizontal_fov: float = 87.0
    mount_offset: tuple[float, float, float] = (0.15, 0.0, 0.05)
    mount_pitch: float = -40.0
    near: float = 0.05
    far: float = 2.0
    depth_mode: str = "z"

    def __post_init__(self):
        if not 0.0 < self.horizontal_fov < 180.0:
            raise ValueError(f"horizontal_fov must lie in (0, 180), got {self.horizontal_fov}")
        if not 0.0 <= self.near < self.far:
            raise ValueError("need 0 <= near < far")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if self.depth_mode not in DEPTH_MODES:
            raise ValueError(f"depth_mode must be one of {DEPTH_MODES}")

    @property
    def focal(self) -> float:
        return (self.width / 2.0) / math.tan(math.radians(self.horizontal_fov) / 2.0)

    def ray_directions(self) -> np.ndarray:
        """Camera-frame rays (x forward, y left, z up) with unit forward component, ``(H, W, 3)``."""
        return _pixel_rays(self.width, self.height, self.focal)


@dataclass(frozen=True)
class CameraRandomization:
    """Uniform perturbation ranges; position/pitch are offsets, fov is absolute."""

    position_x: tuple[float, float] = (-0.005, 0.005)
    position_y: tuple[float, float] = (-0.010, 0.010)
    pitch: tuple[float, float] = (-1.0, 1.0)
    fov: tuple[float, float] | None = (86.0, 88.0)


@dataclass
class DepthImage:
    pixels: np.ndarray
    timestamp: float = 0.0


def _pixel_rays(width: int, height: int, focal: float) -> np.ndarray:
    u = (np.arange(width) + 0.5 - width / 2.0) / focal
    v = (np.arange(height) + 0.5 - height / 2.0) / focal
    rays = np.empty((height, width, 3))
    rays[..., 0] = 1.0
    rays[..., 1] = -u[None, :]
    rays[..., 2] = -v[:, None]
    return rays


def _pitch_matrix(pitch_deg) -> np.ndarray:
    # negative pitch looks down: R_y(-pitch) maps forward x toward -z
    theta = -np.radians(np.asarray(pitch_deg, dtype=np.float64))
    c, s = np.cos(theta), np.sin(theta)
    zero, one = np.zeros_like(c), np.ones_like(c)
    return np.stack(
        [np.stack([c, zero, s], -1), np.stack([zero, one, zero], -1), np.stack([-s, zero, c], -1)], -2
    )


def camera_frame(base_pos, base_quat, mount_offset, mount_pitch):
    """World position and camera-to-world rotation for a batch of mounted cameras."""
    base_rot = quat_to_matrix(np.asarray(base_quat, dtype=np.float64))
    origin = np.asarray(base_pos, dtype=np.float64) + np.einsum(
        "...ij,...j->...i", base_rot, np.asarray(mount_offset, dtype=np.float64)
    )
    return origin, base_rot @ _pitch_matrix(mount_pitch)


@numba.njit(cache=True)
def _corner(heights, i, j):
    nx, ny = heights.shape
    if i < 0:
        i = 0
    elif i > nx - 1:
        i = nx - 1
    if j < 0:
        j = 0
    elif j > ny - 1:
        j = ny - 1
    return heights[i, j]


@numba.njit(cache=True)
def _quad(a, b, c, s):
    return (a * s + b) * s + c


@numba.njit(cache=True)
def _first_root(qa, qb, qc, length):
    """Smallest s in [0, length] with qa s^2 + qb s + qc <= 0, or -1."""
    if qc <= 0.0:
        return 0.0
    hi = -1.0
    if _quad(qa, qb, qc, length) <= 0.0:
        hi = length
    elif qa > 0.0:
        s_min = -qb / (2.0 * qa)
        if 0.0 < s_min < length and _quad(qa, qb, qc, s_min) <= 0.0:
            hi = s_min
    if hi < 0.0:
        return -1.0
    # exactly one crossing in (0, hi]
    root = -1.0
    if abs(qa) < 1e-14:
        if qb != 0.0:
            root = -qc / qb
    else:
        disc = qb * qb - 4.0 * qa * qc
        if disc < 0.0:
            disc = 0.0
        sq = math.sqrt(disc)
        q = -0.5 * (qb + sq) if qb >= 0.0 else -0.5 * (qb - sq)
        r1 = q / qa
        r2 = qc / q if q != 0.0 else r1
        tol = 1e-12 * (1.0 + hi)
        lo_r = min(r1, r2)
        hi_r = max(r1, r2)
        if -tol <= lo_r <= hi + tol:
            root = lo_r
        elif -tol <= hi_r <= hi + tol:
            root = hi_r
    if root < 0.0 or root > hi or _quad(qa, qb, qc, min(max(root, 0.0), hi)) > 1e-12:
        lo = 0.0
        up = hi
        for _ in range(80):
            mid = 0.5 * (lo + up)
            if _quad(qa, qb, qc, mid) <= 0.0:
                up = mid
            else:
                lo = mid
        root = up
    return min(max(root, 0.0), hi)


@numba.njit(cache=True)
def trace_ray(heights, ox, oy, cell, hmax, px, py, pz, dx, dy, dz, tmax):
    """Ray parameter of the first terrain hit within [0, tmax], or -1."""
    if dz >= 0.0 and pz > hmax:
        return -1.0
    gx = (px - ox) / cell
    gy = (py - oy) / cell
    gdx = dx / cell
    gdy = dy / cell
    i = int(math.floor(gx))
    j = int(math.floor(gy))
    inf = 1e300
    if gdx > 0.0:
        step_i = 1
        t_next_x = (i + 1 - gx) / gdx
        t_delta_x = 1.0 / gdx
    elif gdx < 0.0:
        step_i = -1
        t_next_x = (i - gx) / gdx
        t_delta_x = -1.0 / gdx
    else:
        step_i = 0
        t_next_x = inf
        t_delta_x = inf
    if gdy > 0.0:
        step_j = 1
        t_next_y = (j + 1 - gy) / gdy
        t_delta_y = 1.0 / gdy
    elif gdy < 0.0:
        step_j = -1
        t_next_y = (j - gy) / gdy
        t_delta_y = -1.0 / gdy
    else:
        step_j = 0
        t_next_y = inf
        t_delta_y = inf

    t_enter = 0.0
    while t_enter <= tmax:
        t_exit = min(t_next_x, t_next_y, tmax)
        h00 = _corner(heights, i, j)
        h10 = _corner(heights, i + 1, j)
        h01 = _corner(heights, i, j + 1)
        h11 = _corner(heights, i + 1, j + 1)
        z_enter = pz + dz * t_enter
        z_exit = pz + dz * t_exit
        top = max(max(h00, h10), max(h01, h11))
        if min(z_enter, z_exit) <= top:
            u = gx + gdx * t_enter - i
            v = gy + gdy * t_enter - j
            a = h10 - h00
            b = h01 - h00
            c = h00 - h10 - h01 + h11
            qa = -c * gdx * gdy
            qb = dz - a * gdx - b * gdy - c * (u * gdy + v * gdx)
            qc = z_enter - (h00 + a * u + b * v + c * u * v)
            s = _first_root(qa, qb, qc, t_exit - t_enter)
            if s >= 0.0:
                return t_enter + s
        if t_exit >= tmax:
            break
        if t_next_x < t_next_y:
            i += step_i
            t_enter = t_next_x
            t_next_x += t_delta_x
        else:
            j += step_j
            t_enter = t_next_y
            t_next_y += t_delta_y
    return -1.0


@numba.njit(cache=True)
def _render_kernel(tiles, tile_idx, ox, oy, cell, tile_max, origins, rotations, rays, near, far, use_range, out):
    n_env = origins.shape[0]
    height = rays.shape[1]
    width = rays.shape[2]
    for e in range(n_env):
        heights = tiles[tile_idx[e]]
        hmax = tile_max[tile_idx[e]]
        rot = rotations[e]
        px = origins[e, 0]
        py = origins[e, 1]
        pz = origins[e, 2]
        for r in range(height):
            for c in range(width):
                cx = rays[e, r, c, 0]
                cy = rays[e, r, c, 1]
                cz = rays[e, r, c, 2]
                dx = rot[0, 0] * cx + rot[0, 1] * cy + rot[0, 2] * cz
                dy = rot[1, 0] * cx + rot[1, 1] * cy + rot[1, 2] * cz
                dz = rot[2, 0] * cx + rot[2, 1] * cy + rot[2, 2] * cz
                norm = math.sqrt(cx * cx + cy * cy + cz * cz)
                tmax = far / norm if use_range else far
                t = trace_ray(heights, ox, oy, cell, hmax, px, py, pz, dx, dy, dz, tmax)
                if t < 0.0:
                    depth = far
                else:
                    depth = t * norm if use_range else t
                if depth < near:
                    depth = near
                elif depth > far:
                    depth = far
                out[e, r, c] = depth


def render_depth_batch(
    tiles: np.ndarray,
    tile_idx,
    origin: tuple[float, float],
    cell_size: float,
    base_pos,
    base_quat,
    mount_offsets,
    mount_pitches,
    fovs,
    model: CameraModel,
    tile_max: np.ndarray | None = None,
) -> np.ndarray:
    """Render one image per environment; per-env mount and fov, shared size/clip planes."""
    tiles = np.ascontiguousarray(tiles, dtype=np.float64)
    tile_idx = np.ascontiguousarray(tile_idx, dtype=np.int64)
    n = tile_idx.shape[0]
    if tile_max is None:
        tile_max = tiles.reshape(tiles.shape[0], -1).max(axis=1)
    cam_pos, cam_rot = camera_frame(base_pos, base_quat, mount_offsets, mount_pitches)
    fovs = np.broadcast_to(np.asarray(fovs, dtype=np.float64), (n,))
    focals = (model.width / 2.0) / np.tan(np.radians(fovs) / 2.0)
    unique = np.unique(focals)
    if unique.size == 1:
        rays = np.broadcast_to(_pixel_rays(model.width, model.height, unique[0]), (n, model.height, model.width, 3))
    else:
        rays = np.stack([_pixel_rays(model.width, model.height, f) for f in focals])
    out = np.empty((n, model.height, model.width))
    _render_kernel(
        tiles,
        tile_idx,
        float(origin[0]),
        float(origin[1]),
        float(cell_size),
        np.ascontiguousarray(tile_max, dtype=np.float64),
        np.ascontiguousarray(cam_pos.reshape(n, 3)),
        np.ascontiguousarray(cam_rot.reshape(n, 3, 3)),
        np.ascontiguousarray(rays),
        float(model.near),
        float(model.far),
        model.depth_mode == "range",
        out,
    )
    return out


def render_depth(hf: HeightField, base_pose, model: CameraModel, timestamp: float = 0.0) -> DepthImage:
    """``base_pose`` is ``(x, y, z, qw, qx, qy, qz)``."""
    pose = np.asarray(base_pose, dtype=np.float64)
    if pose.shape != (7,) or not np.all(np.isfinite(pose)):
        raise ValueError("base_pose must be 7 finite numbers (position + unit quaternion)")
    pixels = render_depth_batch(
        hf.heights[None],
        [0],
        hf.origin,
        hf.cell_size,
        pose[None, :3],
        pose[None, 3:] / np.linalg.norm(pose[3:]),
        np.asarray(model.mount_offset)[None],
        [model.mount_pitch],
        [model.horizontal_fov],
        model,
    )[0]
    return DepthImage(pixels=pixels, timestamp=timestamp)


def randomize_camera(model: CameraModel, rng: np.random.Generator, ranges: CameraRandomization = CameraRandomization()) -> CameraModel:
    dx = rng.uniform(*ranges.position_x)
    dy = rng.uniform(*ranges.position_y)
    dpitch = rng.uniform(*ranges.pitch)
    fov = model.horizontal_fov if ranges.fov is None else rng.uniform(*ranges.fov)
    ox, oy, oz = model.mount_offset
    return replace(
        model,
        mount_offset=(ox + dx, oy + dy, oz),
        mount_pitch=model.mount_pitch + dpitch,
        horizontal_fov=fov,
    )


def preprocess_depth(img, near: float, far: float, out_shape: tuple[int, int] = (48, 64)) -> np.ndarray:
    """Clip, map [near, far] onto [-0.5, 0.5] and area-average down to ``out_shape``."""
    pixels = img.pixels if isinstance(img, DepthImage) else np.asarray(img, dtype=np.float64)
    h, w = pixels.shape[-2:]
    oh, ow = out_shape
    if h % oh or w % ow:
        raise ValueError(f"cannot area-average {h}x{w} down to {oh}x{ow}")
    scaled = (np.clip(pixels, near, far) - near) / (far - near) - 0.5
    blocks = scaled.reshape(scaled.shape[:-2] + (oh, h // oh, ow, w // ow))
    return blocks.mean(axis=(-3, -1)).astype(np.float32)


def write_pgm(depth_m: np.ndarray, path: str | Path) -> None:
    """Plain (P2) 16-bit PGM with depth in millimetres."""
    mm = np.clip(np.rint(np.asarray(depth_m) * 1000.0), 0, 65535).astype(np.int64)
    h, w = mm.shape
    lines = ["P2", f"{w} {h}", "65535"]
    lines.extend(" ".join(str(v) for v in row) for row in mm)
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path: str | Path) -> np.ndarray:
    tokens = [t for line in Path(path).read_text().splitlines() if not line.startswith("#") for t in line.split()]
    if tokens[0] != "P2":
        raise ValueError("not a plain PGM file")
    w, h, _ = int(tokens[1]), int(tokens[2]), int(tokens[3])
    return np.asarray(tokens[4 : 4 + w * h], dtype=np.int64).reshape(h, w)
