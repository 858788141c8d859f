"""Slow reference implementations used only by the test-suite."""

from __future__ import annotations

import numpy as np

from pointfoot_lab.depthcam import CameraModel, camera_frame
from pointfoot_lab.terrain import HeightField


def _bilinear_clamped(heights, cell, origin, x, y):
    nx, ny = heights.shape
    gx = np.clip((x - origin[0]) / cell, 0, nx - 1)
    gy = np.clip((y - origin[1]) / cell, 0, ny - 1)
    ix = np.minimum(np.floor(gx).astype(int), nx - 2)
    iy = np.minimum(np.floor(gy).astype(int), ny - 2)
    fx, fy = gx - ix, gy - iy
    h = heights
    return (h[ix, iy] * (1 - fx) + h[ix + 1, iy] * fx) * (1 - fy) + (h[ix, iy + 1] * (1 - fx) + h[ix + 1, iy + 1] * fx) * fy


def brute_force_rays(hf: HeightField, p, dirs, tmax, iters=60):
    """Earliest t in [0, tmax] where each ray meets the surface, by exhaustive cell search.

    Every cell of the bounding box swept by each ray is visited. Along the part of
    a ray inside a cell the gap ``z - h`` is a smooth single-extremum function,
    so each cell is handled by a ternary search for its minimum followed by
    bisection to the first crossing. Returns -1 where nothing is hit.
    """
    cell, origin = hf.cell_size, np.asarray(hf.origin)
    dirs = np.atleast_2d(dirs)
    tmax = np.broadcast_to(np.asarray(tmax, dtype=float), (dirs.shape[0],))
    ray_ids, cells_i, cells_j = [], [], []
    g0 = (p[:2] - origin) / cell
    for k, d in enumerate(dirs):
        g1 = (p[:2] + d[:2] * tmax[k] - origin) / cell
        lo = np.floor(np.minimum(g0, g1)).astype(int) - 1
        hi = np.floor(np.maximum(g0, g1)).astype(int) + 1
        ii, jj = np.meshgrid(np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1), indexing="ij")
        ray_ids.append(np.full(ii.size, k))
        cells_i.append(ii.ravel())
        cells_j.append(jj.ravel())
    rid = np.concatenate(ray_ids)
    idx = (np.concatenate(cells_i), np.concatenate(cells_j))
    d = dirs[rid]

    t0 = np.zeros(rid.shape)
    t1 = tmax[rid].copy()
    for axis in (0, 1):
        gd = d[:, axis] / cell
        flat = gd == 0.0
        safe = np.where(flat, 1.0, gd)
        ta = (idx[axis] - g0[axis]) / safe
        tb = (idx[axis] + 1 - g0[axis]) / safe
        inside = (g0[axis] >= idx[axis]) & (g0[axis] <= idx[axis] + 1)
        t0 = np.where(flat, t0, np.maximum(t0, np.minimum(ta, tb)))
        t1 = np.where(flat, np.where(inside, t1, -1.0), np.minimum(t1, np.maximum(ta, tb)))
    keep = t1 >= t0
    rid, d, t0, t1 = rid[keep], d[keep], t0[keep], t1[keep]

    def gap(t):
        q = p[None, :] + t[:, None] * d
        return q[:, 2] - _bilinear_clamped(hf.heights, cell, origin, q[:, 0], q[:, 1])

    a, b = t0.copy(), t1.copy()
    for _ in range(iters):
        m1 = a + (b - a) / 3
        m2 = b - (b - a) / 3
        left = gap(m1) < gap(m2)
        b = np.where(left, m2, b)
        a = np.where(left, a, m1)
    t_min = 0.5 * (a + b)
    f0, f1, fm = gap(t0), gap(t1), gap(t_min)
    hit_start = f0 <= 0
    # first crossing lies in (t0, t_min] if the minimum dips below zero, else in (t0, t1]
    hi_b = np.where(fm <= 0, t_min, t1)
    lo_b = t0.copy()
    bracketed = ~hit_start & ((fm <= 0) | (f1 <= 0))
    for _ in range(iters):
        mid = 0.5 * (lo_b + hi_b)
        below = gap(mid) <= 0
        hi_b = np.where(below, mid, hi_b)
        lo_b = np.where(below, lo_b, mid)
    cand = np.where(hit_start, t0, np.where(bracketed, hi_b, np.inf))
    best = np.full(dirs.shape[0], np.inf)
    np.minimum.at(best, rid, cand)
    return np.where(np.isfinite(best), best, -1.0)


def brute_force_depth(hf: HeightField, base_pos, base_quat, model: CameraModel) -> np.ndarray:
    origin, rot = camera_frame(np.asarray(base_pos), np.asarray(base_quat), np.asarray(model.mount_offset), model.mount_pitch)
    cam = model.ray_directions().reshape(-1, 3)
    norm = np.linalg.norm(cam, axis=1)
    tmax = model.far / norm if model.depth_mode == "range" else np.full(norm.shape, model.far)
    t = brute_force_rays(hf, origin, cam @ rot.T, tmax)
    depth = np.where(t < 0, model.far, t * norm if model.depth_mode == "range" else t)
    return np.clip(depth, model.near, model.far).reshape(model.height, model.width)
