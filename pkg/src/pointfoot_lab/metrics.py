"""Metrics CSV and episode trace writers."""

from __future__ import annotations

import csv
import math
from collections import deque
from pathlib import Path

import numpy as np

from .rewards import TERM_NAMES

BASE_COLUMNS = (
    "iter",
    "reward_mean",
    "ep_len_mean",
    "terrain_level",
    "kl",
    "loss_policy",
    "loss_value",
    "loss_mse",
    "loss_bt_diag",
    "loss_bt_offdiag",
)
METRIC_COLUMNS = BASE_COLUMNS + TERM_NAMES

TRACE_COLUMNS = (
    ("time",)
    + tuple(f"base_pos_{a}" for a in "xyz")
    + tuple(f"base_quat_{a}" for a in "wxyz")
    + tuple(f"base_vel_{a}" for a in "xyz")
    + tuple(f"joint_pos_{i}" for i in range(6))
    + tuple(f"joint_vel_{i}" for i in range(6))
    + tuple(f"action_{i}" for i in range(6))
    + ("reward",)
    + tuple(f"r_{name}" for name in TERM_NAMES)
)


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else repr(v)


class EpisodeWindow:
    """Rolling statistics over the most recent finished episodes."""

    def __init__(self, size: int = 100):
        self.rewards: deque = deque(maxlen=size)
        self.lengths: deque = deque(maxlen=size)
        self.terms: deque = deque(maxlen=size)

    def extend(self, episodes) -> None:
        for ep in episodes:
            self.rewards.append(ep.reward)
            self.lengths.append(ep.length)
            self.terms.append([ep.terms[k] for k in TERM_NAMES])

    def summary(self) -> dict:
        if not self.rewards:
            out = {"reward_mean": float("nan"), "ep_len_mean": float("nan")}
            out.update({k: float("nan") for k in TERM_NAMES})
            return out
        terms = np.mean(np.asarray(self.terms), axis=0)
        out = {"reward_mean": float(np.mean(self.rewards)), "ep_len_mean": float(np.mean(self.lengths))}
        out.update(dict(zip(TERM_NAMES, terms.tolist())))
        return out


class MetricsWriter:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(METRIC_COLUMNS)
        self._fh.flush()

    def write(self, row: dict) -> None:
        unknown = set(row) - set(METRIC_COLUMNS)
        if unknown:
            raise KeyError(f"unknown metric columns {sorted(unknown)}")
        self._writer.writerow([format_value(row.get(c)) for c in METRIC_COLUMNS])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class TraceWriter:
    """Per-control-step CSV trace of one environment."""

    def __init__(self, path: str | Path, env_id: int = 0):
        self.env_id = env_id
        self._fh = open(path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(TRACE_COLUMNS)
        self.time = 0.0

    def record(self, state, action, reward, weighted: dict, dt: float) -> None:
        i = self.env_id
        self.time += dt
        row = [self.time]
        row += state.base_pos[i].tolist() + state.base_quat[i].tolist() + state.base_lin_vel[i].tolist()
        row += state.joint_pos[i].tolist() + state.joint_vel[i].tolist() + np.asarray(action)[i].tolist()
        row.append(float(reward[i]))
        row += [float(weighted[k][i]) for k in TERM_NAMES]
        self._writer.writerow([format_value(v) for v in row])

    def close(self) -> None:
        self._fh.close()


def read_metrics(path: str | Path) -> dict[str, np.ndarray]:
    """Columns as float arrays (empty cells become NaN); validates the header."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty metrics file")
    header = tuple(rows[0])
    if header != METRIC_COLUMNS:
        missing = [c for c in METRIC_COLUMNS if c not in header]
        extra = [c for c in header if c not in METRIC_COLUMNS]
        raise ValueError(f"{path}: metrics schema mismatch (missing {missing}, unexpected {extra})")
    body = rows[1:]
    return {c: np.array([float(r[j]) if r[j] != "" else np.nan for r in body]) for j, c in enumerate(header)}
