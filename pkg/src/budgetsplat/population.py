"""Quadratic capacity schedule and importance-driven densify/prune events."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .scene import DYNAMIC, GaussianSet, quaternion_to_matrix

log = logging.getLogger(__name__)

SPLIT_SCALE_DIVISOR = 1.6
MIN_OPACITY = 0.005
MIN_GATE = 0.01


@dataclass
class ScheduleConfig:
    n_init: int
    n_target: int
    total_steps: int
    clone_split_scale_threshold: float = 0.01
    densify_interval: int = 100

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if not self.clone_split_scale_threshold > 0:
            raise ValueError("clone/split threshold must be positive")


def initial_count(n_target):
    """Population at the start of budget enforcement."""
    return max(1, int(min(n_target / 2, 4 * n_target ** 0.9)))


def step_target(j, cfg: ScheduleConfig) -> int:
    """Sub-target after event ``j``: n_init + (n_target - n_init) (j/J)^2, floored."""
    if not 0 <= j <= cfg.total_steps:
        raise ValueError(f"event index {j} outside [0, {cfg.total_steps}]")
    if j == cfg.total_steps:
        return int(cfg.n_target)
    frac = (j / cfg.total_steps) ** 2
    return int(np.floor(cfg.n_init + (cfg.n_target - cfg.n_init) * frac))


def _sample(rng, weights, k, replace=False):
    w = np.asarray(weights, dtype=np.float64)
    w = np.where(w > 0, w, 0.0)
    if not replace and np.count_nonzero(w) < k:
        # give zero-weight members a sliver of mass so k distinct picks exist
        w = w + 1e-12 * max(w.sum(), 1.0)
    if w.sum() <= 0:
        w = np.ones_like(w)
    return rng.choice(w.size, size=k, replace=replace, p=w / w.sum())


def _principal_axis(gs, idx):
    R = quaternion_to_matrix(gs.rotation[idx].astype(np.float64))
    s = gs.scales()[idx]
    k = np.argmax(s, axis=1)
    axis = R[np.arange(idx.size), :, k]
    return axis, s[np.arange(idx.size), k]


def _shift(gs, idx, offset):
    """Translate Gaussians ``idx`` (trajectories included) by ``offset``."""
    gs.position[idx] += offset
    rows = gs.side_rows()
    d = gs.kind[idx] == DYNAMIC
    if np.any(d):
        gs.traj_position[rows[idx[d]]] += offset[d][:, None, :]


def densify(gs: GaussianSet, M, room, rng, extent=1.0, threshold=0.01,
            position_grad=None):
    """Add ``room`` Gaussians by splitting or cloning parents drawn with p ~ M.

    Returns the new set and the number of splits and clones. Children are
    appended after the surviving originals and inherit every parent attribute
    (kind, extras, importance) apart from the moved position and split scale.
    """
    n = len(gs)
    if room <= 0 or n == 0:
        return gs.copy(), {"split": 0, "clone": 0, "replacement": False}
    M = np.asarray(M, dtype=np.float64)
    replace = room > n
    if replace:
        log.warning("densify room %d exceeds population %d; sampling with replacement",
                    room, n)
    parents = np.sort(_sample(rng, M, room, replace=replace))
    max_scale = gs.scales()[parents].max(axis=1)
    big = max_scale > threshold * extent
    if replace:
        big[:] = False
    split, clone = parents[big], parents[~big]
    survivors = np.setdiff1d(np.arange(n), split)
    order = np.concatenate([survivors, split, split, clone])
    out = gs.take(order)
    ns = survivors.size
    a = np.arange(ns, ns + split.size)
    b = a + split.size
    c = np.arange(ns + 2 * split.size, len(out))
    if split.size:
        axis, sig = _principal_axis(gs, split)
        off = 0.5 * sig[:, None] * axis
        _shift(out, a, off)
        _shift(out, b, -off)
        shrink = np.log(SPLIT_SCALE_DIVISOR)
        out.log_scale[a] -= shrink
        out.log_scale[b] -= shrink
    if clone.size and position_grad is not None:
        g = np.asarray(position_grad, dtype=np.float64)[clone]
        norm = np.linalg.norm(g, axis=1, keepdims=True)
        step = np.where(norm > 0, g / np.where(norm > 0, norm, 1.0), 0.0)
        sig = gs.scales()[clone].max(axis=1)
        _shift(out, c, -0.5 * sig[:, None] * step)
    out.sync_dynamic_cores()
    return out, {"split": int(split.size), "clone": int(clone.size), "replacement": replace}


def prune(gs: GaussianSet, M, excess, rng):
    """Remove ``excess`` Gaussians (p ~ 1 - M within the bottom half by M).

    Gaussians with opacity < 0.005 or gate < 0.01 are always removed and count
    towards ``excess``; when they alone exceed it, more than ``excess`` go.
    Returns the pruned set and the removed global indices.
    """
    n = len(gs)
    M = np.asarray(M, dtype=np.float64)
    forced = (gs.opacity() < MIN_OPACITY) | (gs.gate < MIN_GATE)
    removed = np.flatnonzero(forced)
    need = int(max(0, min(excess, n) - removed.size))
    if need:
        pool = np.flatnonzero(~forced)
        ranked = pool[np.lexsort((pool, M[pool]))]
        half = max(need, -(-ranked.size // 2))
        cand = ranked[:half]
        pick = cand[_sample(rng, 1.0 - M[cand], need)]
        removed = np.union1d(removed, pick)
    keep = np.setdiff1d(np.arange(n), removed)
    return gs.take(keep), removed


@dataclass
class GrowthLog:
    rows: list = field(default_factory=list)
    header = ("iteration", "event", "n_static", "n_dynamic", "total", "sub_target")

    def record(self, iteration, event, gs, sub_target):
        self.rows.append((int(iteration), int(event), gs.n_static, gs.n_dynamic,
                          len(gs), int(sub_target)))

    def write(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header)
            w.writerows(self.rows)

    @classmethod
    def read(cls, path):
        with open(path) as fh:
            r = csv.reader(fh)
            next(r)
            return cls([tuple(int(x) for x in row) for row in r])
