"""Per-Gaussian importance: geometric/motion and perceptual cues fused into M."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .losses import render_loss
from .render import render, render_backward
from .scene import GaussianSet

GEOM_CUES = ("grad_position", "max_opacity", "inv_depth", "max_eigenvalue", "motion")
PERCEPTUAL_CUES = ("residual", "area", "inv_variance")
VAR_EPS = 1e-6


@dataclass
class ScorerConfig:
    w1: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)
    w2: tuple = (1.0, 1.0, 1.0)
    lambda_gm: float = 2.0
    sample_views: int = 8
    exact_loo: bool = False

    def __post_init__(self):
        if len(self.w1) != 5 or len(self.w2) != 3:
            raise ValueError("w1 needs 5 weights and w2 needs 3")
        if min(self.w1) < 0 or min(self.w2) < 0:
            raise ValueError("cue weights must be non-negative")
        if not self.lambda_gm > 0:
            raise ValueError("lambda_gm must be positive")


@dataclass
class CueTable:
    geom: np.ndarray
    perceptual: np.ndarray

    def __len__(self):
        return self.geom.shape[0]

    def columns(self):
        return dict(zip(GEOM_CUES + PERCEPTUAL_CUES,
                        np.concatenate([self.geom, self.perceptual], axis=1).T))


def max_eigenvalue(gs: GaussianSet):
    return np.max(gs.scales(), axis=1) ** 2


def motion_cue(gs: GaussianSet):
    """|T| for static Gaussians; keyframe deviation norms for dynamic ones."""
    out = np.zeros(len(gs))
    s, d = gs.static_index(), gs.dynamic_index()
    if s.size:
        out[s] = np.linalg.norm(gs.translation.astype(np.float64), axis=1)
    if d.size:
        tp = gs.traj_position.astype(np.float64)
        tr = gs.traj_rotation.astype(np.float64)
        dp = (tp - tp.mean(axis=1, keepdims=True)).reshape(d.size, -1)
        dr = (tr - tr.mean(axis=1, keepdims=True)).reshape(d.size, -1)
        out[d] = np.linalg.norm(dp, axis=1) + np.linalg.norm(dr, axis=1)
    return out


@dataclass
class CueAccumulator:
    """Collects per-sample statistics from (render, gradient, residual) triples.

    Every sample is one rendered (view, time) pair. The trainer feeds the
    renders it already makes; :func:`accumulate_cues` is the one-shot form.
    """
    n: int
    grad_sum: np.ndarray = None
    max_opacity: np.ndarray = None
    inv_depth_sum: np.ndarray = None
    visible_count: np.ndarray = None
    residual: np.ndarray = None
    area: np.ndarray = None
    contributions: list = field(default_factory=list)

    def __post_init__(self):
        n = self.n
        self.grad_sum = np.zeros((n, 3))
        self.max_opacity = np.zeros(n)
        self.inv_depth_sum = np.zeros(n)
        self.visible_count = np.zeros(n)
        self.residual = np.zeros(n)
        self.area = np.zeros(n)

    @property
    def samples(self):
        return len(self.contributions)

    def add(self, out, grads=None, residual=None):
        st = getattr(out.ctx, "st", None)
        if grads is not None:
            self.grad_sum += grads["world_position"]
        vis = out.visible
        if st is not None:
            op = st["alpha"] * st["win"]
            self.max_opacity = np.maximum(self.max_opacity, np.where(vis, op, 0.0))
        self.inv_depth_sum[vis] += 1.0 / out.depth[vis]
        self.visible_count += vis
        self.area += out.pixel_area
        self.contributions.append(out.contribution.copy())
        if residual is not None:
            self.residual += out.weighted_sum(residual)

    def geom(self, gs: GaussianSet):
        seen = self.visible_count > 0
        g = np.zeros((self.n, 5))
        g[:, 0] = np.linalg.norm(self.grad_sum, axis=1)
        g[:, 1] = self.max_opacity
        g[:, 2] = np.where(seen, self.inv_depth_sum / np.maximum(self.visible_count, 1), 0.0)
        g[:, 3] = max_eigenvalue(gs)
        g[:, 4] = motion_cue(gs)
        g[~seen, 0] = 0.0
        g[~seen, 1] = 0.0
        g[~seen, 4] = 0.0
        return g

    def perceptual(self):
        p = np.zeros((self.n, 3))
        p[:, 0] = self.residual
        p[:, 1] = self.area
        p[:, 2] = inverse_variance(self.contributions, self.n)
        return p

    def table(self, gs):
        return CueTable(self.geom(gs), self.perceptual())


def inverse_variance(contributions, n):
    if len(contributions) < 2:
        return np.zeros(n)
    return 1.0 / (np.var(np.stack(contributions), axis=0) + VAR_EPS)


def _residual_map(out, gt):
    return np.sum(np.abs(out.image - gt), axis=2)


def accumulate_cues(gs, renders, grads, residuals=None) -> CueTable:
    """Cue table from matching lists of training-mode renders and gradients."""
    acc = CueAccumulator(len(gs))
    residuals = residuals if residuals is not None else [None] * len(renders)
    for out, g, r in zip(renders, grads, residuals):
        acc.add(out, g, r)
    return acc.table(gs)


def leave_one_out(gs, views, times, background=(0.0, 0.0, 0.0)):
    """Exact cue: summed L1 image change when each Gaussian is removed in turn."""
    n = len(gs)
    base = [render(gs, v, t, background=background).image for v, t in zip(views, times)]
    out = np.zeros(n)
    keep = np.arange(n)
    for i in range(n):
        sub = gs.take(np.delete(keep, i))
        for img, v, t in zip(base, views, times):
            out[i] += np.sum(np.abs(img - render(sub, v, t, background=background).image))
    return out


def perceptual_cues(gs, views, times, renders, gts, exact_loo=False,
                    background=(0.0, 0.0, 0.0)):
    """[residual, area, inverse contribution variance] per Gaussian.

    ``renders`` must be training-mode renders of ``views`` at ``times``. The
    approximate residual weights each pixel's |pred - gt| by the Gaussian's
    blending weight there.
    """
    n = len(gs)
    p = np.zeros((n, 3))
    if exact_loo:
        p[:, 0] = leave_one_out(gs, views, times, background)
    else:
        for out, gt in zip(renders, gts):
            p[:, 0] += out.weighted_sum(_residual_map(out, gt))
    for out in renders:
        p[:, 1] += out.pixel_area
    p[:, 2] = inverse_variance([o.contribution for o in renders], n)
    return p


def minmax(x):
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (x - lo) / safe, 0.5)


def fuse(cues: CueTable, cfg: ScorerConfig = ScorerConfig()):
    """Two-level min-max fusion of the cue table into scores in [0, 1]."""
    if len(cues) == 0:
        return np.zeros(0)
    f_geom = minmax(cues.geom) @ np.asarray(cfg.w1, dtype=np.float64)
    f_perc = minmax(cues.perceptual) @ np.asarray(cfg.w2, dtype=np.float64)
    return minmax(cfg.lambda_gm * f_geom + f_perc)


def score(gs, views, times, gts, cfg: ScorerConfig = ScorerConfig(),
          lambda_ssim=0.2, background=(0.0, 0.0, 0.0)):
    """One scoring pass over the given samples; returns (M, CueTable)."""
    renders, grads, residuals = [], [], []
    for v, t, gt in zip(views, times, gts):
        out = render(gs, v, t, training_mode=True, background=background)
        lb = render_loss(out.image, gt, lambda_ssim, with_grad=True)
        renders.append(out)
        grads.append(render_backward(out, lb.grad))
        residuals.append(_residual_map(out, gt))
    acc = CueAccumulator(len(gs))
    for out, g, r in zip(renders, grads, residuals):
        acc.add(out, g, r)
    table = acc.table(gs)
    if cfg.exact_loo:
        table.perceptual[:, 0] = leave_one_out(gs, views, times, background)
    return fuse(table, cfg), table
