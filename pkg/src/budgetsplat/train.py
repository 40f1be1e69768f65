"""Three-phase training: warm-up, budget enforcement, fine-tuning."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import allocation, budget, importance, population
from .checkpoint import save_checkpoint
from .losses import render_loss
from .render import NonFiniteParameter, render, render_backward
from .scene import GaussianSet, normalize_quaternions

log = logging.getLogger(__name__)

METRIC_HEADER = ("iteration", "l1", "ssim", "budget", "reg", "N_p", "n_static", "n_dynamic")

DEFAULT_LR = {
    "position": 4e-3, "translation": 4e-3, "traj_position": 4e-3,
    "rotation": 1e-2, "traj_rotation": 1e-2,
    "log_scale": 1e-2, "opacity_logit": 5e-2, "color": 1e-2,
    "importance": 5e-3, "window_start": 1e-2, "window_end": 1e-2,
}
# learning rates that scale with the scene extent
EXTENT_SCALED = ("position", "translation", "traj_position")


class TrainingAborted(RuntimeError):
    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


@dataclass
class TrainConfig:
    n_target: int = 512
    phase_iters: tuple = (100, 2000, 500)
    lambda_ssim: float = 0.2
    lambda_b: float = 1e-7
    lambda_r: float = 1e-4
    tau_init: float = 1.0
    tau_end: float = 0.01
    densify_interval: int = 100
    split_threshold: float = 0.01
    lr: dict = field(default_factory=lambda: dict(DEFAULT_LR))
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-15
    w1: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)
    w2: tuple = (1.0, 1.0, 1.0)
    lambda_gm: float = 2.0
    bins: int = allocation.DEFAULT_BINS
    fallback_alpha: float = allocation.FALLBACK_ALPHA
    n_init: int | None = None
    init_scale: float = 0.6
    sh_degree: int = 0
    keyframes: int = 4
    binarize_threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.phase_iters = tuple(int(x) for x in self.phase_iters)
        if len(self.phase_iters) != 3 or min(self.phase_iters) < 1:
            raise ValueError("phase_iters needs three positive counts")
        for name in ("lambda_ssim", "lambda_b", "lambda_r"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.n_target < 1:
            raise ValueError("n_target must be >= 1")
        if self.densify_interval < 1:
            raise ValueError("densify_interval must be >= 1")
        lr = dict(DEFAULT_LR)
        lr.update(self.lr or {})
        self.lr = lr

    @property
    def n_events(self):
        return max(1, self.phase_iters[1] // self.densify_interval)

    def to_dict(self):
        d = asdict(self)
        for k in ("phase_iters", "adam_betas", "w1", "w2"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for k in ("phase_iters", "adam_betas", "w1", "w2"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class TrainResult:
    gaussians: GaussianSet
    history: list
    growth: population.GrowthLog
    reports: list

    def metrics_csv(self):
        return format_metrics(self.history)


def format_metrics(history):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_HEADER)
    for row in history:
        w.writerow([row[0]] + [f"{x:.9g}" for x in row[1:5]] + [f"{row[5]:.6f}"]
                   + [int(x) for x in row[6:]])
    return buf.getvalue()


def regularizer(gs: GaussianSet, with_grad=False):
    """L1 shrinkage: trajectory displacements, log-scales, view-dependent colour.

    Each group contributes the mean absolute value of its entries.
    """
    total = 0.0
    grads = {}
    if gs.traj_position.size:
        tp = gs.traj_position.astype(np.float64)
        dev = tp - tp.mean(axis=1, keepdims=True)
        total += float(np.mean(np.abs(dev)))
        g = np.sign(dev) / dev.size
        grads["traj_position"] = g - g.mean(axis=1, keepdims=True)
    if len(gs):
        ls = gs.log_scale.astype(np.float64)
        total += float(np.mean(np.abs(ls)))
        grads["log_scale"] = np.sign(ls) / ls.size
        if gs.color.shape[1] > 1:
            sh = gs.color[:, 1:].astype(np.float64)
            total += float(np.mean(np.abs(sh)))
            gc = np.zeros(gs.color.shape)
            gc[:, 1:] = np.sign(sh) / sh.size
            grads["color"] = gc
    return (total, grads) if with_grad else total


def total_loss(breakdown, n_proxy, cfg: TrainConfig, gs: GaussianSet, phase):
    """Phase-gated objective: render (+ budget in II) (+ regularizer in II, III)."""
    value = breakdown.render_loss
    if phase == 2:
        value += cfg.lambda_b * budget.budget_loss(n_proxy, cfg.n_target)[0]
    if phase in (2, 3):
        value += cfg.lambda_r * regularizer(gs)
    return value


class Adam:
    """Adam over named arrays; rows of Gaussians not seen this step are left alone."""

    def __init__(self, lr, betas=(0.9, 0.999), eps=1e-15):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.reset()

    def reset(self):
        self.m, self.v, self.t = {}, {}, {}

    def step(self, params: dict, grads: dict, rows: dict):
        for name, g in grads.items():
            if name not in self.lr or name not in params:
                continue
            p = params[name]
            if p.size == 0:
                continue
            if name not in self.m or self.m[name].shape != p.shape:
                self.m[name] = np.zeros(p.shape)
                self.v[name] = np.zeros(p.shape)
                self.t[name] = np.zeros(p.shape[0])
            r = rows.get(name)
            sel = slice(None) if r is None else r
            m, v, t = self.m[name], self.v[name], self.t[name]
            t[sel] += 1
            m[sel] = self.b1 * m[sel] + (1 - self.b1) * g[sel]
            v[sel] = self.b2 * v[sel] + (1 - self.b2) * g[sel] ** 2
            tt = t[sel].reshape((-1,) + (1,) * (p.ndim - 1))
            mh = m[sel] / (1 - self.b1 ** tt)
            vh = v[sel] / (1 - self.b2 ** tt)
            p[sel] = (p[sel] - self.lr[name] * mh / (np.sqrt(vh) + self.eps)).astype(p.dtype)


def scene_extent(dataset):
    b = dataset.bounds
    if b is not None:
        return float(0.5 * np.linalg.norm(b[1] - b[0])), b
    centers = np.stack([v.center for v in dataset.views])
    r = float(np.linalg.norm(centers, axis=1).mean()) / 3
    return r, np.array([[-r] * 3, [r] * 3])


def initialize(dataset, cfg: TrainConfig, rng):
    """Static Gaussians seeded uniformly in the scene box."""
    n0 = cfg.n_init if cfg.n_init is not None else population.initial_count(cfg.n_target)
    extent, box = scene_extent(dataset)
    pos = rng.uniform(box[0], box[1], (n0, 3))
    spacing = (np.prod(box[1] - box[0]) / n0) ** (1 / 3)
    gs = GaussianSet.from_static(
        position=pos, color=rng.uniform(0.3, 0.7, (n0, 3)),
        log_scale=np.log(cfg.init_scale * spacing * np.ones(3)), opacity=0.5,
        rotation=normalize_quaternions(rng.normal(size=(n0, 4))),
        sh_degree=cfg.sh_degree, keyframes=cfg.keyframes)
    gs.importance[:] = 1.0
    gs.gate[:] = 1.0
    return gs, extent


def _param_rows(gs, visible):
    """Rows each optimizer step may touch: visible Gaussians only."""
    rows = gs.side_rows()
    vis = np.flatnonzero(visible)
    vs = vis[gs.kind[vis] == 0]
    vd = vis[gs.kind[vis] == 1]
    out = {}
    for name in ("position", "rotation", "log_scale", "opacity_logit", "color"):
        out[name] = vis
    out["translation"] = rows[vs]
    for name in ("traj_position", "traj_rotation", "window_start", "window_end"):
        out[name] = rows[vd]
    return out


def _schedule(cfg, n0):
    return population.ScheduleConfig(n_init=n0, n_target=cfg.n_target,
                                     total_steps=cfg.n_events,
                                     clone_split_scale_threshold=cfg.split_threshold,
                                     densify_interval=cfg.densify_interval)


def train(dataset, cfg: TrainConfig, out_dir=None, progress=None) -> TrainResult:
    """Run all three phases on the training views of ``dataset``."""
    dataset.validate()
    rng = np.random.default_rng(cfg.seed)
    gs, extent = initialize(dataset, cfg, rng)
    lr = {k: v * (extent if k in EXTENT_SCALED else 1.0) for k, v in cfg.lr.items()}
    opt = Adam(lr, cfg.adam_betas, cfg.adam_eps)
    p1, p2, p3 = cfg.phase_iters
    bcfg = budget.BudgetConfig(cfg.n_target, cfg.tau_init, cfg.tau_end, p1, p1 + p2 - 1,
                               cfg.lambda_b)
    sched = _schedule(cfg, len(gs))
    scfg = importance.ScorerConfig(cfg.w1, cfg.w2, cfg.lambda_gm)
    growth = population.GrowthLog()
    reports = []
    history = []
    bg = tuple(dataset.background)
    samples = [(v, f) for v in dataset.train_views for f in range(dataset.n_frames)]
    times = dataset.times
    order = []
    acc = importance.CueAccumulator(len(gs))
    last_good = gs.copy()
    event = 0
    growth.record(0, 0, gs, population.step_target(0, sched))
    total_iters = p1 + p2 + p3

    for it in range(total_iters):
        phase = 1 if it < p1 else (2 if it < p1 + p2 else 3)
        if it == p1:
            # importance starts from the fused cue score collected during warm-up
            gs.importance[:] = importance.fuse(acc.table(gs), scfg)
            acc = importance.CueAccumulator(len(gs))
            opt.reset()
        if it == p1 + p2:
            gs, _ = budget.binarize(gs, cfg.binarize_threshold)
            opt.reset()
        tau = budget.anneal_temperature(it, bcfg) if phase == 2 else None
        if phase == 2:
            gs.gate[:] = budget.gate(gs.importance, tau)

        if not order:
            order = list(rng.permutation(len(samples)))
        view, frame = samples[order.pop()]
        t = float(times[frame])
        gt = dataset.image(view.view_id, frame)
        try:
            out = render(gs, view, t, training_mode=True, background=bg)
        except NonFiniteParameter as exc:
            _abort(out_dir, last_good, f"iteration {it}: {exc}")
        lb = render_loss(out.image, gt, cfg.lambda_ssim, with_grad=True)
        grads = render_backward(out, lb.grad)

        n_proxy = budget.proxy_count(gs.gate)
        b_loss = 0.0
        reg = 0.0
        if phase in (2, 3):
            reg, reg_grads = regularizer(gs, with_grad=True)
            for k, g in reg_grads.items():
                grads[k] = grads[k] + cfg.lambda_r * g
        if phase == 2:
            b_loss, db = budget.budget_loss(n_proxy, cfg.n_target)
            g_gate = grads["gate"] + cfg.lambda_b * db
            grads["importance"] = g_gate * budget.gate_grad(gs.importance, tau)
        loss = total_loss(lb, n_proxy, cfg, gs, phase)
        if not np.isfinite(loss):
            _abort(out_dir, last_good, f"non-finite loss at iteration {it}")

        history.append((it, lb.l1, lb.ssim_loss, b_loss, reg, n_proxy,
                        gs.n_static, gs.n_dynamic))
        if phase < 3:
            acc.add(out, grads, np.sum(np.abs(out.image - gt), axis=2))

        rows = _param_rows(gs, out.visible)
        params = {k: getattr(gs, k) for k in lr}
        if phase != 2:
            grads.pop("importance", None)
        opt.step(params, grads, rows)
        gs.renormalize()
        gs.sync_dynamic_cores()

        if phase == 2 and (it - p1 + 1) % cfg.densify_interval == 0 \
                and event < sched.total_steps:
            event += 1
            gs, acc, rep = _budget_event(gs, acc, event, sched, scfg, cfg, extent, rng)
            reports.append(rep)
            growth.record(it + 1, event, gs, population.step_target(event, sched))
            opt.reset()
            last_good = gs.copy()
        if progress is not None:
            progress(it, phase, len(gs), loss)

    result = TrainResult(gs, history, growth, reports)
    if out_dir is not None:
        write_outputs(result, out_dir, cfg)
    return result


def _abort(out_dir, last_good, message):
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        save_checkpoint(last_good, Path(out_dir) / "last_good.cdgs")
    raise TrainingAborted(message, last_good)


def _budget_event(gs, acc, event, sched, scfg, cfg, extent, rng):
    """allocate -> prune -> densify, ending exactly on the event's sub-target."""
    target = population.step_target(event, sched)
    mags = gs.motion_magnitude()
    rep = allocation.analyze(mags, cfg.bins, cfg.fallback_alpha)
    gs = allocation.allocate(gs, rep, mags)
    score = importance.fuse(acc.table(gs), scfg)
    grad_pos = acc.grad_sum
    gs, removed = population.prune(gs, score, max(0, len(gs) - target), rng)
    keep = np.setdiff1d(np.arange(score.size), removed)
    score, grad_pos = score[keep], grad_pos[keep]
    room = target - len(gs)
    gs, info = population.densify(gs, score, room, rng, extent, cfg.split_threshold,
                                  grad_pos)
    rep.n_static, rep.n_dynamic = gs.n_static, gs.n_dynamic
    rep.extra.update(event=event, sub_target=target, removed=int(removed.size), **info)
    return gs, importance.CueAccumulator(len(gs)), rep


def write_outputs(result: TrainResult, out_dir, cfg: TrainConfig):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.gaussians, out / "final.cdgs")
    (out / "metrics.csv").write_text(result.metrics_csv())
    result.growth.write(out / "growth.csv")
    with open(out / "allocation.jsonl", "w") as fh:
        for rep in result.reports:
            fh.write(rep.to_json() + "\n")
