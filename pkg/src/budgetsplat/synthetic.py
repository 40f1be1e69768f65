"""Seeded analytic test scenes: shaded boxes and spheres plus sinusoidal movers."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .camera import Dataset, frame_times, look_at, pinhole, write_png

SCENE_VERSION = 1
# direction towards the light (world y points down)
LIGHT = np.array([0.4, -0.8, -0.45])
AMBIENT = 0.3


@dataclass
class SyntheticSceneSpec:
    extent: float = 1.0
    n_boxes: int = 3
    n_spheres: int = 3
    n_movers: int = 1
    mover_amplitude: float = 0.5
    mover_period: float = 1.0
    n_cameras: int = 7
    camera_radius: float = 3.2
    camera_arc_deg: float = 72.0
    resolution: int = 48
    fov_deg: float = 45.0
    n_frames: int = 6
    noise: float = 0.0
    floor: bool = True
    seed: int = 0
    background: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.n_cameras < 3:
            raise ValueError("need at least 3 cameras")
        if self.n_frames < 2:
            raise ValueError("need at least 2 frames")

    def to_dict(self):
        d = asdict(self)
        d["background"] = list(self.background)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "background" in d:
            d["background"] = tuple(d["background"])
        return cls(**d)


@dataclass
class Primitive:
    kind: str
    center: np.ndarray
    size: np.ndarray
    color: np.ndarray
    motion: np.ndarray = field(default_factory=lambda: np.zeros(3))
    period: float = 1.0

    def center_at(self, t):
        return self.center + np.sin(2 * np.pi * t / self.period) * self.motion


def build_primitives(spec: SyntheticSceneSpec):
    rng = np.random.default_rng(spec.seed)
    e = spec.extent
    prims = []
    if spec.floor:
        prims.append(Primitive("box", np.array([0.0, 0.9 * e, 0.0]),
                               np.array([1.3 * e, 0.05 * e, 1.3 * e]),
                               np.array([0.55, 0.55, 0.5])))
    for _ in range(spec.n_boxes):
        half = rng.uniform(0.12, 0.3, 3) * e
        c = np.array([rng.uniform(-0.8, 0.8) * e, 0.85 * e - half[1],
                      rng.uniform(-0.7, 0.7) * e])
        prims.append(Primitive("box", c, half, rng.uniform(0.15, 1.0, 3)))
    for _ in range(spec.n_spheres):
        r = rng.uniform(0.12, 0.28) * e
        c = np.array([rng.uniform(-0.8, 0.8) * e, rng.uniform(-0.4, 0.85) * e - r,
                      rng.uniform(-0.7, 0.7) * e])
        prims.append(Primitive("sphere", c, np.array([r, r, r]), rng.uniform(0.15, 1.0, 3)))
    for _ in range(spec.n_movers):
        r = 0.2 * e
        c = np.array([rng.uniform(-0.3, 0.3) * e, -0.2 * e, rng.uniform(-0.6, -0.3) * e])
        d = rng.normal(size=3)
        d[1] *= 0.3
        d /= np.linalg.norm(d)
        prims.append(Primitive("sphere", c, np.array([r, r, r]), rng.uniform(0.3, 1.0, 3),
                               motion=spec.mover_amplitude * e * d,
                               period=spec.mover_period))
    return prims


def _hit_sphere(o, d, c, r):
    oc = o - c
    b = d @ oc
    disc = b * b - (oc @ oc - r * r)
    s = np.sqrt(np.maximum(disc, 0.0))
    t = -b - s
    t = np.where(t > 1e-6, t, -b + s)
    hit = (disc >= 0) & (t > 1e-6)
    t = np.where(hit, t, np.inf)
    p = o + np.where(hit, t, 0.0)[:, None] * d
    n = (p - c) / r
    return t, n


def _hit_box(o, d, c, half):
    safe = np.where(np.abs(d) > 1e-12, d, 1e-12)
    t0 = (c - half - o) / safe
    t1 = (c + half - o) / safe
    tmin = np.minimum(t0, t1)
    tmax = np.maximum(t0, t1)
    tn = tmin.max(axis=1)
    tf = tmax.min(axis=1)
    hit = (tf >= tn) & (tf > 1e-6)
    t = np.where(tn > 1e-6, tn, tf)
    t = np.where(hit, t, np.inf)
    axis = np.argmax(tmin, axis=1)
    n = np.zeros_like(d)
    n[np.arange(d.shape[0]), axis] = -np.sign(safe[np.arange(d.shape[0]), axis])
    return t, n


def render_analytic(prims, view, t, background=(0.0, 0.0, 0.0), supersample=2):
    """Ray-cast the primitives; Lambert shading with a fixed directional light."""
    H, W, s = view.height, view.width, supersample
    off = (np.arange(s) + 0.5) / s
    cols = (np.arange(W)[:, None] + off[None, :]).reshape(-1)
    rows = (np.arange(H)[:, None] + off[None, :]).reshape(-1)
    px, py = np.meshgrid(cols, rows)
    dirs_c = np.stack([(px - view.cx) / view.fx, (py - view.cy) / view.fy,
                       np.ones_like(px)], axis=-1).reshape(-1, 3)
    dirs = dirs_c @ view.R
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    o = view.center
    best = np.full(dirs.shape[0], np.inf)
    color = np.broadcast_to(np.asarray(background, dtype=np.float64), dirs.shape).copy()
    light = LIGHT / np.linalg.norm(LIGHT)
    for p in prims:
        c = p.center_at(t)
        if p.kind == "sphere":
            th, n = _hit_sphere(o, dirs, c, p.size[0])
        else:
            th, n = _hit_box(o, dirs, c, p.size)
        closer = th < best
        shade = AMBIENT + (1 - AMBIENT) * np.maximum(n @ light, 0.0)
        color[closer] = shade[closer, None] * p.color
        best = np.where(closer, th, best)
    return color.reshape(H, s, W, s, 3).mean(axis=(1, 3))


def scene_cameras(spec: SyntheticSceneSpec):
    """Forward-facing arc; view 0 (held out) sits in the middle of the arc."""
    n = spec.n_cameras
    half = np.radians(spec.camera_arc_deg) / 2
    others = np.linspace(-half, half, n - 1 if n % 2 == 0 else n)
    if n % 2:
        others = np.delete(others, n // 2)
    angles = np.concatenate([[0.0], others])
    views = []
    for i, a in enumerate(angles):
        eye = spec.camera_radius * spec.extent * np.array([np.sin(a), -0.35, -np.cos(a)])
        R, tvec = look_at(eye, [0.0, 0.2 * spec.extent, 0.0])
        views.append(pinhole(spec.resolution, spec.resolution, spec.fov_deg, R, tvec, i))
    return views


def generate_scene(spec: SyntheticSceneSpec, root) -> Dataset:
    """Write every (view, frame) of the scene to ``root`` and return the dataset."""
    root = Path(root)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    prims = build_primitives(spec)
    views = scene_cameras(spec)
    ds = Dataset(root, views, spec.n_frames, 0, tuple(spec.background))
    noise_rng = np.random.default_rng([spec.seed, 1])
    for v in views:
        for f, t in enumerate(frame_times(spec.n_frames)):
            img = render_analytic(prims, v, t, spec.background)
            if spec.noise > 0:
                img = img + noise_rng.normal(scale=spec.noise, size=img.shape)
            write_png(ds.frame_path(v.view_id, f), np.clip(img, 0, 1))
    ds.save_cameras(extra={"bounds": scene_bounds(spec), "scene": spec.to_dict(),
                           "scene_version": SCENE_VERSION})
    return ds


def scene_bounds(spec: SyntheticSceneSpec):
    e = spec.extent
    return [[-1.3 * e, -0.8 * e, -1.3 * e], [1.3 * e, 0.95 * e, 1.3 * e]]
