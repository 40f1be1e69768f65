"""Pinhole cameras and the on-disk dataset layout.

Layout::

    scene/cameras.json
    scene/frames/v{v:02}_t{t:04}.png

``cameras.json`` keys: ``version``, ``n_frames``, ``held_out``, ``background``
and ``views`` (each with ``id``, ``width``, ``height``, ``fx``, ``fy``, ``cx``,
``cy``, ``R`` (3x3 world-to-camera rotation, row-major) and ``t``). Other
top-level keys (for example ``bounds``) are kept in :attr:`Dataset.extra`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

DATASET_VERSION = 1


@dataclass
class CameraView:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray
    t: np.ndarray
    view_id: int = 0
    time: float = 0.0

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if self.width < 8 or self.height < 8:
            raise ValueError("camera resolution must be at least 8x8")
        if np.abs(self.R @ self.R.T - np.eye(3)).max() > 1e-6:
            raise ValueError("camera rotation is not orthonormal")

    @property
    def center(self):
        return -self.R.T @ self.t

    def at_time(self, time):
        return CameraView(self.width, self.height, self.fx, self.fy, self.cx, self.cy,
                          self.R, self.t, self.view_id, float(time))

    def to_json(self):
        return {"id": self.view_id, "width": self.width, "height": self.height,
                "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "R": self.R.reshape(-1).tolist(), "t": self.t.tolist()}

    @classmethod
    def from_json(cls, d):
        return cls(d["width"], d["height"], d["fx"], d["fy"], d["cx"], d["cy"],
                   np.array(d["R"]), np.array(d["t"]), d["id"])


def look_at(eye, target, up=(0.0, -1.0, 0.0)):
    """World-to-camera (R, t) for an OpenCV-style camera (x right, y down, z forward)."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return R, -R @ eye


def pinhole(width, height, fov_deg, R, t, view_id=0):
    f = 0.5 * width / np.tan(0.5 * np.radians(fov_deg))
    return CameraView(width, height, f, f, width / 2.0, height / 2.0, R, t, view_id)


def frame_times(n_frames):
    if n_frames == 1:
        return np.zeros(1)
    return np.linspace(0.0, 1.0, n_frames)


def read_png(path):
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def write_png(path, image):
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, "RGB").save(path, format="PNG")


def write_raw(path, image):
    """Float image as ``.npy``: little-endian float32, shape (H, W, 3), C order."""
    np.save(path, np.ascontiguousarray(image, dtype="<f4"))


def read_raw(path):
    return np.load(path).astype(np.float64)


@dataclass
class Dataset:
    root: Path
    views: list
    n_frames: int
    held_out: int = 0
    background: tuple = (0.0, 0.0, 0.0)
    extra: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    def frame_path(self, v, f):
        return Path(self.root) / "frames" / f"v{v:02d}_t{f:04d}.png"

    @property
    def times(self):
        return frame_times(self.n_frames)

    @property
    def train_views(self):
        return [v for v in self.views if v.view_id != self.held_out]

    @property
    def test_view(self):
        return next(v for v in self.views if v.view_id == self.held_out)

    def image(self, v, f):
        key = (v, f)
        if key not in self._cache:
            path = self.frame_path(v, f)
            if not path.exists():
                raise FileNotFoundError(f"missing frame {path}")
            self._cache[key] = read_png(path)
        return self._cache[key]

    def validate(self):
        ids = [v.view_id for v in self.views]
        if ids.count(self.held_out) != 1:
            raise ValueError("dataset must have exactly one held-out view")
        for v in ids:
            for f in range(self.n_frames):
                if not self.frame_path(v, f).exists():
                    raise FileNotFoundError(f"missing frame {self.frame_path(v, f)}")

    @property
    def bounds(self):
        """Axis-aligned scene box if the dataset records one, else None."""
        b = self.extra.get("bounds")
        return None if b is None else np.asarray(b, dtype=np.float64)

    def save_cameras(self, extra=None):
        Path(self.root).mkdir(parents=True, exist_ok=True)
        if extra:
            self.extra.update(extra)
        doc = {**self.extra, "version": DATASET_VERSION, "n_frames": self.n_frames,
               "held_out": self.held_out, "background": list(self.background),
               "views": [v.to_json() for v in self.views]}
        with open(Path(self.root) / "cameras.json", "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, root):
        root = Path(root)
        with open(root / "cameras.json") as fh:
            doc = json.load(fh)
        if doc.get("version") != DATASET_VERSION:
            raise ValueError(f"unsupported dataset version {doc.get('version')}")
        views = [CameraView.from_json(d) for d in doc["views"]]
        known = {"version", "n_frames", "held_out", "background", "views"}
        extra = {k: v for k, v in doc.items() if k not in known}
        ds = cls(root, views, doc["n_frames"], doc["held_out"], tuple(doc["background"]),
                 extra)
        ds.validate()
        return ds
