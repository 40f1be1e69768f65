"""Held-out evaluation and rate-distortion sweeps."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import checkpoint
from .camera import Dataset
from .codec import compress, decompress
from .codec.stream import MAGIC as STREAM_MAGIC
from .losses import psnr, ssim
from .render import render
from .scene import GaussianSet

log = logging.getLogger(__name__)

PSNR_CAP = 99.0
RD_HEADER = ("target", "count", "compressed_bytes", "psnr", "ssim")


@dataclass
class EvalReport:
    frames: list
    mean_psnr: float
    mean_ssim: float
    checkpoint_bytes: int
    compressed_bytes: int
    n_total: int
    n_static: int
    n_dynamic: int
    target: int | None = None
    ratio: float | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    def frames_csv(self):
        lines = ["frame,time,psnr,ssim"]
        lines += [f"{f['frame']},{f['time']:.9g},{f['psnr']:.9g},{f['ssim']:.9g}"
                  for f in self.frames]
        return "\n".join(lines) + "\n"


def count_ratio(count, target):
    """Relative count error ``|count - target| / target``."""
    if target <= 0:
        raise ValueError("target must be positive")
    return abs(count - target) / target


def load_model(source):
    """A GaussianSet from a set, checkpoint bytes/path or compressed stream bytes/path.

    Returns ``(gs, stream_bytes)``; the second item is None unless the
    source was a compressed stream.
    """
    if isinstance(source, GaussianSet):
        return source, None
    data = source if isinstance(source, (bytes, bytearray)) else Path(source).read_bytes()
    data = bytes(data)
    if data[:4] == STREAM_MAGIC:
        return decompress(data), data
    return checkpoint.from_bytes(data), None


def frame_metrics(pred, gt):
    """PSNR (peak 1, capped) and SSIM of a render clipped to the displayable range."""
    p = np.clip(pred, 0.0, 1.0)
    return psnr(p, gt, PSNR_CAP), ssim(p, gt)


def evaluate(source, dataset: Dataset, target=None) -> EvalReport:
    """Render every frame of the held-out view and score it against ground truth."""
    dataset.validate()
    gs, stream = load_model(source)
    view = dataset.test_view
    frames = []
    for f, t in enumerate(dataset.times):
        gt = dataset.image(view.view_id, f)
        img = render(gs, view, float(t), background=dataset.background).image
        p, s = frame_metrics(img, gt)
        frames.append({"frame": f, "time": float(t), "psnr": float(p), "ssim": float(s)})
    raw = len(checkpoint.to_bytes(gs))
    packed = len(stream) if stream is not None else len(compress(gs).data)
    ratio = None if target is None else count_ratio(len(gs), target)
    return EvalReport(frames, float(np.mean([f["psnr"] for f in frames])),
                      float(np.mean([f["ssim"] for f in frames])), raw, packed,
                      len(gs), gs.n_static, gs.n_dynamic, target, ratio)


def write_rd(rows, csv_path, dat_path=None):
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RD_HEADER)
        for r in rows:
            w.writerow([r[0], r[1], r[2], f"{r[3]:.9g}", f"{r[4]:.9g}"])
    if dat_path is not None:
        with open(dat_path, "w") as fh:
            fh.write("# " + " ".join(RD_HEADER) + "\n")
            for r in rows:
                fh.write(f"{r[0]} {r[1]} {r[2]} {r[3]:.9g} {r[4]:.9g}\n")


def rd_sweep(dataset: Dataset, targets, base_cfg, out_dir, train_fn=None):
    """Train, compress and evaluate once per target, sequentially.

    Writes ``rd.csv`` after every leg, so a failing leg leaves the completed
    rows on disk before the error propagates, and ``rd.dat`` once all legs
    succeed. Returns the list of rows.
    """
    from .train import train

    targets = [int(t) for t in targets]
    if len(targets) < 2:
        raise ValueError("an RD sweep needs at least two targets")
    train_fn = train if train_fn is None else train_fn
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for n in targets:
        leg = out / f"n{n}"
        log.info("rd leg n_target=%d", n)
        cfg = replace(base_cfg, n_target=n)
        result = train_fn(dataset, cfg, leg)
        stream = compress(result.gaussians)
        (leg / "stream.cdgc").parent.mkdir(parents=True, exist_ok=True)
        (leg / "stream.cdgc").write_bytes(stream.data)
        rep = evaluate(stream.data, dataset, n)
        (leg / "eval.json").write_text(rep.to_json() + "\n")
        rows.append((n, rep.n_total, rep.compressed_bytes, rep.mean_psnr, rep.mean_ssim))
        write_rd(rows, out / "rd.csv")
    write_rd(rows, out / "rd.csv", out / "rd.dat")
    return rows


def read_rd(path):
    with open(path) as fh:
        r = csv.reader(fh)
        next(r)
        return [(int(a), int(b), int(c), float(d), float(e)) for a, b, c, d, e in r]
