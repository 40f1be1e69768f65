"""Command-line entry point: ``budgetsplat <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 pipeline failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__

log = logging.getLogger("budgetsplat")

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2
CONFIG_SECTIONS = {"data", "scene", "train", "rd_targets"}


class UsageError(Exception):
    """Bad arguments or configuration."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def load_config(path):
    """Parse the YAML config; an absent path yields an empty config."""
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise UsageError(f"invalid YAML in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError("config must be a mapping")
    unknown = set(doc) - CONFIG_SECTIONS
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    return doc


def train_config(doc, args=None):
    """TrainConfig from the ``train`` section plus command-line overrides."""
    from .train import TrainConfig

    d = dict(doc.get("train") or {})
    if args is not None:
        for flag, key in (("n_target", "n_target"), ("tau_init", "tau_init"),
                          ("tau_end", "tau_end"), ("seed", "seed")):
            val = getattr(args, flag, None)
            if val is not None:
                d[key] = val
    try:
        return TrainConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad train config: {exc}") from exc


def scene_spec(doc, seed=None):
    from .synthetic import SyntheticSceneSpec

    d = dict(doc.get("scene") or {})
    if seed is not None:
        d["seed"] = seed
    try:
        return SyntheticSceneSpec.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad scene config: {exc}") from exc


def _dataset(args, doc):
    from .camera import Dataset

    root = args.data or doc.get("data")
    if root is None:
        raise UsageError("no dataset given (--data or 'data' in the config)")
    return Dataset.load(root)


def _progress(it, phase, n, loss):
    if it % 250 == 0:
        log.info("iter %d phase %d count %d loss %.5f", it, phase, n, loss)


# -- subcommands -----------------------------------------------------------------

def cmd_gen_synthetic(args, doc):
    from .synthetic import generate_scene

    spec = scene_spec(doc, args.seed)
    ds = generate_scene(spec, args.out)
    log.info("wrote %d views x %d frames to %s", len(ds.views), ds.n_frames, args.out)


def cmd_train(args, doc):
    from .plotting import plot_growth
    from .train import TrainingAborted, train

    cfg = train_config(doc, args)
    ds = _dataset(args, doc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(yaml.safe_dump({"train": cfg.to_dict()}, sort_keys=True))
    try:
        result = train(ds, cfg, out, progress=_progress)
    except TrainingAborted as exc:
        log.error("%s; last good checkpoint in %s", exc, out / "last_good.cdgs")
        return EXIT_FAILURE
    plot_growth(result.growth.rows, out / "growth.png", cfg.n_target)
    log.info("final count %d (target %d)", len(result.gaussians), cfg.n_target)
    return EXIT_OK


def cmd_render(args, doc):
    from .camera import write_png, write_raw
    from .evaluate import load_model
    from .render import render

    ds = _dataset(args, doc)
    gs, _ = load_model(args.checkpoint)
    views = {v.view_id: v for v in ds.views}
    if args.view not in views:
        raise UsageError(f"unknown view {args.view}; have {sorted(views)}")
    if not 0.0 <= args.time <= 1.0:
        raise UsageError("--time must lie in [0, 1]")
    img = render(gs, views[args.view], args.time, background=ds.background).image
    out = Path(args.out)
    if out.suffix == ".npy":
        write_raw(out, img)
    else:
        write_png(out, img)


def cmd_compress(args, doc):
    from .checkpoint import load_checkpoint
    from .codec import compress
    from .codec.external import encode_planes
    from .codec.stream import dynamic_planes

    gs = load_checkpoint(args.checkpoint)
    stream = compress(gs)
    Path(args.out).write_bytes(stream.data)
    log.info("%d Gaussians -> %d bytes", len(gs), len(stream))
    if args.external_video_encoder:
        side = Path(args.out).with_suffix(".planes.264")
        if encode_planes(args.external_video_encoder, dynamic_planes(gs), side) is None:
            log.info("no dynamic planes; external encoder skipped")
        else:
            log.info("external encoder output in %s", side)


def cmd_decompress(args, doc):
    from .checkpoint import save_checkpoint
    from .codec import decompress

    gs = decompress(Path(args.input).read_bytes())
    save_checkpoint(gs, args.out)


def cmd_eval(args, doc):
    from .evaluate import evaluate
    from .plotting import plot_eval

    ds = _dataset(args, doc)
    rep = evaluate(args.model, ds, args.target)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(rep.to_json() + "\n")
    (out / "frames.csv").write_text(rep.frames_csv())
    plot_eval(rep, out / "eval.png")
    print(f"PSNR {rep.mean_psnr:.3f} dB  SSIM {rep.mean_ssim:.4f}  count {rep.n_total}  "
          f"compressed {rep.compressed_bytes} B")


def cmd_rd_sweep(args, doc):
    from .evaluate import rd_sweep
    from .plotting import plot_rd

    targets = args.targets or doc.get("rd_targets")
    if not targets or len(targets) < 2:
        raise UsageError("rd-sweep needs at least two targets")
    cfg = train_config(doc, args)
    ds = _dataset(args, doc)
    rows = rd_sweep(ds, targets, cfg, args.out)
    plot_rd(rows, Path(args.out) / "rd.png")
    for r in rows:
        print(f"{r[0]:>6} {r[1]:>6} {r[2]:>9} {r[3]:8.3f} {r[4]:.4f}")


def cmd_score_dump(args, doc):
    from .evaluate import load_model
    from .importance import GEOM_CUES, PERCEPTUAL_CUES, ScorerConfig, score

    cfg = train_config(doc)
    ds = _dataset(args, doc)
    gs, _ = load_model(args.checkpoint)
    samples = [(v, f) for v in ds.train_views for f in range(ds.n_frames)]
    scfg = ScorerConfig(cfg.w1, cfg.w2, cfg.lambda_gm, exact_loo=args.exact_loo)
    M, table = score(gs, [v for v, _ in samples], [float(ds.times[f]) for _, f in samples],
                     [ds.image(v.view_id, f) for v, f in samples], scfg, cfg.lambda_ssim,
                     ds.background)
    cols = np.concatenate([table.geom, table.perceptual, M[:, None]], axis=1)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("index", "kind") + GEOM_CUES + PERCEPTUAL_CUES + ("M",))
        for i, row in enumerate(cols):
            w.writerow([i, int(gs.kind[i])] + [f"{x:.9g}" for x in row])


def cmd_alloc_plot(args, doc):
    from .allocation import analyze
    from .evaluate import load_model
    from .plotting import plot_allocation

    cfg = train_config(doc)
    gs, _ = load_model(args.checkpoint)
    rep = analyze(gs.motion_magnitude(), args.bins or cfg.bins, cfg.fallback_alpha)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "histogram.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("bin", "lo", "hi", "count", "smoothed"))
        for i, (c, s) in enumerate(zip(rep.histogram, rep.smoothed)):
            w.writerow([i, f"{rep.edges[i]:.9g}", f"{rep.edges[i + 1]:.9g}", c, f"{s:.9g}"])
    with open(out / "threshold.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("tau_motion", "alpha_t", "valley_bin", "fallback", "peaks"))
        w.writerow([f"{rep.tau_motion:.9g}", f"{rep.alpha_t:.9g}",
                    "" if rep.valley_bin is None else rep.valley_bin, int(rep.fallback),
                    " ".join(str(p) for p in rep.peaks)])
    (out / "allocation.json").write_text(json.dumps(json.loads(rep.to_json()), indent=1) + "\n")
    plot_allocation(rep, out / "allocation.png")


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic, "train": cmd_train, "render": cmd_render,
    "compress": cmd_compress, "decompress": cmd_decompress, "eval": cmd_eval,
    "rd-sweep": cmd_rd_sweep, "score-dump": cmd_score_dump, "alloc-plot": cmd_alloc_plot,
}


def build_parser():
    p = _Parser(prog="budgetsplat",
                description="Count-budgeted dynamic Gaussian splatting with a built-in codec.",
                epilog="exit codes: 0 ok, 1 usage or config error, 2 pipeline failure")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True, overrides=False):
        sp.add_argument("--config", help="YAML config file")
        if data:
            sp.add_argument("--data", help="dataset root (overrides 'data' in the config)")
        if overrides:
            sp.add_argument("--n-target", type=int)
            sp.add_argument("--tau-init", type=float)
            sp.add_argument("--tau-end", type=float)
            sp.add_argument("--seed", type=int)

    sp = sub.add_parser("gen-synthetic", help="write a synthetic dataset")
    common(sp, data=False)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("train", help="train a budgeted model")
    common(sp, overrides=True)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("render", help="render one view at one time")
    common(sp)
    sp.add_argument("--checkpoint", required=True, help="checkpoint or compressed stream")
    sp.add_argument("--view", type=int, required=True)
    sp.add_argument("--time", type=float, default=0.0, help="normalized time in [0, 1]")
    sp.add_argument("--out", required=True, help=".png, or .npy for float output")

    sp = sub.add_parser("compress", help="checkpoint -> compressed stream")
    common(sp, data=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--external-video-encoder", metavar="CMD",
                    help="x264-compatible command for the dynamic planes (side output)")

    sp = sub.add_parser("decompress", help="compressed stream -> checkpoint")
    common(sp, data=False)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("eval", help="score a model on the held-out view")
    common(sp)
    sp.add_argument("--model", required=True, help="checkpoint or compressed stream")
    sp.add_argument("--target", type=int)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("rd-sweep", help="train/compress/evaluate across targets")
    common(sp, overrides=True)
    sp.add_argument("--targets", type=int, nargs="+")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("score-dump", help="per-Gaussian importance cues as CSV")
    common(sp)
    sp.add_argument("--checkpoint", required=True, help="checkpoint or compressed stream")
    sp.add_argument("--exact-loo", action="store_true")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("alloc-plot", help="motion histogram and threshold as CSV + PNG")
    common(sp, data=False)
    sp.add_argument("--checkpoint", required=True, help="checkpoint or compressed stream")
    sp.add_argument("--bins", type=int)
    sp.add_argument("--out", required=True)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        doc = load_config(getattr(args, "config", None))
        code = COMMANDS[args.command](args, doc)
    except UsageError as exc:
        print(f"budgetsplat: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - any pipeline failure maps to exit 2
        log.debug("pipeline failure", exc_info=True)
        print(f"budgetsplat: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
