"""Figures written next to the CSV outputs (Agg backend, PNG)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_growth(rows, path, n_target=None):
    """Static, dynamic and total counts per event against the sub-target."""
    a = np.asarray(rows, dtype=np.float64).reshape(-1, 6)
    fig, ax = plt.subplots(figsize=(6, 4))
    it = a[:, 0]
    ax.plot(it, a[:, 5], "k--", label="sub-target")
    ax.plot(it, a[:, 4], "o-", ms=3, label="total")
    ax.plot(it, a[:, 2], "-", label="static")
    ax.plot(it, a[:, 3], "-", label="dynamic")
    if n_target is not None:
        ax.axhline(n_target, color="grey", lw=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("Gaussians")
    ax.legend()
    return _save(fig, path)


def plot_rd(rows, path):
    """PSNR against compressed size, one point per target."""
    a = np.asarray(rows, dtype=np.float64).reshape(-1, 5)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(a[:, 2] / 1024.0, a[:, 3], "o-")
    for r in a:
        ax.annotate(f"{int(r[0])}", (r[2] / 1024.0, r[3]), textcoords="offset points",
                    xytext=(4, -10), fontsize=8)
    ax.set_xlabel("compressed size (KiB)")
    ax.set_ylabel("PSNR (dB)")
    return _save(fig, path)


def plot_allocation(report, path):
    """Raw and smoothed motion histogram with detected peaks and the threshold."""
    edges = np.asarray(report.edges, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6, 4))
    if edges.size:
        centers = 0.5 * (edges[1:] + edges[:-1])
        ax.bar(centers, report.histogram, width=np.diff(edges), color="0.8", label="counts")
        ax.plot(centers, report.smoothed, "b-", label="smoothed")
        if report.peaks:
            p = np.asarray(report.peaks)
            ax.plot(centers[p], np.asarray(report.smoothed)[p], "rv", label="peaks")
    ax.axvline(report.tau_motion, color="r", ls="--",
               label="threshold (fallback)" if report.fallback else "threshold")
    ax.set_xlabel("motion magnitude")
    ax.set_ylabel("Gaussians")
    ax.legend()
    return _save(fig, path)


def plot_eval(report, path):
    """Per-frame PSNR and SSIM on the held-out view."""
    f = [r["frame"] for r in report.frames]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(f, [r["psnr"] for r in report.frames], "o-", label="PSNR")
    ax.set_xlabel("frame")
    ax.set_ylabel("PSNR (dB)")
    ax2 = ax.twinx()
    ax2.plot(f, [r["ssim"] for r in report.frames], "s--", color="tab:orange", label="SSIM")
    ax2.set_ylabel("SSIM")
    return _save(fig, path)
