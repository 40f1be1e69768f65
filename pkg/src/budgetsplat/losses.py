"""Photometric losses with analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x * x / (2 * sigma * sigma))
    return g / g.sum()


def _filter(img, win):
    # zero-padded 'same' filtering over both spatial axes; self-adjoint for a symmetric window
    out = correlate1d(img, win, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, win, axis=1, mode="constant", cval=0.0)


def ssim_map(x, y, data_range=1.0):
    """Per-pixel, per-channel SSIM and the intermediates needed for its gradient."""
    win = gaussian_window()
    C1 = (SSIM_K1 * data_range) ** 2
    C2 = (SSIM_K2 * data_range) ** 2
    mx, my = _filter(x, win), _filter(y, win)
    sxx = _filter(x * x, win) - mx * mx
    syy = _filter(y * y, win) - my * my
    sxy = _filter(x * y, win) - mx * my
    a1 = 2 * mx * my + C1
    a2 = 2 * sxy + C2
    b1 = mx * mx + my * my + C1
    b2 = sxx + syy + C2
    s = (a1 * a2) / (b1 * b2)
    return s, (mx, my, a1, a2, b1, b2, win)


def ssim(x, y, data_range=1.0):
    return float(np.mean(ssim_map(np.asarray(x, float), np.asarray(y, float), data_range)[0]))


def ssim_grad(x, y, data_range=1.0):
    """Mean SSIM and its gradient with respect to ``x``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    s, (mx, my, a1, a2, b1, b2, win) = ssim_map(x, y, data_range)
    gs = 1.0 / s.size
    d_mx = 2 * my * a2 / (b1 * b2) - s * 2 * mx / b1
    d_sxx = -s / b2
    d_sxy = 2 * a1 / (b1 * b2)
    g_mean = gs * (d_mx - 2 * mx * d_sxx - my * d_sxy)
    g_sq = gs * d_sxx
    g_cross = gs * d_sxy
    grad = _filter(g_mean, win) + 2 * x * _filter(g_sq, win) + y * _filter(g_cross, win)
    return float(np.mean(s)), grad


@dataclass
class LossBreakdown:
    l1: float
    ssim_loss: float
    render_loss: float
    grad: np.ndarray | None = None


def render_loss(pred, gt, lambda_ssim=0.2, with_grad=False):
    """``(1 - lambda) * L1 + lambda * (1 - SSIM)``."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    p = pred
    diff = p - gt
    l1 = float(np.mean(np.abs(diff)))
    if with_grad:
        s, gs = ssim_grad(p, gt)
    else:
        s, gs = ssim(p, gt), None
    ssim_loss = 1.0 - s
    total = (1 - lambda_ssim) * l1 + lambda_ssim * ssim_loss
    grad = None
    if with_grad:
        grad = (1 - lambda_ssim) * np.sign(diff) / diff.size - lambda_ssim * gs
    return LossBreakdown(l1, ssim_loss, total, grad)


def psnr(pred, gt, cap=99.0):
    mse = float(np.mean((np.asarray(pred, float) - np.asarray(gt, float)) ** 2))
    if mse <= 0:
        return cap
    return min(cap, 10.0 * np.log10(1.0 / mse))
