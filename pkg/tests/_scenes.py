"""Shared scene builders for the test-suite."""
import numpy as np

from budgetsplat.camera import look_at, pinhole
from budgetsplat.losses import render_loss
from budgetsplat.render import render, render_backward
from budgetsplat.scene import random_set

FD_H = 1e-3
FD_TIME = 0.37
# pairwise camera-depth gap; below it an FD step can reorder the composite
DEPTH_MARGIN = 0.05


def fd_scene(seed, size=16):
    """Randomized 3-Gaussian scene (one dynamic) with a random target image.

    Scenes whose Gaussians sit within ``DEPTH_MARGIN`` of each other in
    camera depth are redrawn from the same seed stream.
    """
    rng = np.random.default_rng(seed)
    R, t = look_at([0.3, -0.2, -3.0], [0.0, 0.0, 0.0])
    view = pinhole(size, size, 50.0, R, t)
    while True:
        gs = random_set(3, rng, n_dynamic=1, sh_degree=seed % 2, extent=0.5,
                        dtype=np.float64)
        gs.log_scale[:] = rng.uniform(-1.8, -1.0, (3, 3))
        gt = rng.uniform(0.0, 1.0, (size, size, 3))
        depth = render(gs, view, FD_TIME).depth
        gaps = np.abs(depth[:, None] - depth[None, :])[np.triu_indices(3, 1)]
        if gaps.min() >= DEPTH_MARGIN:
            return gs, view, gt


def scene_loss(gs, view, gt, t=FD_TIME):
    return render_loss(render(gs, view, t).image, gt, 0.2).render_loss


def analytic_grads(gs, view, gt, t=FD_TIME):
    out = render(gs, view, t, training_mode=True)
    lb = render_loss(out.image, gt, 0.2, with_grad=True)
    return render_backward(out, lb.grad)


def fd_mismatches(gs, view, gt, h=FD_H, skip=("kind", "importance")):
    """Entries whose analytic gradient misses central FD by more than max(1e-3, 2%)."""
    g = analytic_grads(gs, view, gt)
    bad = []
    for name, arr in gs.arrays().items():
        if name in skip:
            continue
        flat = arr.reshape(-1)
        gflat = g[name].reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            lp = scene_loss(gs, view, gt)
            flat[k] = old - h
            lm = scene_loss(gs, view, gt)
            flat[k] = old
            fd = (lp - lm) / (2 * h)
            if abs(fd - gflat[k]) > max(1e-3, 0.02 * abs(fd)):
                bad.append((name, k, fd, gflat[k]))
    return bad
