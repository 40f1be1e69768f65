"""CPU splatting rasterizer with a hand-written reverse pass.

Splats are binned into 16x16 tiles after one global depth sort (ties broken by
index). Projection and the covariance chain rule are vectorized here; per-pixel
compositing runs in the compiled loops of :mod:`budgetsplat._raster`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _raster
from .scene import (DYNAMIC, STATIC, GaussianSet, keyframe_weights,
                    normalize_quaternions, normalize_vjp, quaternion_matrix_vjp,
                    quaternion_to_matrix, sigmoid)

SH_C1 = 0.4886025119029199


class NonFiniteParameter(ValueError):
    pass


@dataclass(frozen=True)
class RenderSettings:
    tile: int = 16
    sigma_cutoff: float = 3.0
    # hard alpha floor; 0 disables it (dense tiles gain nothing from skipping)
    min_alpha: float = 0.0
    dilation: float = 0.3
    near: float = 0.2
    area_threshold: float = 1e-4


DEFAULT_SETTINGS = RenderSettings()


@dataclass
class RenderOutput:
    image: np.ndarray
    transmittance: np.ndarray
    contribution: np.ndarray
    pixel_area: np.ndarray
    depth: np.ndarray
    visible: np.ndarray
    ctx: object = None

    def weighted_sum(self, pixel_map):
        """Per-Gaussian sum of blending weight times an (H, W) map."""
        c = self.ctx
        n = self.contribution.shape[0]
        out = np.zeros(n)
        if c is None or c.gid is None:
            return out
        pm = np.ascontiguousarray(pixel_map, dtype=np.float64)
        _raster.forward(c.tile_start, c.tile_end, c.gids, c.u, c.v, c.A, c.B, c.C,
                        c.a_eff, c.colors, c.bg, c.W, c.H, c.settings.tile, c.ntx,
                        c.g_cut, c.settings.min_alpha, c.settings.area_threshold,
                        pm, True, np.empty((c.H, c.W, 3)), np.empty((c.H, c.W)),
                        np.zeros(n), np.zeros(n), out)
        return out


class _Ctx:
    """Saved forward state for the reverse pass."""
    gid = None


_NO_MAP = np.zeros((1, 1))


def _world_state(gs: GaussianSet, t: float):
    n = len(gs)
    f64 = np.float64
    pos = gs.position.astype(f64).copy()
    q_raw = gs.rotation.astype(f64).copy()
    win = np.ones(n)
    s_idx = gs.static_index()
    d_idx = gs.dynamic_index()
    st = {"s_idx": s_idx, "d_idx": d_idx, "t": t}
    if s_idx.size:
        pos[s_idx] += (t - 0.5) * gs.translation.astype(f64)
    if d_idx.size:
        i, f = keyframe_weights(t, gs.keyframes)
        tp = gs.traj_position.astype(f64)
        tr = gs.traj_rotation.astype(f64)
        pos[d_idx] = (1 - f) * tp[:, i] + f * tp[:, i + 1]
        q_raw[d_idx] = (1 - f) * tr[:, i] + f * tr[:, i + 1]
        ks = gs.window_sharpness.astype(f64)
        s1 = sigmoid((t - gs.window_start.astype(f64)) * ks)
        s2 = sigmoid((gs.window_end.astype(f64) - t) * ks)
        win[d_idx] = s1 * s2
        st.update(kf=(i, f), s1=s1, s2=s2)
    alpha = sigmoid(gs.opacity_logit)
    gate = gs.gate.astype(f64)
    st.update(pos=pos, q_raw=q_raw, win=win, alpha=alpha, gate=gate,
              a_eff=gate * alpha * win)
    return st


def _check_finite(gs: GaussianSet):
    if len(gs) == 0:
        return
    bad = np.zeros(len(gs), dtype=bool)
    for name in ("position", "rotation", "log_scale", "opacity_logit", "gate"):
        a = getattr(gs, name).reshape(len(gs), -1)
        bad |= ~np.all(np.isfinite(a), axis=1)
    bad |= ~np.all(np.isfinite(gs.color.reshape(len(gs), -1)), axis=1)
    rows = gs.side_rows()
    s = gs.static_index()
    if s.size:
        bad[s] |= ~np.all(np.isfinite(gs.translation[rows[s]]), axis=1)
    d = gs.dynamic_index()
    if d.size:
        r = rows[d]
        for name in ("traj_position", "traj_rotation"):
            bad[d] |= ~np.all(np.isfinite(getattr(gs, name)[r].reshape(r.size, -1)), axis=1)
        for name in ("window_start", "window_end", "window_sharpness"):
            bad[d] |= ~np.isfinite(getattr(gs, name)[r])
    if np.any(bad):
        raise NonFiniteParameter(f"non-finite parameter in Gaussian {int(np.flatnonzero(bad)[0])}")


def _colors(gs, pos, cam_center):
    base = gs.color[:, 0, :].astype(np.float64)
    if gs.sh_degree == 0:
        return np.maximum(base, 0.0), (None, None, base > 0)
    d = pos - cam_center
    dn = np.linalg.norm(d, axis=1, keepdims=True)
    dirs = d / dn
    f = gs.color.astype(np.float64)
    x, y, z = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
    raw = base - SH_C1 * y * f[:, 1] + SH_C1 * z * f[:, 2] - SH_C1 * x * f[:, 3]
    return np.maximum(raw, 0.0), (dirs, dn, raw > 0)


def render(gs: GaussianSet, view, t: float | None = None, training_mode: bool = False,
           background=(0.0, 0.0, 0.0), settings: RenderSettings = DEFAULT_SETTINGS):
    """Render ``gs`` from ``view`` at normalized time ``t``.

    The effective opacity is ``gate * opacity`` for static Gaussians and
    ``gate * opacity * window(t)`` for dynamic ones. A render made with
    ``training_mode`` can be passed to :func:`render_backward`.
    """
    if t is None:
        t = view.time
    t = float(t)
    H, W = view.height, view.width
    n = len(gs)
    bg = np.asarray(background, dtype=np.float64)
    _check_finite(gs)
    ctx = _Ctx()
    ctx.n, ctx.H, ctx.W, ctx.bg, ctx.view, ctx.settings = n, H, W, bg, view, settings
    ctx.gs = gs
    depth = np.full(n, np.nan)
    empty = RenderOutput(np.broadcast_to(bg, (H, W, 3)).copy(), np.ones((H, W)),
                         np.zeros(n), np.zeros(n), depth, np.zeros(n, bool), ctx)
    if n == 0:
        return empty

    st = _world_state(gs, t)
    ctx.st = st
    pos = st["pos"]
    Rw, tw = view.R, view.t
    pc = pos @ Rw.T + tw
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    infront = z > settings.near
    zs = np.where(infront, z, 1.0)
    fx, fy = view.fx, view.fy
    u = fx * x / zs + view.cx
    v = fy * y / zs + view.cy

    q = normalize_quaternions(st["q_raw"])
    Rm = quaternion_to_matrix(q)
    s2 = np.exp(2.0 * gs.log_scale.astype(np.float64))
    Sigma = np.einsum("nij,nj,nkj->nik", Rm, s2, Rm)
    Mc = np.einsum("ij,njk,lk->nil", Rw, Sigma, Rw)
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = fx / zs
    J[:, 0, 2] = -fx * x / zs**2
    J[:, 1, 1] = fy / zs
    J[:, 1, 2] = -fy * y / zs**2
    cov = np.einsum("nij,njk,nlk->nil", J, Mc, J)
    cov[:, 0, 0] += settings.dilation
    cov[:, 1, 1] += settings.dilation
    a, b, c = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    det = a * c - b * b
    ok = infront & (det > 0)
    det_s = np.where(ok, det, 1.0)
    A, B, C = c / det_s, -b / det_s, a / det_s
    lam = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    radius = settings.sigma_cutoff * np.sqrt(np.maximum(lam, 0.0))
    ok &= (u + radius > 0) & (u - radius < W) & (v + radius > 0) & (v - radius < H)
    ok &= st["a_eff"] > 0
    depth = np.where(infront, z, np.nan)

    colors, sh_ctx = _colors(gs, pos, view.center)
    ctx.__dict__.update(pc=pc, zs=zs, u=u, v=v, q=q, Rm=Rm, s2=s2, Mc=Mc, J=J,
                        A=A, B=B, C=C, colors=colors, sh_ctx=sh_ctx, depth=depth)

    cand = np.flatnonzero(ok)
    if cand.size == 0:
        empty.depth = depth
        return empty

    # global depth order, ties broken by index
    order = np.lexsort((np.arange(n), z))
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)

    ts = settings.tile
    ntx, nty = -(-W // ts), -(-H // ts)
    tx0 = np.clip(np.floor((u[cand] - radius[cand]) / ts), 0, ntx - 1).astype(np.int64)
    tx1 = np.clip(np.floor((u[cand] + radius[cand]) / ts), 0, ntx - 1).astype(np.int64)
    ty0 = np.clip(np.floor((v[cand] - radius[cand]) / ts), 0, nty - 1).astype(np.int64)
    ty1 = np.clip(np.floor((v[cand] + radius[cand]) / ts), 0, nty - 1).astype(np.int64)
    nx, ny = tx1 - tx0 + 1, ty1 - ty0 + 1
    cnt = nx * ny
    owner = np.repeat(np.arange(cand.size), cnt)
    local = np.arange(owner.size) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    tile_x = tx0[owner] + local % nx[owner]
    tile_y = ty0[owner] + local // nx[owner]
    tile_id = tile_y * ntx + tile_x
    gsel = cand[owner]
    srt = np.lexsort((rank[gsel], tile_id))
    tile_id, gsel = tile_id[srt], gsel[srt]
    n_tiles = ntx * nty
    per_tile = np.bincount(tile_id, minlength=n_tiles)
    tile_end = np.cumsum(per_tile)
    tile_start = tile_end - per_tile

    g_cut = float(np.exp(-0.5 * settings.sigma_cutoff ** 2))
    a_eff = st["a_eff"]
    image = np.empty((H, W, 3))
    trans = np.empty((H, W))
    contribution = np.zeros(n)
    area = np.zeros(n)
    ctx.__dict__.update(tile_start=tile_start, tile_end=tile_end, gids=gsel,
                        ntx=ntx, g_cut=g_cut, a_eff=a_eff)
    _raster.forward(tile_start, tile_end, gsel, u, v, A, B, C, a_eff, colors, bg,
                    W, H, ts, ntx, g_cut, settings.min_alpha, settings.area_threshold,
                    _NO_MAP, False, image, trans, contribution, area, np.zeros(0))
    ctx.gid = gsel
    visible = np.zeros(n, bool)
    visible[gsel] = True
    if not training_mode:
        contribution = np.zeros(n)
        area = np.zeros(n)
    return RenderOutput(image, trans, contribution, area, depth, visible, ctx)


def zero_grads(gs: GaussianSet):
    return {k: np.zeros(v.shape) for k, v in gs.arrays().items() if k != "kind"}


def render_backward(out: RenderOutput, dL_dimage):
    """Reverse pass: gradient of a scalar loss w.r.t. every Gaussian parameter.

    Returns a dict keyed like :class:`GaussianSet` fields plus
    ``"world_position"`` (gradient on the instantaneous world position, used
    by the importance scorer).
    """
    c = out.ctx
    gs = c.gs
    n = c.n
    grads = zero_grads(gs)
    grads["world_position"] = np.zeros((n, 3))
    if n == 0 or getattr(c, "gid", None) is None:
        return grads
    st = c.st
    G = np.ascontiguousarray(dL_dimage, dtype=np.float64).reshape(c.H, c.W, 3)
    g_col = np.zeros((n, 3))
    g_a, g_u, g_v = np.zeros(n), np.zeros(n), np.zeros(n)
    g_A, g_B, g_C = np.zeros(n), np.zeros(n), np.zeros(n)
    _raster.backward(c.tile_start, c.tile_end, c.gids, c.u, c.v, c.A, c.B, c.C,
                     c.a_eff, c.colors, c.bg, c.W, c.H, c.settings.tile, c.ntx,
                     c.g_cut, c.settings.min_alpha, G,
                     g_col, g_a, g_u, g_v, g_A, g_B, g_C)

    # conic -> 2D covariance
    Q = np.zeros((n, 2, 2))
    Q[:, 0, 0], Q[:, 0, 1], Q[:, 1, 0], Q[:, 1, 1] = c.A, c.B, c.B, c.C
    dQ = np.zeros((n, 2, 2))
    dQ[:, 0, 0], dQ[:, 0, 1], dQ[:, 1, 0], dQ[:, 1, 1] = g_A, 0.5 * g_B, 0.5 * g_B, g_C
    dCov = -np.einsum("nij,njk,nkl->nil", Q, dQ, Q)
    J, Mc = c.J, c.Mc
    dJ = 2.0 * np.einsum("nij,njk,nkl->nil", dCov, J, Mc)
    dM = np.einsum("nji,njk,nkl->nil", J, dCov, J)
    Rw = c.view.R
    dSigma = np.einsum("ji,njk,kl->nil", Rw, dM, Rw)
    Rm, s2 = c.Rm, c.s2
    dRm = 2.0 * np.einsum("nij,njk,nk->nik", dSigma, Rm, s2)
    rsr = np.einsum("nji,njk,nki->ni", Rm, dSigma, Rm)
    grads["log_scale"] = 2.0 * s2 * rsr
    dq = quaternion_matrix_vjp(c.q, dRm)
    dq_raw = normalize_vjp(st["q_raw"], dq)

    # projection -> camera space
    x, y = c.pc[:, 0], c.pc[:, 1]
    zs = c.zs
    fx, fy = c.view.fx, c.view.fy
    gpc = np.zeros((n, 3))
    gpc[:, 0] = g_u * fx / zs + dJ[:, 0, 2] * (-fx / zs**2)
    gpc[:, 1] = g_v * fy / zs + dJ[:, 1, 2] * (-fy / zs**2)
    gpc[:, 2] = (-g_u * fx * x / zs**2 - g_v * fy * y / zs**2
                 - dJ[:, 0, 0] * fx / zs**2 + dJ[:, 0, 2] * 2 * fx * x / zs**3
                 - dJ[:, 1, 1] * fy / zs**2 + dJ[:, 1, 2] * 2 * fy * y / zs**3)
    gpos = gpc @ Rw

    # colour (and the view-direction path for degree-1 SH)
    dirs, dn, pos_mask = c.sh_ctx
    gc = g_col * pos_mask
    grads["color"][:, 0, :] = gc
    if gs.sh_degree > 0:
        grads["color"][:, 1, :] = -SH_C1 * dirs[:, 1:2] * gc
        grads["color"][:, 2, :] = SH_C1 * dirs[:, 2:3] * gc
        grads["color"][:, 3, :] = -SH_C1 * dirs[:, 0:1] * gc
        f = gs.color.astype(np.float64)
        gdir = np.stack([-SH_C1 * np.sum(f[:, 3] * gc, axis=1),
                         -SH_C1 * np.sum(f[:, 1] * gc, axis=1),
                         SH_C1 * np.sum(f[:, 2] * gc, axis=1)], axis=1)
        gpos += (gdir - dirs * np.sum(dirs * gdir, axis=1, keepdims=True)) / dn
    grads["world_position"] = gpos

    # effective opacity
    alpha_o, gate, win = st["alpha"], st["gate"], st["win"]
    grads["gate"] = g_a * alpha_o * win
    grads["opacity_logit"] = g_a * gate * win * alpha_o * (1.0 - alpha_o)

    s_idx, d_idx, t = st["s_idx"], st["d_idx"], st["t"]
    if s_idx.size:
        grads["position"][s_idx] = gpos[s_idx]
        grads["translation"] = (t - 0.5) * gpos[s_idx]
        grads["rotation"][s_idx] = dq_raw[s_idx]
    if d_idx.size:
        i, f = st["kf"]
        gp = gpos[d_idx]
        gq = dq_raw[d_idx]
        grads["traj_position"][:, i] += (1 - f) * gp
        grads["traj_position"][:, i + 1] += f * gp
        grads["traj_rotation"][:, i] += (1 - f) * gq
        grads["traj_rotation"][:, i + 1] += f * gq
        s1, s2w = st["s1"], st["s2"]
        ks = gs.window_sharpness.astype(np.float64)
        gw = g_a[d_idx] * gate[d_idx] * alpha_o[d_idx]
        grads["window_start"] = gw * s2w * s1 * (1 - s1) * (-ks)
        grads["window_end"] = gw * s1 * s2w * (1 - s2w) * ks
        grads["window_sharpness"] = gw * (s2w * s1 * (1 - s1) * (t - gs.window_start)
                                          + s1 * s2w * (1 - s2w) * (gs.window_end - t))
    return grads
