"""Compiled per-pixel compositing loops used by :mod:`budgetsplat.render`.

Each tile owns a contiguous run of the depth-sorted splat list. Pixels are
visited in a fixed order and per-Gaussian sums are accumulated serially, so
results are bit-reproducible.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _kernel(px, py, u, v, A, B, C, g_cut):
    dx = px - u
    dy = py - v
    power = -0.5 * (A * dx * dx + 2.0 * B * dx * dy + C * dy * dy)
    if power > 0.0:
        power = 0.0
    ek = np.exp(power)
    gk = (ek - g_cut) / (1.0 - g_cut)
    return dx, dy, ek, gk


@njit(cache=True)
def forward(tile_start, tile_end, gids, u, v, A, B, C, a_eff, colors, bg,
            W, H, ts, ntx, g_cut, min_alpha, area_thr, pix_map, use_map,
            image, t_end, contrib, area, wsum):
    n_tiles = tile_start.shape[0]
    for tile in range(n_tiles):
        s0 = tile_start[tile]
        s1 = tile_end[tile]
        ty = tile // ntx
        tx = tile - ty * ntx
        for ly in range(ts):
            row = ty * ts + ly
            if row >= H:
                break
            for lx in range(ts):
                col = tx * ts + lx
                if col >= W:
                    break
                px = col + 0.5
                py = row + 0.5
                T = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                for k in range(s0, s1):
                    g = gids[k]
                    dx, dy, ek, gk = _kernel(px, py, u[g], v[g], A[g], B[g], C[g], g_cut)
                    if gk <= 0.0:
                        continue
                    alpha = a_eff[g] * gk
                    if alpha < min_alpha:
                        continue
                    w = alpha * T
                    c0 += w * colors[g, 0]
                    c1 += w * colors[g, 1]
                    c2 += w * colors[g, 2]
                    contrib[g] += w
                    if w > area_thr:
                        area[g] += 1.0
                    if use_map:
                        wsum[g] += w * pix_map[row, col]
                    T *= 1.0 - alpha
                image[row, col, 0] = c0 + T * bg[0]
                image[row, col, 1] = c1 + T * bg[1]
                image[row, col, 2] = c2 + T * bg[2]
                t_end[row, col] = T


@njit(cache=True)
def backward(tile_start, tile_end, gids, u, v, A, B, C, a_eff, colors, bg,
             W, H, ts, ntx, g_cut, min_alpha, grad_img,
             g_col, g_a, g_u, g_v, g_A, g_B, g_C):
    n_tiles = tile_start.shape[0]
    max_len = 0
    for tile in range(n_tiles):
        max_len = max(max_len, tile_end[tile] - tile_start[tile])
    al = np.empty(max_len)
    tr = np.empty(max_len)
    ekb = np.empty(max_len)
    gkb = np.empty(max_len)
    dxb = np.empty(max_len)
    dyb = np.empty(max_len)
    idx = np.empty(max_len, dtype=np.int64)
    for tile in range(n_tiles):
        s0 = tile_start[tile]
        s1 = tile_end[tile]
        ty = tile // ntx
        tx = tile - ty * ntx
        for ly in range(ts):
            row = ty * ts + ly
            if row >= H:
                break
            for lx in range(ts):
                col = tx * ts + lx
                if col >= W:
                    break
                px = col + 0.5
                py = row + 0.5
                G0 = grad_img[row, col, 0]
                G1 = grad_img[row, col, 1]
                G2 = grad_img[row, col, 2]
                # forward sweep, remembering the live splats of this pixel
                T = 1.0
                m = 0
                for k in range(s0, s1):
                    g = gids[k]
                    dx, dy, ek, gk = _kernel(px, py, u[g], v[g], A[g], B[g], C[g], g_cut)
                    if gk <= 0.0:
                        continue
                    alpha = a_eff[g] * gk
                    if alpha < min_alpha:
                        continue
                    idx[m] = g
                    al[m] = alpha
                    tr[m] = T
                    ekb[m] = ek
                    gkb[m] = gk
                    dxb[m] = dx
                    dyb[m] = dy
                    m += 1
                    T *= 1.0 - alpha
                # reverse sweep: d pixel / d alpha_i = T_i (c_i - colour seen behind i)
                behind = bg[0] * G0 + bg[1] * G1 + bg[2] * G2
                for r in range(m - 1, -1, -1):
                    g = idx[r]
                    alpha = al[r]
                    w = alpha * tr[r]
                    cg = colors[g, 0] * G0 + colors[g, 1] * G1 + colors[g, 2] * G2
                    g_col[g, 0] += w * G0
                    g_col[g, 1] += w * G1
                    g_col[g, 2] += w * G2
                    ga = tr[r] * (cg - behind)
                    behind = cg * alpha + (1.0 - alpha) * behind
                    g_a[g] += ga * gkb[r]
                    gp = ga * a_eff[g] * ekb[r] / (1.0 - g_cut)
                    dx = dxb[r]
                    dy = dyb[r]
                    g_u[g] += gp * (A[g] * dx + B[g] * dy)
                    g_v[g] += gp * (B[g] * dx + C[g] * dy)
                    g_A[g] += gp * (-0.5 * dx * dx)
                    g_B[g] += gp * (-dx * dy)
                    g_C[g] += gp * (-0.5 * dy * dy)
