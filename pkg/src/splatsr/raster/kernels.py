"""Numba tile kernels for front-to-back alpha compositing and its adjoint.

Each tile owns a contiguous, depth-sorted slice of the binned entry list.
The backward kernel writes gradients into per-entry slots (every entry
belongs to exactly one tile), so tiles run in parallel without races and the
later reduction over entries happens in a fixed order.
"""

import os

import numba
import numpy as np
from numba import njit, prange

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the TBB shipped in the base image is too old for numba
    numba.config.THREADING_LAYER = "workqueue"

# per-entry gradient slots
G_U, G_V, G_A, G_B, G_C, G_OPAC, G_R, G_G, G_BL = range(9)
N_GRAD_SLOTS = 9


@njit(cache=True, parallel=True)
def composite_forward(tile_ranges, entry_ids, means2d, conics, opacities, colors, depths,
                      background, width, height, tile_size, tiles_x, cutoff2, t_min, far,
                      out_raw, out_T, out_end, out_depth):
    n_tiles = tile_ranges.shape[0]
    for tile in prange(n_tiles):
        tx = tile % tiles_x
        ty = tile // tiles_x
        start = tile_ranges[tile, 0]
        stop = tile_ranges[tile, 1]
        for py in range(ty * tile_size, min((ty + 1) * tile_size, height)):
            for px in range(tx * tile_size, min((tx + 1) * tile_size, width)):
                T = 1.0
                r = 0.0
                g = 0.0
                b = 0.0
                dep = 0.0
                j = start
                while j < stop:
                    if T < t_min:
                        break
                    gi = entry_ids[j]
                    dx = px - means2d[gi, 0]
                    dy = py - means2d[gi, 1]
                    d2 = conics[gi, 0] * dx * dx + 2.0 * conics[gi, 1] * dx * dy + conics[gi, 2] * dy * dy
                    if d2 <= cutoff2:
                        a = opacities[gi] * np.exp(-0.5 * d2)
                        w = T * a
                        r += w * colors[gi, 0]
                        g += w * colors[gi, 1]
                        b += w * colors[gi, 2]
                        dep += w * depths[gi]
                        T = T * (1.0 - a)
                    j += 1
                out_raw[py, px, 0] = r + T * background[0]
                out_raw[py, px, 1] = g + T * background[1]
                out_raw[py, px, 2] = b + T * background[2]
                out_T[py, px] = T
                out_end[py, px] = j
                out_depth[py, px] = dep + T * far


@njit(cache=True, parallel=True)
def composite_backward(tile_ranges, entry_ids, means2d, conics, opacities, colors, background,
                       width, height, tile_size, tiles_x, cutoff2, out_end, grad_img, grad_entries):
    n_tiles = tile_ranges.shape[0]
    for tile in prange(n_tiles):
        tx = tile % tiles_x
        ty = tile // tiles_x
        start = tile_ranges[tile, 0]
        stop = tile_ranges[tile, 1]
        n = stop - start
        if n == 0:
            continue
        T_buf = np.empty(n, dtype=grad_img.dtype)
        a_buf = np.empty(n, dtype=grad_img.dtype)
        g_buf = np.empty(n, dtype=grad_img.dtype)
        for py in range(ty * tile_size, min((ty + 1) * tile_size, height)):
            for px in range(tx * tile_size, min((tx + 1) * tile_size, width)):
                gr = grad_img[py, px, 0]
                gg = grad_img[py, px, 1]
                gb = grad_img[py, px, 2]
                if gr == 0.0 and gg == 0.0 and gb == 0.0:
                    continue
                end = out_end[py, px]
                T = 1.0
                for j in range(start, end):
                    gi = entry_ids[j]
                    dx = px - means2d[gi, 0]
                    dy = py - means2d[gi, 1]
                    d2 = conics[gi, 0] * dx * dx + 2.0 * conics[gi, 1] * dx * dy + conics[gi, 2] * dy * dy
                    k = j - start
                    if d2 <= cutoff2:
                        gw = np.exp(-0.5 * d2)
                        a = opacities[gi] * gw
                        T_buf[k] = T
                        a_buf[k] = a
                        g_buf[k] = gw
                        T = T * (1.0 - a)
                    else:
                        a_buf[k] = -1.0
                # color behind the current splat, starting from the background
                sr = background[0]
                sg = background[1]
                sb = background[2]
                for j in range(end - 1, start - 1, -1):
                    k = j - start
                    a = a_buf[k]
                    if a < 0.0:
                        continue
                    gi = entry_ids[j]
                    Ti = T_buf[k]
                    cr = colors[gi, 0]
                    cg = colors[gi, 1]
                    cb = colors[gi, 2]
                    w = Ti * a
                    grad_entries[j, G_R] += w * gr
                    grad_entries[j, G_G] += w * gg
                    grad_entries[j, G_BL] += w * gb
                    dl_da = Ti * (gr * (cr - sr) + gg * (cg - sg) + gb * (cb - sb))
                    sr = a * cr + (1.0 - a) * sr
                    sg = a * cg + (1.0 - a) * sg
                    sb = a * cb + (1.0 - a) * sb
                    gw = g_buf[k]
                    grad_entries[j, G_OPAC] += dl_da * gw
                    dl_dp = dl_da * opacities[gi] * gw
                    dx = px - means2d[gi, 0]
                    dy = py - means2d[gi, 1]
                    A = conics[gi, 0]
                    B = conics[gi, 1]
                    C = conics[gi, 2]
                    grad_entries[j, G_A] += -0.5 * dx * dx * dl_dp
                    grad_entries[j, G_B] += -dx * dy * dl_dp
                    grad_entries[j, G_C] += -0.5 * dy * dy * dl_dp
                    grad_entries[j, G_U] += (A * dx + B * dy) * dl_dp
                    grad_entries[j, G_V] += (B * dx + C * dy) * dl_dp
