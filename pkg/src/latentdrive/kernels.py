"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

Set LATENTDRIVE_DISABLE_NUMBA=1 to force the numpy implementations; the
two paths produce identical results (same float64 accumulation order up
to BLAS reassociation, which the tests treat as exact for gathers and
bounded for reductions).  bench/bench_kernels.py times one against the
other.

Kernels here: im2col / col2im gathers for 2-D and 3-D convolution,
oriented-rectangle rasterization (a rectangle always marks at least the
cell holding its center, so small footprints survive coarse grids), and
all-pairs rectangle collision via the separating-axis test.
"""

import math

import numpy as np

from .accel import USE_NUMBA, jit_kernel


# -- convolution gathers (float64 in, float64 out) ---------------------


def _im2col2d_loop(xp, col, hc, wc, sh, sw, kh, kw):
    b_n, c_n = xp.shape[0], xp.shape[1]
    for b in range(b_n):
        for i in range(hc):
            for j in range(wc):
                for c in range(c_n):
                    for u in range(kh):
                        for v in range(kw):
                            col[b, i, j, c, u, v] = xp[b, c, i * sh + u, j * sw + v]


def _col2im2d_loop(col, xp, hc, wc, sh, sw, kh, kw):
    b_n, c_n = xp.shape[0], xp.shape[1]
    for b in range(b_n):
        for i in range(hc):
            for j in range(wc):
                for c in range(c_n):
                    for u in range(kh):
                        for v in range(kw):
                            xp[b, c, i * sh + u, j * sw + v] += col[b, i, j, c, u, v]


def _im2col3d_loop(xp, col, dc, hc, wc, sd, sh, sw, kd, kh, kw):
    b_n, c_n = xp.shape[0], xp.shape[1]
    for b in range(b_n):
        for t in range(dc):
            for i in range(hc):
                for j in range(wc):
                    for c in range(c_n):
                        for w in range(kd):
                            for u in range(kh):
                                for v in range(kw):
                                    col[b, t, i, j, c, w, u, v] = \
                                        xp[b, c, t * sd + w, i * sh + u, j * sw + v]


def _col2im3d_loop(col, xp, dc, hc, wc, sd, sh, sw, kd, kh, kw):
    b_n, c_n = xp.shape[0], xp.shape[1]
    for b in range(b_n):
        for t in range(dc):
            for i in range(hc):
                for j in range(wc):
                    for c in range(c_n):
                        for w in range(kd):
                            for u in range(kh):
                                for v in range(kw):
                                    xp[b, c, t * sd + w, i * sh + u, j * sw + v] += \
                                        col[b, t, i, j, c, w, u, v]


def _im2col2d_numpy(xp, col, hc, wc, sh, sw, kh, kw):
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    col[...] = view[:, :, ::sh, ::sw].transpose(0, 2, 3, 1, 4, 5)


def _col2im2d_numpy(col, xp, hc, wc, sh, sw, kh, kw):
    src = col.transpose(0, 3, 1, 2, 4, 5)
    for u in range(kh):
        for v in range(kw):
            xp[:, :, u:u + hc * sh:sh, v:v + wc * sw:sw] += src[:, :, :, :, u, v]


def _im2col3d_numpy(xp, col, dc, hc, wc, sd, sh, sw, kd, kh, kw):
    view = np.lib.stride_tricks.sliding_window_view(xp, (kd, kh, kw), axis=(2, 3, 4))
    col[...] = view[:, :, ::sd, ::sh, ::sw].transpose(0, 2, 3, 4, 1, 5, 6, 7)


def _col2im3d_numpy(col, xp, dc, hc, wc, sd, sh, sw, kd, kh, kw):
    src = col.transpose(0, 4, 1, 2, 3, 5, 6, 7)
    for w in range(kd):
        for u in range(kh):
            for v in range(kw):
                xp[:, :, w:w + dc * sd:sd, u:u + hc * sh:sh, v:v + wc * sw:sw] += \
                    src[:, :, :, :, :, w, u, v]


# -- oriented-rectangle rasterization ----------------------------------


def _fill_rect_loop(img, xmin, ymax, res, cx, cy, cos_psi, sin_psi, hl, hw, val):
    h_n, w_n = img.shape
    reach = math.sqrt(hl * hl + hw * hw)
    c_lo = int(math.floor((cx - reach - xmin) / res))
    c_hi = int(math.ceil((cx + reach - xmin) / res))
    r_lo = int(math.floor((ymax - cy - reach) / res))
    r_hi = int(math.ceil((ymax - cy + reach) / res))
    if c_lo < 0:
        c_lo = 0
    if r_lo < 0:
        r_lo = 0
    if c_hi > w_n:
        c_hi = w_n
    if r_hi > h_n:
        r_hi = h_n
    for r in range(r_lo, r_hi):
        py = ymax - (r + 0.5) * res - cy
        for c in range(c_lo, c_hi):
            px = xmin + (c + 0.5) * res - cx
            lon = px * cos_psi + py * sin_psi
            lat = -px * sin_psi + py * cos_psi
            if -hl <= lon <= hl and -hw <= lat <= hw:
                if val > img[r, c]:
                    img[r, c] = val
    # the cell holding the rectangle's center is always marked, so a
    # footprint smaller than a cell cannot vanish between pixel centers
    rc = int(math.floor((ymax - cy) / res))
    cc = int(math.floor((cx - xmin) / res))
    if 0 <= rc < h_n and 0 <= cc < w_n and val > img[rc, cc]:
        img[rc, cc] = val


def _fill_rect_numpy(img, xmin, ymax, res, cx, cy, cos_psi, sin_psi, hl, hw, val):
    h_n, w_n = img.shape
    rc = int(math.floor((ymax - cy) / res))
    cc = int(math.floor((cx - xmin) / res))
    if 0 <= rc < h_n and 0 <= cc < w_n and val > img[rc, cc]:
        img[rc, cc] = val
    reach = math.hypot(hl, hw)
    c_lo = max(int(math.floor((cx - reach - xmin) / res)), 0)
    c_hi = min(int(math.ceil((cx + reach - xmin) / res)), w_n)
    r_lo = max(int(math.floor((ymax - cy - reach) / res)), 0)
    r_hi = min(int(math.ceil((ymax - cy + reach) / res)), h_n)
    if c_lo >= c_hi or r_lo >= r_hi:
        return
    cs = xmin + (np.arange(c_lo, c_hi) + 0.5) * res - cx
    rs = ymax - (np.arange(r_lo, r_hi) + 0.5) * res - cy
    px, py = np.meshgrid(cs, rs)
    lon = px * cos_psi + py * sin_psi
    lat = -px * sin_psi + py * cos_psi
    inside = (np.abs(lon) <= hl) & (np.abs(lat) <= hw)
    window = img[r_lo:r_hi, c_lo:c_hi]
    np.maximum(window, np.where(inside, val, -np.inf), out=window)


# -- rectangle collisions (separating axis) ----------------------------


def _collision_mask_loop(boxes):
    n = boxes.shape[0]
    hit = np.zeros((n, n), dtype=np.uint8)
    for i in range(n):
        for j in range(i + 1, n):
            dx = boxes[j, 0] - boxes[i, 0]
            dy = boxes[j, 1] - boxes[i, 1]
            ri = math.sqrt(boxes[i, 3] ** 2 + boxes[i, 4] ** 2)
            rj = math.sqrt(boxes[j, 3] ** 2 + boxes[j, 4] ** 2)
            if dx * dx + dy * dy > (ri + rj) ** 2:
                continue
            overlap = True
            for k in range(4):
                if k < 2:
                    psi = boxes[i, 2]
                else:
                    psi = boxes[j, 2]
                if k % 2 == 0:
                    axx, axy = math.cos(psi), math.sin(psi)
                else:
                    axx, axy = -math.sin(psi), math.cos(psi)
                proj = 0.0
                for m in (i, j):
                    ct, st = math.cos(boxes[m, 2]), math.sin(boxes[m, 2])
                    proj += boxes[m, 3] * abs(axx * ct + axy * st)
                    proj += boxes[m, 4] * abs(-axx * st + axy * ct)
                if abs(dx * axx + dy * axy) > proj:
                    overlap = False
                    break
            if overlap:
                hit[i, j] = 1
                hit[j, i] = 1
    return hit


def _collision_mask_numpy(boxes):
    n = boxes.shape[0]
    if n == 0:
        return np.zeros((0, 0), dtype=np.uint8)
    c, s = np.cos(boxes[:, 2]), np.sin(boxes[:, 2])
    axes = np.stack([np.stack([c, s], 1), np.stack([-s, c], 1)], 1)  # (n, 2ax, 2d)
    halves = boxes[:, 3:5]  # (n, 2): half length on t, half width on n
    diff = boxes[None, :, :2] - boxes[:, None, :2]  # (n, n, 2)
    dots = np.abs(np.einsum("ipd,jqd->ijpq", axes, axes))
    sep_i = np.abs(np.einsum("ijd,ipd->ijp", diff, axes))
    sep_j = np.abs(np.einsum("ijd,jqd->ijq", diff, axes))
    ext_j_on_i = np.einsum("jq,ijpq->ijp", halves, dots)
    ext_i_on_j = np.einsum("ip,ijpq->ijq", halves, dots)
    ok_i = sep_i <= halves[:, None, :] + ext_j_on_i
    ok_j = sep_j <= halves[None, :, :] + ext_i_on_j
    overlap = ok_i.all(axis=2) & ok_j.all(axis=2)
    np.fill_diagonal(overlap, False)
    return overlap.astype(np.uint8)


if USE_NUMBA:
    im2col2d = jit_kernel(_im2col2d_loop)
    col2im2d = jit_kernel(_col2im2d_loop)
    im2col3d = jit_kernel(_im2col3d_loop)
    col2im3d = jit_kernel(_col2im3d_loop)
    fill_rect = jit_kernel(_fill_rect_loop)
    collision_mask = jit_kernel(_collision_mask_loop)
else:
    im2col2d = _im2col2d_numpy
    col2im2d = _col2im2d_numpy
    im2col3d = _im2col3d_numpy
    col2im3d = _col2im3d_numpy
    fill_rect = _fill_rect_numpy
    collision_mask = _collision_mask_numpy
