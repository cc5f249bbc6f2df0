"""Numba kernels for the tiled splat compositor.

All kernels walk the image tile by tile (``prange`` over tiles). Inside a tile,
pixels are visited in row-major order and each pixel composites the strokes
bucketed to its tile from front to back. Nothing is shared between tiles, so
results do not depend on thread count or scheduling.

Pairs with ``d >= w`` are skipped before evaluating the kernel: it is exactly
0 at ``d = w`` and non-increasing beyond.

Per-pixel candidate lists come as CSR arrays ``tile_ptr``/``tile_ids`` with
ids sorted front-first. Pixel ``(r, c)`` of the window has its centre at
``(ox + c + 0.5, oy + r + 0.5)``.
"""

import math

import numba
import numpy as np
from numba import njit, prange

# TBB in this environment is too old; fall through to OpenMP / workqueue quietly
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


@njit(cache=True)
def sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def kernel_value(d, w, tau):
    s_v = sigmoid(-0.5 * w / tau)
    return min((sigmoid((0.5 * w - d) / tau) - s_v) / (1.0 - 2.0 * s_v), 1.0)


@njit(cache=True)
def kernel_grad(d, w, tau):
    """k and its partials w.r.t. distance and width."""
    s_u = sigmoid((0.5 * w - d) / tau)
    s_v = sigmoid(-0.5 * w / tau)
    num = s_u - s_v
    den = 1.0 - 2.0 * s_v
    du = s_u * (1.0 - s_u)
    dv = s_v * (1.0 - s_v)
    k = min(num / den, 1.0)     # a saturated sigmoid can round k up by one ulp
    dk_dd = -du / tau / den
    dnum_dw = (du + dv) / (2.0 * tau)
    dden_dw = dv / tau
    dk_dw = (dnum_dw * den - num * dden_dw) / (den * den)
    return k, dk_dd, dk_dw


def segment_table(pts):
    """Per-segment ``(ax, ay, ex, ey, 1 / |e|^2)`` of sampled polylines ``(N, n, 2)``.

    Degenerate segments get a zero reciprocal, which pins their parameter to 0.
    """
    e = np.diff(pts, axis=1)
    l2 = (e ** 2).sum(axis=-1)
    inv = np.divide(1.0, l2, out=np.zeros_like(l2), where=l2 > 0.0)
    return np.ascontiguousarray(np.concatenate([pts[:, :-1], e, inv[..., None]], axis=-1))


@njit(cache=True)
def closest_on_polyline(px, py, seg):
    """Distance from (px, py) to a polyline given by its :func:`segment_table`
    rows; ties go to the lowest segment index.

    Returns (distance, segment index, clamped segment parameter, unit x, unit y),
    the unit vector pointing from the closest point to the pixel (zero when the
    pixel lies on the curve).
    """
    best = np.inf
    best_j = 0
    best_t = 0.0
    best_dx = 0.0
    best_dy = 0.0
    for j in range(seg.shape[0]):
        ax = seg[j, 0]
        ay = seg[j, 1]
        ex = seg[j, 2]
        ey = seg[j, 3]
        t = ((px - ax) * ex + (py - ay) * ey) * seg[j, 4]
        t = min(max(t, 0.0), 1.0)
        dx = px - (ax + t * ex)
        dy = py - (ay + t * ey)
        d2 = dx * dx + dy * dy
        if d2 < best:
            best = d2
            best_j = j
            best_t = t
            best_dx = dx
            best_dy = dy
    d = math.sqrt(best)
    if d > 0.0:
        return d, best_j, best_t, best_dx / d, best_dy / d
    return d, best_j, best_t, 0.0, 0.0


@njit(cache=True)
def _inside(bbox, s, x, y):
    return bbox[s, 0] <= x and x <= bbox[s, 2] and bbox[s, 1] <= y and y <= bbox[s, 3]


@njit(parallel=True, cache=True)
def composite_forward(seg, width, opac, vals, tau, bbox, tile_ptr, tile_ids,
                      tiles_x, tile_size, oy, ox, h, w, bg):
    n_ch = vals.shape[1]
    out = np.empty((h, w, n_ch))
    trans = np.empty((h, w))
    n_tiles = tile_ptr.shape[0] - 1
    for tile in prange(n_tiles):
        r0 = (tile // tiles_x) * tile_size
        c0 = (tile % tiles_x) * tile_size
        acc = np.zeros(n_ch)
        for r in range(r0, min(r0 + tile_size, h)):
            y = oy + r + 0.5
            for c in range(c0, min(c0 + tile_size, w)):
                x = ox + c + 0.5
                acc[:] = 0.0
                T = 1.0
                for e in range(tile_ptr[tile], tile_ptr[tile + 1]):
                    s = tile_ids[e]
                    if not _inside(bbox, s, x, y):
                        continue
                    d, j, t, ux, uy = closest_on_polyline(x, y, seg[s])
                    if d >= width[s]:
                        continue
                    k = kernel_value(d, width[s], tau)
                    if k <= 0.0:
                        continue
                    alpha = opac[s] * k
                    wgt = alpha * T
                    for ch in range(n_ch):
                        acc[ch] += wgt * vals[s, ch]
                    T *= 1.0 - alpha
                for ch in range(n_ch):
                    out[r, c, ch] = acc[ch] + T * bg[r, c, ch]
                trans[r, c] = T
    return out, trans


@njit(parallel=True, cache=True)
def composite_backward(seg, width, opac, vals, tau, bbox, tile_ptr, tile_ids,
                       tiles_x, tile_size, oy, ox, h, w, bg, gout):
    """Adjoint of :func:`composite_forward`.

    Returns one gradient row per CSR entry: ``[d opacity, d width,
    d vals (n_ch), d sampled points (2 * n_pts)]``. Rows belong to exactly one
    tile, so the caller reduces them into strokes in a fixed order.
    """
    n_ch = vals.shape[1]
    n_pts = seg.shape[1] + 1
    n_entries = tile_ids.shape[0]
    acc = np.zeros((n_entries, 2 + n_ch + 2 * n_pts))
    n_tiles = tile_ptr.shape[0] - 1
    for tile in prange(n_tiles):
        e0 = tile_ptr[tile]
        cap = tile_ptr[tile + 1] - e0
        if cap == 0:
            continue
        r0 = (tile // tiles_x) * tile_size
        c0 = (tile % tiles_x) * tile_size
        f_e = np.empty(cap, dtype=np.int64)
        f_k = np.empty(cap)
        f_dkd = np.empty(cap)
        f_dkw = np.empty(cap)
        f_T = np.empty(cap)
        f_j = np.empty(cap, dtype=np.int64)
        f_t = np.empty(cap)
        f_ux = np.empty(cap)
        f_uy = np.empty(cap)
        behind = np.empty(n_ch)
        for r in range(r0, min(r0 + tile_size, h)):
            y = oy + r + 0.5
            for c in range(c0, min(c0 + tile_size, w)):
                x = ox + c + 0.5
                n = 0
                T = 1.0
                for e in range(e0, e0 + cap):
                    s = tile_ids[e]
                    if not _inside(bbox, s, x, y):
                        continue
                    d, j, t, ux, uy = closest_on_polyline(x, y, seg[s])
                    if d >= width[s]:
                        continue
                    k, dkd, dkw = kernel_grad(d, width[s], tau)
                    if k <= 0.0:
                        continue
                    f_e[n] = e
                    f_k[n] = k
                    f_dkd[n] = dkd
                    f_dkw[n] = dkw
                    f_T[n] = T
                    f_j[n] = j
                    f_t[n] = t
                    f_ux[n] = ux
                    f_uy[n] = uy
                    n += 1
                    T *= 1.0 - opac[s] * k
                if n == 0:
                    continue
                for ch in range(n_ch):
                    behind[ch] = bg[r, c, ch]
                for i in range(n - 1, -1, -1):
                    e = f_e[i]
                    s = tile_ids[e]
                    alpha = opac[s] * f_k[i]
                    Ti = f_T[i]
                    g_alpha = 0.0
                    for ch in range(n_ch):
                        g = gout[r, c, ch]
                        g_alpha += g * Ti * (vals[s, ch] - behind[ch])
                        acc[e, 2 + ch] += g * alpha * Ti
                        behind[ch] = alpha * vals[s, ch] + (1.0 - alpha) * behind[ch]
                    acc[e, 0] += g_alpha * f_k[i]
                    g_k = g_alpha * opac[s]
                    acc[e, 1] += g_k * f_dkw[i]
                    g_d = g_k * f_dkd[i]
                    j = f_j[i]
                    t = f_t[i]
                    base = 2 + n_ch + 2 * j
                    acc[e, base] -= g_d * (1.0 - t) * f_ux[i]
                    acc[e, base + 1] -= g_d * (1.0 - t) * f_uy[i]
                    acc[e, base + 2] -= g_d * t * f_ux[i]
                    acc[e, base + 3] -= g_d * t * f_uy[i]
    return acc


@njit(parallel=True, cache=True)
def composite_forward_record(seg, width, opac, vals, tau, bbox, tile_ptr, tile_ids,
                             tiles_x, tile_size, oy, ox, h, w, bg, tile_base):
    """:func:`composite_forward` that also keeps what the adjoint needs.

    A tile with ``cap`` candidates owns the record slots from ``tile_base[tile]``
    on (room for ``cap`` per pixel); its pixels fill them in visiting order and
    ``first``/``counts`` locate each pixel's run.
    Integer columns: CSR entry, segment. Float columns: k, dk/dd, dk/dw,
    transmittance before, segment parameter, unit x, unit y.
    """
    n_ch = vals.shape[1]
    out = np.empty((h, w, n_ch))
    trans = np.empty((h, w))
    counts = np.zeros((h, w), dtype=np.int64)
    first = np.zeros((h, w), dtype=np.int64)
    rec_i = np.empty((tile_base[-1], 2), dtype=np.int64)
    rec_f = np.empty((tile_base[-1], 7))
    n_tiles = tile_ptr.shape[0] - 1
    for tile in prange(n_tiles):
        r0 = (tile // tiles_x) * tile_size
        c0 = (tile % tiles_x) * tile_size
        e0 = tile_ptr[tile]
        cap = tile_ptr[tile + 1] - e0
        acc = np.zeros(n_ch)
        slot = tile_base[tile]
        for r in range(r0, min(r0 + tile_size, h)):
            y = oy + r + 0.5
            for c in range(c0, min(c0 + tile_size, w)):
                x = ox + c + 0.5
                n = 0
                acc[:] = 0.0
                T = 1.0
                for e in range(e0, e0 + cap):
                    s = tile_ids[e]
                    if not _inside(bbox, s, x, y):
                        continue
                    d, j, t, ux, uy = closest_on_polyline(x, y, seg[s])
                    if d >= width[s]:
                        continue
                    k, dkd, dkw = kernel_grad(d, width[s], tau)
                    if k <= 0.0:
                        continue
                    f = slot + n
                    rec_i[f, 0] = e
                    rec_i[f, 1] = j
                    rec_f[f, 0] = k
                    rec_f[f, 1] = dkd
                    rec_f[f, 2] = dkw
                    rec_f[f, 3] = T
                    rec_f[f, 4] = t
                    rec_f[f, 5] = ux
                    rec_f[f, 6] = uy
                    n += 1
                    alpha = opac[s] * k
                    wgt = alpha * T
                    for ch in range(n_ch):
                        acc[ch] += wgt * vals[s, ch]
                    T *= 1.0 - alpha
                for ch in range(n_ch):
                    out[r, c, ch] = acc[ch] + T * bg[r, c, ch]
                trans[r, c] = T
                first[r, c] = slot
                counts[r, c] = n
                slot += n
    return out, trans, first, counts, rec_i, rec_f


@njit(parallel=True, cache=True)
def composite_backward_record(opac, vals, tile_ptr, tile_ids, tiles_x, tile_size, h, w, bg,
                              gout, n_pts, first, counts, rec_i, rec_f):
    """:func:`composite_backward` replayed from :func:`composite_forward_record` output."""
    n_ch = vals.shape[1]
    acc = np.zeros((tile_ids.shape[0], 2 + n_ch + 2 * n_pts))
    n_tiles = tile_ptr.shape[0] - 1
    for tile in prange(n_tiles):
        cap = tile_ptr[tile + 1] - tile_ptr[tile]
        if cap == 0:
            continue
        r0 = (tile // tiles_x) * tile_size
        c0 = (tile % tiles_x) * tile_size
        behind = np.empty(n_ch)
        for r in range(r0, min(r0 + tile_size, h)):
            for c in range(c0, min(c0 + tile_size, w)):
                n = counts[r, c]
                if n == 0:
                    continue
                slot = first[r, c]
                for ch in range(n_ch):
                    behind[ch] = bg[r, c, ch]
                for f in range(slot + n - 1, slot - 1, -1):
                    e = rec_i[f, 0]
                    s = tile_ids[e]
                    k = rec_f[f, 0]
                    alpha = opac[s] * k
                    Ti = rec_f[f, 3]
                    g_alpha = 0.0
                    for ch in range(n_ch):
                        g = gout[r, c, ch]
                        g_alpha += g * Ti * (vals[s, ch] - behind[ch])
                        acc[e, 2 + ch] += g * alpha * Ti
                        behind[ch] = alpha * vals[s, ch] + (1.0 - alpha) * behind[ch]
                    acc[e, 0] += g_alpha * k
                    g_k = g_alpha * opac[s]
                    acc[e, 1] += g_k * rec_f[f, 2]
                    g_d = g_k * rec_f[f, 1]
                    t = rec_f[f, 4]
                    base = 2 + n_ch + 2 * rec_i[f, 1]
                    acc[e, base] -= g_d * (1.0 - t) * rec_f[f, 5]
                    acc[e, base + 1] -= g_d * (1.0 - t) * rec_f[f, 6]
                    acc[e, base + 2] -= g_d * t * rec_f[f, 5]
                    acc[e, base + 3] -= g_d * t * rec_f[f, 6]
    return acc


@njit(cache=True)
def reduce_entries(tile_ids, acc, n):
    """Sum CSR-entry rows into their strokes, in entry order."""
    out = np.zeros((n, acc.shape[1]))
    for e in range(tile_ids.shape[0]):
        s = tile_ids[e]
        for q in range(acc.shape[1]):
            out[s, q] += acc[e, q]
    return out


@njit(parallel=True, cache=True)
def count_fragments(seg, width, tau, bbox, tile_ptr, tile_ids, tiles_x, tile_size, oy, ox, h, w):
    counts = np.zeros((h, w), dtype=np.int64)
    n_tiles = tile_ptr.shape[0] - 1
    for tile in prange(n_tiles):
        r0 = (tile // tiles_x) * tile_size
        c0 = (tile % tiles_x) * tile_size
        for r in range(r0, min(r0 + tile_size, h)):
            y = oy + r + 0.5
            for c in range(c0, min(c0 + tile_size, w)):
                x = ox + c + 0.5
                n = 0
                for e in range(tile_ptr[tile], tile_ptr[tile + 1]):
                    s = tile_ids[e]
                    if not _inside(bbox, s, x, y):
                        continue
                    d, j, t, ux, uy = closest_on_polyline(x, y, seg[s])
                    if d >= width[s]:
                        continue
                    if kernel_value(d, width[s], tau) > 0.0:
                        n += 1
                counts[r, c] = n
    return counts


@njit(parallel=True, cache=True)
def fill_fragments(seg, width, opac, tau, bbox, tile_ptr, tile_ids, tiles_x, tile_size,
                   oy, ox, h, w, starts):
    """Fragments in pixel-major order, front-to-back within a pixel.

    Integer columns: pixel (flat index), stroke, segment. Float columns:
    segment parameter, distance, kernel value, alpha, transmittance before.
    """
    total = starts[-1]
    ints = np.empty((total, 3), dtype=np.int64)
    flts = np.empty((total, 5))
    trans = np.empty((h, w))
    n_tiles = tile_ptr.shape[0] - 1
    for tile in prange(n_tiles):
        r0 = (tile // tiles_x) * tile_size
        c0 = (tile % tiles_x) * tile_size
        for r in range(r0, min(r0 + tile_size, h)):
            y = oy + r + 0.5
            for c in range(c0, min(c0 + tile_size, w)):
                x = ox + c + 0.5
                pix = r * w + c
                f = starts[pix]
                T = 1.0
                for e in range(tile_ptr[tile], tile_ptr[tile + 1]):
                    s = tile_ids[e]
                    if not _inside(bbox, s, x, y):
                        continue
                    d, j, t, ux, uy = closest_on_polyline(x, y, seg[s])
                    if d >= width[s]:
                        continue
                    k = kernel_value(d, width[s], tau)
                    if k <= 0.0:
                        continue
                    alpha = opac[s] * k
                    ints[f, 0] = pix
                    ints[f, 1] = s
                    ints[f, 2] = j
                    flts[f, 0] = t
                    flts[f, 1] = d
                    flts[f, 2] = k
                    flts[f, 3] = alpha
                    flts[f, 4] = T
                    f += 1
                    T *= 1.0 - alpha
                trans[r, c] = T
    return ints, flts, trans


@njit(cache=True)
def composite_fragments(starts, pix_vals, alpha, trans_before, trans, bg):
    """Front-to-back sums of per-fragment values with the forward pass's weights."""
    h, w = trans.shape
    n_ch = pix_vals.shape[1]
    out = np.empty((h, w, n_ch))
    weights = np.empty(alpha.shape[0])
    acc = np.zeros(n_ch)
    for r in range(h):
        for c in range(w):
            pix = r * w + c
            acc[:] = 0.0
            for f in range(starts[pix], starts[pix + 1]):
                wgt = alpha[f] * trans_before[f]
                weights[f] = wgt
                for ch in range(n_ch):
                    acc[ch] += wgt * pix_vals[f, ch]
            for ch in range(n_ch):
                out[r, c, ch] = acc[ch] + trans[r, c] * bg[r, c, ch]
    return out, weights
