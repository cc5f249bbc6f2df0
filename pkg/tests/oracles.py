"""Independent reference implementations used as test oracles.

Nothing here calls into the code under test except for plain data access.
"""

from __future__ import annotations

import math

import numpy as np


def de_casteljau(ctrl, t):
    pts = np.array(ctrl, dtype=float)
    n = len(pts) - 1
    for r in range(1, n + 1):
        pts[: n - r + 1] = (1.0 - t) * pts[: n - r + 1] + t * pts[1 : n - r + 2]
    return pts[0]


def chain_point(points, degree, u):
    """Evaluate a flat-control-point chain at global parameter u in [0, 1]."""
    n_seg = (len(points) - 1) // degree
    s = min(int(math.floor(u * n_seg)), n_seg - 1)
    local = u * n_seg - s
    return de_casteljau(points[s * degree : s * degree + degree + 1], local)


def cumulative_params(poly):
    """Chord-length parameters with a plain Python loop."""
    acc = [0.0]
    for (x0, y0), (x1, y1) in zip(poly[:-1], poly[1:]):
        acc.append(acc[-1] + math.hypot(x1 - x0, y1 - y0))
    return [a / acc[-1] for a in acc]


def naive_lstsq(basis, rhs):
    """Explicit (B^T B)^-1 B^T P via Gauss-Jordan elimination."""
    a = [[sum(basis[m][i] * basis[m][j] for m in range(len(basis))) for j in range(len(basis[0]))]
         for i in range(len(basis[0]))]
    b = [[sum(basis[m][i] * rhs[m][c] for m in range(len(basis))) for c in range(len(rhs[0]))]
         for i in range(len(basis[0]))]
    n = len(a)
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(a[r][col]))
        a[col], a[piv] = a[piv], a[col]
        b[col], b[piv] = b[piv], b[col]
        for r in range(n):
            if r != col:
                f = a[r][col] / a[col][col]
                a[r] = [x - f * y for x, y in zip(a[r], a[col])]
                b[r] = [x - f * y for x, y in zip(b[r], b[col])]
    return np.array([[b[i][c] / a[i][i] for c in range(len(b[0]))] for i in range(n)])


def brute_chamfer(a, b):
    def one_way(p, q):
        total = 0.0
        for x in p:
            total += min(math.dist(x, y) for y in q)
        return total / len(p)
    return 0.5 * (one_way(a, b) + one_way(b, a))


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))


def kernel(d, w, tau):
    sv = _sig(-w / 2 / tau)
    return (_sig((w / 2 - d) / tau) - sv) / (1 - 2 * sv)


def seg_dist(x, y, a, b):
    ex, ey = b[0] - a[0], b[1] - a[1]
    l2 = ex * ex + ey * ey
    t = 0.0 if l2 == 0 else min(1.0, max(0.0, ((x - a[0]) * ex + (y - a[1]) * ey) / l2))
    return math.hypot(x - a[0] - t * ex, y - a[1] - t * ey)


def reference_render(polylines, colors, opacities, widths, heights, tau, size, background,
                     bg_height=None):
    """Per-pixel compositor: no tiles, no bounding boxes, newest stroke in front.

    Returns (colour, height, transmittance, per-pixel weight lists).
    """
    h, w = size
    color = np.zeros((h, w, 3))
    height = np.zeros((h, w))
    trans = np.zeros((h, w))
    weights = {}
    bg = np.broadcast_to(np.asarray(background, float), (h, w, 3))
    bgh = np.zeros((h, w)) if bg_height is None else np.asarray(bg_height, float)
    for r in range(h):
        for c in range(w):
            x, y = c + 0.5, r + 0.5
            T = 1.0
            acc = np.zeros(3)
            hacc = 0.0
            wl = []
            for i in reversed(range(len(polylines))):
                pts = polylines[i]
                d = min(seg_dist(x, y, pts[j], pts[j + 1]) for j in range(len(pts) - 1))
                k = kernel(d, widths[i], tau)
                alpha = opacities[i] * max(0.0, k)
                wgt = alpha * T
                acc += wgt * np.asarray(colors[i])
                hacc += wgt * heights[i]
                wl.append(wgt)
                T *= 1.0 - alpha
            color[r, c] = acc + T * bg[r, c]
            height[r, c] = hacc + T * bgh[r, c]
            trans[r, c] = T
            weights[(r, c)] = wl
    return color, height, trans, weights


def central_difference(f, x0, step):
    """Central finite-difference gradient of scalar ``f`` at array ``x0``."""
    x0 = np.array(x0, dtype=float)
    g = np.zeros_like(x0)
    flat = x0.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += step
        xm[i] -= step
        gf[i] = (f(xp.reshape(x0.shape)) - f(xm.reshape(x0.shape))) / (2 * step)
    return g


def brute_nms(field, threshold_mask, window):
    """Greedy NMS by exhaustive scan.

    A pixel is eligible when it passes the threshold and no pixel in its
    window exceeds it. The best remaining eligible pixel (ties: row-major
    first) is kept and everything within the window around it is dropped.
    """
    h, w = field.shape
    r = window // 2
    cands = []
    for i in range(h):
        for j in range(w):
            if not threshold_mask[i, j]:
                continue
            peak = True
            for a in range(max(0, i - r), min(h, i + r + 1)):
                for b in range(max(0, j - r), min(w, j + r + 1)):
                    if field[a, b] > field[i, j]:
                        peak = False
            if peak:
                cands.append((field[i, j], i, j))
    kept = []
    alive = {(i, j) for _, i, j in cands}
    while alive:
        best = None
        for v, i, j in cands:
            if (i, j) not in alive:
                continue
            if best is None or v > best[0] or (v == best[0] and (i, j) < (best[1], best[2])):
                best = (v, i, j)
        _, bi, bj = best
        kept.append((bi, bj))
        alive = {(i, j) for (i, j) in alive if max(abs(i - bi), abs(j - bj)) > r}
    return kept


def support_mask(polylines, widths, size):
    """(N, h, w) boolean mask of pixels with d < w for each polyline (vectorised, no tiling)."""
    h, w = size
    ys, xs = np.mgrid[0:h, 0:w] + 0.5
    out = np.zeros((len(polylines), h, w), dtype=bool)
    for i, pts in enumerate(polylines):
        pts = np.asarray(pts, float)
        best = np.full((h, w), np.inf)
        for a, b in zip(pts[:-1], pts[1:]):
            e = b - a
            l2 = e @ e
            t = np.zeros((h, w)) if l2 == 0 else np.clip(((xs - a[0]) * e[0] + (ys - a[1]) * e[1]) / l2, 0, 1)
            best = np.minimum(best, np.hypot(xs - a[0] - t * e[0], ys - a[1] - t * e[1]))
        out[i] = best < widths[i]
    return out
