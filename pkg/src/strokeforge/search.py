"""Residual-guided stroke proposal.

The search phase looks at where the current canvas is most wrong, grows
short polylines by gradient ascent on that error, and keeps a candidate only
if painting it on top of the canvas measurably lowers the error.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .config import OptimConfig, RenderConfig, SearchConfig
from .geometry import GeometryError, fit_bezier, sample_bezier
from .losses import length_penalty, overlap_pairs, polyline_lengths, width_penalty
from .render import Canvas, render_forward, stroke_bboxes
from .strokes import Stroke, StrokeSet

log = logging.getLogger(__name__)


def bilinear(img, x, y):
    """Sample ``img`` at continuous pixel coordinates (x to the right, y down).

    Pixel (r, c) has its centre at (c + 0.5, r + 0.5); positions beyond the
    outermost centres take the border value.
    """
    img = np.asarray(img, dtype=np.float64)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64)) - 0.5
    y = np.atleast_1d(np.asarray(y, dtype=np.float64)) - 0.5
    coords = np.stack([y, x])
    if img.ndim == 2:
        return ndimage.map_coordinates(img, coords, order=1, mode="nearest")
    return np.stack([ndimage.map_coordinates(img[..., ch], coords, order=1, mode="nearest")
                     for ch in range(img.shape[2])], axis=-1)


@dataclass
class ResidualField:
    R: np.ndarray      # (H, W) channel-summed squared error
    G: np.ndarray      # (H, W, 2) spatial gradient of R as (d/dx, d/dy)

    @property
    def shape(self):
        return self.R.shape

    def inside(self, p) -> bool:
        h, w = self.R.shape
        return 0.0 <= p[0] <= w and 0.0 <= p[1] <= h

    def sample_R(self, p) -> float:
        return float(bilinear(self.R, p[0], p[1])[0])

    def sample_G(self, p) -> np.ndarray:
        return bilinear(self.G, p[0], p[1])[0]


def gradient_field(R):
    """Central differences inside, one-sided at the border; returns (..., 2) as (d/dx, d/dy)."""
    R = np.asarray(R, dtype=np.float64)
    gy, gx = np.gradient(R) if min(R.shape) > 1 else (np.zeros_like(R), np.zeros_like(R))
    return np.stack([gx, gy], axis=-1)


def residual_field(canvas, target) -> ResidualField:
    color = canvas.color if isinstance(canvas, Canvas) else np.asarray(canvas, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if color.shape != target.shape:
        raise ValueError(f"canvas {color.shape} and target {target.shape} differ in shape")
    R = np.sum((color - target) ** 2, axis=-1)
    return ResidualField(R, gradient_field(R))


def nms_peaks(R, mask, window):
    """Greedy non-maximum suppression over pixels flagged in ``mask``.

    Only window-local maxima are eligible. They are visited by descending
    value (row-major on ties); each kept pixel suppresses its window.
    Returns (row, col) pairs in visiting order.
    """
    h, w = R.shape
    rad = window // 2
    local_max = R >= ndimage.maximum_filter(R, size=window, mode="constant", cval=-np.inf)
    rows, cols = np.nonzero(mask & local_max)
    order = np.lexsort((cols, rows, -R[rows, cols]))
    taken = np.zeros((h, w), dtype=bool)
    kept = []
    for r, c in zip(rows[order], cols[order]):
        if taken[r, c]:
            continue
        kept.append((int(r), int(c)))
        taken[max(0, r - rad):r + rad + 1, max(0, c - rad):c + rad + 1] = True
    return kept


def seed_mask(R, fraction):
    return (R >= np.quantile(R, 1.0 - fraction)) & (R > 0)


def sample_seeds(field: ResidualField, cfg: SearchConfig, budget=None) -> list[np.ndarray]:
    """Seed positions (pixel centres, as (x, y)) at well-separated residual peaks."""
    if budget is not None and budget <= 0:
        return []
    peaks = nms_peaks(field.R, seed_mask(field.R, cfg.seed_fraction), cfg.nms_window)
    if budget is not None:
        peaks = peaks[:budget]
    return [np.array([c + 0.5, r + 0.5]) for r, c in peaks]


def trace_stroke(seed, field: ResidualField, cfg: SearchConfig):
    """Grow a polyline from ``seed`` by momentum-smoothed ascent on the residual.

    Returns an (M, 2) vertex array, or None when fewer than two vertices
    could be placed (e.g. the gradient vanishes at the seed).
    """
    p = np.asarray(seed, dtype=np.float64)
    if not field.inside(p):
        raise ValueError(f"seed {tuple(p)} lies outside the {field.shape} image")
    g = field.sample_G(p)
    gn = float(np.hypot(*g))
    if gn < cfg.epsilon:
        return None
    d_prev = g / gn
    eta = cfg.step
    streak = 0
    r_cur = field.sample_R(p)
    verts = [p]
    h, w = field.shape
    while len(verts) < cfg.max_vertices:
        g = field.sample_G(p)
        gn = float(np.hypot(*g))
        if gn < cfg.epsilon:
            break
        d = cfg.smoothing * g / gn + (1.0 - cfg.smoothing) * d_prev
        dn = float(np.hypot(*d))
        d = g / gn if dn < 1e-12 else d / dn
        q = p + eta * d
        leaving = not field.inside(q)
        if leaving:
            q = np.clip(q, 0.0, [w, h])
        verts.append(q)
        if leaving:
            break
        r_new = field.sample_R(q)
        if r_new > r_cur:
            streak += 1
            if streak >= 2:
                eta = cfg.step
        else:
            streak = 0
            eta *= cfg.step_shrink
        p, r_cur, d_prev = q, r_new, d
        if eta < cfg.min_step:
            break
    return np.array(verts) if len(verts) >= 2 else None


def isophote_direction(target, p):
    """Unit vector along the target's luminance level line at ``p`` (x axis if flat)."""
    lum = target @ np.array([0.2126, 0.7152, 0.0722])
    g = bilinear(gradient_field(lum), p[0], p[1])[0]
    n = float(np.hypot(*g))
    if n < 1e-12:
        return np.array([1.0, 0.0])
    return np.array([-g[1], g[0]]) / n


def extend_to_length(poly, min_length):
    """Lengthen a short polyline symmetrically along its end directions."""
    poly = np.asarray(poly, dtype=np.float64)
    edges = np.diff(poly, axis=0)
    length = float(np.hypot(edges[:, 0], edges[:, 1]).sum())
    if length >= min_length:
        return poly
    extra = 0.5 * (min_length - length)
    head, tail = _end_direction(poly[::-1]), _end_direction(poly)
    return np.vstack([poly[0] + extra * head, poly, poly[-1] + extra * tail])


def _end_direction(poly):
    for k in range(len(poly) - 2, -1, -1):
        e = poly[-1] - poly[k]
        n = float(np.hypot(*e))
        if n > 1e-9:
            return e / n
    return np.array([1.0, 0.0])


@dataclass
class ProbeResult:
    stroke: Stroke
    window: tuple                 # (r0, c0, h, w)
    reduction: float              # mean per-pixel drop of the residual inside the window
    objective: float              # full objective after adding the stroke
    color: np.ndarray
    height: np.ndarray
    sse_color: float
    sse_height: float
    pair_sum: float
    pair_count: int


class LossProbe:
    """Incrementally tracks the training objective while strokes are appended on top.

    A candidate drawn in front only changes pixels inside its own box, so the
    probe renders that box over the current canvas and updates running sums.
    The objective matches :func:`strokeforge.losses.total_loss` up to rounding.
    """

    def __init__(self, target, strokes, render_cfg: RenderConfig, optim_cfg: OptimConfig,
                 canvas: Canvas | None = None, height_target=None, height_scale: float = 64.0):
        self.target = np.asarray(target, dtype=np.float64)
        self.size = self.target.shape[:2]
        self.render_cfg = render_cfg
        self.cfg = optim_cfg
        self.height_target = height_target
        self.height_scale = float(height_scale)
        self.strokes = StrokeSet(list(strokes))
        if canvas is None:
            canvas = render_forward(self.strokes, render_cfg, self.size)
        self.color = canvas.color.copy()
        self.height = canvas.height.copy()
        self.sse_color = float(np.sum((self.color - self.target) ** 2))
        self.sse_height = self._sse_height(self.height)
        packed = self.strokes.pack()
        samples = packed.sample(render_cfg.n_samples)
        self.bbox = stroke_bboxes(samples, packed.width)
        self.heights = packed.height.copy()
        n = len(packed)
        self.len_sum = length_penalty(samples, optim_cfg.min_length)[0] * n
        self.width_sum = width_penalty(packed.width, optim_cfg.min_width, optim_cfg.max_width)[0] * n
        self.pair_sum, self.pair_count = self._pair_stats()

    def _sse_height(self, height):
        if self.height_target is None:
            return 0.0
        return float(np.sum((height / self.height_scale - self.height_target) ** 2))

    def _pair_stats(self):
        pairs = overlap_pairs(self.bbox)
        if len(pairs) == 0:
            return 0.0, 0
        diff = (self.heights[pairs[:, 0]] - self.heights[pairs[:, 1]]) / self.height_scale
        return float(np.sum(diff ** 2)), len(pairs)

    def _objective(self, sse_color, sse_height, len_sum, width_sum, n, pair_sum, pair_count):
        h, w = self.size
        total = np.sqrt(sse_color / (h * w * 3))
        if n:
            total += self.cfg.lambda_len * len_sum / n + self.cfg.lambda_width * width_sum / n
        if self.height_target is not None:
            total += self.cfg.lambda_height * np.sqrt(sse_height / (h * w))
            if pair_count:
                total += self.cfg.lambda_continuity * pair_sum / pair_count
        return float(total)

    @property
    def objective(self) -> float:
        return self._objective(self.sse_color, self.sse_height, self.len_sum, self.width_sum,
                               len(self.strokes), self.pair_sum, self.pair_count)

    def probe(self, stroke: Stroke) -> ProbeResult | None:
        samples = sample_bezier(stroke.chain, self.render_cfg.n_samples)[None]
        box = stroke_bboxes(samples, np.array([stroke.width]))[0]
        h, w = self.size
        r0, r1 = max(0, int(np.floor(box[1]))), min(h, int(np.ceil(box[3])))
        c0, c1 = max(0, int(np.floor(box[0]))), min(w, int(np.ceil(box[2])))
        if r1 <= r0 or c1 <= c0:
            return None
        window = (r0, c0, r1 - r0, c1 - c0)
        part = render_forward(StrokeSet([stroke]), self.render_cfg, self.size,
                              background=self.color, bg_height=self.height, window=window)
        sl = (slice(r0, r1), slice(c0, c1))
        tgt = self.target[sl]
        r_old = np.sum((self.color[sl] - tgt) ** 2, axis=-1)
        r_new = np.sum((part.color - tgt) ** 2, axis=-1)
        reduction = float(np.mean(r_old - r_new))
        sse_color = self.sse_color - float(r_old.sum()) + float(r_new.sum())
        sse_height = self.sse_height
        if self.height_target is not None:
            sse_height += (self._sse_height_window(part.height, sl)
                           - self._sse_height_window(self.height[sl], sl))
        len_pen = length_penalty(samples, self.cfg.min_length)[0]
        w_pen = width_penalty(np.array([stroke.width]), self.cfg.min_width, self.cfg.max_width)[0]
        pair_sum, pair_count = self.pair_sum, self.pair_count
        if len(self.bbox):
            hit = ((self.bbox[:, 0] <= box[2]) & (box[0] <= self.bbox[:, 2])
                   & (self.bbox[:, 1] <= box[3]) & (box[1] <= self.bbox[:, 3]))
            diff = (self.heights[hit] - stroke.height) / self.height_scale
            pair_sum += float(np.sum(diff ** 2))
            pair_count += int(hit.sum())
        objective = self._objective(sse_color, sse_height, self.len_sum + len_pen,
                                    self.width_sum + w_pen, len(self.strokes) + 1,
                                    pair_sum, pair_count)
        return ProbeResult(stroke, window, reduction, objective, part.color, part.height,
                           sse_color, sse_height, pair_sum, pair_count)

    def _sse_height_window(self, height, sl):
        return float(np.sum((height / self.height_scale - self.height_target[sl]) ** 2))

    def commit(self, res: ProbeResult):
        r0, c0, hh, ww = res.window
        self.color[r0:r0 + hh, c0:c0 + ww] = res.color
        self.height[r0:r0 + hh, c0:c0 + ww] = res.height
        self.sse_color = res.sse_color
        self.sse_height = res.sse_height
        s = res.stroke
        samples = sample_bezier(s.chain, self.render_cfg.n_samples)[None]
        self.len_sum += length_penalty(samples, self.cfg.min_length)[0]
        self.width_sum += width_penalty(np.array([s.width]), self.cfg.min_width, self.cfg.max_width)[0]
        self.bbox = np.vstack([self.bbox.reshape(-1, 4), stroke_bboxes(samples, np.array([s.width]))])
        self.heights = np.append(self.heights, s.height)
        self.pair_sum, self.pair_count = res.pair_sum, res.pair_count
        self.strokes.append(s)

    def canvas(self) -> Canvas:
        trans = np.full(self.size, np.nan)    # not tracked incrementally
        return Canvas(self.color.copy(), self.height.copy(), trans)


@dataclass
class SearchResult:
    accepted: list = field(default_factory=list)     # ProbeResult per accepted stroke
    attempts: int = 0
    rejections: int = 0
    fallbacks: int = 0

    @property
    def strokes(self) -> list[Stroke]:
        return [r.stroke for r in self.accepted]


def candidate_stroke(seed, resid: ResidualField, target, cfg: SearchConfig, min_length: float,
                     sid: int, height_target=None, height_scale: float = 64.0,
                     n_samples: int = 10):
    """Trace from ``seed`` and dress the result as a stroke. Returns (stroke, used_fallback)."""
    poly = trace_stroke(seed, resid, cfg)
    fallback = poly is None
    if fallback:
        half = 0.5 * min_length * isophote_direction(target, seed)
        poly = np.array([seed - half, seed + half])
    h, w = target.shape[:2]
    try:
        chain = fit_bezier(np.clip(extend_to_length(poly, min_length + 0.5), 0.0, [w, h]))
        # a wiggly trace can fit to a much shorter curve; lengthen the fitted curve itself
        for _ in range(3):
            pts = sample_bezier(chain, n_samples)
            if polyline_lengths(pts[None])[0] >= min_length:
                break
            pts = np.clip(extend_to_length(pts, min_length + 0.5), 0.0, [w, h])
            chain = fit_bezier(pts, segment_edges=None)
    except GeometryError:
        return None, fallback
    pts = sample_bezier(chain, n_samples)
    color = np.clip(bilinear(target, pts[:, 0], pts[:, 1]).mean(axis=0), 0.0, 1.0)
    height = 0.0
    if height_target is not None:
        mid = pts[len(pts) // 2]
        height = float(height_scale * bilinear(height_target, mid[0], mid[1])[0])
    return Stroke(chain, color, cfg.init_opacity, cfg.init_width, height, sid), fallback


def propose_strokes(probe: LossProbe, cfg: SearchConfig, budget: int, next_id: int = 0) -> SearchResult:
    """Accept strokes on top of ``probe``'s canvas until the budget or the rejection limit is hit.

    Seeds are re-sampled from the updated residual whenever a pass over the
    current seed list finishes with at least one acceptance.
    """
    out = SearchResult()
    if budget <= 0:
        return out
    consecutive = 0
    min_length = probe.cfg.min_length
    while True:
        resid = residual_field(probe.color, probe.target)
        seeds = sample_seeds(resid, cfg)
        accepted_this_pass = 0
        for seed in seeds:
            stroke, fallback = candidate_stroke(
                seed, resid, probe.target, cfg, min_length, next_id, probe.height_target,
                probe.height_scale, probe.render_cfg.n_samples)
            out.attempts += 1
            out.fallbacks += int(fallback)
            res = probe.probe(stroke) if stroke is not None else None
            if res is not None and res.reduction >= cfg.accept_threshold \
                    and res.objective <= probe.objective:
                probe.commit(res)
                out.accepted.append(res)
                next_id += 1
                accepted_this_pass += 1
                consecutive = 0
                if len(out.accepted) >= budget:
                    return out
            else:
                out.rejections += 1
                consecutive += 1
                if consecutive >= cfg.max_rejections:
                    return out
        if accepted_this_pass == 0 or not seeds:
            return out
