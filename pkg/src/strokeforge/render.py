"""Differentiable splat renderer.

Each stroke is sampled into a short polyline and deposited as a soft
capsule-shaped footprint. Within a stroke the opacity at a pixel comes from
its closest segment (the max of the per-segment kernels); strokes are then
composited front to back, newest in front, over a background layer. Colour
and height share the same compositing weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .config import RenderConfig
from .strokes import PackedStrokes, StrokeSet


@dataclass
class Canvas:
    color: np.ndarray           # (H, W, 3)
    height: np.ndarray          # (H, W)
    transmittance: np.ndarray   # (H, W)

    @property
    def shape(self) -> tuple[int, int]:
        return self.color.shape[:2]

    def copy(self) -> "Canvas":
        return Canvas(self.color.copy(), self.height.copy(), self.transmittance.copy())

    @classmethod
    def blank(cls, size, background=(1.0, 1.0, 1.0)) -> "Canvas":
        h, w = size
        return cls(np.broadcast_to(np.asarray(background, float), (h, w, 3)).copy(),
                   np.zeros((h, w)), np.ones((h, w)))


@dataclass
class StrokeGrads:
    ctrl: np.ndarray        # (P, 2)
    color: np.ndarray       # (N, 3)
    opacity: np.ndarray     # (N,)
    width: np.ndarray       # (N,)
    height: np.ndarray      # (N,)
    samples: np.ndarray     # (N, n_samples, 2)


def sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def splat_kernel(d, w, tau):
    """Normalised soft-capsule kernel: 1 on the centre line, 0.5 at the rim, 0 at d = w."""
    d = np.asarray(d, dtype=np.float64)
    s_v = sigmoid(-0.5 * np.asarray(w, float) / tau)
    # the exact value never exceeds 1, but a saturated sigmoid can round it up an ulp
    return np.minimum((sigmoid((0.5 * w - d) / tau) - s_v) / (1.0 - 2.0 * s_v), 1.0)


def segment_distance(x, a, b):
    """Point-to-segment distance and its partials.

    Returns ``(d, dd_dx, dd_da, dd_db)``. In the endpoint regime the partials
    are those of the distance to the active endpoint.
    """
    x, a, b = (np.asarray(v, dtype=np.float64) for v in (x, a, b))
    e = b - a
    l2 = float(e @ e)
    t = 0.0 if l2 == 0.0 else float(np.clip((x - a) @ e / l2, 0.0, 1.0))
    diff = x - (a + t * e)
    d = float(np.hypot(*diff))
    unit = diff / d if d > 0 else np.zeros(2)
    return d, unit, -(1.0 - t) * unit, -t * unit


def _as_packed(strokes) -> PackedStrokes:
    if isinstance(strokes, PackedStrokes):
        return strokes
    if isinstance(strokes, StrokeSet):
        return strokes.pack()
    return PackedStrokes.from_strokes(strokes)


@dataclass
class Scene:
    """Per-pass geometry shared by the forward and backward kernels."""
    packed: PackedStrokes
    pts: np.ndarray
    seg: np.ndarray         # segment table of pts, see _kernels.segment_table
    bbox: np.ndarray
    tile_ptr: np.ndarray
    tile_ids: np.ndarray
    tiles_x: int
    window: tuple[int, int, int, int]     # (oy, ox, h, w)
    tau: float
    tile_size: int
    record: tuple | None = None     # forward fragments kept for the adjoint


def stroke_bboxes(pts: np.ndarray, width: np.ndarray) -> np.ndarray:
    """Axis-aligned boxes ``(x0, y0, x1, y1)`` covering each kernel's support (d < w)."""
    if len(pts) == 0:
        return np.zeros((0, 4))
    pad = width[:, None]
    lo = pts.min(axis=1) - pad
    hi = pts.max(axis=1) + pad
    return np.concatenate([lo, hi], axis=1)


def bucket_tiles(bbox: np.ndarray, window, tile_size: int):
    """CSR lists of the strokes touching each tile, newest stroke first."""
    oy, ox, h, w = window
    tiles_x = -(-w // tile_size)
    tiles_y = -(-h // tile_size)
    n_tiles = tiles_x * tiles_y
    if len(bbox) == 0:
        return np.zeros(n_tiles + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), tiles_x
    # pixel columns whose centres fall inside the box, in window coordinates
    c0 = np.ceil(bbox[:, 0] - ox - 0.5)
    c1 = np.floor(bbox[:, 2] - ox - 0.5)
    r0 = np.ceil(bbox[:, 1] - oy - 0.5)
    r1 = np.floor(bbox[:, 3] - oy - 0.5)
    c0, r0 = np.maximum(c0, 0), np.maximum(r0, 0)
    c1, r1 = np.minimum(c1, w - 1), np.minimum(r1, h - 1)
    live = (c0 <= c1) & (r0 <= r1)
    sid = np.nonzero(live)[0]
    tx0 = (c0[live] // tile_size).astype(np.int64)
    tx1 = (c1[live] // tile_size).astype(np.int64)
    ty0 = (r0[live] // tile_size).astype(np.int64)
    ty1 = (r1[live] // tile_size).astype(np.int64)
    nx = tx1 - tx0 + 1
    counts = nx * (ty1 - ty0 + 1)
    owner = np.repeat(np.arange(len(sid)), counts)
    local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    tx = tx0[owner] + local % nx[owner]
    ty = ty0[owner] + local // nx[owner]
    tile = ty * tiles_x + tx
    stroke = sid[owner]
    order = np.lexsort((-stroke, tile))
    tile_ptr = np.concatenate([[0], np.cumsum(np.bincount(tile, minlength=n_tiles))]).astype(np.int64)
    return tile_ptr, stroke[order].astype(np.int64), tiles_x


def prepare_scene(strokes, config: RenderConfig, size, window=None) -> Scene:
    packed = _as_packed(strokes)
    h, w = size
    window = (0, 0, h, w) if window is None else tuple(int(v) for v in window)
    pts = np.ascontiguousarray(packed.sample(config.n_samples))
    bbox = stroke_bboxes(pts, packed.width)
    tile_ptr, tile_ids, tiles_x = bucket_tiles(bbox, window, config.tile_size)
    return Scene(packed, pts, _kernels.segment_table(pts), bbox, tile_ptr, tile_ids, tiles_x, window, float(config.tau),
                 int(config.tile_size))


def _layers(scene: Scene, background, bg_height, size):
    oy, ox, h, w = scene.window
    bg = np.empty((h, w, 4))
    background = np.asarray(background, dtype=np.float64)
    if background.ndim == 1:
        bg[..., :3] = background
    else:
        bg[..., :3] = background[oy:oy + h, ox:ox + w] if background.shape[:2] == tuple(size) \
            else background
    if bg_height is None:
        bg[..., 3] = 0.0
    else:
        bg_height = np.asarray(bg_height, dtype=np.float64)
        bg[..., 3] = bg_height[oy:oy + h, ox:ox + w] if bg_height.shape == tuple(size) \
            else bg_height
    p = scene.packed
    vals = np.ascontiguousarray(np.concatenate([p.color, p.height[:, None]], axis=1)) \
        if len(p) else np.zeros((0, 4))
    return bg, vals


def render_scene(scene: Scene, background=(1.0, 1.0, 1.0), bg_height=None, size=None,
                 record: bool = False) -> Canvas:
    """Composite a prepared scene. ``record=True`` keeps the per-fragment data
    so a following :func:`backward_scene` with the same background skips the
    distance queries."""
    oy, ox, h, w = scene.window
    size = (h, w) if size is None else size
    bg, vals = _layers(scene, background, bg_height, size)
    p = scene.packed
    args = (scene.seg, p.width, p.opacity, vals, scene.tau, scene.bbox, scene.tile_ptr,
            scene.tile_ids, scene.tiles_x, scene.tile_size, oy, ox, h, w, bg)
    if record:
        caps = np.diff(scene.tile_ptr) * scene.tile_size ** 2
        tile_base = np.concatenate([[0], np.cumsum(caps)]).astype(np.int64)
        out, trans, first, counts, rec_i, rec_f = _kernels.composite_forward_record(*args, tile_base)
        scene.record = (first, counts, rec_i, rec_f)
    else:
        out, trans = _kernels.composite_forward(*args)
    return Canvas(out[..., :3], out[..., 3], trans)


def render_forward(strokes, config: RenderConfig, size, background=None, bg_height=None,
                   window=None) -> Canvas:
    """Render strokes into colour, height and transmittance buffers.

    ``background`` is an RGB triple or an ``(H, W, 3)`` layer (default
    ``config.background``); ``bg_height`` is the height of that layer. With
    ``window=(oy, ox, h, w)`` only that sub-rectangle is rendered.
    """
    scene = prepare_scene(strokes, config, size, window)
    bg = config.background if background is None else background
    return render_scene(scene, bg, bg_height, size)


def backward_scene(scene: Scene, grad_color, grad_height=None, background=(1.0, 1.0, 1.0),
                   bg_height=None, size=None) -> StrokeGrads:
    oy, ox, h, w = scene.window
    size = (h, w) if size is None else size
    bg, vals = _layers(scene, background, bg_height, size)
    gout = np.zeros((h, w, 4))
    gout[..., :3] = grad_color
    if grad_height is not None:
        gout[..., 3] = grad_height
    p = scene.packed
    n, n_pts = len(p), scene.pts.shape[1]
    if n == 0:
        return StrokeGrads(np.zeros((0, 2)), np.zeros((0, 3)), np.zeros(0), np.zeros(0),
                           np.zeros(0), np.zeros((0, n_pts, 2)))
    if scene.record is not None:
        first, counts, rec_i, rec_f = scene.record
        acc = _kernels.composite_backward_record(
            p.opacity, vals, scene.tile_ptr, scene.tile_ids, scene.tiles_x, scene.tile_size,
            h, w, bg, gout, n_pts, first, counts, rec_i, rec_f)
    else:
        acc = _kernels.composite_backward(
            scene.seg, p.width, p.opacity, vals, scene.tau, scene.bbox, scene.tile_ptr,
            scene.tile_ids, scene.tiles_x, scene.tile_size, oy, ox, h, w, bg, gout)
    per_stroke = _kernels.reduce_entries(scene.tile_ids, acc, n)
    samples = per_stroke[:, 6:].reshape(n, n_pts, 2)
    ctrl = p.jacobian(n_pts).T @ samples.reshape(-1, 2)
    return StrokeGrads(ctrl=np.asarray(ctrl), color=per_stroke[:, 2:5], opacity=per_stroke[:, 0],
                       width=per_stroke[:, 1], height=per_stroke[:, 5], samples=samples)


def render_backward(strokes, config: RenderConfig, size, grad_color, grad_height=None,
                    background=None, bg_height=None) -> StrokeGrads:
    """Exact adjoint of :func:`render_forward` for the given output gradients."""
    scene = prepare_scene(strokes, config, size)
    bg = config.background if background is None else background
    return backward_scene(scene, grad_color, grad_height, bg, bg_height, size)


@dataclass
class Fragments:
    """Every (pixel, stroke) pair with positive kernel, in compositing order."""
    starts: np.ndarray      # (h*w + 1,) fragment range of each pixel
    pixel: np.ndarray
    stroke: np.ndarray
    segment: np.ndarray
    seg_param: np.ndarray
    distance: np.ndarray
    kernel: np.ndarray
    alpha: np.ndarray
    trans_before: np.ndarray
    transmittance: np.ndarray   # (h, w) after all strokes
    window: tuple

    def composite(self, values, background) -> tuple[np.ndarray, np.ndarray]:
        """Composite per-fragment ``values`` (F, C) over a (h, w, C) background.

        Returns the image and the per-fragment weights ``alpha * T`` used.
        """
        bg = np.asarray(background, dtype=np.float64)
        bg = np.ascontiguousarray(bg.reshape(bg.shape[0], bg.shape[1], -1))
        values = np.asarray(values, dtype=np.float64)
        values = np.ascontiguousarray(values.reshape(len(self.alpha), bg.shape[2]))
        return _kernels.composite_fragments(self.starts, values, self.alpha, self.trans_before,
                                            self.transmittance, bg)


def rasterize_fragments(strokes, config: RenderConfig, size, window=None) -> Fragments:
    scene = prepare_scene(strokes, config, size, window)
    oy, ox, h, w = scene.window
    p = scene.packed
    counts = _kernels.count_fragments(scene.seg, p.width, scene.tau, scene.bbox, scene.tile_ptr,
                                      scene.tile_ids, scene.tiles_x, scene.tile_size, oy, ox, h, w)
    starts = np.concatenate([[0], np.cumsum(counts.ravel())]).astype(np.int64)
    ints, flts, trans = _kernels.fill_fragments(
        scene.seg, p.width, p.opacity, scene.tau, scene.bbox, scene.tile_ptr, scene.tile_ids,
        scene.tiles_x, scene.tile_size, oy, ox, h, w, starts)
    return Fragments(starts, ints[:, 0], ints[:, 1], ints[:, 2], flts[:, 0], flts[:, 1],
                     flts[:, 2], flts[:, 3], flts[:, 4], trans, scene.window)
