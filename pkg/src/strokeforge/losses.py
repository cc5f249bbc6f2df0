"""Training objective: RMS data term plus hinge regularizers.

Every term returns its value and its gradient so the optimizer can chain
them with the renderer adjoint. Terms averaged over strokes use the current
stroke count, so adding a stroke that satisfies every bound lowers them.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .config import OptimConfig, RenderConfig
from .render import Canvas, backward_scene, prepare_scene, render_scene, stroke_bboxes


@dataclass
class LossTerms:
    total: float
    data: float
    length: float
    width: float
    height: float = 0.0
    continuity: float = 0.0

    def as_dict(self) -> dict:
        return {k: float(v) for k, v in asdict(self).items()}


def data_term(color, target):
    """RMS over pixels and channels, and its gradient w.r.t. ``color``."""
    diff = np.asarray(color) - np.asarray(target)
    rms = float(np.sqrt(np.mean(diff * diff)))
    if rms == 0.0:
        return 0.0, np.zeros_like(diff)
    return rms, diff / (rms * diff.size)


def height_term(height, height_target, scale):
    """RMS between rendered heights (in height units) and a [0, 1] target field."""
    diff = np.asarray(height) / scale - np.asarray(height_target)
    rms = float(np.sqrt(np.mean(diff * diff)))
    if rms == 0.0:
        return 0.0, np.zeros_like(diff)
    return rms, diff / (rms * diff.size * scale)


def polyline_lengths(samples):
    edges = np.diff(samples, axis=1)
    return np.sqrt((edges ** 2).sum(axis=2)).sum(axis=1)


def length_penalty(samples, min_length):
    """mean_i max(0, l_min - len_i)^2 and its gradient w.r.t. the sampled vertices."""
    n = len(samples)
    if n == 0:
        return 0.0, np.zeros_like(samples)
    edges = np.diff(samples, axis=1)
    norms = np.sqrt((edges ** 2).sum(axis=2))
    short = np.maximum(0.0, min_length - norms.sum(axis=1))
    value = float(np.mean(short ** 2))
    unit = np.divide(edges, norms[..., None], out=np.zeros_like(edges), where=norms[..., None] > 0)
    dlen = np.zeros_like(samples)
    dlen[:, :-1] -= unit
    dlen[:, 1:] += unit
    grad = (-2.0 * short / n)[:, None, None] * dlen
    return value, grad


def width_penalty(width, min_width, max_width):
    n = len(width)
    if n == 0:
        return 0.0, np.zeros_like(width)
    over = np.maximum(0.0, width - max_width)
    under = np.maximum(0.0, min_width - width)
    value = float(np.mean(over ** 2 + under ** 2))
    return value, (2.0 * over - 2.0 * under) / n


def overlap_pairs(bbox):
    """Index pairs (i < j) whose boxes ``(x0, y0, x1, y1)`` intersect."""
    if len(bbox) < 2:
        return np.zeros((0, 2), dtype=np.int64)
    hit = ((bbox[:, None, 0] <= bbox[None, :, 2]) & (bbox[None, :, 0] <= bbox[:, None, 2])
           & (bbox[:, None, 1] <= bbox[None, :, 3]) & (bbox[None, :, 1] <= bbox[:, None, 3]))
    i, j = np.nonzero(np.triu(hit, k=1))
    return np.stack([i, j], axis=1)


def continuity_penalty(heights, pairs, scale):
    """Mean squared (normalised) height difference over adjacent stroke pairs."""
    grad = np.zeros_like(heights)
    if len(pairs) == 0:
        return 0.0, grad
    diff = (heights[pairs[:, 0]] - heights[pairs[:, 1]]) / scale
    value = float(np.mean(diff ** 2))
    g = 2.0 * diff / (len(pairs) * scale)
    np.add.at(grad, pairs[:, 0], g)
    np.add.at(grad, pairs[:, 1], -g)
    return value, grad


@dataclass
class ParamGrads:
    ctrl: np.ndarray
    color: np.ndarray
    opacity: np.ndarray
    width: np.ndarray
    height: np.ndarray


def loss_and_grad(packed, target, render_cfg: RenderConfig, cfg: OptimConfig,
                  height_target=None, height_scale: float = 64.0, need_grad: bool = True):
    """Total objective, its terms, the rendered canvas and (optionally) parameter gradients."""
    size = target.shape[:2]
    scene = prepare_scene(packed, render_cfg, size)
    canvas = render_scene(scene, render_cfg.background, None, size, record=need_grad)
    data, g_color = data_term(canvas.color, target)
    l_len, g_samples = length_penalty(scene.pts, cfg.min_length)
    l_w, g_width = width_penalty(packed.width, cfg.min_width, cfg.max_width)
    total = data + cfg.lambda_len * l_len + cfg.lambda_width * l_w
    l_h = l_c = 0.0
    g_height_map = None
    g_height = np.zeros(len(packed))
    if height_target is not None:
        l_h, g_height_map = height_term(canvas.height, height_target, height_scale)
        pairs = overlap_pairs(stroke_bboxes(scene.pts, packed.width))
        l_c, g_height = continuity_penalty(packed.height, pairs, height_scale)
        total += cfg.lambda_height * l_h + cfg.lambda_continuity * l_c
        g_height = cfg.lambda_continuity * g_height
        g_height_map = cfg.lambda_height * g_height_map
    terms = LossTerms(float(total), data, l_len, l_w, l_h, l_c)
    if not need_grad:
        return terms, canvas, None
    n = len(packed)
    if n == 0:
        empty = ParamGrads(np.zeros((0, 2)), np.zeros((0, 3)), np.zeros(0), np.zeros(0), np.zeros(0))
        return terms, canvas, empty
    sg = backward_scene(scene, g_color, g_height_map, render_cfg.background, None, size)
    samples = sg.samples + cfg.lambda_len * g_samples
    jac = packed.jacobian(scene.pts.shape[1])
    ctrl = np.asarray(jac.T @ samples.reshape(-1, 2))
    return terms, canvas, ParamGrads(ctrl, sg.color, sg.opacity,
                                     sg.width + cfg.lambda_width * g_width, sg.height + g_height)


def total_loss(packed, target, render_cfg: RenderConfig, cfg: OptimConfig, height_target=None,
               height_scale: float = 64.0) -> tuple[LossTerms, Canvas]:
    terms, canvas, _ = loss_and_grad(packed, target, render_cfg, cfg, height_target, height_scale,
                                     need_grad=False)
    return terms, canvas
