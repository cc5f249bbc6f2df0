"""Joint Adam refinement of every stroke parameter, and dead-stroke removal."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import OptimConfig, RenderConfig
from .losses import LossTerms, loss_and_grad, total_loss
from .render import render_forward, stroke_bboxes
from .strokes import PackedStrokes

log = logging.getLogger(__name__)

PARAM_GROUPS = ("ctrl", "color", "opacity", "width", "height")


def lr_table(cfg: OptimConfig) -> dict:
    return {
        "ctrl": cfg.base_lr,
        "color": cfg.base_lr * cfg.color_lr_scale,
        "width": cfg.base_lr * cfg.width_lr_scale,
        "opacity": cfg.base_lr * cfg.opacity_lr_scale,
        "height": cfg.base_lr * cfg.height_lr_scale,
    }


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()},
                   {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}, 0)


def adam_step(params: dict, grads: dict, state: AdamState, lrs: dict,
              beta1=0.9, beta2=0.999, eps=1e-8) -> dict:
    """One bias-corrected Adam update. ``state`` is advanced in place; returns new params."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    out = {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g
        m_hat = state.m[k] / c1
        v_hat = state.v[k] / c2
        out[k] = p - lrs[k] * m_hat / (np.sqrt(v_hat) + eps)
    return out


def get_params(packed: PackedStrokes) -> dict:
    return {k: getattr(packed, k).copy() for k in PARAM_GROUPS}


def set_params(packed: PackedStrokes, params: dict, cfg: OptimConfig) -> PackedStrokes:
    """Copy of ``packed`` with ``params`` applied and the box constraints enforced."""
    out = packed.copy()
    out.ctrl = params["ctrl"]
    out.color = params["color"]
    out.opacity = np.clip(params["opacity"], 0.0, 1.0)
    out.width = np.maximum(params["width"], cfg.min_width)
    out.height = params["height"]
    return out


@dataclass
class StageResult:
    packed: PackedStrokes          # best iterate
    terms: LossTerms               # loss of the best iterate
    steps: int
    history: list                  # total loss per step (before that step's update)


def optimize_stage(packed: PackedStrokes, target, render_cfg: RenderConfig, cfg: OptimConfig,
                   height_target=None, height_scale: float = 64.0, max_steps=None,
                   callback=None) -> StageResult:
    """Adam on all strokes until ``max_steps`` or no relative gain >= tol for ``patience`` steps.

    Returns the lowest-loss iterate seen, never a worse one than the input.
    """
    max_steps = cfg.max_steps if max_steps is None else max_steps
    terms, _, grads = loss_and_grad(packed, target, render_cfg, cfg, height_target, height_scale)
    best_packed, best_terms = packed, terms
    history = [terms.total]
    if len(packed) == 0 or max_steps <= 0:
        return StageResult(best_packed, best_terms, 0, history)
    lrs = lr_table(cfg)
    params = get_params(packed)
    state = AdamState.zeros_like(params)
    stale = 0
    ref = terms.total
    step = 0
    for step in range(1, max_steps + 1):
        params = adam_step(params, vars(grads), state, lrs, cfg.adam_beta1, cfg.adam_beta2,
                           cfg.adam_eps)
        current = set_params(packed, params, cfg)
        # keep the optimizer's copy inside the feasible box too
        params["opacity"], params["width"] = current.opacity.copy(), current.width.copy()
        terms, _, grads = loss_and_grad(current, target, render_cfg, cfg, height_target,
                                        height_scale)
        history.append(terms.total)
        if terms.total < best_terms.total:
            best_packed, best_terms = current, terms
        gain = ref - terms.total
        if gain > 0 and gain >= cfg.convergence_tol * abs(ref):
            ref = terms.total
            stale = 0
        else:
            stale += 1
        if callback is not None:
            callback(step, terms)
        if stale >= cfg.convergence_patience:
            break
    return StageResult(best_packed, best_terms, step, history)


def _local_residual_change(packed, keep, i, target, render_cfg, size):
    """Mean change of the channel-summed squared error in stroke i's box when it is removed."""
    pts = packed.sample(render_cfg.n_samples)[i:i + 1]
    box = stroke_bboxes(pts, packed.width[i:i + 1])[0]
    h, w = size
    r0, r1 = max(0, int(np.floor(box[1]))), min(h, int(np.ceil(box[3])))
    c0, c1 = max(0, int(np.floor(box[0]))), min(w, int(np.ceil(box[2])))
    if r1 <= r0 or c1 <= c0:
        return 0.0
    window = (r0, c0, r1 - r0, c1 - c0)
    tgt = target[r0:r1, c0:c1]
    with_i = render_forward(packed, render_cfg, size, window=window).color
    without = render_forward(packed.subset(keep), render_cfg, size, window=window).color
    return float(np.mean(np.sum((without - tgt) ** 2, axis=-1) - np.sum((with_i - tgt) ** 2, axis=-1)))


def dead_stroke_mask(packed: PackedStrokes, target, render_cfg: RenderConfig, cfg: OptimConfig):
    """Strokes that are nearly transparent and whose removal barely changes their local loss."""
    size = target.shape[:2]
    dead = np.zeros(len(packed), dtype=bool)
    for i in np.nonzero(packed.opacity < cfg.reinit_opacity_threshold)[0]:
        keep = np.ones(len(packed), dtype=bool)
        keep[i] = False
        change = _local_residual_change(packed, keep, i, target, render_cfg, size)
        dead[i] = abs(change) < cfg.reinit_loss_threshold
    return dead


def reinitialize_dead_strokes(packed: PackedStrokes, target, render_cfg: RenderConfig,
                              cfg: OptimConfig, height_target=None, height_scale: float = 64.0):
    """Drop dead strokes; returns (new strokes, number removed).

    Dead strokes are dropped one at a time in order, and a drop is skipped if
    it would raise the global objective (stroke-averaged regularizers can move
    either way), so the loss never goes up across the phase boundary.
    """
    dead = dead_stroke_mask(packed, target, render_cfg, cfg)
    if not dead.any():
        return packed, 0
    keep = np.ones(len(packed), dtype=bool)
    best, _ = total_loss(packed, target, render_cfg, cfg, height_target, height_scale)
    for i in np.nonzero(dead)[0]:
        keep[i] = False
        trial, _ = total_loss(packed.subset(keep), target, render_cfg, cfg, height_target,
                              height_scale)
        if trial.total > best.total:
            keep[i] = True
            log.info("keeping dead stroke %d: removal would raise the objective", int(packed.ids[i]))
        else:
            best = trial
    removed = int((~keep).sum())
    return (packed.subset(keep), removed) if removed else (packed, 0)


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
