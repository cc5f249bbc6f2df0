"""Alternating search / optimize driver."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig, default_budget, phase_budgets
from .losses import total_loss
from .metrics import json_number, psnr, ssim
from .optim import optimize_stage, reinitialize_dead_strokes
from .relight import build_target_height
from .render import Canvas
from .search import LossProbe, propose_strokes
from .strokes import PackedStrokes, StrokeSet

log = logging.getLogger(__name__)


@dataclass
class PipelineResult:
    strokes: StrokeSet
    canvas: Canvas
    trace: list = field(default_factory=list)
    height_target: np.ndarray | None = None
    searches: list = field(default_factory=list)     # SearchRound per iteration


@dataclass
class SearchRound:
    """Strokes a search started from and the probe results it accepted, in order."""
    t: int
    base: PackedStrokes
    accepted: list


def phase_record(phase, t, packed, target, cfg, height_target, elapsed, **extra):
    terms, canvas = total_loss(packed, target, cfg.render, cfg.optim, height_target,
                               cfg.height.height_scale)
    rec = {
        "phase": phase,
        "t": t,
        "loss": terms.as_dict(),
        "psnr": json_number(psnr(canvas.color, target)),
        "ssim": ssim(canvas.color, target) if min(target.shape[:2]) >= 11 else None,
        "strokes": len(packed),
        "wall_time_s": elapsed,
    }
    rec.update(extra)
    return rec, canvas


def run_pipeline(target, cfg: PipelineConfig | None = None, depth=None, callback=None) -> PipelineResult:
    """Reconstruct ``target`` (H, W, 3 in [0, 1]) with ``cfg.iterations`` search/optimize rounds.

    ``callback(record)`` is invoked after every phase with its metrics record.
    """
    cfg = cfg or PipelineConfig()
    target = np.asarray(target, dtype=np.float64)
    h, w = target.shape[:2]
    height_target = build_target_height(target, depth, cfg.height) if cfg.relight else None
    scale = cfg.height.height_scale
    budget = cfg.budget if cfg.budget is not None else default_budget(h, w)
    budgets = phase_budgets(budget, cfg.phase_split, cfg.iterations)
    packed = PackedStrokes.empty()
    next_id = 0
    grant = 0
    trace = []
    searches = []

    def emit(rec):
        trace.append(rec)
        log.info("%s t=%d loss=%.5f psnr=%s strokes=%d", rec["phase"], rec["t"], rec["loss"]["total"],
                 rec["psnr"], rec["strokes"])
        if callback is not None:
            callback(rec)

    rec, canvas = phase_record("init", 0, packed, target, cfg, height_target, 0.0)
    emit(rec)
    for t in range(1, cfg.iterations + 1):
        start = time.perf_counter()
        strokes = packed.unpack()
        probe = LossProbe(target, strokes, cfg.render, cfg.optim, canvas, height_target, scale)
        found = propose_strokes(probe, cfg.search, budgets[t - 1] + grant, next_id)
        next_id += len(found.accepted)
        searches.append(SearchRound(t, packed, found.accepted))
        strokes.extend(found.strokes)
        packed = strokes.pack()
        rec, canvas = phase_record("search", t, packed, target, cfg, height_target,
                                   time.perf_counter() - start, accepted=len(found.accepted),
                                   attempts=found.attempts, granted=grant)
        emit(rec)

        start = time.perf_counter()
        stage = optimize_stage(packed, target, cfg.render, cfg.optim, height_target, scale)
        packed = stage.packed
        removed = 0
        if t < cfg.iterations:
            packed, removed = reinitialize_dead_strokes(packed, target, cfg.render, cfg.optim,
                                                        height_target, scale)
        grant = removed
        rec, canvas = phase_record("optimize", t, packed, target, cfg, height_target,
                                   time.perf_counter() - start, steps=stage.steps, removed=removed)
        emit(rec)
    return PipelineResult(packed.unpack(), canvas, trace, height_target, searches)
