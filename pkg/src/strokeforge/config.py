"""Hyperparameters for every stage, as nested dataclasses that round-trip through JSON."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class RenderConfig:
    tau: float = 0.7
    n_samples: int = 10
    background: tuple = (1.0, 1.0, 1.0)
    tile_size: int = 16

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if self.tile_size < 1:
            raise ValueError("tile_size must be >= 1")
        self.background = tuple(float(c) for c in self.background)


@dataclass
class SearchConfig:
    seed_fraction: float = 0.12
    nms_window: int = 7
    step: float = 1.2
    smoothing: float = 0.8
    max_vertices: int = 20
    accept_threshold: float = 0.01
    max_rejections: int = 20
    epsilon: float = 1e-8
    step_shrink: float = 0.7
    min_step: float = 0.25
    init_width: float = 4.0
    init_opacity: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.smoothing <= 1.0:
            raise ValueError("smoothing must lie in [0, 1]")
        if self.nms_window < 1 or self.nms_window % 2 == 0:
            raise ValueError("nms_window must be a positive odd integer")
        for name in ("seed_fraction", "step", "max_vertices", "max_rejections", "epsilon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class OptimConfig:
    base_lr: float = 0.01
    color_lr_scale: float = 0.1
    width_lr_scale: float = 0.01
    opacity_lr_scale: float = 1.0
    height_lr_scale: float = 1.0
    max_steps: int = 4000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_len: float = 0.01
    lambda_width: float = 0.01
    lambda_height: float = 0.1
    lambda_continuity: float = 0.01
    min_length: float = 8.0
    min_width: float = 0.5
    max_width: float = 24.0
    reinit_opacity_threshold: float = 0.02
    reinit_loss_threshold: float = 1e-4
    convergence_patience: int = 200
    convergence_tol: float = 1e-5

    def __post_init__(self):
        if not (self.base_lr > 0 and self.color_lr_scale > 0 and self.width_lr_scale > 0):
            raise ValueError("learning rates must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")


@dataclass
class CanvasConfig:
    base_color: tuple = (0.8, 0.75, 0.7)
    color_scale: float = 0.3
    weave_weight: float = 0.45
    weave_freq: float = 20.0
    weave_period_px: float = 16.0       # pixels per unit of the weave coordinate
    weave_angle: float = 0.0            # radians; rotates the orthogonal weave directions
    fbm_octaves: int = 4
    fbm_lacunarity: float = 2.0
    fbm_gain: float = 0.5
    fbm_cell_px: float = 32.0
    height_max: float = 1.0
    seed: int = 0


@dataclass
class ImpastoConfig:
    amp_coef: float = 0.1
    base_freq: float = 0.5
    weights: tuple = (0.65, 0.35)
    ratios: tuple = (1.0, 1.8)
    phase_seed: int = 0


@dataclass
class ModulationConfig:
    alpha: float = 0.8
    h_t: float = 40.0


@dataclass
class ShadingConfig:
    roughness: float = 0.3
    f0: float = 0.08
    light_diffuse: float = 1.0
    light_specular: float = 0.8
    slope_scale: float | None = None    # None: 2 / canvas.height_max per pixel
    light_dir: tuple = (0.0, 0.0, 1.0)
    view_dir: tuple = (0.0, 0.0, 1.0)


@dataclass
class HeightFieldConfig:
    lambda_h: float = 0.6
    texture_sigma: float = 4.0
    height_scale: float = 64.0
    canvas: CanvasConfig = field(default_factory=CanvasConfig)
    impasto: ImpastoConfig = field(default_factory=ImpastoConfig)
    modulation: ModulationConfig = field(default_factory=ModulationConfig)
    shading: ShadingConfig = field(default_factory=ShadingConfig)

    def __post_init__(self):
        if not 0.0 <= self.lambda_h <= 1.0:
            raise ValueError("lambda_h must lie in [0, 1]")


@dataclass
class ToyExperimentConfig:
    noise_sigma: float = 0.05
    iterations: int = 200
    learning_rate: float = 0.3
    n_vertices: int = 32
    seed: int = 0
    parameterization: str = "chord"     # or "uniform": frozen t_i = i / (N - 1)

    def __post_init__(self):
        if self.parameterization not in ("chord", "uniform"):
            raise ValueError("parameterization must be 'chord' or 'uniform'")
        if self.n_vertices < 5:
            raise ValueError("the toy curve needs at least 5 vertices")


@dataclass
class PipelineConfig:
    iterations: int = 3
    budget: int | None = None           # None: ceil(H*W / 100), capped at 16000
    phase_split: tuple = (0.7, 0.2, 0.1)
    relight: bool = False
    seed: int = 0
    render: RenderConfig = field(default_factory=RenderConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    height: HeightFieldConfig = field(default_factory=HeightFieldConfig)

    def to_dict(self) -> dict:
        return to_dict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        return from_dict(cls, data)


def default_budget(height: int, width: int) -> int:
    return min(16000, -(-height * width // 100))


def phase_budgets(total: int, split, iterations: int) -> list[int]:
    """Split a stroke budget across iterations; iterations past the split get its last share."""
    shares = [split[min(i, len(split) - 1)] for i in range(iterations)]
    return [int(round(total * s)) for s in shares]


def to_dict(obj) -> dict:
    out = dataclasses.asdict(obj)
    return json.loads(json.dumps(out))


def from_dict(cls, data: dict | None):
    """Build ``cls`` from a (possibly partial) dict; missing keys keep defaults."""
    data = data or {}
    hints = typing.get_type_hints(cls)
    kwargs = {}
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        hint = hints[f.name]
        if dataclasses.is_dataclass(hint):
            value = from_dict(hint, value)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[f.name] = value
    return cls(**kwargs)


def load_config(path) -> PipelineConfig:
    with open(Path(path)) as fh:
        return PipelineConfig.from_dict(json.load(fh))
