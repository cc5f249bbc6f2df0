"""Height fields and painterly relighting.

A target relief is built from depth plus fine luminance texture. The painted
result gets a procedural canvas (weave + fbm noise), per-stroke impasto
ridges modulated by the canvas, and is shaded with a Lambert + GGX model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.color import rgb2lab

from .config import CanvasConfig, HeightFieldConfig, ImpastoConfig, ModulationConfig, RenderConfig, ShadingConfig
from .render import Fragments, rasterize_fragments
from .strokes import PackedStrokes

REC709 = np.array([0.2126, 0.7152, 0.0722])


def normalize01(x):
    """Min-max normalise to [0, 1]; a constant field maps to all ones."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = float(x.min()), float(x.max())
    if hi - lo <= 0.0:
        return np.ones_like(x)
    return (x - lo) / (hi - lo)


def texture_height(target, sigma=4.0):
    """High-pass of CIELAB lightness: zero mean, peak magnitude 1 (all zeros if flat)."""
    L = rgb2lab(np.clip(target, 0.0, 1.0))[..., 0] / 100.0
    hp = L - ndimage.gaussian_filter(L, sigma, mode="reflect")
    hp = hp - hp.mean()
    peak = float(np.abs(hp).max())
    return hp / peak if peak > 1e-12 else np.zeros_like(hp)


def fallback_depth(target):
    """Blurred inverted luminance, used when no depth map is supplied."""
    lum = np.asarray(target, dtype=np.float64) @ REC709
    return ndimage.gaussian_filter(1.0 - lum, min(lum.shape) / 16.0, mode="reflect")


def build_target_height(target, depth=None, cfg: HeightFieldConfig | None = None):
    cfg = cfg or HeightFieldConfig()
    target = np.asarray(target, dtype=np.float64)
    if depth is None:
        depth = fallback_depth(target)
    else:
        depth = np.asarray(depth, dtype=np.float64)
        if depth.ndim == 3:
            depth = depth @ REC709 if depth.shape[2] == 3 else depth[..., 0]
        if depth.shape != target.shape[:2]:
            raise ValueError(f"depth map {depth.shape} does not match image {target.shape[:2]}")
    h_depth = normalize01(depth)
    h_tex = texture_height(target, cfg.texture_sigma)
    return np.clip(cfg.lambda_h * h_depth + (1.0 - cfg.lambda_h) * h_tex, 0.0, 1.0)


# canvas

def noise_lattice(seed, size=256):
    rng = np.random.default_rng(seed)
    return rng.random(size), rng.permutation(size)


def value_noise(x, y, values, perm):
    """Smoothly interpolated lattice noise in [0, 1]; lattice period = len(perm)."""
    n = len(perm)
    xi, yi = np.floor(x).astype(np.int64), np.floor(y).astype(np.int64)
    fx, fy = x - xi, y - yi
    sx, sy = fx * fx * (3 - 2 * fx), fy * fy * (3 - 2 * fy)

    def corner(i, j):
        return values[perm[(perm[i % n] + j) % n]]

    top = corner(xi, yi) * (1 - sx) + corner(xi + 1, yi) * sx
    bot = corner(xi, yi + 1) * (1 - sx) + corner(xi + 1, yi + 1) * sx
    return top * (1 - sy) + bot * sy


def fbm(x, y, values, perm, octaves=4, lacunarity=2.0, gain=0.5):
    """Fractional Brownian motion of value noise, normalised by the amplitude sum."""
    total = np.zeros(np.broadcast(x, y).shape)
    amp, freq, norm = 1.0, 1.0, 0.0
    for o in range(octaves):
        # offset each octave so their lattices do not line up
        total += amp * value_noise(x * freq + 17.0 * o, y * freq + 31.0 * o, values, perm)
        norm += amp
        amp *= gain
        freq *= lacunarity
    return total / norm if norm > 0 else total


def canvas_geometry(size, cfg: CanvasConfig | None = None, noise=None):
    """Canvas albedo (H, W, 3) in [0, 1] and micro-height (H, W) in [0, height_max]."""
    cfg = cfg or CanvasConfig()
    h, w = size
    ys, xs = np.mgrid[0:h, 0:w] + 0.5
    values, perm = noise_lattice(cfg.seed) if noise is None else noise
    f = fbm(xs / cfg.fbm_cell_px, ys / cfg.fbm_cell_px, values, perm, cfg.fbm_octaves,
            cfg.fbm_lacunarity, cfg.fbm_gain)
    c, s = math.cos(cfg.weave_angle), math.sin(cfg.weave_angle)
    u = (xs * c + ys * s) / cfg.weave_period_px
    v = (-xs * s + ys * c) / cfg.weave_period_px
    weave = np.sin(cfg.weave_freq * u) * np.sin(cfg.weave_freq * v)
    pattern = f + cfg.weave_weight * weave
    albedo = np.clip(np.asarray(cfg.base_color, float) + cfg.color_scale * pattern[..., None], 0.0, 1.0)
    lum = albedo @ REC709
    span = float(lum.max() - lum.min())
    h_c = (lum - lum.min()) / span * cfg.height_max if span > 0 else np.zeros_like(lum)
    return albedo, h_c


# strokes

def impasto_phases(stroke_id, cfg: ImpastoConfig):
    rng = np.random.default_rng([cfg.phase_seed, int(stroke_id)])
    return rng.uniform(0.0, 2.0 * np.pi, len(cfg.weights))


def impasto_profile(base, kernel, arclen, radius, phases, cfg: ImpastoConfig):
    """h_i * max(0, k) plus the two-harmonic ridge pattern along the stroke."""
    out = base * np.maximum(kernel, 0.0)
    amp = cfg.amp_coef * radius
    for wk, kk, ph in zip(cfg.weights, cfg.ratios, phases):
        out = out + amp * wk * np.sin(kk * cfg.base_freq / radius * arclen + ph)
    return out


def fragment_arclength(frags: Fragments, pts):
    """Arc-length coordinate of each fragment's closest point, clamped to the stroke."""
    edges = np.sqrt((np.diff(pts, axis=1) ** 2).sum(axis=2))
    cum = np.concatenate([np.zeros((len(pts), 1)), np.cumsum(edges, axis=1)], axis=1)
    s, j = frags.stroke, frags.segment
    return np.clip(cum[s, j] + frags.seg_param * edges[s, j], 0.0, cum[s, -1])


def impasto_height(frags: Fragments, packed: PackedStrokes, n_samples: int, cfg: ImpastoConfig):
    """Per-fragment stroke relief h~."""
    pts = packed.sample(n_samples)
    arclen = fragment_arclength(frags, pts)
    s = frags.stroke
    radius = 0.5 * packed.width[s]
    phases = np.array([impasto_phases(i, cfg) for i in packed.ids]).reshape(len(packed), -1)
    return impasto_profile(packed.height[s], frags.kernel, arclen, radius, phases[s].T, cfg)


def modulate_with_canvas(h_tilde, h_c, cfg: ModulationConfig | None = None):
    cfg = cfg or ModulationConfig()
    h_tilde = np.asarray(h_tilde, dtype=np.float64)
    gamma = cfg.alpha * np.minimum(h_tilde / cfg.h_t, 1.0)
    return h_tilde * (1.0 + (1.0 - gamma) * np.asarray(h_c))


@dataclass
class Relief:
    albedo: np.ndarray        # canvas colour (H, W, 3)
    canvas_height: np.ndarray
    color: np.ndarray         # strokes composited over the canvas
    height: np.ndarray        # composited relief
    color_weights: np.ndarray
    height_weights: np.ndarray


def composite_heights(frags: Fragments, h_hat, canvas_height):
    return frags.composite(np.asarray(h_hat)[:, None], np.asarray(canvas_height)[..., None])


def build_relief(packed: PackedStrokes, size, render_cfg: RenderConfig | None = None,
                 cfg: HeightFieldConfig | None = None) -> Relief:
    render_cfg = render_cfg or RenderConfig()
    cfg = cfg or HeightFieldConfig()
    albedo, h_c = canvas_geometry(size, cfg.canvas)
    frags = rasterize_fragments(packed, render_cfg, size)
    color, wc = frags.composite(packed.color[frags.stroke] if len(packed) else np.zeros((0, 3)), albedo)
    h_tilde = impasto_height(frags, packed, render_cfg.n_samples, cfg.impasto) if len(packed) \
        else np.zeros(0)
    h_hat = modulate_with_canvas(h_tilde, h_c.ravel()[frags.pixel], cfg.modulation)
    height, wh = composite_heights(frags, h_hat, h_c)
    return Relief(albedo, h_c, color, height[..., 0], wc, wh)


# shading

def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def height_normals(H, slope_scale):
    gy, gx = np.gradient(np.asarray(H, dtype=np.float64)) if min(np.shape(H)) > 1 else \
        (np.zeros(np.shape(H)), np.zeros(np.shape(H)))
    n = np.stack([-slope_scale * gx, -slope_scale * gy, np.ones_like(gx)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def ggx_d(n_dot_h, alpha):
    a2 = alpha * alpha
    denom = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0
    return a2 / (np.pi * denom * denom)


def schlick_f(v_dot_h, f0):
    return f0 + (1.0 - f0) * (1.0 - v_dot_h) ** 5


def smith_g(n_dot_l, n_dot_v, alpha):
    """Height-correlated Smith masking-shadowing for GGX."""
    def lam(c):
        c = np.clip(c, 1e-12, 1.0)
        tan2 = (1.0 - c * c) / (c * c)
        return 0.5 * (-1.0 + np.sqrt(1.0 + alpha * alpha * tan2))
    return 1.0 / (1.0 + lam(n_dot_l) + lam(n_dot_v))


@dataclass
class Shading:
    image: np.ndarray
    diffuse: np.ndarray
    specular: np.ndarray
    normals: np.ndarray
    n_dot_l: np.ndarray


def shade_terms(H, albedo, cfg: ShadingConfig | None = None, height_max: float = 1.0) -> Shading:
    cfg = cfg or ShadingConfig()
    s = cfg.slope_scale if cfg.slope_scale is not None else 2.0 / height_max
    n = height_normals(H, s)
    l, v = _unit(cfg.light_dir), _unit(cfg.view_dir)
    half = _unit(l + v)
    nl, nv, nh = n @ l, n @ v, n @ half
    vh = float(v @ half)
    rho = np.asarray(albedo, dtype=np.float64)
    diffuse = rho / np.pi * cfg.light_diffuse * np.maximum(0.0, nl)[..., None]
    lit = (nl > 0) & (nv > 0)
    spec = np.zeros_like(nl)
    d = ggx_d(nh[lit], cfg.roughness)
    g = smith_g(nl[lit], nv[lit], cfg.roughness)
    spec[lit] = d * schlick_f(vh, cfg.f0) * g / (4.0 * nl[lit] * nv[lit]) * cfg.light_specular
    image = np.clip(diffuse + spec[..., None], 0.0, 1.0)
    return Shading(image, diffuse, spec, n, nl)


def shade(H, albedo, cfg: ShadingConfig | None = None, height_max: float = 1.0):
    return shade_terms(H, albedo, cfg, height_max).image


def relight(packed: PackedStrokes, size, render_cfg: RenderConfig | None = None,
            cfg: HeightFieldConfig | None = None):
    """Shaded image of a stroke set on the procedural canvas."""
    cfg = cfg or HeightFieldConfig()
    relief = build_relief(packed, size, render_cfg, cfg)
    return shade(relief.height, relief.color, cfg.shading, cfg.canvas.height_max)
