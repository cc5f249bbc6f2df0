import numpy as np
import pytest

from strokeforge.config import OptimConfig, PipelineConfig, RenderConfig
from strokeforge.geometry import BezierChain
from strokeforge.losses import (
    continuity_penalty,
    length_penalty,
    loss_and_grad,
    overlap_pairs,
    total_loss,
    width_penalty,
)
from strokeforge.metrics import psnr
from strokeforge.optim import (
    AdamState,
    adam_step,
    dead_stroke_mask,
    lr_table,
    optimize_stage,
    reinitialize_dead_strokes,
    set_params,
)
from strokeforge.pipeline import run_pipeline
from strokeforge.render import render_forward
from strokeforge.strokes import Stroke, StrokeSet

from gradcheck import total_loss_gradient_errors
from oracles import central_difference, reference_render
from scenes import random_strokes


def line(a, b, color=(0.2, 0.3, 0.4), opacity=1.0, width=4.0, height=0.0, sid=0):
    a, b = np.asarray(a, float), np.asarray(b, float)
    pts = np.stack([a + (b - a) * u for u in (0, 1 / 3, 2 / 3, 1)])
    return Stroke(BezierChain(pts), color, opacity, width, height, sid)


# loss terms

def test_perfect_reconstruction_has_zero_loss():
    strokes = StrokeSet([line((4, 4), (20, 6), sid=0), line((5, 15), (25, 25), (0.9, 0.1, 0.1), sid=1)])
    cfg = RenderConfig()
    target = render_forward(strokes, cfg, (32, 32)).color
    terms, _ = total_loss(strokes.pack(), target, cfg, OptimConfig())
    assert terms.total == 0.0


def test_without_regularizers_loss_is_rms():
    rng = np.random.default_rng(0)
    strokes = random_strokes(rng, 4, (24, 24), width_range=(0.2, 30))
    target = rng.random((24, 24, 3))
    cfg = RenderConfig()
    terms, canvas = total_loss(strokes.pack(), target, cfg, OptimConfig(lambda_len=0, lambda_width=0))
    assert terms.total == terms.data == float(np.sqrt(np.mean((canvas.color - target) ** 2)))


@pytest.mark.parametrize("seed", range(3))
def test_total_loss_matches_recomputation(seed):
    rng = np.random.default_rng(seed)
    size = (20, 26)
    strokes = random_strokes(rng, 5, size, width_range=(0.2, 30))
    packed = strokes.pack()
    target = rng.random(size + (3,))
    h_t = rng.random(size)
    rcfg, ocfg = RenderConfig(), OptimConfig()
    terms, _ = total_loss(packed, target, rcfg, ocfg, h_t, 64.0)
    pts = packed.sample(rcfg.n_samples)
    color, height, _, _ = reference_render(pts, packed.color, packed.opacity, packed.width,
                                           packed.height, rcfg.tau, size, rcfg.background)
    lengths = [sum(np.hypot(*(p[k + 1] - p[k])) for k in range(len(p) - 1)) for p in pts]
    l_len = np.mean([max(0, 8 - l) ** 2 for l in lengths])
    l_w = np.mean([max(0, w - 24) ** 2 + max(0, 0.5 - w) ** 2 for w in packed.width])
    pairs = []
    boxes = [(p[:, 0].min() - w, p[:, 1].min() - w, p[:, 0].max() + w, p[:, 1].max() + w)
             for p, w in zip(pts, packed.width)]
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            a, b = boxes[i], boxes[j]
            if a[0] <= b[2] and b[0] <= a[2] and a[1] <= b[3] and b[1] <= a[3]:
                pairs.append(((packed.height[i] - packed.height[j]) / 64.0) ** 2)
    expect = (np.sqrt(np.mean((color - target) ** 2)) + 0.01 * l_len + 0.01 * l_w
              + 0.1 * np.sqrt(np.mean((height / 64.0 - h_t) ** 2))
              + (0.01 * np.mean(pairs) if pairs else 0.0))
    assert abs(terms.total - expect) < 1e-10


def test_regularizers_zero_within_bounds():
    pts = np.array([[[0, 0], [5, 0], [10, 0]], [[0, 0], [0, 9], [0, 20]]], float)
    assert length_penalty(pts, 8.0)[0] == 0.0
    assert width_penalty(np.array([0.5, 4, 24]), 0.5, 24)[0] == 0.0


def test_length_penalty_single_short_stroke():
    n = 5
    pts = np.zeros((n, 3, 2))
    pts[:, 2, 0] = 20.0
    pts[:, 1, 0] = 10.0
    pts[2, 1, 0], pts[2, 2, 0] = 2.0, 4.0      # length 4 = l_min / 2
    assert length_penalty(pts, 8.0)[0] == pytest.approx(16.0 / n, abs=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_regularizer_gradients_match_fd(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 5, (4, 6, 2))
    widths = rng.uniform(-1, 30, 6)
    _, g = length_penalty(pts, 8.0)
    for idx in np.ndindex(pts.shape):
        def f(v, idx=idx):
            p = pts.copy()
            p[idx] = v[0]
            return length_penalty(p, 8.0)[0]
        assert abs(g[idx] - central_difference(f, [pts[idx]], 1e-6)[0]) < 1e-6
    _, gw = width_penalty(widths, 0.5, 24)
    for i in range(len(widths)):
        def fw(v, i=i):
            w = widths.copy()
            w[i] = v[0]
            return width_penalty(w, 0.5, 24)[0]
        assert abs(gw[i] - central_difference(fw, [widths[i]], 1e-6)[0]) < 1e-6
    heights = rng.normal(0, 20, 6)
    pairs = np.array([[0, 1], [0, 3], [2, 5], [4, 5]])
    _, gh = continuity_penalty(heights, pairs, 64.0)
    for i in range(6):
        def fh(v, i=i):
            h = heights.copy()
            h[i] = v[0]
            return continuity_penalty(h, pairs, 64.0)[0]
        assert abs(gh[i] - central_difference(fh, [heights[i]], 1e-5)[0]) < 1e-6


def test_overlap_pairs():
    boxes = np.array([[0, 0, 5, 5], [4, 4, 9, 9], [10, 10, 12, 12], [5, 0, 6, 1]], float)
    assert overlap_pairs(boxes).tolist() == [[0, 1], [0, 3]]


@pytest.mark.parametrize("relight", [False, True])
def test_total_loss_gradient_matches_fd(relight):
    rng = np.random.default_rng(11)
    size = (24, 24)
    strokes = random_strokes(rng, 3, size)
    packed = strokes.pack()
    target = rng.random(size + (3,))
    h_t = rng.random(size) if relight else None
    rcfg, ocfg = RenderConfig(), OptimConfig()
    _, _, grads = loss_and_grad(packed, target, rcfg, ocfg, h_t, 64.0)
    checked, failures = total_loss_gradient_errors(packed, target, rcfg, ocfg, grads, h_t, 64.0)
    assert checked > 30 and not failures, failures[:5]


# Adam

def test_adam_zero_gradient():
    p = {"x": np.array([1.0, -2.0])}
    st = AdamState.zeros_like(p)
    st.m["x"][:] = [0.5, 0.5]
    st.v["x"][:] = [0.25, 0.25]
    out = adam_step(p, {"x": np.zeros(2)}, st, {"x": 0.01})
    np.testing.assert_allclose(st.m["x"], [0.45, 0.45])
    np.testing.assert_allclose(st.v["x"], [0.24975, 0.24975])
    # only the decayed first moment moves the parameter; with zero moments nothing moves
    p0 = {"x": np.array([3.0])}
    st0 = AdamState.zeros_like(p0)
    assert adam_step(p0, {"x": np.zeros(1)}, st0, {"x": 0.01})["x"][0] == 3.0
    assert out["x"].shape == (2,)


def test_adam_first_step_magnitude():
    rng = np.random.default_rng(0)
    g = rng.uniform(0.1, 10, 20) * rng.choice([-1, 1], 20)
    p = {"x": np.zeros(20)}
    out = adam_step(p, {"x": g}, AdamState.zeros_like(p), {"x": 0.01})
    np.testing.assert_allclose(np.abs(out["x"]), 0.01, atol=1e-9)
    assert np.all(np.sign(out["x"]) == -np.sign(g))


def scalar_adam(x, grad, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = grad(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return x


def test_adam_quadratic_matches_scalar_reference():
    p = {"x": np.array([0.2])}
    st = AdamState.zeros_like(p)
    for _ in range(100):
        p = adam_step(p, {"x": 2 * p["x"]}, st, {"x": 0.01})
    ref = scalar_adam(0.2, lambda x: 2 * x, 0.01, 100)
    assert abs(p["x"][0] - ref) < 1e-12
    assert abs(p["x"][0]) < 1e-3


def test_lr_table_and_clamps():
    cfg = OptimConfig()
    lrs = lr_table(cfg)
    assert lrs["ctrl"] == 0.01 and lrs["opacity"] == 0.01 and lrs["height"] == 0.01
    assert lrs["color"] == pytest.approx(0.001) and lrs["width"] == pytest.approx(1e-4)
    packed = StrokeSet([line((1, 1), (9, 9))]).pack()
    params = {"ctrl": packed.ctrl, "color": packed.color, "opacity": np.array([1.7]),
              "width": np.array([0.1]), "height": packed.height}
    out = set_params(packed, params, cfg)
    assert out.opacity[0] == 1.0 and out.width[0] == cfg.min_width


def test_optimize_stage_returns_best_and_improves():
    rng = np.random.default_rng(4)
    size = (32, 32)
    target = render_forward(random_strokes(rng, 6, size), RenderConfig(), size).color
    start = random_strokes(np.random.default_rng(5), 6, size).pack()
    rcfg, ocfg = RenderConfig(), OptimConfig()
    res = optimize_stage(start, target, rcfg, ocfg, max_steps=150)
    assert res.terms.total == min(res.history)
    assert res.terms.total < res.history[0]
    again, _ = total_loss(res.packed, target, rcfg, ocfg)
    assert again.total == res.terms.total
    assert np.all((res.packed.opacity >= 0) & (res.packed.opacity <= 1))
    assert np.all(res.packed.width >= ocfg.min_width)


def test_optimize_stage_convergence_stop():
    strokes = StrokeSet([line((4, 4), (20, 6))])
    rcfg = RenderConfig()
    target = render_forward(strokes, rcfg, (24, 24)).color
    cfg = OptimConfig(convergence_patience=5)
    res = optimize_stage(strokes.pack(), target, rcfg, cfg, max_steps=1000)
    assert res.steps < 1000 and res.terms.total == 0.0


# reinitialisation

def loo_oracle(packed, target, rcfg, ocfg):
    """Dead-stroke decisions from full reference renders, one stroke left out at a time."""
    size = target.shape[:2]
    pts = packed.sample(rcfg.n_samples)
    def render(mask):
        return reference_render(pts[mask], packed.color[mask], packed.opacity[mask],
                                packed.width[mask], packed.height[mask], rcfg.tau, size,
                                rcfg.background)[0]
    full = render(np.ones(len(packed), bool))
    out = []
    for i in range(len(packed)):
        if packed.opacity[i] >= ocfg.reinit_opacity_threshold:
            out.append(False)
            continue
        keep = np.ones(len(packed), bool)
        keep[i] = False
        without = render(keep)
        x0 = max(0, int(np.floor(pts[i][:, 0].min() - packed.width[i])))
        x1 = min(size[1], int(np.ceil(pts[i][:, 0].max() + packed.width[i])))
        y0 = max(0, int(np.floor(pts[i][:, 1].min() - packed.width[i])))
        y1 = min(size[0], int(np.ceil(pts[i][:, 1].max() + packed.width[i])))
        if x1 <= x0 or y1 <= y0:
            out.append(True)
            continue
        sl = (slice(y0, y1), slice(x0, x1))
        change = np.mean(np.sum((without[sl] - target[sl]) ** 2, -1) - np.sum((full[sl] - target[sl]) ** 2, -1))
        out.append(abs(change) < ocfg.reinit_loss_threshold)
    return np.array(out)


def test_reinit_keeps_useful_strokes():
    rng = np.random.default_rng(0)
    strokes = random_strokes(rng, 6, (32, 32), opacity_range=(0.5, 1.0))
    target = render_forward(strokes, RenderConfig(), (32, 32)).color
    packed, removed = reinitialize_dead_strokes(strokes.pack(), target, RenderConfig(), OptimConfig())
    assert removed == 0 and len(packed) == 6


def test_reinit_removes_zero_opacity_stroke():
    rng = np.random.default_rng(1)
    strokes = StrokeSet([line(rng.uniform(2, 14, 2), rng.uniform(18, 30, 2), rng.random(3),
                              rng.uniform(0.5, 1), rng.uniform(2, 6), sid=i) for i in range(5)])
    strokes[2].opacity = 0.0
    rcfg, ocfg = RenderConfig(), OptimConfig()
    packed = strokes.pack()
    target = rng.random((32, 32, 3))
    before = render_forward(packed, rcfg, (32, 32)).color
    out, removed = reinitialize_dead_strokes(packed, target, rcfg, ocfg)
    assert removed == 1
    assert list(out.ids) == [0, 1, 3, 4]
    after = render_forward(out, rcfg, (32, 32)).color
    assert np.max(np.abs(after - before)) < 1e-12


@pytest.mark.parametrize("seed", range(4))
def test_reinit_matches_leave_one_out(seed):
    rng = np.random.default_rng(seed)
    size = (32, 32)
    strokes = random_strokes(rng, 15, size, opacity_range=(0.0, 0.03))
    for s in strokes[::3]:
        s.opacity = 0.8
    for s in strokes[1::3]:
        s.opacity = 0.001
    rcfg, ocfg = RenderConfig(), OptimConfig()
    packed = strokes.pack()
    target = render_forward(random_strokes(rng, 5, size), rcfg, size).color
    expect = loo_oracle(packed, target, rcfg, ocfg)
    assert expect.any() and not expect.all()
    np.testing.assert_array_equal(dead_stroke_mask(packed, target, rcfg, ocfg), expect)
    out, removed = reinitialize_dead_strokes(packed, target, rcfg, ocfg)
    before, _ = total_loss(packed, target, rcfg, ocfg)
    after, _ = total_loss(out, target, rcfg, ocfg)
    assert after.total <= before.total
    assert set(packed.ids) - set(out.ids) <= set(packed.ids[expect])
    assert removed == len(packed) - len(out)
    # removing near-transparent strokes barely moves the reconstruction term
    assert abs(before.data - after.data) < 2 * ocfg.reinit_loss_threshold


# pipeline

def test_pipeline_zero_iterations():
    target = np.random.default_rng(0).random((16, 16, 3))
    res = run_pipeline(target, PipelineConfig(iterations=0))
    assert len(res.strokes) == 0
    assert np.all(res.canvas.color == 1.0)
    assert [r["phase"] for r in res.trace] == ["init"]


def test_pipeline_solid_color_reaches_40db():
    target = np.ones((32, 32, 3)) * np.array([0.2, 0.5, 0.8])
    res = run_pipeline(target, PipelineConfig())
    assert len(res.strokes) >= 1
    assert psnr(res.canvas.color, target) >= 40.0


def check_phase_monotone(trace):
    totals = [r["loss"]["total"] for r in trace]
    assert all(b <= a for a, b in zip(totals, totals[1:])), totals


@pytest.mark.parametrize("relight", [False, True])
def test_pipeline_phase_losses_non_increasing(relight):
    rng = np.random.default_rng(3)
    size = (40, 40)
    target = render_forward(random_strokes(rng, 20, size, width_range=(3, 8)), RenderConfig(), size).color
    cfg = PipelineConfig(budget=60, relight=relight)
    cfg.optim.max_steps = 60
    res = run_pipeline(target, cfg)
    assert [r["phase"] for r in res.trace] == ["init"] + ["search", "optimize"] * 3
    check_phase_monotone(res.trace)
    final, _ = total_loss(res.strokes.pack(), target, cfg.render, cfg.optim, res.height_target,
                          cfg.height.height_scale)
    assert final.total == pytest.approx(res.trace[-1]["loss"]["total"], abs=1e-12)
    assert sum(r.get("accepted", 0) for r in res.trace) <= 60 + sum(r.get("removed", 0) for r in res.trace)


def test_pipeline_is_deterministic():
    rng = np.random.default_rng(9)
    target = rng.random((24, 24, 3))
    cfg = PipelineConfig(budget=20)
    cfg.optim.max_steps = 20
    a, b = run_pipeline(target, cfg), run_pipeline(target, cfg)
    pa, pb = a.strokes.pack(), b.strokes.pack()
    for k in ("ctrl", "color", "opacity", "width", "height", "ids"):
        np.testing.assert_array_equal(getattr(pa, k), getattr(pb, k))
