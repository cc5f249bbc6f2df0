"""Command-line entry point: paint | relight | analyze | metrics | export-svg."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import PipelineConfig, ToyExperimentConfig, from_dict, load_config
from .io import ImageIOError, StrokeDocument, export_svg, load_gray, load_image, quantize, save_image
from .metrics import json_number, psnr, ssim

log = logging.getLogger("strokeforge")

STYLE_TAU = {"smooth": 0.7, "brush": 0.1}


def set_threads(requested):
    """Apply --threads, falling back to STROKEFORGE_THREADS; returns the count in effect."""
    import numba

    if requested is None:
        env = os.environ.get("STROKEFORGE_THREADS")
        requested = int(env) if env else None
    if requested is None:
        return numba.get_num_threads()
    if requested < 1:
        raise ValueError("thread count must be >= 1")
    n = min(int(requested), numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(n)
    return n


def parse_vec3(text: str):
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
    if not np.linalg.norm(parts) > 0:
        raise argparse.ArgumentTypeError("direction must be non-zero")
    return tuple(parts)


def build_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.iters is not None:
        cfg.iterations = args.iters
    if args.strokes is not None:
        cfg.budget = args.strokes
    if args.seed is not None:
        cfg.seed = args.seed
    if args.style is not None:
        cfg.render.tau = STYLE_TAU[args.style]
    if args.tau is not None:
        cfg.render.tau = args.tau
    if args.relight:
        cfg.relight = True
    if args.max_steps is not None:
        cfg.optim.max_steps = args.max_steps
    if cfg.iterations < 0:
        raise ValueError("--iters must be >= 0")
    if cfg.budget is not None and cfg.budget < 0:
        raise ValueError("--strokes must be >= 0")
    if not cfg.render.tau > 0:
        raise ValueError("--tau must be > 0")
    return cfg


def write_jsonl(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, allow_nan=False) + "\n")


def cmd_paint(args) -> int:
    from .pipeline import run_pipeline

    cfg = build_config(args)
    set_threads(args.threads)
    target = load_image(args.input)
    depth = load_gray(args.depth) if args.depth else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_pipeline(target, cfg, depth)
    h, w = target.shape[:2]
    save_image(result.canvas.color, out / "canvas.png")
    # metrics of what was actually written, so `metrics canvas.png input` reproduces them
    written = quantize(result.canvas.color).astype(np.float64) / 255.0
    final = {"phase": "final", "t": cfg.iterations, "psnr": json_number(psnr(written, target)),
             "ssim": ssim(written, target) if min(h, w) >= 11 else None,
             "strokes": len(result.strokes),
             "wall_time_s": float(sum(r["wall_time_s"] for r in result.trace))}
    records = result.trace + [final]
    write_jsonl(out / "metrics.jsonl", records)
    # wall times vary run to run; the stroke document stays byte-identical without them
    stable = [{k: v for k, v in r.items() if k != "wall_time_s"} for r in records]
    doc = StrokeDocument(w, h, result.strokes, cfg.to_dict(), stable)
    doc.save(out / "strokes.json")
    print(f"{len(result.strokes)} strokes, PSNR {final['psnr']} dB, SSIM {final['ssim']}")
    return 0


def cmd_relight(args) -> int:
    from .relight import relight

    set_threads(args.threads)
    doc = StrokeDocument.load(args.strokes)
    cfg = PipelineConfig.from_dict(doc.config) if doc.config else PipelineConfig()
    if args.config:
        cfg = load_config(args.config)
    shading = cfg.height.shading
    if args.light is not None:
        shading.light_dir = args.light
    if args.view is not None:
        shading.view_dir = args.view
    img = relight(doc.strokes.pack(), (doc.height, doc.width), cfg.render, cfg.height)
    save_image(img, args.out)
    print(f"wrote {args.out}")
    return 0


def plot_toy(report, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6), sharey=True)
    for ax, name, curve in ((axes[0], "direct", report.direct_curve),
                            (axes[1], "proxy", report.proxy_curve)):
        ax.plot(*report.clean.T, "k-", lw=1, label="clean")
        ax.plot(*report.noisy.T, ".", color="0.6", ms=4, label="noisy")
        ax.plot(*curve.T, "o-", ms=3, lw=1, label=name)
        ax.set_title(f"{name}: curvature {report.curvature_energy[name]:.3g}")
        ax.set_aspect("equal")
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_analyze(args) -> int:
    from .proxy import run_toy_experiment

    if not args.toy:
        raise ValueError("analyze currently supports only --toy")
    base = {}
    if args.config:
        with open(args.config) as fh:
            base = json.load(fh)
    cfg = from_dict(ToyExperimentConfig, base)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.sigma is not None:
        cfg.noise_sigma = args.sigma
    if args.parameterization is not None:
        cfg.parameterization = args.parameterization
    cfg.__post_init__()
    report = run_toy_experiment(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = report.to_dict()
    data["config"] = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    (out / "toy.json").write_text(json.dumps(data, indent=1) + "\n")
    with open(out / "spectrum.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["freq", "coord", "direct", "proxy"])
        writer.writeheader()
        writer.writerows(report.spectrum)
    plot_toy(report, out / "curves.png")
    print(json.dumps({"curvature_energy": report.curvature_energy,
                      "hf_gradient_energy": report.hf_gradient_energy,
                      "chamfer_to_clean": report.chamfer_to_clean}))
    return 0


def cmd_metrics(args) -> int:
    a, b = load_image(args.image), load_image(args.reference)
    p = json_number(psnr(a, b))
    s = ssim(a, b) if min(a.shape[:2]) >= 11 else None
    print(json.dumps({"psnr": p, "ssim": s}))
    return 0


def cmd_export_svg(args) -> int:
    doc = StrokeDocument.load(args.strokes)
    background = PipelineConfig.from_dict(doc.config).render.background if doc.config else (1, 1, 1)
    export_svg(doc, args.out, background)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="strokeforge", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    paint = sub.add_parser("paint", help="reconstruct an image with strokes")
    paint.add_argument("--input", required=True)
    paint.add_argument("--depth", help="optional single-channel depth image (relight mode)")
    paint.add_argument("--strokes", type=int, help="total stroke budget")
    paint.add_argument("--iters", type=int, help="search/optimize rounds (default 3)")
    paint.add_argument("--tau", type=float, help="kernel softness; overrides --style")
    paint.add_argument("--style", choices=sorted(STYLE_TAU))
    paint.add_argument("--seed", type=int)
    paint.add_argument("--config", help="JSON file overriding defaults")
    paint.add_argument("--out", required=True, help="output directory")
    paint.add_argument("--threads", type=int)
    paint.add_argument("--relight", action="store_true", help="also fit stroke heights")
    paint.add_argument("--max-steps", type=int, help="Adam step cap per optimize phase")
    paint.set_defaults(func=cmd_paint)

    rel = sub.add_parser("relight", help="shade a stroke document under a light")
    rel.add_argument("--strokes", required=True)
    rel.add_argument("--light", type=parse_vec3)
    rel.add_argument("--view", type=parse_vec3)
    rel.add_argument("--config")
    rel.add_argument("--out", required=True)
    rel.add_argument("--threads", type=int)
    rel.set_defaults(func=cmd_relight)

    ana = sub.add_parser("analyze", help="projection analysis (noisy-curve toy experiment)")
    ana.add_argument("--toy", action="store_true")
    ana.add_argument("--seed", type=int)
    ana.add_argument("--sigma", type=float, help="noise standard deviation")
    ana.add_argument("--parameterization", choices=("chord", "uniform"))
    ana.add_argument("--config")
    ana.add_argument("--out", required=True)
    ana.set_defaults(func=cmd_analyze)

    met = sub.add_parser("metrics", help="PSNR and SSIM of an image against a reference")
    met.add_argument("image")
    met.add_argument("reference")
    met.set_defaults(func=cmd_metrics)

    svg = sub.add_parser("export-svg", help="write a stroke document as SVG")
    svg.add_argument("--strokes", required=True)
    svg.add_argument("--out", required=True)
    svg.set_defaults(func=cmd_export_svg)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ImageIOError as exc:
        print(f"error: cannot read or write image {exc.path}: {exc.cause}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
