"""Print per-phase Search/Optimize rows (PSNR, SSIM, loss, strokes, time) for the bundled images."""

import argparse
from pathlib import Path

from strokeforge.config import PipelineConfig
from strokeforge.io import load_image
from strokeforge.pipeline import run_pipeline

DATA = Path(__file__).resolve().parents[1] / "tests" / "data"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("images", nargs="*", default=["astronaut", "chelsea", "coffee"])
    ap.add_argument("--budget", type=int, default=500)
    ap.add_argument("--iters", type=int, default=3)
    ap.add_argument("--max-steps", type=int, default=None)
    args = ap.parse_args()
    cfg = PipelineConfig(budget=args.budget, iterations=args.iters)
    if args.max_steps is not None:
        cfg.optim.max_steps = args.max_steps
    print(f"{'image':<10} {'phase':<9} {'t':>2} {'psnr':>7} {'ssim':>6} {'loss':>8} {'strokes':>7} {'time_s':>7}")
    for name in args.images:
        path = Path(name) if Path(name).suffix else DATA / f"{name}.png"
        result = run_pipeline(load_image(path), cfg)
        for r in result.trace:
            if r["phase"] == "init":
                continue
            ssim = f"{r['ssim']:.3f}" if r["ssim"] is not None else "-"
            print(f"{path.stem:<10} {r['phase']:<9} {r['t']:>2} {float(r['psnr']):>7.2f} {ssim:>6} "
                  f"{r['loss']['total']:>8.5f} {r['strokes']:>7} {r['wall_time_s']:>7.1f}", flush=True)


if __name__ == "__main__":
    main()
