import json
import subprocess
import sys

import numpy as np
import pytest

from strokeforge.cli import build_config, build_parser, main, set_threads
from strokeforge.io import StrokeDocument, load_image, save_image
from strokeforge.metrics import psnr, ssim


@pytest.fixture
def small_input(tmp_path):
    rng = np.random.default_rng(0)
    ys, xs = np.mgrid[0:32, 0:32] / 32
    img = np.stack([xs, ys, 0.5 + 0.3 * np.sin(6 * xs)], axis=-1)
    img[8:20, 10:14] = [0.1, 0.1, 0.6]
    img = np.clip(img + 0.02 * rng.standard_normal(img.shape), 0, 1)
    path = tmp_path / "in.png"
    save_image(img, path)
    return path


def paint(input_path, out, *extra):
    return main(["paint", "--input", str(input_path), "--strokes", "40", "--iters", "2",
                 "--max-steps", "30", "--seed", "3", "--out", str(out), *extra])


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_paint_writes_outputs_and_is_deterministic(tmp_path, small_input):
    assert paint(small_input, tmp_path / "a") == 0
    assert paint(small_input, tmp_path / "b") == 0
    for name in ("canvas.png", "strokes.json", "metrics.jsonl"):
        assert (tmp_path / "a" / name).exists()
    a = (tmp_path / "a" / "strokes.json").read_bytes()
    assert a == (tmp_path / "b" / "strokes.json").read_bytes()
    doc = StrokeDocument.loads(a.decode())
    assert (doc.width, doc.height) == (32, 32)
    assert doc.config["seed"] == 3 and doc.config["iterations"] == 2
    assert all("wall_time_s" not in r for r in doc.metrics)
    trace = read_jsonl(tmp_path / "a" / "metrics.jsonl")
    assert [r["phase"] for r in trace] == ["init", "search", "optimize", "search", "optimize", "final"]
    assert all("wall_time_s" in r for r in trace)
    assert trace[-1]["strokes"] == len(doc.strokes)


def test_metrics_subcommand_reproduces_trace(tmp_path, small_input, capsys):
    paint(small_input, tmp_path / "a")
    final = read_jsonl(tmp_path / "a" / "metrics.jsonl")[-1]
    capsys.readouterr()
    assert main(["metrics", str(tmp_path / "a" / "canvas.png"), str(small_input)]) == 0
    got = json.loads(capsys.readouterr().out)
    assert abs(got["psnr"] - final["psnr"]) < 1e-6
    assert abs(got["ssim"] - final["ssim"]) < 1e-6
    canvas, target = load_image(tmp_path / "a" / "canvas.png"), load_image(small_input)
    assert abs(psnr(canvas, target) - final["psnr"]) < 1e-6
    assert abs(ssim(canvas, target) - final["ssim"]) < 1e-6


def test_relight_and_svg_from_document(tmp_path, small_input):
    paint(small_input, tmp_path / "a", "--relight")
    doc = tmp_path / "a" / "strokes.json"
    assert main(["relight", "--strokes", str(doc), "--light", "0.5,0.5,0.707",
                 "--out", str(tmp_path / "lit.png")]) == 0
    lit = load_image(tmp_path / "lit.png")
    assert lit.shape == (32, 32, 3)
    assert main(["export-svg", "--strokes", str(doc), "--out", str(tmp_path / "s.svg")]) == 0
    text = (tmp_path / "s.svg").read_text()
    assert text.count("<path") == len(StrokeDocument.load(doc).strokes)


def test_analyze_toy(tmp_path):
    out = tmp_path / "report"
    assert main(["analyze", "--toy", "--seed", "7", "--out", str(out)]) == 0
    data = json.loads((out / "toy.json").read_text())
    assert data["config"]["seed"] == 7
    assert data["curvature_energy"]["proxy"] < data["curvature_energy"]["direct"]
    assert (out / "curves.png").stat().st_size > 0
    header = (out / "spectrum.csv").read_text().splitlines()[0]
    assert header == "freq,coord,direct,proxy"


def test_invalid_flags_exit_nonzero(tmp_path, capsys):
    with pytest.raises(SystemExit) as err:
        main(["paint", "--out", str(tmp_path)])
    assert err.value.code != 0
    assert "usage" in capsys.readouterr().err
    with pytest.raises(SystemExit) as err:
        main(["paint", "--input", "x.png", "--out", str(tmp_path), "--style", "oil"])
    assert err.value.code != 0
    with pytest.raises(SystemExit):
        main(["relight", "--strokes", "s.json", "--light", "1,2", "--out", "x.png"])


def test_unreadable_input_reports_path(tmp_path, capsys):
    assert main(["paint", "--input", str(tmp_path / "nope.png"), "--out", str(tmp_path / "o")]) == 2
    assert "nope.png" in capsys.readouterr().err


def test_style_tau_and_config_file(tmp_path):
    parser = build_parser()
    args = parser.parse_args(["paint", "--input", "x", "--out", "o", "--style", "brush"])
    assert build_config(args).render.tau == 0.1
    args = parser.parse_args(["paint", "--input", "x", "--out", "o", "--style", "brush", "--tau", "0.3"])
    assert build_config(args).render.tau == 0.3
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({"iterations": 5, "render": {"tau": 0.2}, "optim": {"lambda_len": 0.5}}))
    args = parser.parse_args(["paint", "--input", "x", "--out", "o", "--config", str(cfg_path)])
    cfg = build_config(args)
    assert (cfg.iterations, cfg.render.tau, cfg.optim.lambda_len) == (5, 0.2, 0.5)
    args = parser.parse_args(["paint", "--input", "x", "--out", "o", "--config", str(cfg_path), "--iters", "1"])
    assert build_config(args).iterations == 1


def test_threads_flag_and_env(monkeypatch):
    import numba

    before = numba.get_num_threads()
    try:
        assert set_threads(1) == 1 and numba.get_num_threads() == 1
        monkeypatch.setenv("STROKEFORGE_THREADS", "1")
        assert set_threads(None) == 1
        with pytest.raises(ValueError):
            set_threads(0)
    finally:
        numba.set_num_threads(before)


def test_console_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "strokeforge.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("paint", "relight", "analyze", "metrics", "export-svg"):
        assert cmd in res.stdout
