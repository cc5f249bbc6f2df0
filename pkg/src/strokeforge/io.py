"""Images, stroke documents and SVG export."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .geometry import BezierChain
from .strokes import Stroke, StrokeSet

DOCUMENT_VERSION = 1


class ImageIOError(OSError):
    """Unreadable, corrupt or unwritable image file."""

    def __init__(self, path, cause):
        super().__init__(f"{path}: {cause}")
        self.path = str(path)
        self.cause = str(cause)


# images

def quantize(img, bits: int = 8) -> np.ndarray:
    """Integer codes with round-half-up: floor(x * max + 0.5), clipped to range."""
    top = (1 << bits) - 1
    codes = np.floor(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * top + 0.5)
    return codes.astype(np.uint8 if bits == 8 else np.uint16)


def dequantize(codes, maxval=None) -> np.ndarray:
    codes = np.asarray(codes)
    if maxval is None:
        maxval = 255 if codes.dtype == np.uint8 else 65535
    return codes.astype(np.float64) / float(maxval)


_PNM_TOKEN = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)")


def _pnm_header(buf: bytes):
    """Parse magic, width, height, maxval; returns them and the raster offset."""
    fields = []
    pos = 0
    while len(fields) < 4:
        m = _PNM_TOKEN.match(buf, pos)
        if m is None:
            raise ValueError("truncated header")
        fields.append(m.group(2))
        pos = m.end()
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(buf) or buf[pos:pos + 1] not in b" \t\r\n":
        raise ValueError("missing whitespace after header")
    magic = fields[0].decode("ascii", "replace")
    w, h, maxval = (int(f) for f in fields[1:])
    return magic, w, h, maxval, pos + 1


def read_pnm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    magic, w, h, maxval, off = _pnm_header(buf)
    if magic not in ("P5", "P6"):
        raise ValueError(f"unsupported PNM type {magic!r}")
    if not (0 < maxval < 65536) or w <= 0 or h <= 0:
        raise ValueError("bad dimensions or maxval")
    ch = 3 if magic == "P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    n = w * h * ch
    if len(buf) - off < n * dtype.itemsize:
        raise ValueError("raster shorter than header promises")
    data = np.frombuffer(buf, dtype=dtype, count=n, offset=off).reshape(h, w, ch)
    img = data.astype(np.float64) / maxval
    return np.repeat(img, 3, axis=2) if ch == 1 else img


def write_pnm(img, path, bits: int = 8):
    img = np.asarray(img, dtype=np.float64)
    codes = quantize(img, bits)
    gray = img.ndim == 2
    h, w = img.shape[:2]
    maxval = (1 << bits) - 1
    header = f"{'P5' if gray else 'P6'}\n{w} {h}\n{maxval}\n".encode("ascii")
    raster = codes.astype(">u2").tobytes() if bits == 16 else codes.tobytes()
    Path(path).write_bytes(header + raster)


def load_image(path) -> np.ndarray:
    """H x W x 3 float image in [0, 1] from PNG (8/16-bit) or binary PPM/PGM."""
    path = Path(path)
    try:
        if path.suffix.lower() in (".ppm", ".pgm", ".pnm"):
            return read_pnm(path)
        if not path.exists():
            raise FileNotFoundError("no such file")
        raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if raw is None:
            raise ValueError("not a decodable image")
    except ImageIOError:
        raise
    except (OSError, ValueError) as exc:
        raise ImageIOError(path, exc) from exc
    if raw.dtype not in (np.uint8, np.uint16):
        raise ImageIOError(path, f"unsupported sample type {raw.dtype}")
    img = dequantize(raw)
    if img.ndim == 2:
        return np.repeat(img[..., None], 3, axis=2)
    if img.shape[2] == 4:
        img = img[..., :3]
    return np.ascontiguousarray(img[..., ::-1])


def load_gray(path) -> np.ndarray:
    """Single-channel float map (e.g. a depth image); colour inputs are averaged."""
    img = load_image(path)
    if np.array_equal(img[..., 0], img[..., 1]) and np.array_equal(img[..., 0], img[..., 2]):
        return img[..., 0].copy()
    return img.mean(axis=2)


def save_image(img, path, bits: int = 8):
    path = Path(path)
    img = np.asarray(img, dtype=np.float64)
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.suffix.lower() in (".ppm", ".pgm", ".pnm"):
            write_pnm(img, path, bits)
            return
        codes = quantize(img, bits)
        if codes.ndim == 3:
            codes = np.ascontiguousarray(codes[..., ::-1])
        if not cv2.imwrite(str(path), codes):
            raise OSError("encoder refused the file")
    except OSError as exc:
        raise ImageIOError(path, exc) from exc


# stroke documents

@dataclass
class StrokeDocument:
    width: int
    height: int
    strokes: StrokeSet
    config: dict = field(default_factory=dict)
    metrics: list = field(default_factory=list)
    version: int = DOCUMENT_VERSION

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "width": self.width,
            "height": self.height,
            "strokes": [stroke_record(s) for s in self.strokes],
            "config": self.config,
            "metrics": self.metrics,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StrokeDocument":
        version = data.get("version")
        if version != DOCUMENT_VERSION:
            raise ValueError(f"unsupported stroke document version {version!r}")
        strokes = StrokeSet(stroke_from_record(r) for r in data["strokes"])
        return cls(int(data["width"]), int(data["height"]), strokes, data.get("config", {}),
                   data.get("metrics", []), version)

    def dumps(self) -> str:
        # repr-based float output is the shortest string that round-trips exactly
        return json.dumps(self.to_dict(), indent=1, allow_nan=False) + "\n"

    @classmethod
    def loads(cls, text: str) -> "StrokeDocument":
        return cls.from_dict(json.loads(text))

    def save(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "StrokeDocument":
        return cls.loads(Path(path).read_text())


def stroke_record(s: Stroke) -> dict:
    return {
        "id": int(s.id),
        "segments": s.chain.segments.tolist(),
        "color": [float(c) for c in s.color],
        "opacity": float(s.opacity),
        "width": float(s.width),
        "height": float(s.height),
    }


def stroke_from_record(r: dict) -> Stroke:
    chain = BezierChain.from_segments(r["segments"], atol=0.0)
    return Stroke(chain, r["color"], float(r["opacity"]), float(r["width"]), float(r["height"]),
                  int(r["id"]))


# SVG

def _num(x: float) -> str:
    return repr(float(x))


def _rgb(color) -> str:
    codes = quantize(np.asarray(color, dtype=np.float64))
    return "rgb({},{},{})".format(*(int(c) for c in codes))


def svg_path_data(chain: BezierChain) -> str:
    segs = chain.segments
    parts = [f"M {_num(segs[0][0][0])} {_num(segs[0][0][1])}"]
    for seg in segs:
        coords = " ".join(f"{_num(x)} {_num(y)}" for x, y in seg[1:])
        parts.append(f"C {coords}")
    return " ".join(parts)


def svg_document(doc: StrokeDocument, background=(1.0, 1.0, 1.0)) -> str:
    """SVG text; list order is kept so later strokes paint over earlier ones."""
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{doc.width}" height="{doc.height}" '
        f'viewBox="0 0 {doc.width} {doc.height}">',
        f'<rect x="0" y="0" width="{doc.width}" height="{doc.height}" fill="{_rgb(background)}"/>',
    ]
    for s in doc.strokes:
        lines.append(
            f'<path d="{svg_path_data(s.chain)}" fill="none" stroke="{_rgb(s.color)}" '
            f'stroke-opacity="{_num(s.opacity)}" stroke-width="{_num(s.width)}" '
            f'stroke-linecap="round" stroke-linejoin="round"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def export_svg(doc: StrokeDocument, path, background=(1.0, 1.0, 1.0)):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(svg_document(doc, background))


def finite_or_none(x):
    return x if isinstance(x, (int, float)) and math.isfinite(x) else None
