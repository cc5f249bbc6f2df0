"""Dual stroke geometry: polylines, piecewise Bezier chains and the maps between them.

Polylines are plain ``(M, 2)`` float arrays in pixel coordinates. A
:class:`BezierChain` stores the control points of ``S`` degree-``n`` segments
as one flat ``(n*S + 1, 2)`` array, so neighbouring segments share their
junction point and C0 continuity holds by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

DEFAULT_SEGMENT_EDGES = 6


class GeometryError(ValueError):
    """Raised for degenerate geometric input. ``code`` is a stable identifier."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code


@dataclass(frozen=True)
class BezierChain:
    points: np.ndarray
    degree: int = 3

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"control points must be (P, 2), got {pts.shape}")
        if (len(pts) - 1) % self.degree != 0 or len(pts) < self.degree + 1:
            raise ValueError(f"{len(pts)} control points do not form degree-{self.degree} segments")
        if not np.all(np.isfinite(pts)):
            raise ValueError("control points must be finite")
        object.__setattr__(self, "points", pts)

    @property
    def n_segments(self) -> int:
        return (len(self.points) - 1) // self.degree

    @property
    def segments(self) -> np.ndarray:
        """Control points per segment, shape ``(S, degree + 1, 2)``."""
        n = self.degree
        idx = np.arange(self.n_segments)[:, None] * n + np.arange(n + 1)[None, :]
        return self.points[idx]

    @classmethod
    def from_segments(cls, segments, atol: float = 1e-9) -> "BezierChain":
        segs = np.asarray(segments, dtype=np.float64)
        if segs.ndim != 3 or segs.shape[2] != 2 or segs.shape[1] < 2:
            raise ValueError(f"segments must be (S, K, 2), got {segs.shape}")
        for a, b in zip(segs[:-1], segs[1:]):
            if not np.allclose(a[-1], b[0], atol=atol, rtol=0.0):
                raise ValueError("consecutive segments do not share an endpoint")
        pts = np.concatenate([segs[0]] + [s[1:] for s in segs[1:]])
        return cls(pts, degree=segs.shape[1] - 1)

    def transformed(self, matrix, offset) -> "BezierChain":
        return BezierChain(self.points @ np.asarray(matrix, float).T + np.asarray(offset, float), self.degree)


def as_polyline(vertices, dedupe: bool = True) -> np.ndarray:
    """Validate vertices and drop exact consecutive duplicates."""
    poly = np.asarray(vertices, dtype=np.float64)
    if poly.ndim != 2 or poly.shape[1] != 2:
        raise GeometryError("invalid-polyline", f"expected (M, 2) vertices, got {poly.shape}")
    if not np.all(np.isfinite(poly)):
        raise GeometryError("invalid-polyline", "non-finite vertex")
    if dedupe and len(poly) > 1:
        keep = np.ones(len(poly), dtype=bool)
        keep[1:] = np.any(poly[1:] != poly[:-1], axis=1)
        poly = poly[keep]
    if len(poly) < 2:
        raise GeometryError("degenerate-polyline", "fewer than 2 distinct vertices")
    return poly


def polyline_length(poly) -> float:
    poly = np.asarray(poly, dtype=np.float64)
    return float(np.linalg.norm(np.diff(poly, axis=0), axis=1).sum())


def chord_length_params(poly) -> np.ndarray:
    """Normalised cumulative chord length of each vertex: t_0 = 0, t_{M-1} = 1."""
    poly = np.asarray(poly, dtype=np.float64)
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    total = seg.sum()
    if len(poly) < 2 or not total > 0.0:
        raise GeometryError("degenerate-polyline", "total length is zero")
    t = np.concatenate([[0.0], np.cumsum(seg)]) / total
    t[-1] = 1.0
    return t


def bernstein_matrix(params, degree: int = 3) -> np.ndarray:
    if degree < 1:
        raise ValueError("degree must be >= 1")
    t = np.asarray(params, dtype=np.float64)[:, None]
    k = np.arange(degree + 1)[None, :]
    binom = np.array([comb(degree, j) for j in range(degree + 1)], dtype=np.float64)
    return binom * t**k * (1.0 - t) ** (degree - k)


def _solve_normal_equations(basis: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    gram = basis.T @ basis
    proj = basis.T @ rhs
    evals, evecs = np.linalg.eigh(gram)
    if evals[0] < 1e-10 * evals[-1]:
        keep = evals > 1e-10 * evals[-1]
        inv = (evecs[:, keep] / evals[keep]) @ evecs[:, keep].T
        return inv @ proj
    return np.linalg.solve(gram, proj)


def fit_segment(points, params, degree: int = 3) -> np.ndarray:
    """Least-squares control points for one segment at fixed parameters."""
    params = np.asarray(params, dtype=np.float64)
    if np.ptp(params) == 0.0:
        raise GeometryError("fit-singular", "all parameters identical")
    return _solve_normal_equations(bernstein_matrix(params, degree), np.asarray(points, np.float64))


def catmull_rom_chain(poly) -> BezierChain:
    """Uniform Catmull-Rom spline through every vertex, as a C1 cubic chain."""
    p = np.asarray(poly, dtype=np.float64)
    tangents = np.empty_like(p)
    tangents[0] = p[1] - p[0]
    tangents[-1] = p[-1] - p[-2]
    if len(p) > 2:
        tangents[1:-1] = 0.5 * (p[2:] - p[:-2])
    pts = [p[0]]
    for i in range(len(p) - 1):
        pts += [p[i] + tangents[i] / 3.0, p[i + 1] - tangents[i + 1] / 3.0, p[i + 1]]
    return BezierChain(np.array(pts), degree=3)


def split_edges(n_edges: int, segment_edges: int | None) -> list[tuple[int, int]]:
    """Vertex index ranges (inclusive) for each segment, edges spread evenly."""
    if segment_edges is None or n_edges <= segment_edges:
        return [(0, n_edges)]
    n_seg = -(-n_edges // segment_edges)
    bounds = np.round(np.linspace(0, n_edges, n_seg + 1)).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def fit_bezier(poly, degree: int = 3, segment_edges: int | None = DEFAULT_SEGMENT_EDGES,
               params=None) -> BezierChain:
    """Fit a piecewise Bezier chain to a polyline.

    With ``params`` given the vertices are fit as one global segment at those
    frozen parameters. Otherwise chord-length parameters are used, one
    segment per ``segment_edges`` polyline edges (``None`` for a single global
    segment), and sparse polylines go through Catmull-Rom instead.
    """
    if params is not None:
        pts = as_polyline(poly, dedupe=False)
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (len(pts),):
            raise ValueError("params must have one entry per vertex")
        return BezierChain(fit_segment(pts, params, degree), degree)

    pts = as_polyline(poly)
    if len(pts) <= degree + 1:
        if degree != 3:
            raise GeometryError("fit-singular", "sparse polylines are only supported for cubics")
        return catmull_rom_chain(pts)

    t = chord_length_params(pts)
    ranges = split_edges(len(pts) - 1, segment_edges)
    fitted = []
    for a, b in ranges:
        local = (t[a:b + 1] - t[a]) / (t[b] - t[a])
        fitted.append(fit_segment(pts[a:b + 1], local, degree))
    for left, right in zip(fitted[:-1], fitted[1:]):
        joint = 0.5 * (left[-1] + right[0])
        left[-1] = joint
        right[0] = joint
    return BezierChain.from_segments(np.stack(fitted))


def chain_parameters(n_segments: int, n_samples: int) -> tuple[np.ndarray, np.ndarray]:
    """Segment index and local parameter of ``n_samples`` uniform global parameters."""
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    u = np.linspace(0.0, 1.0, n_samples) * n_segments
    seg = np.minimum(np.floor(u).astype(int), n_segments - 1)
    return seg, u - seg


def sampling_matrix(n_segments: int, n_samples: int, degree: int = 3) -> np.ndarray:
    """Weights mapping chain control points to uniformly sampled vertices.

    Row ``m`` holds the Bernstein weights of sample ``m`` scattered onto the
    shared control-point array, so ``samples = W @ chain.points``.
    """
    seg, local = chain_parameters(n_segments, n_samples)
    basis = bernstein_matrix(local, degree)
    weights = np.zeros((n_samples, degree * n_segments + 1))
    cols = seg[:, None] * degree + np.arange(degree + 1)[None, :]
    np.put_along_axis(weights, cols, basis, axis=1)
    return weights


def sample_bezier(chain: BezierChain, n_samples: int) -> np.ndarray:
    w = sampling_matrix(chain.n_segments, n_samples, chain.degree)
    out = w @ chain.points
    out[0] = chain.points[0]
    out[-1] = chain.points[-1]
    return out


def sample_bezier_jacobian(chain: BezierChain, n_samples: int) -> np.ndarray:
    """Jacobian of the sampled vertices w.r.t. the control points.

    The map is linear and acts identically on x and y, so the returned
    ``(n_samples, P)`` weight matrix ``W`` is the per-coordinate block; the
    full Jacobian of the flattened vertices is ``kron(W, I_2)``.
    """
    return sampling_matrix(chain.n_segments, n_samples, chain.degree)


def chamfer_distance(a, b) -> float:
    """Symmetric mean nearest-vertex distance between two point sets."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance needs non-empty point sets")
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    return 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())
