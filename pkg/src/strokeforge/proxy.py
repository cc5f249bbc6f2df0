"""Explicit Bezier projection operator and the noisy-curve toy experiment.

For a polyline with N vertices in d dimensions, flattened row-major into
theta (x0, y0, x1, y1, ...), fitting a cubic at frozen chord parameters and
resampling at the same parameters is the linear map M = S F with
F = pinv(B) (x) I_d and S = B (x) I_d. M is an orthogonal projector of rank
4d, so gradients pushed through it lose every component outside the cubic
subspace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ToyExperimentConfig
from .geometry import BezierChain, GeometryError, bernstein_matrix, chamfer_distance, chord_length_params, sample_bezier


@dataclass(frozen=True)
class ProjectionOperator:
    F: np.ndarray        # (4d, Nd)
    S: np.ndarray        # (Nd, 4d)
    M: np.ndarray        # (Nd, Nd)
    params: np.ndarray   # frozen chord parameters (N,)
    dim: int

    def apply(self, theta):
        return self.M @ np.asarray(theta, dtype=np.float64).reshape(-1)


def projection_from_params(params, dim: int = 2, degree: int = 3) -> ProjectionOperator:
    B = bernstein_matrix(params, degree)
    gram = B.T @ B
    pinv = np.linalg.solve(gram, B.T)
    eye = np.eye(dim)
    F = np.kron(pinv, eye)
    S = np.kron(B, eye)
    return ProjectionOperator(F, S, S @ F, np.asarray(params, dtype=np.float64), dim)


def build_projection(poly, degree: int = 3) -> ProjectionOperator:
    poly = np.asarray(poly, dtype=np.float64)
    if len(poly) <= degree + 1:
        raise GeometryError("use-catmull-rom",
                            f"{len(poly)} vertices: global least squares is ill-posed, use the Catmull-Rom path")
    return projection_from_params(chord_length_params(poly), poly.shape[1], degree)


def projected_gradient(op: ProjectionOperator, grad):
    """M^T grad: the vertex gradient seen through the frozen projection."""
    return op.M.T @ np.asarray(grad, dtype=np.float64).reshape(-1)


def folded_spectrum(vec, n_vertices: int, dim: int = 2):
    """Energy per spatial frequency 0..N//2 along the vertex index, per coordinate.

    Returns (N//2 + 1, dim). Bins are folded so that summing the table gives
    the time-domain energy sum(vec**2) exactly (up to rounding).
    """
    x = np.asarray(vec, dtype=np.float64).reshape(n_vertices, dim)
    spec = np.abs(np.fft.rfft(x, axis=0)) ** 2 / n_vertices
    spec[1:] *= 2.0
    if n_vertices % 2 == 0:
        spec[-1] /= 2.0
    return spec


def gradient_spectrum(raw, projected, n_vertices: int, dim: int = 2) -> list[dict]:
    """Rows of {freq, coord, raw, projected} energies, ready for CSV output."""
    a = folded_spectrum(raw, n_vertices, dim)
    b = folded_spectrum(projected, n_vertices, dim)
    return [{"freq": k, "coord": c, "raw": float(a[k, c]), "projected": float(b[k, c])}
            for k in range(a.shape[0]) for c in range(dim)]


def high_frequency_energy(vec, n_vertices: int, dim: int = 2) -> float:
    """Energy above a quarter of the vertex count (the upper half of the 0..N/2 band)."""
    spec = folded_spectrum(vec, n_vertices, dim)
    k = np.arange(spec.shape[0])
    return float(spec[k > n_vertices / 4].sum())


def curvature_energy(poly) -> float:
    poly = np.asarray(poly, dtype=np.float64)
    return float(np.sum((poly[2:] - 2 * poly[1:-1] + poly[:-2]) ** 2))


TOY_CONTROL = np.array([[0.0, 0.0], [0.33, 0.8], [0.66, -0.2], [1.0, 0.4]])


def toy_curve(n: int) -> np.ndarray:
    return sample_bezier(BezierChain(TOY_CONTROL), n)


@dataclass
class ToyReport:
    clean: np.ndarray
    noisy: np.ndarray
    direct_curve: np.ndarray
    proxy_curve: np.ndarray
    chamfer_to_clean: dict
    curvature_energy: dict
    hf_gradient_energy: dict        # mean over iterations
    spectrum: list                  # mean per-frequency gradient energies of both arms
    max_fit_residual: float         # largest distance of a proxy iterate from the cubic subspace
    losses: dict
    proxy_theta: np.ndarray | None = None    # underlying vertex vector of the proxy arm

    def to_dict(self) -> dict:
        return {
            "clean": self.clean.tolist(),
            "noisy": self.noisy.tolist(),
            "direct_curve": self.direct_curve.tolist(),
            "proxy_curve": self.proxy_curve.tolist(),
            "chamfer_to_clean": self.chamfer_to_clean,
            "curvature_energy": self.curvature_energy,
            "hf_gradient_energy": self.hf_gradient_energy,
            "spectrum": self.spectrum,
            "max_fit_residual": self.max_fit_residual,
            "losses": self.losses,
        }


def run_toy_experiment(cfg: ToyExperimentConfig | None = None) -> ToyReport:
    """Fit a noisy copy of a smooth curve by plain gradient descent, directly and through the proxy.

    Both arms minimise 0.5 * ||curve - noisy||^2 with index-matched vertices,
    starting from the straight chord between the clean endpoints.
    """
    cfg = cfg or ToyExperimentConfig()
    n = cfg.n_vertices
    rng = np.random.default_rng(cfg.seed)
    clean = toy_curve(n)
    noisy = clean + rng.normal(0.0, cfg.noise_sigma, clean.shape)
    y = noisy.reshape(-1)
    init = np.linspace(clean[0], clean[-1], n).reshape(-1)

    direct = init.copy()
    theta = init.copy()
    spec_direct = np.zeros((n // 2 + 1, 2))
    spec_proxy = np.zeros((n // 2 + 1, 2))
    hf_direct = hf_proxy = 0.0
    max_resid = 0.0
    loss_direct, loss_proxy = [], []
    uniform = projection_from_params(np.linspace(0.0, 1.0, n)) \
        if cfg.parameterization == "uniform" else None

    def operator(vec):
        return uniform if uniform is not None else build_projection(vec.reshape(n, 2))

    for _ in range(cfg.iterations):
        g = direct - y
        loss_direct.append(0.5 * float(g @ g))
        spec_direct += folded_spectrum(g, n)
        hf_direct += high_frequency_energy(g, n)
        direct = direct - cfg.learning_rate * g

        # parameters refreshed from the current polyline, then frozen for this step
        op = operator(theta)
        proxy = op.M @ theta
        max_resid = max(max_resid, float(np.abs(op.M @ proxy - proxy).max()))
        r = proxy - y
        loss_proxy.append(0.5 * float(r @ r))
        gp = projected_gradient(op, r)
        spec_proxy += folded_spectrum(gp, n)
        hf_proxy += high_frequency_energy(gp, n)
        theta = theta - cfg.learning_rate * gp
    proxy = operator(theta).M @ theta
    it = max(cfg.iterations, 1)
    spectrum = [{"freq": k, "coord": c, "direct": float(spec_direct[k, c] / it),
                 "proxy": float(spec_proxy[k, c] / it)}
                for k in range(n // 2 + 1) for c in range(2)]
    direct_curve, proxy_curve = direct.reshape(n, 2), proxy.reshape(n, 2)
    return ToyReport(
        clean=clean, noisy=noisy, direct_curve=direct_curve, proxy_curve=proxy_curve,
        chamfer_to_clean={"direct": float(chamfer_distance(direct_curve, clean)),
                          "proxy": float(chamfer_distance(proxy_curve, clean))},
        curvature_energy={"direct": curvature_energy(direct_curve),
                          "proxy": curvature_energy(proxy_curve)},
        hf_gradient_energy={"direct": hf_direct / it, "proxy": hf_proxy / it},
        spectrum=spectrum,
        max_fit_residual=max_resid,
        losses={"direct": loss_direct, "proxy": loss_proxy},
        proxy_theta=theta.reshape(n, 2),
    )
