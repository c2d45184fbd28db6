"""Eigenvalue statistics: GinUE kernel, Girko's formula, eta_z / sigma_z and k-point comparisons."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .ensembles import EnsembleSpec, ginibre, sample, sample_rng
from .locallaw import mean_h_htilde
from .parallel import pmap
from .quaternion import Quat
from .resolvent import BasisTraceEngine, HermitisationHandle, _rotated_product


class QuadratureError(RuntimeError):
    pass


@dataclass
class EigenSample:
    eigenvalues: np.ndarray
    spec: EnsembleSpec | None = None
    seed: int | None = None
    sigma_z: float | None = None

    def __post_init__(self):
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=complex)
        if not np.all(np.isfinite(self.eigenvalues)):
            raise ValueError("non-finite eigenvalues")

    @property
    def n(self) -> int:
        return self.eigenvalues.size


# ---------------------------------------------------------------- GinUE kernel


def ginue_kernel(z1, z2) -> np.ndarray:
    """K(z_i, z_j) = pi^{-1} exp(-(|z_i|^2 + |z_j|^2)/2 + conj(z_i) z_j)."""
    a = np.asarray(z1, dtype=complex)[..., :, None]
    b = np.asarray(z2, dtype=complex)[..., None, :]
    return np.exp(-(np.abs(a) ** 2 + np.abs(b) ** 2) / 2 + np.conj(a) * b) / math.pi


@dataclass
class GinibreKernel:
    cache: dict = field(default_factory=dict)

    def __call__(self, zi: complex, zj: complex) -> complex:
        key = (complex(zi), complex(zj))
        if key not in self.cache:
            self.cache[key] = complex(ginue_kernel([zi], [zj])[0, 0])
        return self.cache[key]

    def matrix(self, points) -> np.ndarray:
        pts = [complex(p) for p in points]
        return np.array([[self(a, b) for b in pts] for a in pts])


def ginue_rho_k(points) -> float:
    """rho^(k)_GinUE(z_1, ..., z_k) = det[K(z_i, z_j)]."""
    pts = np.atleast_1d(np.asarray(points, dtype=complex))
    if pts.size > 6:
        raise ValueError("k <= 6 supported")
    return float(np.real(np.linalg.det(ginue_kernel(pts, pts))))


def ginue_rho_batch(points: np.ndarray) -> np.ndarray:
    """det[K] for a batch of configurations with shape (..., k)."""
    return np.real(np.linalg.det(ginue_kernel(points, points)))


def ginue_integral(f, k: int, half_width: float = 6.0, points: int | None = None) -> float:
    """int f(z_1..z_k) rho^(k)(z) d^{2k}z by a midpoint grid on [-L, L]^{2k}.

    ``f`` receives an array of shape (M, k) of complex points.
    """
    if k not in (1, 2):
        raise ValueError("grid quadrature implemented for k = 1, 2")
    points = points or (256 if k == 1 else 28)
    h = 2 * half_width / points
    axis = -half_width + h * (np.arange(points) + 0.5)
    grid = (axis[None, :] + 1j * axis[:, None]).ravel()
    if k == 1:
        return float(np.sum(np.real(f(grid[:, None])) / math.pi) * h * h)
    total = 0.0
    for z1 in grid:
        pts = np.stack([np.full(grid.size, z1), grid], axis=1)
        vals = np.real(f(pts))
        nz = np.abs(vals) > 0
        if np.any(nz):
            total += float(np.sum(vals[nz] * ginue_rho_batch(pts[nz])))
    return total * h ** 4


def bump(scale: float = 1.0, center: complex = 0.0):
    """Gaussian bump exp(-|z - c|^2 / (2 s^2)), vectorised."""
    return lambda zz: np.exp(-np.abs(np.asarray(zz) - center) ** 2 / (2 * scale * scale))


def bump_laplacian(scale: float = 1.0, center: complex = 0.0):
    s2 = scale * scale
    return lambda zz: (np.exp(-np.abs(zz - center) ** 2 / (2 * s2))
                       * (np.abs(zz - center) ** 2 / (s2 * s2) - 2 / s2))


def product_bump(scale: float = 1.0):
    """f(z_1, ..., z_k) = prod_j exp(-|z_j|^2 / (2 s^2)) on arrays of shape (M, k)."""
    return lambda pts: np.prod(np.exp(-np.abs(pts) ** 2 / (2 * scale * scale)), axis=-1)


def product_bump_integral(scale: float, k: int) -> float:
    """Closed form of int prod_j g(z_j) rho^(k) for k = 1, 2 with g a Gaussian bump."""
    a = 1.0 / (2 * scale * scale)
    if k == 1:
        return 1.0 / a
    if k == 2:
        return 2.0 / (a * a * (a + 2.0))
    raise ValueError("closed form only for k = 1, 2")


# ---------------------------------------------------------------- Girko


@dataclass
class GirkoResult:
    lhs: float
    rhs: float
    grid: int
    method: str

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)


def _log_abs_det_batch(x: np.ndarray, zs: np.ndarray, chunk: int = 256) -> np.ndarray:
    n = x.shape[0]
    out = np.empty(zs.size)
    eye = np.eye(n)
    for k in range(0, zs.size, chunk):
        zz = zs[k:k + chunk]
        out[k:k + chunk] = np.linalg.slogdet(x[None] - zz[:, None, None] * eye)[1]
    return out


def log_abs_det_eta(x: np.ndarray, z: complex, eta_max: float | None = None,
                    eta_min: float = 0.0, points: int = 24, sigma: np.ndarray | None = None) -> float:
    """log|det(X - z)| from the resolvent: N log T - (1/2) int_{eta_min}^T Im tr G_z(i eta) d eta.

    The integrand is 2 sum_k eta / (sigma_k^2 + eta^2); the integral is done by
    panelled Gauss-Legendre in log(eta), so truncation at eta_min and T are the only
    approximations.
    """
    s = sigma if sigma is not None else np.linalg.svd(np.asarray(x) - z * np.eye(x.shape[0]),
                                                       compute_uv=False)
    n = s.size
    big = eta_max or 1e6 * max(1.0, float(s.max()))
    lo = eta_min if eta_min > 0 else 1e-9 * max(float(s.min()), 1e-300)
    nodes, weights = np.polynomial.legendre.leggauss(points)
    edges = np.linspace(math.log(lo), math.log(big), 4 * int(math.log(big / lo)) + 2)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        eta = np.exp(0.5 * (b - a) * nodes + 0.5 * (a + b))
        im_tr = 2.0 * np.sum(eta[:, None] / (s[None, :] ** 2 + eta[:, None] ** 2), axis=1)
        total += 0.5 * (b - a) * float(np.dot(weights, im_tr * eta))
    return n * math.log(big) - 0.5 * total


def girko_check(x, f=None, lap=None, center: complex = 0.0, half_width: float = 1.5,
                grid: int = 128, method: str = "slogdet", max_points: int = 1 << 18) -> GirkoResult:
    """Compare sum_j f(lambda_j) with (2 pi)^{-1} int Delta f(z) log|det(X - z)| d^2 z.

    Default f is a Gaussian bump of width half_width / 6 around ``center``; the right
    side uses a midpoint grid over the square of half-width ``half_width``.
    """
    x = np.asarray(x, dtype=complex)
    center = complex(center)
    if f is None:
        f = bump(half_width / 6, center)
        lap = bump_laplacian(half_width / 6, center)
    if lap is None:
        raise ValueError("pass the Laplacian of f")
    if grid * grid > max_points:
        raise QuadratureError(f"grid {grid}^2 exceeds budget {max_points}")
    lhs = float(np.sum(np.real(f(np.linalg.eigvals(x)))))
    h = 2 * half_width / grid
    axis = -half_width + h * (np.arange(grid) + 0.5)
    zs = (center.real + axis[None, :] + 1j * (center.imag + axis[:, None])).ravel()
    if method == "slogdet":
        ld = _log_abs_det_batch(x, zs)
    elif method == "eta":
        n = x.shape[0]
        ld = np.empty(zs.size)
        for k in range(0, zs.size, 256):
            zz = zs[k:k + 256]
            sv = np.linalg.svd(x[None] - zz[:, None, None] * np.eye(n), compute_uv=False)
            ld[k:k + 256] = [log_abs_det_eta(x, z, sigma=row) for z, row in zip(zz, sv)]
    else:
        raise ValueError("method must be slogdet or eta")
    rhs = float(np.sum(np.real(lap(zs)) * ld) * h * h / (2 * math.pi))
    return GirkoResult(lhs, rhs, grid, method)


# ---------------------------------------------------------------- eta_z, sigma_z


def eta_z_solve(x, z: complex, t: float, tol: float = 1e-12, handle: HermitisationHandle | None = None) -> float:
    """Root of t <H_z(i eta)> = 1; the objective is strictly decreasing in eta."""
    if t <= 0:
        raise ValueError("t must be positive")
    hd = handle or HermitisationHandle(x, z)
    s2 = hd.sigma ** 2
    g = lambda eta: t * float(np.mean(1.0 / (s2 + eta * eta))) - 1.0
    lo, hi = math.sqrt(t), math.sqrt(t)
    for _ in range(200):
        if g(hi) < 0:
            break
        hi *= 2
    else:
        raise ArithmeticError("no sign change above eta")
    for _ in range(200):
        if g(lo) > 0:
            break
        lo /= 2
    else:
        raise ArithmeticError("no sign change below eta")
    if g(hi) == 0:
        return hi
    root = optimize.brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(g(root)) > tol * 10 and abs(g(root)) > 1e-10:
        raise ArithmeticError(f"eta_z residual {g(root):.3e}")
    return float(root)


def sigma_z_from_handle(hd: HermitisationHandle, eta: float) -> float:
    """eta^2 <H H~> + |<H^2 X_z>|^2 / <H^2> at H = H_z(i eta)."""
    s = hd.sigma
    d = 1.0 / (s * s + eta * eta)
    hh = mean_h_htilde(hd, eta, eta)
    # tr(H^2 X_z) = tr(V D^2 V^* U S V^*) = sum_k d_k^2 s_k conj(P_kk)
    hx = complex(np.sum(d * d * s * np.conj(np.diag(hd.p)))) / hd.n
    return eta * eta * hh + abs(hx) ** 2 / float(np.mean(d * d))


def sigma_z(x, z: complex, t: float) -> float:
    hd = HermitisationHandle(x, z)
    return sigma_z_from_handle(hd, eta_z_solve(x, z, t, handle=hd))


# ---------------------------------------------------------------- k-point statistics


@dataclass
class KPointResult:
    k: int
    estimate: float
    stderr: float
    prediction: float
    samples: int
    flagged: bool = False

    @property
    def difference(self) -> float:
        return self.estimate - self.prediction

    @property
    def z_score(self) -> float:
        return self.difference / self.stderr if self.stderr > 0 else float("inf")


def kpoint_statistic(zeta: np.ndarray, f, k: int, cutoff: float = 8.0) -> float:
    """sum over distinct k-tuples of f(zeta_{i_1}, ..., zeta_{i_k}); far points are dropped."""
    pts = zeta[np.abs(zeta) < cutoff]
    if k == 1:
        return float(np.sum(np.real(f(pts[:, None]))))
    if k == 2:
        i, j = np.meshgrid(np.arange(pts.size), np.arange(pts.size), indexing="ij")
        off = i != j
        pairs = np.stack([pts[i[off]], pts[j[off]]], axis=1)
        return float(np.sum(np.real(f(pairs))))
    raise ValueError("k = 1, 2 supported")


def kpoint_compare(samples, z: complex, k: int, f=None, prediction: float | None = None,
                   min_samples: int = 200, cutoff: float = 8.0) -> KPointResult:
    """MC estimate of E sum f(sqrt(N sigma_z)(lambda - z), ...) against int f rho^(k).

    Each sample is an EigenSample; its ``sigma_z`` defaults to 1.
    """
    f = f or product_bump(1.0)
    vals = []
    for smp in samples:
        sig = smp.sigma_z if smp.sigma_z is not None else 1.0
        zeta = math.sqrt(smp.n * sig) * (smp.eigenvalues - z)
        vals.append(kpoint_statistic(zeta, f, k, cutoff))
    vals = np.array(vals)
    if prediction is None:
        prediction = ginue_integral(f, k)
    se = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else float("inf")
    flagged = len(vals) < min_samples
    if flagged:
        se *= math.sqrt(min_samples / max(len(vals), 1))
    return KPointResult(k, float(np.mean(vals)), se, float(prediction), len(vals), flagged)


def _divisible_job(args):
    spec, t, z, idx = args
    rng = sample_rng(spec.seed, idx)
    x = sample(spec, rng).entries
    y = ginibre(spec.n, rng)
    lam = np.linalg.eigvals(x + math.sqrt(t) * y)
    sig = sigma_z(x, z, t)
    return EigenSample(lam, spec, idx, sig)


def gaussian_divisible_samples(spec: EnsembleSpec, t: float, z: complex, count: int,
                               threads: int | None = 1) -> list:
    """Eigenvalues of X + sqrt(t) Y with sigma_z computed from X."""
    return pmap(_divisible_job, [(spec, t, z, i) for i in range(count)], threads)


def _plain_job(args):
    spec, idx = args
    x = sample(spec, sample_rng(spec.seed, idx)).entries
    return EigenSample(np.linalg.eigvals(x), spec, idx)


def eigen_samples(spec: EnsembleSpec, count: int, threads: int | None = 1) -> list:
    if spec.n > 2048:
        raise ValueError("N is capped at 2048 for dense eigensolves")
    return pmap(_plain_job, [(spec, i) for i in range(count)], threads)


# ---------------------------------------------------------------- log-det expansion


@dataclass
class LogdetResult:
    lhs: float
    series: complex
    terms: list
    next_term: float

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.series)


def logdet_expansion_check(x, z: complex, xs: complex, eta: float, order: int) -> LogdetResult:
    """log det(W_{z + x/sqrt N} - i eta) - log det(W_z - i eta) against
    -sum_{l <= order} l^{-1} N^{-l/2} tr (G_z(i eta) (x F + conj(x) F^*))^l.

    Both determinants equal (-1)^N prod_k (sigma_k^2 + eta^2), so the left side is real.
    """
    x = np.asarray(x, dtype=complex)
    n = x.shape[0]
    xs = complex(xs)
    s0 = np.linalg.svd(x - z * np.eye(n), compute_uv=False)
    s1 = np.linalg.svd(x - (z + xs / math.sqrt(n)) * np.eye(n), compute_uv=False)
    lhs = float(np.sum(np.log(s1 ** 2 + eta ** 2)) - np.sum(np.log(s0 ** 2 + eta ** 2)))
    hd = HermitisationHandle(x, z)
    engine = BasisTraceEngine(hd)
    b = Quat(0, 0, xs, np.conj(xs))
    w = 1j * eta

    def tr(l):
        ws, bs = [w] * l, [b] * l
        val = engine.chain_trace(ws, bs) if l <= 4 else _rotated_product(hd, ws, bs)
        return 2 * n * val

    terms = [-tr(l) / (l * n ** (l / 2)) for l in range(1, order + 2)]
    series = complex(sum(terms[:order]))
    return LogdetResult(lhs, series, terms[:order], float(abs(terms[order])))


# ---------------------------------------------------------------- circular law


@dataclass
class ChiSquare:
    statistic: float
    p_value: float
    bins: int


def circular_law_chi2(eigs, bins: int = 20) -> ChiSquare:
    """Chi-square of |lambda|^2 against the uniform law on [0, 1] (uniform disk)."""
    r2 = np.minimum(np.abs(np.asarray(eigs)) ** 2, 1.0 - 1e-12)
    counts, _ = np.histogram(r2, bins=bins, range=(0.0, 1.0))
    res = stats.chisquare(counts)
    return ChiSquare(float(res.statistic), float(res.pvalue), bins)
