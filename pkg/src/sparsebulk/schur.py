"""Partial Schur decomposition: the tilted spherical law mu, Householder deflation,
the normaliser K and the concentration statistics of quadratic forms in v ~ mu.

mu has density K^{-1} (N/(pi t))^{N-1} exp(-(N/t) ||X_z v||^2) against the unit-mass
Haar measure on the sphere of C^N.  In the eigenbasis of A = (N/t) X_z^* X_z the
weights |y_k|^2 of a Haar vector are Dirichlet(1, ..., 1), which gives closed forms
for the normaliser and for E_mu[v^* A v] as divided differences of exp(-x).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy import integrate, optimize

from .quaternion import F, F_STAR
from .resolvent import ChainEvaluator, HermitisationHandle, hermitisation_matrix
from .spectral import eta_z_solve

log = logging.getLogger(__name__)


class SamplerError(RuntimeError):
    pass


class MethodError(ValueError):
    pass


# ---------------------------------------------------------------- density and sampler


@dataclass
class BinghamDensity:
    """exp(-(N/t) ||X_z v||^2) on the unit sphere, diagonalised once."""

    x: np.ndarray
    z: complex
    t: float
    handle: HermitisationHandle = field(init=False, repr=False)

    def __post_init__(self):
        if self.t <= 0:
            raise ValueError("t must be positive")
        self.x = np.asarray(self.x, dtype=complex)
        self.handle = HermitisationHandle(self.x, self.z)

    @property
    def n(self) -> int:
        return self.handle.n

    @property
    def beta(self) -> float:
        """Inverse temperature N/t, with N the size of the full matrix."""
        return self.handle.n / self.t

    @property
    def lam(self) -> np.ndarray:
        """Eigenvalues of A = (N/t) X_z^* X_z, in the order of the right singular vectors."""
        return self.beta * self.handle.sigma ** 2

    def energy(self, v: np.ndarray) -> np.ndarray:
        """v^* A v for unit vectors stored as columns."""
        y = self.handle.v.conj().T @ v
        return np.real(np.einsum("i,i...->...", self.lam, np.abs(y) ** 2))


def acg_scale(lam_shifted: np.ndarray) -> float:
    """c solving sum_i 1/(c + lam_i) = 1, the envelope scale of the complex ACG proposal."""
    n = lam_shifted.size
    g = lambda c: float(np.sum(1.0 / (c + lam_shifted))) - 1.0
    if g(1e-300) <= 0:
        return 1e-300
    return optimize.brentq(g, 1e-14, float(n) + 1.0, xtol=1e-14)


@dataclass
class SampleBatch:
    vectors: np.ndarray
    acceptance: float
    proposals: int


def sample_mu(density: BinghamDensity, rng, size: int = 1, min_rate: float = 1e-4,
              max_proposals: int = 10 ** 7) -> SampleBatch:
    """Exact draws from mu by rejection from a complex angular central Gaussian.

    With lam' = lam - min(lam) and Omega = I + diag(lam')/c the proposal has density
    det(Omega) (y^* Omega y)^{-N} against Haar, so the acceptance ratio is
    exp(-x) (1 + x/c)^N / M with x = y^* diag(lam') y and M its maximum over x >= 0.
    """
    lam = density.lam - density.lam.min()
    n = lam.size
    c = acg_scale(lam)
    x_star = max(n - c, 0.0)
    log_m = -x_star + n * math.log1p(x_star / c)
    scale = 1.0 / np.sqrt(1.0 + lam / c)
    out = []
    tried = 0
    batch = 256
    while len(out) < size:
        if tried >= max_proposals:
            break
        g = (rng.standard_normal((n, batch)) + 1j * rng.standard_normal((n, batch))) * scale[:, None]
        y = g / np.linalg.norm(g, axis=0)
        xq = lam @ (np.abs(y) ** 2)
        log_acc = -xq + n * np.log1p(xq / c) - log_m
        keep = np.log(rng.random(batch)) < log_acc
        tried += batch
        out.extend(y[:, keep].T)
        if tried >= 4096 and len(out) / tried < min_rate:
            raise SamplerError(f"acceptance rate {len(out) / tried:.2e} below {min_rate:.0e}; retune envelope")
    rate = len(out) / tried
    log.info("mu sampler acceptance %.4f over %d proposals", rate, tried)
    if len(out) < size:
        raise SamplerError("proposal budget exhausted")
    ys = np.array(out[:size]).T
    return SampleBatch(density.handle.v @ ys, rate, tried)


def haar_sphere(n: int, rng, size: int = 1) -> np.ndarray:
    g = rng.standard_normal((n, size)) + 1j * rng.standard_normal((n, size))
    return g / np.linalg.norm(g, axis=0)


# ---------------------------------------------------------------- exact oracles


def _dps(lam) -> int:
    return 40 + 4 * len(lam)


def haar_laplace(lam, s: float = 1.0) -> mpmath.mpf:
    """E_Haar[exp(-s v^* diag(lam) v)] = (N-1)! sum_i e^{-s lam_i} / prod_{j != i} s (lam_j - lam_i)."""
    lam_f = np.asarray(lam, dtype=float)
    if np.ptp(lam_f) <= 1e-12 * (1.0 + np.abs(lam_f).max()):
        return mpmath.exp(-s * mpmath.mpf(float(lam_f.mean())))
    if np.min(np.diff(np.sort(lam_f))) <= 1e-12 * (1.0 + np.abs(lam_f).max()):
        raise MethodError("divided differences need distinct eigenvalues")
    lam = [mpmath.mpf(float(v)) for v in lam_f]
    n = len(lam)
    with mpmath.workdps(_dps(lam)):
        total = mpmath.mpf(0)
        for i, li in enumerate(lam):
            den = mpmath.mpf(1)
            for j, lj in enumerate(lam):
                if j != i:
                    den *= s * (lj - li)
            total += mpmath.exp(-s * li) / den
        return +(mpmath.factorial(n - 1) * total)


def mu_mean_energy(lam) -> float:
    """E_mu[v^* diag(lam) v] = (N-1) + sum lam_i w_i / sum w_i with w_i = e^{-lam_i}/prod_{j!=i}(lam_j-lam_i)."""
    lam_mp = [mpmath.mpf(float(v)) for v in lam]
    with mpmath.workdps(_dps(lam_mp)):
        num, den = mpmath.mpf(0), mpmath.mpf(0)
        for i, li in enumerate(lam_mp):
            p = mpmath.mpf(1)
            for j, lj in enumerate(lam_mp):
                if j != i:
                    p *= (lj - li)
            w = mpmath.exp(-li) / p
            num += li * w
            den += w
        return float(len(lam_mp) - 1 + num / den)


# ---------------------------------------------------------------- deflation


def householder_unitary(v: np.ndarray) -> np.ndarray:
    """Unitary R with first column v: a Householder reflection times a phase on e_1."""
    v = np.asarray(v, dtype=complex)
    if abs(np.linalg.norm(v) - 1.0) > 1e-10:
        raise ValueError("v must be a unit vector")
    n = v.size
    phase = v[0] / abs(v[0]) if abs(v[0]) > 0 else 1.0
    alpha = -phase
    u = v.copy()
    u[0] -= alpha  # |u_0| = 1 + |v_0| > 0
    u /= np.linalg.norm(u)
    r = np.eye(n, dtype=complex) - 2.0 * np.outer(u, u.conj())
    r[:, 0] *= alpha
    return r


def householder_deflate(x, v) -> np.ndarray:
    """X^(1) = Q^* X Q with R(v) = (v, Q)."""
    r = householder_unitary(v)
    q = r[:, 1:]
    return q.conj().T @ np.asarray(x, dtype=complex) @ q


def minor_identity_residual(x, z: complex, w: complex, v) -> float:
    """Max entry of R diag(0, G^(1)) R^* - (G - G V (V^* G V)^{-1} V^* G), with V = 1_2 (x) v."""
    x = np.asarray(x, dtype=complex)
    n = x.shape[0]
    r = householder_unitary(v)
    x1 = r[:, 1:].conj().T @ x @ r[:, 1:]
    g = np.linalg.inv(hermitisation_matrix(x, z) - w * np.eye(2 * n))
    g1 = np.linalg.inv(hermitisation_matrix(x1, z) - w * np.eye(2 * n - 2))
    idx = np.r_[1:n, n + 1:2 * n]
    emb = np.zeros((2 * n, 2 * n), dtype=complex)
    emb[np.ix_(idx, idx)] = g1
    rr = np.kron(np.eye(2), r)
    lhs = rr @ emb @ rr.conj().T
    vv = np.zeros((2 * n, 2), dtype=complex)
    vv[:n, 0] = v
    vv[n:, 1] = v
    gv = g @ vv
    rhs = g - gv @ np.linalg.solve(vv.conj().T @ gv, vv.conj().T @ g)
    return float(np.max(np.abs(lhs - rhs)))


# ---------------------------------------------------------------- K normaliser


@dataclass
class KResult:
    value: float
    log_value: float
    method: str
    stderr: float = 0.0


def _log_prefactor(n: int, t: float) -> float:
    return (n - 1) * math.log(n / (math.pi * t))


def k_normalizer(x, z: complex, t: float, method: str = "integral", samples: int = 200000,
                 rng=None, eta: float | None = None) -> KResult:
    """Normaliser K of mu (unit-mass Haar).

    integral: ((N-1)!/(2 pi^N)) e^{N eta^2/t} det^{-1}(eta^2 + |X_z|^2)
              * int e^{iNp/t} det^{-1}(1 + i p H_z(i eta)) dp  at eta = eta_z(t);
    exact:    divided differences of exp(-x) at the eigenvalues of (N/t) X_z^* X_z;
    mc:       importance sampling of E_Haar[exp(-(N/t)||X_z v||^2)] with the ACG proposal.
    """
    dens = BinghamDensity(x, z, t)
    n = dens.n
    if method == "integral":
        hd = dens.handle
        eta = eta or eta_z_solve(None, z, t, handle=hd)
        d = 1.0 / (hd.sigma ** 2 + eta * eta)
        width = 1.0 / math.sqrt(float(np.sum(d * d)))

        def integrand(p):
            return math.exp(-0.5 * float(np.sum(np.log1p((p * d) ** 2)))) * math.cos(
                n * p / t - float(np.sum(np.arctan(p * d))))

        # the integrand is conjugate symmetric, so twice the real part over p > 0
        edges = [0.0] + [width * k for k in (1, 2, 4, 8, 16, 32, 64, 128)] + [np.inf]
        val = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            part, err = integrate.quad(integrand, a, b, limit=400, epsabs=0.0, epsrel=1e-11)
            val += part
        val *= 2.0
        if val <= 0:
            raise MethodError("oscillatory integral did not resolve to a positive value")
        log_k = (math.lgamma(n) - math.log(2.0) - n * math.log(math.pi) + n * eta * eta / t
                 - float(np.sum(np.log(hd.sigma ** 2 + eta * eta))) + math.log(val))
        return KResult(math.exp(log_k), log_k, method)
    if method == "exact":
        lap = haar_laplace(dens.lam)
        log_k = _log_prefactor(n, t) + float(mpmath.log(lap))
        return KResult(math.exp(log_k), log_k, method)
    if method == "mc":
        if n > 64:
            raise MethodError("mc normaliser restricted to N <= 64")
        rng = rng or np.random.default_rng(0)
        lam0 = dens.lam.min()
        lam = dens.lam - lam0
        c = acg_scale(lam)
        scale = 1.0 / np.sqrt(1.0 + lam / c)
        log_det_omega = float(np.sum(np.log1p(lam / c)))
        logs = []
        for k in range(0, samples, 8192):
            m = min(8192, samples - k)
            g = (rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))) * scale[:, None]
            y = g / np.linalg.norm(g, axis=0)
            xq = lam @ (np.abs(y) ** 2)
            logs.append(-xq + n * np.log1p(xq / c) - log_det_omega)
        lw = np.concatenate(logs)
        top = lw.max()
        wts = np.exp(lw - top)
        mean = float(np.mean(wts))
        rel = float(np.std(wts, ddof=1) / math.sqrt(wts.size) / mean)
        log_k = _log_prefactor(n, t) - lam0 + top + math.log(mean)
        return KResult(math.exp(log_k), log_k, method, rel * math.exp(log_k))
    raise MethodError(f"unknown method {method!r}")


def k_bound_prefactor(x, z: complex, t: float) -> float:
    """log of sqrt(t^3/N) e^{N eta^2/t} det^{-1}(eta^2 + |X_z|^2), the K upper-bound shape."""
    hd = HermitisationHandle(x, z)
    n = hd.n
    eta = eta_z_solve(None, z, t, handle=hd)
    return (0.5 * math.log(t ** 3 / n) + n * eta * eta / t
            - float(np.sum(np.log(hd.sigma ** 2 + eta * eta))))


# ---------------------------------------------------------------- Laplace phase and F


def laplace_phi(x, z: complex, t: float, xs) -> np.ndarray:
    """phi(x) = x/t - <log(x + |X_z|^2)>."""
    s2 = HermitisationHandle(x, z).sigma ** 2
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    if np.any(xs <= 0):
        raise ValueError("x must be positive")
    return xs / t - np.mean(np.log(xs[:, None] + s2[None, :]), axis=1)


@dataclass
class PhiReport:
    argmin: float
    eta_sq: float
    min_curvature_ratio: float


def phi_report(x, z: complex, t: float, grid: int = 2001) -> PhiReport:
    """Argmin of phi on a log grid and min of (phi(x) - phi(eta^2)) t^3 / (x - eta^2)^2."""
    hd = HermitisationHandle(x, z)
    eta = eta_z_solve(None, z, t, handle=hd)
    e2 = eta * eta
    xs = np.geomspace(e2 / 100, e2 * 100, grid)
    ph = laplace_phi(x, z, t, xs)
    p0 = float(laplace_phi(x, z, t, [e2])[0])
    mask = np.abs(xs - e2) > 1e-3 * e2
    ratio = (ph[mask] - p0) * t ** 3 / (xs[mask] - e2) ** 2
    return PhiReport(float(xs[np.argmin(ph)]), e2, float(ratio.min()))


def _elementary_symmetric(vals: np.ndarray) -> np.ndarray:
    """e_0..e_n of the entries of vals, computed in log-safe scaled form."""
    e = np.zeros(vals.size + 1)
    e[0] = 1.0
    for v in vals:
        e[1:] = e[1:] + v * e[:-1]
    return e


def f_exact(x1, z: complex, n_full: int, t: float) -> float:
    """E|det(X^(1)_z + sqrt(N t/(N-1)) Y)|^2 for GinUE(N-1) Y.

    By Cauchy-Binet this equals sum_k k! s^{2k} e_{M-k}(sigma^2) with entry variance
    s^2 = N t/(N-1)^2 and M = N - 1.
    """
    hd = HermitisationHandle(x1, z)
    m = hd.n
    s2 = n_full * t / m ** 2
    e = _elementary_symmetric(hd.sigma ** 2)
    return float(sum(math.factorial(k) * s2 ** k * e[m - k] for k in range(m + 1)))


def f_bound_oracle(x, z: complex, t: float, samples: int = 2000, rng=None, v=None) -> dict:
    """MC estimate of F_{N-1} for one deflation step and its ratio to the bound shape
    (N t)^{1/2} e^{-N eta^2/t} det(eta^2 + |X_z|^2)."""
    x = np.asarray(x, dtype=complex)
    n = x.shape[0]
    if n > 64:
        raise MethodError("F oracle restricted to N <= 64")
    rng = rng or np.random.default_rng(0)
    if v is None:
        v = sample_mu(BinghamDensity(x, z, t), rng).vectors[:, 0]
    x1 = householder_deflate(x, v)
    m = n - 1
    amp = math.sqrt(n * t / m)
    vals = np.empty(samples)
    for k in range(samples):
        y = (rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))) / math.sqrt(2 * m)
        vals[k] = abs(np.linalg.det(x1 - z * np.eye(m) + amp * y)) ** 2
    hd = HermitisationHandle(x, z)
    eta = eta_z_solve(None, z, t, handle=hd)
    log_bound = (0.5 * math.log(n * t) - n * eta * eta / t
                 + float(np.sum(np.log(hd.sigma ** 2 + eta * eta))))
    mc = float(vals.mean())
    return {"mc": mc, "stderr": float(vals.std(ddof=1) / math.sqrt(samples)),
            "exact": f_exact(x1, z, n, t), "log_bound": log_bound,
            "ratio": mc / math.exp(log_bound)}


# ---------------------------------------------------------------- concentration


@dataclass
class ConcentrationReport:
    n: int
    t: float
    eta: float
    scale: float
    conc: dict
    det_rel: np.ndarray
    inv_entries: np.ndarray
    inv_bound: np.ndarray
    chain_entries: dict
    acceptance: float

    def quantiles(self, q: float = 0.99) -> dict:
        out = {k: float(np.quantile(v, q)) for k, v in self.conc.items()}
        out["det"] = float(np.quantile(self.det_rel, q))
        return out

    def constants(self, q: float = 0.99) -> dict:
        """Observed C in deviation <= C log N / sqrt(N t)."""
        return {k: v / self.scale for k, v in self.quantiles(q).items()}

    def entrywise_constants(self) -> dict:
        out = {"inv": (self.inv_entries / self.inv_bound).max(axis=0)}
        for p, (vals, bound) in self.chain_entries.items():
            out[f"chain{p}"] = (vals / bound).max(axis=0)
        return out


def concentration_suite(x, z: complex, t: float, samples: int = 200, rng=None,
                        chain_orders=(1, 2)) -> ConcentrationReport:
    """Quadratic-form deviations for v ~ mu at eta = eta_z(t).

    conc1: t |eta v^* H v - eta t <H^2>|
    conc2: |eta v^* H~ v - eta t <H H~>|
    conc3: sqrt(t) |v^* X_z H v - t <H X_z H>|
    det:   | |det V^* G V| / (t^2 eta^2 <H^2><H H~>) - 1 |
    """
    from .locallaw import mean_h_htilde

    x = np.asarray(x, dtype=complex)
    rng = rng or np.random.default_rng(0)
    dens = BinghamDensity(x, z, t)
    hd = dens.handle
    n = hd.n
    eta = eta_z_solve(None, z, t, handle=hd)
    s = hd.sigma
    d = 1.0 / (s * s + eta * eta)
    h2 = float(np.mean(d * d))
    hh = mean_h_htilde(hd, eta, eta)
    hxh = complex(np.sum(d * d * s * np.conj(np.diag(hd.p)))) / n
    batch = sample_mu(dens, rng, size=samples)
    vs = batch.vectors
    yv = hd.v.conj().T @ vs
    yu = hd.u.conj().T @ vs
    q_h = np.real(np.sum(d[:, None] * np.abs(yv) ** 2, axis=0))
    q_ht = np.real(np.sum(d[:, None] * np.abs(yu) ** 2, axis=0))
    q_xh = np.sum(np.conj(yu) * (s * d)[:, None] * yv, axis=0)
    conc = {"conc1": t * np.abs(eta * q_h - eta * t * h2),
            "conc2": np.abs(eta * q_ht - eta * t * hh),
            "conc3": math.sqrt(t) * np.abs(q_xh - t * hxh)}
    # V^* G V = [[i eta v^*H~v, v^*X_z H v], [v^* H X_z^* v, i eta v^*H v]]
    det = -(eta * eta) * q_ht * q_h - np.abs(q_xh) ** 2
    pred = t * t * eta * eta * h2 * hh
    det_rel = np.abs(np.abs(det) / pred - 1.0)
    inv = np.empty((samples, 2, 2))
    for k in range(samples):
        mat = np.array([[1j * eta * q_ht[k], q_xh[k]], [np.conj(q_xh[k]), 1j * eta * q_h[k]]])
        inv[k] = np.abs(np.linalg.inv(mat))
    off = max(n ** -0.5, t)
    inv_bound = np.array([[1.0, off], [off, t]])
    chains = {}
    w = 1j * eta
    vv = np.zeros((2 * n, 2, samples), dtype=complex)
    vv[:n, 0, :] = vs
    vv[n:, 1, :] = vs
    for p in chain_orders:
        bs = [F if j % 2 == 0 else F_STAR for j in range(p)]
        ev = ChainEvaluator(hd, [w] * (p + 1), bs)
        vals = np.empty((samples, 2, 2))
        for col in range(2):
            y = ev.apply_right(vv[:, col, :])
            vals[:, :, col] = np.abs(np.einsum("irk,ik->kr", vv.conj(), y))
        bound = np.array([[t ** (-p / 2), t ** (-(p + 1) / 2)], [t ** (-(p + 1) / 2), t ** (-p / 2 - 1)]])
        chains[p] = (vals, bound)
    scale = math.log(n) / math.sqrt(n * t)
    return ConcentrationReport(n, t, eta, scale, conc, det_rel, inv, inv_bound, chains, batch.acceptance)
