"""Scalar self-consistent equation for the Hermitised resolvent and its 2x2 lift.

For ``s = m + w`` the equation ``-1/m = m + w - |z|^2/(m + w)`` is the cubic

    s^3 - w s^2 + (1 - |z|^2) s + w |z|^2 = 0,

after which ``m = s/(|z|^2 - s^2)`` and ``u = m/s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .quaternion import Quat


class ConvergenceError(RuntimeError):
    pass


class SingularityError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class SpectralPoint:
    z: complex
    w: complex

    @property
    def eta(self) -> float:
        return float(self.w.imag)


@dataclass(frozen=True)
class ScalarM:
    m: complex
    u: complex
    residual: float
    z: complex
    w: complex

    @property
    def s(self) -> complex:
        return self.m + self.w


def cubic_residual(z: complex, w: complex, m: complex) -> float:
    """|m(m+w) + 1 - |z|^2 m/(m+w)|, the equation multiplied through by m."""
    s = m + w
    return float(abs(m * s + 1.0 - abs(z) ** 2 * m / s))


def _coeffs(z, w):
    a = abs(z) ** 2
    return np.array([1.0, -w, 1.0 - a, w * a], dtype=complex)


def _m_from_s(z, s):
    return s / (abs(z) ** 2 - s * s)


def _newton(z, w, s, iters=8):
    a = abs(z) ** 2
    for _ in range(iters):
        p = ((s - w) * s + (1.0 - a)) * s + w * a
        dp = (3.0 * s - 2.0 * w) * s + (1.0 - a)
        if dp == 0:
            break
        step = p / dp
        s = s - step
        if abs(step) <= 1e-17 * max(1.0, abs(s)):
            break
    return s


def _candidates(z, w):
    roots = np.roots(_coeffs(z, w))
    out = []
    for s in roots:
        s = _newton(z, w, complex(s))
        if abs(z) ** 2 - s * s == 0 or s == 0:
            continue  # spurious root introduced by clearing denominators
        out.append((s, _m_from_s(z, s)))
    return out


def _on_branch(w, m, slack=0.0):
    return w.imag * m.imag > slack


def _homotopy(z, w):
    """Follow the root continuously from large |Im w|, where m ~ -1/w."""
    sign = 1.0 if w.imag > 0 else -1.0
    eta_hi = max(20.0, 20.0 * abs(w))
    m = -1.0 / complex(w.real, sign * eta_hi)
    for eta in np.geomspace(eta_hi, abs(w.imag), 200):
        wk = complex(w.real, sign * eta)
        cands = _candidates(z, wk)
        s, m = min(cands, key=lambda c: abs(c[1] - m))
    return m


def solve_m(z: complex, w: complex, tol: float = 1e-12) -> ScalarM:
    """Unique solution with Im w * Im m > 0."""
    z, w = complex(z), complex(w)
    if w.imag == 0:
        raise ValueError("Im w must be nonzero")
    cands = [(s, m) for s, m in _candidates(z, w) if _on_branch(w, m)]
    if len(cands) == 1:
        s, m = cands[0]
    elif len(cands) > 1:
        # numerically degenerate, pick the root continuous with m ~ -1/w
        m_h = _homotopy(z, w)
        s, m = min(cands, key=lambda c: abs(c[1] - m_h))
    else:
        raise ConvergenceError(f"no root with Im w Im m > 0 at z={z}, w={w}")
    res = cubic_residual(z, w, m)
    if res > max(tol, 1e-14) * max(1.0, abs(m) * abs(s)):
        s = _newton(z, w, s, iters=50)
        m = _m_from_s(z, s)
        res = cubic_residual(z, w, m)
        if res > max(tol, 1e-14) * max(1.0, abs(m) * abs(s)):
            raise ConvergenceError(f"residual {res:.3e} above tolerance at z={z}, w={w}")
    return ScalarM(m=m, u=m / s, residual=res, z=z, w=w)


def m_of(z: complex, w: complex) -> complex:
    return solve_m(z, w).m


def dm_dw(z: complex, w: complex) -> complex:
    """Analytic derivative of m_z(w) by implicit differentiation of the cubic."""
    sol = solve_m(z, w)
    a = abs(z) ** 2
    s = sol.s
    ds = (s * s - a) / ((3.0 * s - 2.0 * w) * s + (1.0 - a))
    return ds - 1.0


def m_quat(z: complex, w: complex) -> Quat:
    """M_z(w) = [[m, -z u], [-conj(z) u, m]]."""
    sol = solve_m(z, w)
    return Quat(sol.m, sol.m, -z * sol.u, -np.conj(z) * sol.u)


def mhat(z: complex, w: complex, tr_g: complex) -> Quat:
    """Random-argument variant built from a measured trace ``tr_g`` of the resolvent."""
    s = complex(tr_g) + complex(w)
    den = abs(z) ** 2 - s * s
    if den == 0:
        raise SingularityError("|z|^2 = (trG + w)^2")
    uh = 1.0 / den
    mh = s * uh
    return Quat(mh, mh, -z * uh, -np.conj(z) * uh)


def eta_cap(delta: float) -> tuple[float, str]:
    """Upper |eta| cap: min of 10 and 1/delta, with the binding source."""
    if delta > 0 and 1.0 / delta < 10.0:
        return 1.0 / delta, "1/delta"
    return 10.0, "10"


def domain_grid(delta: float, tau: float, n: int, count: int, z: complex = 0.0,
                seed: int = 0) -> list[SpectralPoint]:
    """Points of D(delta, tau) with log-spaced |eta| and alternating sign of eta."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if not 0 < tau <= 1:
        raise ValueError("tau must lie in (0, 1]")
    if count < 1:
        raise ValueError("count must be positive")
    lo = float(n) ** (-1.0 + tau)
    hi, _ = eta_cap(delta)
    if lo > hi:
        raise ValueError(f"empty domain: N^(-1+tau)={lo:.4g} exceeds eta cap {hi:.4g}")
    rng = np.random.default_rng(seed)
    etas = np.geomspace(lo, hi, count) if count > 1 else np.array([math.sqrt(lo * hi)])
    pts = []
    for k, eta in enumerate(etas):
        sign = 1.0 if k % 2 == 0 else -1.0
        e = rng.uniform(-delta * eta, delta * eta) if delta > 0 else 0.0
        pts.append(SpectralPoint(complex(z), complex(e, sign * eta)))
    return pts


def in_domain(p: SpectralPoint, delta: float, tau: float, n: int) -> bool:
    eta = abs(p.w.imag)
    hi, _ = eta_cap(delta)
    return (float(n) ** (-1.0 + tau) * (1 - 1e-12) <= eta <= hi * (1 + 1e-12)
            and abs(p.w.real) <= delta * eta + 1e-15)
