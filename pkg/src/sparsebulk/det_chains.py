"""Deterministic approximations of resolvent chains, computed inside the quaternion algebra.

With ``M_j = M_z(w_j)`` and the self-energy ``S[R] = <R E+> E+ - <R E-> E-`` the
chain approximation ``M[1,k] = M_z(w_1, B_1, ..., w_k)`` satisfies

    M[1,k] = M_1 B_1 M[2,k] + sum_{l=2}^{k} M_1 S[M[1,l]] M[l,k].

The ``l = k`` term contains the unknown ``M[1,k]``; it is moved to the left and the
resulting 4 x 4 linear system is solved directly.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .quaternion import BASIS, SIGNED_E, Quat, is_regular, parse_quat, quat_mul, self_energy, trace_form
from .scalar_law import m_quat


class StabilityError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ChainSpec:
    """Spectral parameters w_1..w_m and interior deformations B_1..B_{m-1}."""

    ws: tuple
    bs: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "ws", tuple(complex(w) for w in self.ws))
        object.__setattr__(self, "bs", tuple(self.bs))
        if len(self.ws) < 1:
            raise ValueError("a chain needs at least one spectral parameter")
        if len(self.bs) != len(self.ws) - 1:
            raise ValueError("need exactly m - 1 interior deformations")
        if any(w.imag == 0 for w in self.ws):
            raise ValueError("all Im w_j must be nonzero")

    @property
    def m(self) -> int:
        return len(self.ws)

    @property
    def a(self) -> int:
        return sum(is_regular(b) for b in self.bs)

    @property
    def eta(self) -> float:
        return min(abs(w.imag) for w in self.ws)

    def sub(self, i: int, j: int) -> "ChainSpec":
        """Sub-chain w_i, B_i, ..., w_j (1-based, inclusive)."""
        return ChainSpec(self.ws[i - 1:j], self.bs[i - 1:j - 1])


def count_regular(bs) -> int:
    return sum(is_regular(b) for b in bs)


_S_MATRIX = None


def _self_energy_matrix() -> np.ndarray:
    """S as a 4 x 4 matrix acting on the coefficient vector (alpha, beta, gamma, delta)."""
    global _S_MATRIX
    if _S_MATRIX is None:
        cols = [self_energy(Quat(*np.eye(4)[k])).coeffs() for k in range(4)]
        _S_MATRIX = np.array(cols).T
    return _S_MATRIX


def _left_right_matrix(a: Quat, b: Quat) -> np.ndarray:
    """Matrix of X -> a X b on coefficient vectors."""
    cols = [quat_mul(quat_mul(a, Quat(*np.eye(4)[k])), b).coeffs() for k in range(4)]
    return np.array(cols).T


@dataclass
class ChainM:
    value: Quat
    prefix: dict = field(default_factory=dict)
    residual: float = 0.0
    spec: ChainSpec | None = None


def _solve_all(z: complex, spec: ChainSpec):
    """M[i,j] for every 1 <= i <= j <= m, keyed by (i, j)."""
    m = spec.m
    mw = [m_quat(z, w) for w in spec.ws]
    table = {(i, i): mw[i - 1] for i in range(1, m + 1)}
    resid = 0.0
    smat = _self_energy_matrix()
    for length in range(2, m + 1):
        for i in range(1, m - length + 2):
            k = i + length - 1
            rhs = quat_mul(quat_mul(mw[i - 1], spec.bs[i - 1]), table[(i + 1, k)])
            for l in range(i + 1, k):
                rhs = rhs + quat_mul(quat_mul(mw[i - 1], self_energy(table[(i, l)])), table[(l, k)])
            op = np.eye(4) - _left_right_matrix(mw[i - 1], mw[k - 1]) @ smat
            cond = np.linalg.cond(op)
            if not np.isfinite(cond) or cond > 1e14:
                raise StabilityError(f"singular stability operator at z={z}, chain={spec.ws[i-1:k]}")
            x = Quat(*np.linalg.solve(op, rhs.coeffs()))
            table[(i, k)] = x
            check = rhs + quat_mul(quat_mul(mw[i - 1], self_energy(x)), mw[k - 1]) - x
            resid = max(resid, float(np.max(np.abs(check.coeffs()))))
    return table, resid


def m_chain(z: complex, spec: ChainSpec, tol: float = 1e-10) -> ChainM:
    table, resid = _solve_all(z, spec)
    scale = max(1.0, max(abs(c) for c in table[(1, spec.m)].coeffs()))
    if resid > tol * scale:
        raise StabilityError(f"fixed-point residual {resid:.3e} above tolerance")
    prefix = {l: table[(1, l)] for l in range(1, spec.m + 1)}
    return ChainM(table[(1, spec.m)], prefix, resid, spec)


def m_chain_all(z: complex, spec: ChainSpec) -> dict:
    """Every sub-chain M[i,j]; used by the chain ODE and the flow diagnostics."""
    return _solve_all(z, spec)[0]


def tr_chain_det(z: complex, spec: ChainSpec, b_last: Quat) -> complex:
    """<M_z(w_1, B_1, ..., w_m) B_m>."""
    return trace_form(m_chain(z, spec).value, b_last)


def tr_chain_det_cyclic(z: complex, ws, bs) -> complex:
    """<M_z(w_1, B_1, ..., w_m) B_m> from equal-length lists (ws, bs)."""
    ws, bs = list(ws), list(bs)
    return tr_chain_det(z, ChainSpec(ws, bs[:-1]), bs[-1])


def chain_norm_bound(z: complex, spec: ChainSpec) -> float:
    """Operator norm of the 2x2 representative, equal to that of the 2N x 2N matrix."""
    return m_chain(z, spec).value.norm()


def trace_bound_exponent(m: int, a: int) -> int:
    """Exponent in |<M(...) B_m>| <~ eta^{-(m - ceil(a/2) - 1)}."""
    return m - math.ceil(a / 2) - 1


def norm_bound_exponent(m: int, a: int) -> int:
    """Exponent in ||M(...)|| <~ eta^{-(m - ceil(a/2))}."""
    return m - math.ceil(a / 2)


def two_chain_closed_form(z: complex, w1: complex, w2: complex) -> float:
    """|z| |u_1 - u_2| / |w_1 - w_2|, the modulus of <M(w_1, F, w_2)>."""
    from .scalar_law import solve_m

    u1 = solve_m(z, w1).u
    u2 = solve_m(z, w2).u
    return abs(z) * abs(u1 - u2) / abs(w1 - w2)


# ---------------------------------------------------------------- ODE check


def ode_rhs_terms(z: complex, ws, bs) -> list:
    """Deterministic A_{p,r} for p < r, with bs of length m (B_m last)."""
    m = len(ws)
    out = []
    for p in range(1, m + 1):
        for r in range(p + 1, m + 1):
            total = 0j
            for nu, e in SIGNED_E:
                left = tr_chain_det(z, ChainSpec(ws[p - 1:r], bs[p - 1:r - 1]), e)
                right_ws = list(ws[:p]) + list(ws[r - 1:])
                right_bs = list(bs[:p - 1]) + [e] + list(bs[r - 1:m - 1])
                right = tr_chain_det(z, ChainSpec(right_ws, right_bs), bs[m - 1])
                total += nu * left * right
            out.append(((p, r), total))
    return out


@dataclass
class OdeReport:
    max_deviation: float
    times: np.ndarray
    integrated: np.ndarray
    direct: np.ndarray
    truncated: bool = False


def chain_ode_check(z0: complex, spec: ChainSpec, b_last: Quat, t_max: float,
                    step: float = 1e-3) -> OdeReport:
    """Integrate d/dt <M_t B_m> = (m/2) <M_t B_m> + sum_{p<r} A_{p,r} with RK4 along the
    characteristic flow and compare against the directly evaluated <M_t B_m>."""
    from .flow import flow_forward, StoppedFlowError

    ws0 = list(spec.ws)
    bs = list(spec.bs) + [b_last]
    m = spec.m

    def state(t):
        sts = [flow_forward(z0, w, t, n=None) for w in ws0]
        return sts[0].z, [s.w for s in sts]

    def rhs(t, y):
        zt, wt = state(t)
        return 0.5 * m * y + sum(v for _, v in ode_rhs_terms(zt, wt, bs))

    steps = max(1, int(math.ceil(t_max / step))) if t_max > 0 else 0
    h = t_max / steps if steps else 0.0
    y = tr_chain_det_cyclic(z0, ws0, bs)
    times, ys, direct = [0.0], [y], [y]
    truncated = False
    t = 0.0
    try:
        for _ in range(steps):
            k1 = rhs(t, y)
            k2 = rhs(t + h / 2, y + h / 2 * k1)
            k3 = rhs(t + h / 2, y + h / 2 * k2)
            k4 = rhs(t + h, y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
            zt, wt = state(t)
            times.append(t)
            ys.append(y)
            direct.append(tr_chain_det_cyclic(zt, wt, bs))
    except StoppedFlowError:
        truncated = True
    ys, direct = np.array(ys), np.array(direct)
    return OdeReport(float(np.max(np.abs(ys - direct))), np.array(times), ys, direct, truncated)


# ---------------------------------------------------------------- text form


_CHAIN_ITEM = re.compile(r"^\s*(w|B)\s*=\s*(.+?)\s*$")


def parse_complex(text: str) -> complex:
    t = text.strip().replace(" ", "").replace("i", "j")
    if t.startswith("(") and t.endswith(")"):
        t = t[1:-1]
    return complex(t)


def parse_chain(text: str) -> tuple[ChainSpec, Quat | None]:
    """Parse ``"w=0.1+0.5i; B=F; w=-0.2-0.3i"``; an optional trailing ``B=...`` is the
    closing deformation B_m of a trace."""
    ws, bs = [], []
    expect = "w"
    for item in [s for s in text.split(";") if s.strip()]:
        mt = _CHAIN_ITEM.match(item)
        if mt is None:
            raise ValueError(f"cannot parse chain item {item!r}")
        key, val = mt.groups()
        if key != expect:
            raise ValueError(f"expected {expect}= but found {key}= in {text!r}")
        if key == "w":
            ws.append(parse_complex(val))
            expect = "B"
        else:
            bs.append(BASIS[val] if val in BASIS else parse_quat(val))
            expect = "w"
    if not ws:
        raise ValueError("chain has no spectral parameters")
    last = bs.pop() if len(bs) == len(ws) else None
    return ChainSpec(ws, bs), last


def format_chain(spec: ChainSpec, b_last: Quat | None = None) -> str:
    names = {v: k for k, v in BASIS.items()}
    parts = []
    for j, w in enumerate(spec.ws):
        parts.append(f"w={w.real!r}{w.imag:+}i")
        b = spec.bs[j] if j < len(spec.bs) else b_last
        if b is not None:
            parts.append(f"B={names.get(b, str(b))}")
    return "; ".join(parts)
