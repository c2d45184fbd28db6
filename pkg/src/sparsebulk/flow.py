"""Characteristic flow dw/dt = -m_t - w_t/2, dz/dt = -z_t/2 and the coupled OU simulation.

Along the flow ``m_t = e^{t/2} m_0`` so everything has a closed form:

    w_t = w_0 e^{-t/2} - m_0 (e^{t/2} - e^{-t/2}),   z_t = z_0 e^{-t/2}.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .quaternion import BASIS, E_PLUS, SIGNED_E, is_regular
from .scalar_law import solve_m


class StoppedFlowError(RuntimeError):
    def __init__(self, message, stop_time):
        super().__init__(message)
        self.stop_time = stop_time


@dataclass(frozen=True)
class FlowState:
    t: float
    z: complex
    w: complex
    m: complex


def time_to_eta(z0: complex, w0: complex, eta: float) -> float:
    """First time with |Im w_t| = eta (|Im w_t| decreases monotonically from |Im w_0|).

    With x = e^{t/2}, a = |Im m_0| and e = |Im w_0|: (e + a)/x - a x = eta.
    """
    m0 = solve_m(z0, w0).m
    a = abs(m0.imag)
    e0 = abs(complex(w0).imag)
    if eta >= e0:
        return 0.0
    x = (-eta + math.sqrt(eta * eta + 4.0 * a * (e0 + a))) / (2.0 * a)
    return 2.0 * math.log(x)


def stopping_time(z0: complex, w0: complex, n: int) -> float:
    """T(w_0): first time min |Im w_t| < 1/N."""
    return time_to_eta(z0, w0, 1.0 / n)


def flow_forward(z0: complex, w0: complex, t: float, n: int | None = None) -> FlowState:
    z0, w0 = complex(z0), complex(w0)
    if t < 0:
        raise ValueError("t must be nonnegative, use flow_reverse")
    m0 = solve_m(z0, w0).m
    if n is not None:
        tstop = stopping_time(z0, w0, n)
        if t >= tstop:
            raise StoppedFlowError(f"t={t} beyond stopping time {tstop:.6g}", tstop)
    elif t > 0 and t >= math.log1p(abs(w0.imag) / abs(m0.imag)):
        raise StoppedFlowError("flow reached the real axis", math.log1p(abs(w0.imag) / abs(m0.imag)))
    ep, em = math.exp(t / 2.0), math.exp(-t / 2.0)
    w = w0 * em - m0 * (ep - em)
    return FlowState(t, z0 * em, w, m0 * ep)


def flow_reverse(z0: complex, w0: complex, t: float) -> FlowState:
    """State at time -t of the reverse dynamics."""
    z0, w0 = complex(z0), complex(w0)
    if t < 0:
        raise ValueError("t must be nonnegative")
    m0 = solve_m(z0, w0).m
    ep, em = math.exp(t / 2.0), math.exp(-t / 2.0)
    w = w0 * ep + m0 * (ep - em)
    return FlowState(-t, z0 * ep, w, m0 * em)


def flow_residual(z0: complex, w0: complex, t: float, h: float = 1e-5) -> float:
    """Central-difference residual of dw/dt = -m - w/2 and dz/dt = -z/2 at time t."""
    a = flow_forward(z0, w0, t - h) if t - h >= 0 else flow_forward(z0, w0, t)
    b = flow_forward(z0, w0, t + h)
    mid = flow_forward(z0, w0, t)
    dt = b.t - a.t
    dw = (b.w - a.w) / dt
    dz = (b.z - a.z) / dt
    m_mid = solve_m(mid.z, mid.w).m
    return max(abs(dw + m_mid + mid.w / 2.0), abs(dz + mid.z / 2.0))


def integral_bound_check(z0: complex, w0: complex, alpha: float, t: float) -> float:
    """Ratio of int_0^t |Im w_s|^{-(alpha+1)} ds to 1/(|Im m_t| |Im w_t|^alpha)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if t <= 0:
        return 0.0
    f = lambda s: abs(flow_forward(z0, w0, s).w.imag) ** (-(alpha + 1.0))
    lhs, err = integrate.quad(f, 0.0, t, limit=400, epsabs=0.0, epsrel=1e-10)
    if not np.isfinite(lhs):
        raise ArithmeticError("quadrature did not converge")
    st = flow_forward(z0, w0, t)
    m_t = solve_m(st.z, st.w).m
    rhs = 1.0 / (abs(m_t.imag) * abs(st.w.imag) ** alpha)
    return lhs / rhs


# ---------------------------------------------------------------- zigzag schedule


@dataclass
class ZigzagSchedule:
    eps: float
    taus: list
    deltas: list
    flow_times: list
    target_tau: float

    @property
    def stages(self) -> int:
        return len(self.taus)


def schedule(eps: float, delta1: float, target_tau: float | None = None, n: int = 1000,
             c_delta: float = 1.0) -> ZigzagSchedule:
    """Stages tau_j = 1 - j eps until tau_j <= target (default eps).

    Stage j runs the flow for a time t_j = N^{-1+tau_j} <= N^{-eps} and the bulk
    parameter loses c_delta N^{-eps} per stage.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if delta1 <= 0:
        raise ValueError("delta1 must be positive")
    target = eps if target_tau is None else target_tau
    taus, deltas, times = [], [], []
    j = 1
    while True:
        tau = 1.0 - j * eps
        taus.append(round(tau, 12))
        deltas.append(delta1 - c_delta * j * n ** (-eps))
        times.append(float(n) ** (-1.0 + tau))
        if tau <= target + 1e-12:
            break
        j += 1
    return ZigzagSchedule(eps, taus, deltas, times, target)


# ---------------------------------------------------------------- zig run


@dataclass
class ZigChain:
    """Initial spectral parameters w_1..w_m and deformations B_1..B_m (B_m closes the trace)."""

    ws: tuple
    bs: tuple

    def __post_init__(self):
        self.ws = tuple(complex(w) for w in self.ws)
        self.bs = tuple(self.bs)
        if len(self.ws) != len(self.bs) or not self.ws:
            raise ValueError("a trace chain needs one deformation per resolvent")

    @property
    def m(self) -> int:
        return len(self.ws)

    @property
    def a(self) -> int:
        return sum(is_regular(b) for b in self.bs)

    @property
    def name(self) -> str:
        names = {v: k for k, v in BASIS.items()}
        return ",".join(names.get(b, str(b)) for b in self.bs)


def _a_chains(ws, bs):
    """Index pairs (p, r) with the chains entering A_{p,r}, 1-based.

    A_{p,p} uses <G_p - M_p> and the chain with G_p doubled; A_{p,r} for p < r uses
    the split pair (w_p..w_r, E_nu) and (w_r..w_m, w_1..w_p, E_nu).
    """
    m = len(ws)
    out = []
    for p in range(1, m + 1):
        sq_ws = list(ws[:p]) + [ws[p - 1]] + list(ws[p:])
        sq_bs = list(bs[:p - 1]) + [E_PLUS] + list(bs[p - 1:])
        out.append(((p, p), sq_ws, sq_bs))
        for r in range(p + 1, m + 1):
            out.append(((p, r), list(ws[p - 1:r]), list(bs[p - 1:r - 1]),
                        list(ws[r - 1:]) + list(ws[:p]), list(bs[r - 1:]) + list(bs[:p - 1])))
    return out


def _a_terms(trace, det, handle_trace_g, z, ws, bs):
    """A_{p,r} values; ``trace(ws, bs)`` evaluates random chains, ``det`` deterministic ones."""
    terms = {}
    for item in _a_chains(ws, bs):
        (p, r) = item[0]
        if p == r:
            fluct = handle_trace_g(ws[p - 1]) - solve_m(z, ws[p - 1]).m
            terms[(p, r)] = fluct * trace(item[1], item[2])
        else:
            _, lw, lb, rw, rb = item
            total = 0j
            for nu, e in SIGNED_E:
                total += nu * (trace(lw, lb + [e]) * trace(rw, rb + [e])
                               - det(z, lw, lb + [e]) * det(z, rw, rb + [e]))
            terms[(p, r)] = total
    return terms


@dataclass
class ZigResult:
    rows: list
    chains: list
    truncated: bool
    stop_time: float | None
    max_ratio: dict = field(default_factory=dict)
    ratio_bound: float = 10.0

    @property
    def stable(self) -> dict:
        return {k: v <= self.ratio_bound for k, v in self.max_ratio.items()}

    def to_csv(self) -> str:
        cols = ["t", "eta_t", "z_re", "z_im", "chain", "S_re", "S_im", "psi", "drift_re", "drift_im",
                "A_sum_re", "A_sum_im", "A_terms", "martingale_re", "martingale_im", "ratio"]
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(cols)
        for r in self.rows:
            wr.writerow([repr(float(r[c])) if isinstance(r[c], float) else r[c] for c in cols])
        return buf.getvalue()


def zig_run(spec, z0: complex, chains, t_end: float, dt: float = 1e-2, seed: int = 0,
            method: str = "exact", big_m: int = 8, ratio_bound: float = 10.0,
            x0=None, stream: int = 0) -> ZigResult:
    """Evolve X by the OU process while flowing (z, w_j) and record S^av_t diagnostics.

    Each step records S_t, the drift (m/2) S_t, every A_{p,r} and the martingale part,
    defined as what remains of the increment of S after the Ito drift terms.
    Trajectory ``stream`` draws X_0 and the OU noise from its own pair of substreams.
    """
    from .det_chains import tr_chain_det_cyclic
    from .ensembles import ou_step, sample, sample_rng
    from .locallaw import psi_av
    from .resolvent import BasisTraceEngine, HermitisationHandle, _rotated_product

    if spec.n > 512:
        raise ValueError("zig_run evaluates exact traces and is limited to N <= 512")
    if dt <= 0 or dt > 1e-2:
        raise ValueError("dt must lie in (0, 1e-2]")
    chains = [c if isinstance(c, ZigChain) else ZigChain(*c) for c in chains]
    rng = sample_rng(seed, 2 * stream)
    x = np.asarray(sample(spec, rng).entries if x0 is None else x0, dtype=complex)
    ou_rng = sample_rng(seed, 2 * stream + 1)
    n, q = spec.n, spec.q
    steps = int(math.floor(t_end / dt + 1e-9)) if t_end > 0 else 0
    rows = []
    prev = {}
    mart = {c.name: 0j for c in chains}
    max_ratio = {c.name: 0.0 for c in chains}
    truncated, stop = False, None

    for k in range(steps + 1):
        t = k * dt
        try:
            states = {c.name: [flow_forward(z0, w, t, n=n) for w in c.ws] for c in chains}
        except StoppedFlowError as err:
            truncated, stop = True, err.stop_time
            break
        zt = complex(z0) * math.exp(-t / 2.0)
        handle = HermitisationHandle(x, zt)
        engine = BasisTraceEngine(handle)

        def trace(ws, bs):
            return engine.chain_trace(ws, bs) if len(ws) <= 4 else _rotated_product(handle, ws, bs)

        for c in chains:
            wt = [s.w for s in states[c.name]]
            s_val = trace(wt, list(c.bs)) - tr_chain_det_cyclic(zt, wt, c.bs)
            eta_t = min(abs(w.imag) for w in wt)
            psi = psi_av(eta_t, c.m, c.a, n, q, big_m)
            drift = 0.5 * c.m * s_val
            terms = _a_terms(trace, tr_chain_det_cyclic, handle.trace_g, zt, wt, list(c.bs))
            a_sum = sum(terms.values())
            if c.name in prev:
                s_old, rate_old = prev[c.name]
                mart[c.name] += s_val - s_old - rate_old * dt
            prev[c.name] = (s_val, drift + a_sum)
            ratio = abs(s_val) / psi
            max_ratio[c.name] = max(max_ratio[c.name], ratio)
            rows.append({"t": t, "eta_t": eta_t, "z_re": zt.real, "z_im": zt.imag, "chain": c.name,
                         "S_re": s_val.real, "S_im": s_val.imag, "psi": psi,
                         "drift_re": drift.real, "drift_im": drift.imag,
                         "A_sum_re": a_sum.real, "A_sum_im": a_sum.imag,
                         "A_terms": ";".join(f"{p}-{r}:{v.real!r}{v.imag:+}j"
                                             for (p, r), v in sorted(terms.items())),
                         "martingale_re": mart[c.name].real, "martingale_im": mart[c.name].imag,
                         "ratio": ratio})
        engine.clear()
        if k < steps:
            x = ou_step(x, dt, ou_rng, method=method)
    return ZigResult(rows, chains, truncated, stop, max_ratio, ratio_bound)
