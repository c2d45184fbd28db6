"""Resolvents of the Hermitisation W_z = [[0, X - z], [(X - z)^*, 0]] from one SVD.

With ``X - z = U diag(sigma) V^*`` the resolvent ``G_z(w) = (W_z - w)^{-1}`` is
block diagonal in the frame ``T = diag(U, V)``: for each singular value

    g_k = [[w, sigma_k], [sigma_k, w]] / (sigma_k^2 - w^2),

so the four N x N blocks are ``w H~ = U a U^*``, ``X_z H = U b V^*``,
``H X_z^* = V b U^*`` and ``w H = V a V^*`` with ``a = w h``, ``b = sigma h`` and
``h = (sigma^2 - w^2)^{-1}``.  Elements of the quaternion algebra become
``[[alpha, gamma P], [delta P^*, beta]]`` in this frame where ``P = U^* V``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .quaternion import Quat

# matrix units e_ab of the 2x2 representative, in the order of Quat.unit_coeffs
UNITS = ((0, 0), (0, 1), (1, 0), (1, 1))


def unit_coeffs(b: Quat) -> np.ndarray:
    """Coefficients of ``b`` on the matrix units e_00, e_01, e_10, e_11."""
    return np.array([b.alpha, b.gamma, b.delta, b.beta], dtype=complex)


class NumericError(ArithmeticError):
    pass


class HermitisationHandle:
    """Immutable SVD factorisation of ``X - z`` with resolvent helpers."""

    def __init__(self, x, z: complex = 0.0):
        x = np.asarray(x, dtype=complex)
        if x.ndim != 2 or x.shape[0] != x.shape[1]:
            raise ValueError("X must be square")
        if not np.all(np.isfinite(x)):
            raise NumericError("X has non-finite entries")
        self.z = complex(z)
        self.n = x.shape[0]
        xz = x - self.z * np.eye(self.n)
        try:
            u, s, vh = np.linalg.svd(xz)
        except np.linalg.LinAlgError as exc:  # pragma: no cover
            raise NumericError(f"SVD failed: {exc}") from exc
        self.u = u
        self.sigma = s
        self.v = vh.conj().T
        self._p = None
        for arr in (self.u, self.sigma, self.v):
            arr.setflags(write=False)

    @property
    def p(self) -> np.ndarray:
        """P = U^* V, the off-diagonal frame change."""
        if self._p is None:
            self._p = self.u.conj().T @ self.v
            self._p.setflags(write=False)
        return self._p

    @property
    def xz(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.conj().T

    def h(self, w: complex) -> np.ndarray:
        return 1.0 / (self.sigma ** 2 - complex(w) ** 2)

    def diag_parts(self, w: complex) -> tuple[np.ndarray, np.ndarray]:
        """Vectors (a, b): diagonal and off-diagonal entries of g_k."""
        h = self.h(w)
        return complex(w) * h, self.sigma * h

    def trace_g(self, w: complex) -> complex:
        """Normalised trace <G_z(w)> = w <H_z(w)>."""
        return complex(w) * complex(np.mean(self.h(w)))

    def mean_h(self, eta: float, power: int = 1) -> float:
        """<H_z(i eta)^power> with H_z(i eta) = (|X_z|^2 + eta^2)^{-1}."""
        return float(np.mean((self.sigma ** 2 + eta * eta) ** (-power)))

    def blocks(self, w: complex) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        a, b = self.diag_parts(w)
        u, v = self.u, self.v
        return ((u * a) @ u.conj().T, (u * b) @ v.conj().T,
                (v * b) @ u.conj().T, (v * a) @ v.conj().T)

    def dense(self, w: complex) -> np.ndarray:
        g11, g12, g21, g22 = self.blocks(w)
        return np.block([[g11, g12], [g21, g22]])

    def apply(self, w: complex, x: np.ndarray) -> np.ndarray:
        """G_z(w) x for a 2N vector or a 2N x k block, in O(N^2 k)."""
        n = self.n
        a, b = self.diag_parts(w)
        x1 = self.u.conj().T @ x[:n]
        x2 = self.v.conj().T @ x[n:]
        if x.ndim == 2:
            a, b = a[:, None], b[:, None]
        y1 = self.u @ (a * x1 + b * x2)
        y2 = self.v @ (b * x1 + a * x2)
        return np.concatenate([y1, y2], axis=0)

    def apply_adjoint(self, w: complex, x: np.ndarray) -> np.ndarray:
        """G_z(w)^* x = G_z(conj w) x."""
        return self.apply(np.conj(w), x)


def hermitise(x, z: complex = 0.0) -> HermitisationHandle:
    return HermitisationHandle(x, z)


def hermitisation_matrix(x, z: complex = 0.0) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    n = x.shape[0]
    xz = x - z * np.eye(n)
    return np.block([[np.zeros((n, n)), xz], [xz.conj().T, np.zeros((n, n))]])


def apply_quat(b: Quat, x: np.ndarray) -> np.ndarray:
    """Block-scalar multiplication in O(N), never materialising the 2N x 2N matrix."""
    n = x.shape[0] // 2
    x1, x2 = x[:n], x[n:]
    return np.concatenate([b.alpha * x1 + b.gamma * x2, b.delta * x1 + b.beta * x2], axis=0)


def apply_quat_left(b: Quat, y: np.ndarray) -> np.ndarray:
    """Row-vector product y B for y of length 2N (or 2N columns)."""
    n = y.shape[-1] // 2
    y1, y2 = y[..., :n], y[..., n:]
    return np.concatenate([y1 * b.alpha + y2 * b.delta, y1 * b.gamma + y2 * b.beta], axis=-1)


# ---------------------------------------------------------------- basis traces


class BasisTraceEngine:
    """Normalised traces of chains G_1 E_{a1 b1} ... G_m E_{am bm} over matrix units.

    In the SVD frame a unit chain reduces to ``tr(D_1 Q_1 ... D_m Q_m)`` with diagonal
    ``D_j`` and ``Q_j`` one of ``1, P, P^*``.  Diagonal factors between identities merge,
    so only the non-identity ``Q`` cost anything: up to two of them need O(N^2) work,
    three or four need one cached ``Q D Q'`` product each.  Cached products are keyed
    by ``w^2`` so chains with repeated or sign-flipped spectral parameters share them.
    """

    def __init__(self, handle: HermitisationHandle):
        self.hd = handle
        self._h = {}
        self._vec = {}
        self._c = {}
        self._k = {}
        self.matmuls = 0

    # symbolic diagonal: (coef, sigma power, tuple of w^2 keys)
    @staticmethod
    def _factor(w: complex, same_block: bool):
        w = complex(w)
        if same_block:
            return (w, 0, (w * w,))
        return (1.0, 1, (w * w,))

    @staticmethod
    def _merge(f1, f2):
        return (f1[0] * f2[0], f1[1] + f2[1], tuple(sorted(f1[2] + f2[2], key=lambda c: (c.real, c.imag))))

    def _hvec(self, w2):
        if w2 not in self._h:
            self._h[w2] = 1.0 / (self.hd.sigma ** 2 - w2)
        return self._h[w2]

    def vec(self, sym) -> np.ndarray:
        key = (sym[1], sym[2])
        if key not in self._vec:
            v = self.hd.sigma ** sym[1] if sym[1] else np.ones(self.hd.n)
            for w2 in sym[2]:
                v = v * self._hvec(w2)
            self._vec[key] = v
        return sym[0] * self._vec[key]

    def _q(self, code):
        p = self.hd.p
        return p if code == 1 else p.conj().T

    def _ckey(self, sym, q1, q2):
        key = (sym[1], sym[2], q1, q2)
        if key not in self._c:
            d = self.vec((1.0, sym[1], sym[2]))
            self._c[key] = (self._q(q1) * d[None, :]) @ self._q(q2)
            self.matmuls += 1
        return key

    def _kmat(self, q1, q2):
        # K_{kl} = (Q1)_{kl} (Q2)_{lk}
        key = ("k", q1, q2)
        if key not in self._k:  # at most four of these
            self._k[key] = self._q(q1) * self._q(q2).T
        return self._k[key]

    def reduce(self, ws, units):
        """Cyclic list of (diagonal symbol, Q code) with identities merged away.

        Q code is 0 for identity, 1 for P and 2 for P^*.
        """
        m = len(ws)
        items = []
        for j in range(m):
            a, b = UNITS[units[j]]
            prev_b = UNITS[units[j - 1]][1]
            d = self._factor(ws[j], prev_b == a)
            q = 0 if a == b else (1 if a == 0 else 2)
            items.append((d, q))
        nonid = [j for j, (_, q) in enumerate(items) if q]
        if not nonid:
            d = items[0][0]
            for it in items[1:]:
                d = self._merge(d, it[0])
            return [(d, 0)]
        start = (nonid[-1] + 1) % m
        items = items[start:] + items[:start]
        out, cur = [], None
        for d, q in items:
            cur = d if cur is None else self._merge(cur, d)
            if q:
                out.append((cur, q))
                cur = None
        return out

    def plan(self, ws, units):
        """(matrix key, left symbol, right symbol, scalar) with trace = scalar * l^T K r."""
        red = self.reduce(ws, units)
        r = len(red)
        coef = np.prod([d[0] for d, _ in red])
        if r == 1 and red[0][1] == 0:
            return ("1",), red[0][0], None, coef
        if r == 1:
            return ("d", red[0][1]), red[0][0], None, coef
        if r == 2:
            (d1, q1), (d2, q2) = red
            return ("k", q1, q2), d1, d2, coef
        if r == 3:
            # rotate so that the cached middle factor is as simple as possible
            k = min(range(3), key=lambda i: len(red[(i + 1) % 3][0][2]))
            red = red[k:] + red[:k]
            (d1, q1), (d2, q2), (d3, q3) = red
            return ("3", self._ckey(d2, q1, q2), q3), d1, d3, coef
        if r == 4:
            if len(red[0][0][2]) + len(red[2][0][2]) < len(red[1][0][2]) + len(red[3][0][2]):
                red = red[1:] + red[:1]
            (d1, q1), (d2, q2), (d3, q3), (d4, q4) = red
            return ("4", self._ckey(d2, q1, q2), self._ckey(d4, q3, q4)), d1, d3, coef
        raise ValueError("basis reduction handles at most four off-diagonal factors")

    def _matrix(self, key):
        kind = key[0]
        if kind == "k":
            return self._kmat(key[1], key[2])
        if kind == "3":
            return self._c[key[1]] * self._q(key[2]).T
        if kind == "4":
            return self._c[key[1]] * self._c[key[2]].T
        return None

    def evaluate(self, plans) -> np.ndarray:
        """Evaluate plans, building each Hadamard-product matrix once and dropping it after
        its group so that memory stays at a few N x N arrays."""
        out = np.zeros(len(plans), dtype=complex)
        groups = {}
        for i, pl in enumerate(plans):
            groups.setdefault(pl[0], []).append(i)
        vec = lambda sym: self.vec((1.0, sym[1], sym[2]))
        for key, idx in groups.items():
            kmat = self._matrix(key)
            diag = np.diag(self._q(key[1])) if key[0] == "d" else None
            for i in idx:
                _, d1, d2, coef = plans[i]
                if key[0] == "1":
                    val = np.sum(vec(d1))
                elif key[0] == "d":
                    val = np.sum(vec(d1) * diag)
                else:
                    val = vec(d1) @ (kmat @ vec(d2))
                out[i] = coef * val
            del kmat
        return out / (2 * self.hd.n)

    def trace_units(self, ws, units) -> complex:
        return complex(self.evaluate([self.plan(ws, units)])[0])

    def tensor(self, ws) -> np.ndarray:
        """All 4^m unit traces, shape (4,)*m."""
        m = len(ws)
        pats = list(itertools.product(range(4), repeat=m))
        vals = self.evaluate([self.plan(ws, u) for u in pats])
        out = np.zeros((4,) * m, dtype=complex)
        for u, v in zip(pats, vals):
            out[u] = v
        return out

    def chain_trace(self, ws, bs) -> complex:
        """<G_1 B_1 ... G_m B_m> for arbitrary quaternions B_j (m <= 4)."""
        coeffs = [unit_coeffs(b) for b in bs]
        pats = list(itertools.product(*[np.flatnonzero(c) for c in coeffs]))
        vals = self.evaluate([self.plan(ws, u) for u in pats])
        prefs = [np.prod([coeffs[j][u] for j, u in enumerate(units)]) for units in pats]
        return complex(np.dot(prefs, vals))

    def clear(self):
        self._c.clear()
        self._k.clear()


def contract(tensor: np.ndarray, bs) -> complex:
    """Contract a unit-trace tensor with quaternions B_1..B_m."""
    out = tensor
    for b in bs:
        out = np.tensordot(unit_coeffs(b), out, axes=([0], [0]))
    return complex(out)


# ---------------------------------------------------------------- chain evaluator


@dataclass
class ChainEvaluator:
    """Chain G(w_1) B_1 G(w_2) ... with a shared handle.

    For traces ``bs`` has the same length as ``ws``; for entries and row sums it has
    one element fewer.  ``mode`` is ``exact`` or ``stochastic`` (Hutchinson).
    """

    handle: HermitisationHandle
    ws: list
    bs: list
    mode: str = "exact"
    probes: int = 64
    seed: int = 0
    tol: float | None = None
    _engine: BasisTraceEngine | None = field(default=None, repr=False)

    def __post_init__(self):
        if any(complex(w).imag == 0 for w in self.ws):
            raise ValueError("all spectral parameters need Im w != 0")
        if self.mode not in ("exact", "stochastic"):
            raise ValueError("mode must be exact or stochastic")
        if self.mode == "stochastic" and self.probes < 16:
            raise ValueError("stochastic mode needs at least 16 probes")

    @property
    def engine(self) -> BasisTraceEngine:
        if self._engine is None:
            self._engine = BasisTraceEngine(self.handle)
        return self._engine

    def apply_right(self, x: np.ndarray) -> np.ndarray:
        """G_1 B_1 ... G_k x, evaluated right to left."""
        y = x
        k = len(self.ws)
        for j in range(k - 1, -1, -1):
            if j < len(self.bs):
                y = apply_quat(self.bs[j], y)
            y = self.handle.apply(self.ws[j], y)
        return y


@dataclass
class TraceResult:
    value: complex
    stderr: float = 0.0
    warning: bool = False


def _rotated_product(handle: HermitisationHandle, ws, bs) -> complex:
    """Exact <G_1 B_1 ... G_m B_m> by a dense product in the SVD frame, O(m N^3)."""
    n = handle.n
    p = handle.p
    y = np.eye(2 * n, dtype=complex)
    for w, b in zip(ws, bs):
        a, bb = handle.diag_parts(w)
        y11, y12, y21, y22 = y[:n, :n], y[:n, n:], y[n:, :n], y[n:, n:]
        z11 = y11 * a + y12 * bb
        z12 = y11 * bb + y12 * a
        z21 = y21 * a + y22 * bb
        z22 = y21 * bb + y22 * a
        left = np.vstack([z11, z21])
        right = np.vstack([z12, z22])
        new_left = b.alpha * left
        new_right = b.beta * right
        if b.delta != 0:
            new_left = new_left + b.delta * (right @ p.conj().T)
        if b.gamma != 0:
            new_right = new_right + b.gamma * (left @ p)
        y = np.hstack([new_left, new_right])
    return complex(np.trace(y)) / (2 * n)


def chain_trace(ev: ChainEvaluator, return_stderr: bool = False):
    """Normalised trace (2N)^{-1} tr(G_1 B_1 ... G_m B_m)."""
    if len(ev.bs) != len(ev.ws):
        raise ValueError("trace chains need one deformation per resolvent")
    n = ev.handle.n
    if ev.mode == "exact":
        if len(ev.ws) <= 4:
            val = ev.engine.chain_trace(ev.ws, ev.bs)
        else:
            val = _rotated_product(ev.handle, ev.ws, ev.bs)
        res = TraceResult(val)
    else:
        rng = np.random.default_rng(ev.seed)
        zs = np.exp(2j * np.pi * rng.random((2 * n, ev.probes)))
        y = ev.apply_right(zs)
        est = np.einsum("ij,ij->j", zs.conj(), y) / (2 * n)
        se = float(np.std(est, ddof=1) / math.sqrt(ev.probes))
        warn = ev.tol is not None and se > ev.tol
        res = TraceResult(complex(np.mean(est)), se, warn)
    return res if return_stderr else res.value


def hat(i: int, n: int) -> int:
    """Index i + N modulo 2N."""
    return (i + n) % (2 * n)


def chain_entry(ev: ChainEvaluator, row: int, col: int) -> complex:
    """(G_1 B_1 ... G_{m+1})_{row, col} by one right-vector pass."""
    n2 = 2 * ev.handle.n
    if not (0 <= row < n2 and 0 <= col < n2):
        raise IndexError("index outside [0, 2N)")
    if len(ev.bs) != len(ev.ws) - 1:
        raise ValueError("entry chains need one deformation fewer than resolvents")
    e = np.zeros(n2, dtype=complex)
    e[col] = 1.0
    return complex(ev.apply_right(e)[row])


def chain_column(ev: ChainEvaluator, col: int) -> np.ndarray:
    n2 = 2 * ev.handle.n
    e = np.zeros(n2, dtype=complex)
    e[col] = 1.0
    return ev.apply_right(e)


def row_sum(ev: ChainEvaluator, row: int, block: str = "upper") -> complex:
    """Sum of chain row ``row`` over the column indices of one block."""
    n = ev.handle.n
    if not 0 <= row < 2 * n:
        raise IndexError("row outside [0, 2N)")
    ones = np.zeros(2 * n, dtype=complex)
    if block == "upper":
        ones[:n] = 1.0
    elif block == "lower":
        ones[n:] = 1.0
    else:
        raise ValueError("block must be upper or lower")
    return complex(ev.apply_right(ones)[row])


# ---------------------------------------------------------------- |G|


@dataclass
class AbsCheck:
    residual: float
    tail_bound: float


def abs_resolvent_frame(handle: HermitisationHandle, w: complex):
    """|G| in the SVD frame as (diagonal, off-diagonal) vectors of each 2x2 block."""
    s = handle.sigma
    ip = 1.0 / np.abs(s - w)
    im = 1.0 / np.abs(s + w)
    return 0.5 * (ip + im), 0.5 * (ip - im)


def abs_resolvent_check(handle: HermitisationHandle, w: complex, L: float = 2.0,
                        quad_points: int = 200) -> AbsCheck:
    """Compare |G_z(w)| with (2/pi) int_0^{N^L} Im G(E + i eta_x)/eta_x dx.

    The substitution x = eta sinh(u) turns the integrand into Im G(E + i eta cosh u),
    integrated by Gauss-Legendre on [0, asinh(N^L/eta)].  The comparison is done
    entrywise in the SVD frame, which is a unitary change of basis.
    """
    w = complex(w)
    e, eta = w.real, abs(w.imag)
    if eta == 0:
        raise ValueError("Im w must be nonzero")
    upper = math.asinh(handle.n ** L / eta)
    nodes, weights = np.polynomial.legendre.leggauss(quad_points)
    us = 0.5 * upper * (nodes + 1.0)
    wts = 0.5 * upper * weights
    s = handle.sigma
    acc_d = np.zeros_like(s)
    acc_o = np.zeros_like(s)
    for u, wt in zip(us, wts):
        wx = complex(e, eta * math.cosh(u))
        h = 1.0 / (s * s - wx * wx)
        # Im G for the Hermitian-symmetric 2x2 blocks [[a, b], [b, a]]
        acc_d += wt * np.imag(wx * h)
        acc_o += wt * np.imag(s * h)
    qd, qo = 2.0 / math.pi * acc_d, 2.0 / math.pi * acc_o
    ed, eo = abs_resolvent_frame(handle, w)
    res = float(max(np.max(np.abs(qd - ed)), np.max(np.abs(qo - eo))))
    return AbsCheck(res, 2.0 / (math.pi * handle.n ** L))
