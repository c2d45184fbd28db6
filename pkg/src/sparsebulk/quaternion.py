"""The four dimensional algebra of 2N x 2N matrices with scalar N x N blocks.

An element is stored through its 2x2 representative ``[[alpha, gamma], [delta, beta]]``
which stands for ``[[alpha*1_N, gamma*1_N], [delta*1_N, beta*1_N]]``.  Every
operation below is exact and independent of ``N``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Quat:
    """Block-scalar matrix with coefficients (alpha, beta, gamma, delta)."""

    alpha: complex = 0j
    beta: complex = 0j
    gamma: complex = 0j
    delta: complex = 0j

    @classmethod
    def from_matrix(cls, a) -> "Quat":
        a = np.asarray(a, dtype=complex)
        if a.shape != (2, 2):
            raise ValueError(f"expected a 2x2 array, got shape {a.shape}")
        return cls(complex(a[0, 0]), complex(a[1, 1]), complex(a[0, 1]), complex(a[1, 0]))

    def matrix(self) -> np.ndarray:
        """The 2x2 representative."""
        return np.array([[self.alpha, self.gamma], [self.delta, self.beta]], dtype=complex)

    def coeffs(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma, self.delta], dtype=complex)

    def __add__(self, other: "Quat") -> "Quat":
        return Quat(self.alpha + other.alpha, self.beta + other.beta,
                    self.gamma + other.gamma, self.delta + other.delta)

    def __sub__(self, other: "Quat") -> "Quat":
        return self + (-1.0) * other

    def __neg__(self) -> "Quat":
        return (-1.0) * self

    def __mul__(self, other):
        if isinstance(other, Quat):
            return quat_mul(self, other)
        c = complex(other)
        return Quat(c * self.alpha, c * self.beta, c * self.gamma, c * self.delta)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other: "Quat") -> "Quat":
        return quat_mul(self, other)

    @property
    def adjoint(self) -> "Quat":
        return quat_adjoint(self)

    def norm(self) -> float:
        """Operator norm, equal to that of the embedded 2N x 2N matrix."""
        return float(np.linalg.norm(self.matrix(), 2))

    def allclose(self, other: "Quat", atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.coeffs(), other.coeffs(), rtol=0.0, atol=atol))

    def __str__(self) -> str:
        return format_quat(self)


E_PLUS = Quat(1, 1, 0, 0)
E_MINUS = Quat(1, -1, 0, 0)
F = Quat(0, 0, 1, 0)
F_STAR = Quat(0, 0, 0, 1)
ZERO = Quat()

BASIS = {"E+": E_PLUS, "E-": E_MINUS, "F": F, "F~": F_STAR}
# E_nu with its sign nu, used by the self-energy operator
SIGNED_E = ((1, E_PLUS), (-1, E_MINUS))


def quat_mul(a: Quat, b: Quat) -> Quat:
    return Quat.from_matrix(a.matrix() @ b.matrix())


def quat_adjoint(a: Quat) -> Quat:
    return Quat(np.conj(a.alpha), np.conj(a.beta), np.conj(a.delta), np.conj(a.gamma))


def quat_inv(a: Quat) -> Quat:
    return Quat.from_matrix(np.linalg.inv(a.matrix()))


def trace_form(a: Quat, b: Quat) -> complex:
    """Normalised trace (2N)^{-1} tr of the embedded product."""
    return complex(0.5 * np.trace(a.matrix() @ b.matrix()))


def self_energy(a: Quat) -> Quat:
    """S[A] = <A E+> E+ - <A E-> E-, the expectation E[W A W] restricted to the algebra."""
    out = ZERO
    for nu, e in SIGNED_E:
        out = out + (nu * trace_form(a, e)) * e
    return out


def is_regular(b: Quat, atol: float = 0.0) -> bool:
    """True for multiples of F or F*, the deformations that improve chain bounds."""
    return abs(b.alpha) <= atol and abs(b.beta) <= atol and (abs(b.gamma) > atol) != (abs(b.delta) > atol)


def embed(a: Quat, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be positive")
    return np.kron(a.matrix(), np.eye(n))


def project(m) -> Quat:
    """Average of the diagonal of each N x N block."""
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] % 2:
        raise ValueError(f"project needs a square matrix of even size, got {m.shape}")
    n = m.shape[0] // 2
    d = lambda blk: complex(np.mean(np.diag(blk)))
    return Quat(d(m[:n, :n]), d(m[n:, n:]), d(m[:n, n:]), d(m[n:, :n]))


_TERM = re.compile(r"^(?:(?P<coef>.+?)\s*\*\s*)?(?P<name>E\+|E-|F~|F)$")


def _parse_complex(text: str) -> complex:
    t = text.strip().replace(" ", "")
    if t.startswith("(") and t.endswith(")"):
        t = t[1:-1]
    t = t.replace("i", "j")
    return complex(t)


def _split_terms(text: str) -> list[tuple[int, str]]:
    # split on top-level + and - that separate terms, not those inside parentheses
    # or immediately following a basis name such as "E+" or an exponent marker.
    terms, depth, start, sign = [], 0, 0, 1
    s = text.strip()
    i = 0
    while i < len(s):
        ch = s[i]
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch in "+-" and depth == 0 and i > start:
            prev = s[start:i].rstrip()
            if prev and not prev.endswith(("E", "*", "e")):
                terms.append((sign, prev))
                sign = 1 if ch == "+" else -1
                start = i + 1
        elif ch in "+-" and depth == 0 and i == start:
            sign = sign * (1 if ch == "+" else -1)
            start = i + 1
        i += 1
    tail = s[start:].strip()
    if tail:
        terms.append((sign, tail))
    return terms


def parse_quat(text: str) -> Quat:
    """Parse ``"a*E+ + b*E- + c*F + d*F~"``; bare basis names and complex coefficients
    such as ``(1+2i)`` or ``0.5j`` are accepted."""
    if not text or not text.strip():
        raise ValueError("empty quaternion expression")
    out = ZERO
    for sign, term in _split_terms(text):
        mt = _TERM.match(term.strip())
        if mt is None:
            raise ValueError(f"cannot parse quaternion term {term!r} in {text!r}")
        coef = 1.0 if mt.group("coef") is None else _parse_complex(mt.group("coef"))
        out = out + (sign * coef) * BASIS[mt.group("name")]
    return out


def format_quat(a: Quat) -> str:
    """Inverse of :func:`parse_quat` in the (E+, E-, F, F~) basis."""
    c_plus = 0.5 * (a.alpha + a.beta)
    c_minus = 0.5 * (a.alpha - a.beta)
    parts = []
    for c, name in ((c_plus, "E+"), (c_minus, "E-"), (a.gamma, "F"), (a.delta, "F~")):
        if c != 0:
            parts.append(f"({c.real!r}{c.imag:+}j)*{name}")
    return " + ".join(parts) if parts else "(0+0j)*E+"
