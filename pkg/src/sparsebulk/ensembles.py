"""Random matrix models with independent centred entries of variance 1/N.

Three entry models are provided:

* ``sparse``: ``X_ij = N^{-eps/2} xi_ij x_ij`` with ``xi ~ Bernoulli(N^{-1+eps})``;
* ``heavy``: ``X_ij = N^{-1/2} y_ij`` where ``y`` is a heavy tailed law truncated at
  ``lambda = N^{1/2-eps}`` and renormalised;
* ``ginibre``: complex Gaussian entries.

Base entry laws have a uniformly distributed phase, so ``E x = E x^2 = 0`` holds exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, special

MODELS = ("sparse", "heavy", "ginibre")


class ConfigurationError(ValueError):
    pass


class EstimationError(RuntimeError):
    pass


# ---------------------------------------------------------------- entry laws


@dataclass(frozen=True)
class EntryLaw:
    """Rotation invariant complex law described by the law of ``|x|^2``.

    ``kind`` is one of ``gaussian`` (|x|^2 ~ Exp(1)), ``unimodular`` (|x| = 1) or
    ``lomax`` (|x|^2 Lomax with shape ``2 + delta``, finite moments of order below
    ``4 + 2 delta``).  ``cutoff`` truncates at ``|x| <= cutoff`` and ``scale``
    multiplies the result so that the second moment is one.
    """

    kind: str = "gaussian"
    delta: float = 1.0
    cutoff: float = math.inf
    scale: float = 1.0
    iid_parts: bool = False

    def __post_init__(self):
        if self.kind not in ("gaussian", "unimodular", "lomax"):
            raise ConfigurationError(f"unknown base law {self.kind!r}")
        if self.kind == "lomax" and self.delta <= 0:
            raise ConfigurationError("heavy tailed base law needs delta > 0")

    @property
    def _alpha(self) -> float:
        return 2.0 + self.delta

    def _radius_sq(self, rng, size) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.standard_exponential(size)
        if self.kind == "unimodular":
            return np.ones(size)
        a = self._alpha
        return (a - 1.0) * rng.pareto(a, size)

    def sample(self, rng, size) -> np.ndarray:
        r = np.sqrt(self._radius_sq(rng, size))
        if np.isfinite(self.cutoff):
            r = np.where(r <= self.cutoff, r, 0.0)
        r = self.scale * r
        if self.iid_parts:
            # independent real and imaginary parts sharing the radial law
            r2 = np.sqrt(self._radius_sq(rng, size))
            if np.isfinite(self.cutoff):
                r2 = np.where(r2 <= self.cutoff, r2, 0.0)
            r2 = self.scale * r2
            sgn = rng.choice([-1.0, 1.0], size=(2,) + tuple(np.atleast_1d(size)))
            return (sgn[0] * r + 1j * sgn[1] * r2) / math.sqrt(2.0)
        return r * np.exp(2j * np.pi * rng.random(size))

    def tail_prob(self, lam: float) -> float:
        """P(|x| > lam) for the untruncated base law."""
        if self.kind == "gaussian":
            return math.exp(-lam * lam)
        if self.kind == "unimodular":
            return 0.0 if lam >= 1.0 else 1.0
        a = self._alpha
        return (1.0 + lam * lam / (a - 1.0)) ** (-a)

    def _raw_moment(self, r: float, upper: float) -> float:
        """E[|x|^r 1(|x| <= upper)] of the untruncated, unscaled law."""
        p = r / 2.0
        if self.kind == "unimodular":
            return 1.0 if upper >= 1.0 else 0.0
        if self.kind == "gaussian":
            if not np.isfinite(upper):
                return math.gamma(p + 1.0)
            return math.gamma(p + 1.0) * special.gammainc(p + 1.0, upper * upper)
        a = self._alpha
        s = a - 1.0
        if not np.isfinite(upper):
            if p >= a:
                return math.inf
            return s ** p * math.gamma(p + 1.0) * math.gamma(a - p) / math.gamma(a)
        dens = lambda y: y ** p * a / s * (1.0 + y / s) ** (-a - 1.0)
        val, _ = integrate.quad(dens, 0.0, upper * upper, limit=200)
        return val

    def moment(self, r: float) -> float:
        """Analytic E|x|^r of this (possibly truncated and rescaled) law."""
        return self.scale ** r * self._raw_moment(r, self.cutoff)

    @property
    def bound(self) -> float:
        if np.isfinite(self.cutoff):
            return self.scale * self.cutoff
        return 1.0 if self.kind == "unimodular" else math.inf


def base_law(name: str, delta: float = 1.0, iid_parts: bool = False) -> EntryLaw:
    return EntryLaw(kind=name, delta=delta, iid_parts=iid_parts)


def truncate_heavy(base: EntryLaw, n: int | None = None, eps: float | None = None,
                   lam: float | None = None) -> EntryLaw:
    """Truncate ``base`` at ``lam`` (default ``N^{1/2-eps}``) and restore unit variance.

    The phase is uniform so the truncated law stays centred; only a rescale is needed.
    """
    if base.kind == "lomax" and base.delta <= 0:
        raise ConfigurationError("delta must be positive")
    if lam is None:
        if n is None or eps is None:
            raise ConfigurationError("give either lam or (n, eps)")
        lam = float(n) ** (0.5 - eps)
    if lam <= 0:
        raise ConfigurationError("truncation level must be positive")
    if lam >= base.bound:
        return base
    m2 = base._raw_moment(2.0, lam)
    if m2 <= 0:
        raise ConfigurationError("truncation removes all mass")
    return EntryLaw(kind=base.kind, delta=base.delta, cutoff=lam, scale=1.0 / math.sqrt(m2),
                    iid_parts=base.iid_parts)


# ---------------------------------------------------------------- ensembles


@dataclass(frozen=True)
class EnsembleSpec:
    n: int
    epsilon: float = 1.0
    model: str = "ginibre"
    base_law: str = "gaussian"
    seed: int = 0
    delta: float = 1.0
    iid_parts: bool = False

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ConfigurationError("n must be an integer >= 2")
        if not 0 < self.epsilon <= 1:
            raise ConfigurationError("epsilon must lie in (0, 1]")
        if self.model not in MODELS:
            raise ConfigurationError(f"model must be one of {MODELS}, got {self.model!r}")
        base_law(self.base_law, self.delta)

    @property
    def q(self) -> float:
        """Moment scale q with E|X_ij|^r <= C_r / (N q^{r-2}).

        For Bernoulli sparsity with mean N^{-1+eps} this is N^{eps/2} = sqrt(N p);
        for truncation at N^{1/2-eps} it is N^{eps}.
        """
        if self.model == "sparse":
            return float(self.n) ** (self.epsilon / 2.0)
        return float(self.n) ** self.epsilon

    @property
    def p(self) -> float:
        return float(self.n) ** (-1.0 + self.epsilon) if self.model == "sparse" else 1.0

    def law(self) -> EntryLaw:
        """Law of sqrt(N) X_ij conditioned on being nonzero (sparse) or unconditional."""
        if self.model == "ginibre":
            return base_law("gaussian")
        b = base_law(self.base_law, self.delta, self.iid_parts)
        if self.model == "heavy":
            return truncate_heavy(b, self.n, self.epsilon)
        return b

    def entry_moment(self, r: float) -> float:
        """Analytic E|X_ij|^r."""
        law = self.law()
        if self.model == "sparse":
            return self.p * float(self.n) ** (-r * self.epsilon / 2.0) * law.moment(r)
        return float(self.n) ** (-r / 2.0) * law.moment(r)


@dataclass
class ComplexMatrix:
    entries: np.ndarray
    spec: EnsembleSpec | None = None
    seed: object = None
    meta: dict = field(default_factory=dict)

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    @property
    def n(self) -> int:
        return self.entries.shape[0]


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn_seeds(seed: int, count: int) -> list[np.random.SeedSequence]:
    """Independent per-sample streams split from one root seed."""
    return np.random.SeedSequence(int(seed)).spawn(count)


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Generator of sample ``index`` under root ``seed``, without materialising the others."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def ginibre(n: int, rng) -> np.ndarray:
    rng = make_rng(rng)
    g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return g / math.sqrt(2.0 * n)


def sample_sparse(spec: EnsembleSpec, rng) -> ComplexMatrix:
    if spec.model != "sparse":
        raise ConfigurationError("sample_sparse needs model='sparse'")
    rng = make_rng(rng)
    n = spec.n
    law = spec.law()
    mask = rng.random((n, n)) < spec.p
    x = np.zeros((n, n), dtype=complex)
    k = int(mask.sum())
    x[mask] = law.sample(rng, k)
    x *= float(n) ** (-spec.epsilon / 2.0)
    return ComplexMatrix(x, spec, meta={"nonzero": k})


def sample(spec: EnsembleSpec, rng=None) -> ComplexMatrix:
    """Draw one matrix; ``rng`` defaults to a generator seeded with ``spec.seed``."""
    rng = make_rng(spec.seed if rng is None else rng)
    if spec.model == "sparse":
        return sample_sparse(spec, rng)
    n = spec.n
    if spec.model == "ginibre":
        return ComplexMatrix(ginibre(n, rng), spec)
    y = spec.law().sample(rng, (n, n))
    return ComplexMatrix(y / math.sqrt(n), spec)


def ou_step(x, dt: float, rng, method: str = "exact") -> np.ndarray:
    """One step of dX = -X/2 dt + N^{-1/2} dB with complex Brownian entries.

    ``exact`` uses the Gaussian transition (mean factor e^{-dt/2}, variance
    (1 - e^{-dt})/N); ``euler`` is the Euler-Maruyama step.
    """
    x = np.asarray(x)
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt == 0:
        return x.copy()
    n = x.shape[0]
    noise = ginibre(n, rng) * math.sqrt(n)  # unit variance entries
    if method == "exact":
        return math.exp(-dt / 2.0) * x + math.sqrt(-math.expm1(-dt) / n) * noise
    if method == "euler":
        return (1.0 - dt / 2.0) * x + math.sqrt(dt / n) * noise
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------- cumulants


def _set_partitions(items):
    if len(items) == 1:
        yield [items]
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for k in range(len(part)):
            yield part[:k] + [[first] + part[k]] + part[k + 1:]
        yield [[first]] + part


@lru_cache(maxsize=None)
def _partitions(n: int):
    return [tuple(tuple(b) for b in p) for p in _set_partitions(list(range(n)))]


def joint_cumulant(x: np.ndarray, r: int, s: int) -> complex:
    """Joint cumulant of r copies of x and s copies of conj(x) from samples."""
    n = r + s
    if n == 0:
        return 0j
    cols = [x] * r + [np.conj(x)] * s
    cache = {}

    def mom(block):
        key = (sum(1 for i in block if i < r), sum(1 for i in block if i >= r))
        if key not in cache:
            prod = np.ones_like(x)
            for i in block:
                prod = prod * cols[i]
            cache[key] = prod.mean()
        return cache[key]

    total = 0j
    for part in _partitions(n):
        k = len(part)
        term = math.factorial(k - 1) * (-1) ** (k - 1)
        for b in part:
            term = term * mom(b)
        total += term
    return complex(total)


@dataclass
class CumulantReport:
    """Rescaled cumulants N q^{r+s-2} r! s! c_{r,s} and the raw-moment variant.

    ``kappa`` uses the joint cumulants c_{r,s} of (X, conj X); ``kappa_moment`` uses
    E X^r conj(X)^s in their place.  Both agree for r + s <= 3.
    """

    n: int
    q: float
    kappa: dict
    stderr: dict
    kappa_moment: dict
    stderr_moment: dict
    samples: int

    def table(self):
        return [(r, s, self.kappa[(r, s)], self.stderr[(r, s)]) for (r, s) in sorted(self.kappa)]


MIN_CUMULANT_SAMPLES = 10_000


def rescaled_cumulants(entries, n: int, q: float, r_max: int = 4, batches: int = 20) -> CumulantReport:
    x = np.asarray(entries).ravel()
    if x.size < MIN_CUMULANT_SAMPLES:
        raise EstimationError(f"need at least {MIN_CUMULANT_SAMPLES} entry samples, got {x.size}")
    keys = [(r, s) for r in range(r_max + 1) for s in range(r_max + 1) if 1 <= r + s <= r_max]
    pref = {k: n * q ** (k[0] + k[1] - 2) * math.factorial(k[0]) * math.factorial(k[1]) for k in keys}
    chunks = np.array_split(x, batches)
    kap, se, kapm, sem = {}, {}, {}, {}
    for k in keys:
        r, s = k
        kap[k] = pref[k] * joint_cumulant(x, r, s)
        per = np.array([joint_cumulant(c, r, s) for c in chunks]) * pref[k]
        se[k] = float(np.std(per, ddof=1) / math.sqrt(batches))
        mom = x ** r * np.conj(x) ** s
        kapm[k] = complex(pref[k] * mom.mean())
        sem[k] = float(pref[k] * np.std(mom, ddof=1) / math.sqrt(x.size))
    return CumulantReport(n, q, kap, se, kapm, sem, x.size)


def cumulants_of_spec(spec: EnsembleSpec, n_matrices: int = 1, r_max: int = 4) -> CumulantReport:
    rng = make_rng(spec.seed)
    xs = [sample(spec, rng).entries.ravel() for _ in range(n_matrices)]
    x = np.concatenate(xs)
    if x.size < MIN_CUMULANT_SAMPLES:
        extra = math.ceil(MIN_CUMULANT_SAMPLES / (spec.n * spec.n))
        raise EstimationError(f"need at least {extra} matrices of size {spec.n}")
    return rescaled_cumulants(x, spec.n, spec.q, r_max)


def kappa22_exact(spec: EnsembleSpec) -> float:
    """Analytic rescaled fourth cumulant 4 N q^2 (E|X|^4 - 2 E|X|^2 ^2)."""
    m4 = spec.entry_moment(4)
    m2 = spec.entry_moment(2)
    return 4.0 * spec.n * spec.q ** 2 * (m4 - 2.0 * m2 * m2)


def moment_table(x, rs=(2, 3, 4, 6)) -> dict:
    """Empirical E|X|^r with standard errors."""
    x = np.abs(np.asarray(x).ravel())
    return {r: (float(np.mean(x ** r)), float(np.std(x ** r, ddof=1) / math.sqrt(x.size))) for r in rs}


