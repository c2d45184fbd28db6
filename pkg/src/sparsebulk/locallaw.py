"""Monte Carlo measurement of averaged and isotropic local-law errors.

The averaged error of a chain with ``m`` resolvents and ``a`` regular deformations is

    S^av = <G_1 B_1 ... G_m B_m> - <M(w_1, B_1, ..., w_m) B_m>

and is compared with Psi^av(eta, m, a); the isotropic error S^iso of a chain with
``m + 1`` resolvents is compared entrywise with Psi^iso.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .det_chains import ChainSpec, StabilityError, m_chain, tr_chain_det_cyclic
from .ensembles import EnsembleSpec, sample, sample_rng
from .parallel import pmap
from .quaternion import BASIS, F, F_STAR, Quat, is_regular
from .resolvent import (BasisTraceEngine, ChainEvaluator, HermitisationHandle, _rotated_product,
                        chain_column, contract, row_sum)

log = logging.getLogger(__name__)

CSV_COLUMNS = ("N", "eps", "z_re", "z_im", "eta", "E", "m", "a", "sample_idx",
               "S_abs", "psi", "ratio", "pattern", "mode")


# ---------------------------------------------------------------- error scales


def e_av(eta: float, n: int, q: float) -> float:
    return 1.0 / (n * eta) + 1.0 / q


def e_iso(eta: float, n: int, q: float) -> float:
    return 1.0 / math.sqrt(n * eta) + 1.0 / q


def psi_av(eta: float, m: int, a: int, n: int, q: float, big_m: int = 8) -> float:
    err = e_av(eta, n, q) if m <= big_m / 2 else e_iso(eta, n, q)
    return err / eta ** (m - a / 2 - 1)


def psi_iso(eta: float, m: int, a: int, n: int, q: float, big_m: int = 8) -> float:
    err = e_iso(eta, n, q) if m <= big_m / 2 else 1.0
    return err / eta ** (m - a / 2)


def n_eps(eps: float, k: int) -> int:
    """Chain length n_{eps,k} = ceil(3 2^k / eps + 2 (2^k - 1)) + 1."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return math.ceil(3 * 2 ** k / eps + 2 * (2 ** k - 1) - 1e-12) + 1


# ---------------------------------------------------------------- experiment


def _as_quats(pattern) -> tuple:
    return tuple(BASIS[b] if isinstance(b, str) else b for b in pattern)


def _pattern_name(pattern) -> str:
    names = {v: k for k, v in BASIS.items()}
    return ",".join(names.get(b, str(b)) for b in pattern)


@dataclass(frozen=True)
class LLExperiment:
    """One local-law scan.

    ``patterns`` holds B-name tuples.  In averaged mode a pattern of length m gives
    the chain G_1 B_1 ... G_m B_m; in isotropic mode it lists the m interior
    deformations of G_1 B_1 ... G_{m+1}.  ``signs`` fixes the sign of Im w_j.
    """

    ensemble: EnsembleSpec
    z: complex = 0.0
    patterns: tuple = (("E+",),)
    etas: tuple = (0.1,)
    samples: int = 20
    mode: str = "averaged"
    energy: float = 0.0
    signs: tuple | None = None
    ns: tuple | None = None
    pairs: tuple | None = None
    big_m: int = 8
    threads: int | None = 1

    def __post_init__(self):
        if self.mode not in ("averaged", "isotropic"):
            raise ValueError("mode must be averaged or isotropic")
        if self.samples < 20:
            raise ValueError("sample count must be at least 20")
        if not self.etas or min(self.etas) <= 0:
            raise ValueError("eta grid must be positive")
        object.__setattr__(self, "patterns", tuple(tuple(p) for p in self.patterns))
        object.__setattr__(self, "z", complex(self.z))

    @property
    def grid_ns(self) -> tuple:
        return tuple(self.ns) if self.ns else (self.ensemble.n,)

    def ws(self, eta: float, count: int) -> list:
        signs = self.signs or (1,) * count
        if len(signs) < count:
            raise ValueError(f"need {count} signs, got {len(signs)}")
        return [complex(self.energy, s * eta) for s in signs[:count]]

    def chain_len(self, pattern) -> int:
        return len(pattern) if self.mode == "averaged" else len(pattern) + 1


@dataclass
class LLResult:
    mode: str
    rows: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(CSV_COLUMNS)
        for r in self.rows:
            wr.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"mode": self.mode, "skipped": self.skipped, **self.summary},
                          indent=2, sort_keys=True, default=_fmt)

    def values(self, key: str = "S_abs", **where) -> np.ndarray:
        out = [r[key] for r in self.rows if all(r[k] == v for k, v in where.items())]
        return np.array(out, dtype=float)


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def fit_slope(x, y) -> tuple[float, float]:
    """Least-squares slope of log y against log x with its standard error."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    if lx.size < 2:
        return float("nan"), float("nan")
    if lx.size == 2:
        return float((ly[1] - ly[0]) / (lx[1] - lx[0])), float("nan")
    coef, cov = np.polyfit(lx, ly, 1, cov=True)
    return float(coef[0]), float(math.sqrt(max(cov[0, 0], 0.0)))


# ---------------------------------------------------------------- deterministic side


def _det_av(z, ws, bs) -> complex:
    return tr_chain_det_cyclic(z, ws, bs)


def _det_iso(z, ws, bs) -> Quat:
    return m_chain(z, ChainSpec(ws, bs)).value


def _det_entry(mq: Quat, n: int, row: int, col: int) -> complex:
    if row % n != col % n:
        return 0j
    return complex(mq.matrix()[row // n, col // n])


def _default_pairs(n: int, rng) -> list:
    i, j = (int(v) for v in rng.choice(n, size=2, replace=False))
    return [(i, i), (i, j), (i, i + n), (i + n, i), (i + n, i + n), (j + n, i), (i, j + n), (j, j)]


# ---------------------------------------------------------------- sampling


def _av_values(handle: HermitisationHandle, ws_by_pattern: list) -> list:
    """Exact <G_1 B_1 ... G_m B_m> for a list of (ws, bs); shares one engine."""
    engine = BasisTraceEngine(handle)
    out = [None] * len(ws_by_pattern)
    groups = {}
    for k, (ws, bs) in enumerate(ws_by_pattern):
        groups.setdefault(tuple(ws), []).append(k)
    for ws, idx in groups.items():
        m = len(ws)
        if m <= 4 and len(idx) > max(1, 4 ** m // 8):
            ten = engine.tensor(list(ws))
            for k in idx:
                out[k] = contract(ten, ws_by_pattern[k][1])
        else:
            for k in idx:
                bs = ws_by_pattern[k][1]
                out[k] = (engine.chain_trace(list(ws), bs) if m <= 4
                          else _rotated_product(handle, list(ws), bs))
    engine.clear()
    return out


def _sample_job(args):
    exp, n, idx, points = args
    spec = replace(exp.ensemble, n=n)
    rng = sample_rng(spec.seed, idx)
    x = sample(spec, rng).entries
    handle = HermitisationHandle(x, exp.z)
    rows = []
    if exp.mode == "averaged":
        by_eta = {}
        for pt in points:
            by_eta.setdefault(pt["eta"], []).append(pt)
        for eta, pts in by_eta.items():
            vals = _av_values(handle, [(p["ws"], p["bs"]) for p in pts])
            for p, v in zip(pts, vals):
                rows.append(_row(exp, spec, p, idx, abs(v - p["det"])))
    else:
        for p in points:
            ev = ChainEvaluator(handle, p["ws"], list(p["bs"]))
            cols = {}
            worst = 0.0
            for r, c in p["pairs"]:
                if c not in cols:
                    cols[c] = chain_column(ev, c)
                worst = max(worst, abs(cols[c][r] - _det_entry(p["det"], n, r, c)))
            rows.append(_row(exp, spec, p, idx, worst))
    return rows


def _row(exp, spec, p, idx, s_abs):
    return {"N": spec.n, "eps": spec.epsilon, "z_re": exp.z.real, "z_im": exp.z.imag,
            "eta": p["eta"], "E": exp.energy, "m": p["m"], "a": p["a"], "sample_idx": idx,
            "S_abs": float(s_abs), "psi": p["psi"], "ratio": float(s_abs) / p["psi"],
            "pattern": p["name"], "mode": exp.mode}


def _points(exp: LLExperiment, n: int, skipped: list) -> list:
    spec = replace(exp.ensemble, n=n)
    q = spec.q
    rng = np.random.default_rng(spec.seed)
    pairs = list(exp.pairs) if exp.pairs else _default_pairs(n, rng)
    pts = []
    for eta in exp.etas:
        for pat in exp.patterns:
            bs = _as_quats(pat)
            m = len(bs)
            a = sum(is_regular(b) for b in bs)
            ws = exp.ws(eta, exp.chain_len(pat))
            try:
                if exp.mode == "averaged":
                    det = _det_av(exp.z, ws, bs)
                    psi = psi_av(eta, m, a, n, q, exp.big_m)
                else:
                    det = _det_iso(exp.z, ws, bs)
                    psi = psi_iso(eta, m, a, n, q, exp.big_m)
            except StabilityError as err:
                log.warning("skipping N=%d eta=%.4g pattern=%s: %s", n, eta, pat, err)
                skipped.append({"N": n, "eta": eta, "pattern": _pattern_name(bs), "reason": str(err)})
                continue
            pts.append({"eta": float(eta), "ws": ws, "bs": bs, "m": m, "a": a, "det": det,
                        "psi": psi, "name": _pattern_name(bs), "pairs": pairs})
    return pts


def _run(exp: LLExperiment) -> LLResult:
    res = LLResult(exp.mode)
    jobs = []
    for n in exp.grid_ns:
        pts = _points(exp, n, res.skipped)
        jobs.extend((exp, n, idx, pts) for idx in range(exp.samples))
    for rows in pmap(_sample_job, jobs, exp.threads):
        res.rows.extend(rows)
    res.rows.sort(key=lambda r: (r["N"], r["pattern"], r["eta"], r["sample_idx"]))
    res.summary = summarize(res.rows)
    return res


def summarize(rows, quantile: float = 0.95, xi: float = 0.1) -> dict:
    """Per grid point quantiles plus log-log slopes of the median against eta, N and N eta."""
    cells = {}
    for r in rows:
        cells.setdefault((r["N"], r["pattern"], r["eta"]), []).append(r)
    points = []
    for (n, pat, eta), rs in sorted(cells.items()):
        s = np.array([r["S_abs"] for r in rs])
        ratio = np.array([r["ratio"] for r in rs])
        points.append({"N": n, "pattern": pat, "eta": eta, "m": rs[0]["m"], "a": rs[0]["a"],
                       "median": float(np.median(s)), "q95": float(np.quantile(s, quantile)),
                       "psi": rs[0]["psi"], "median_ratio": float(np.median(ratio)),
                       "ratio_quantile": float(np.quantile(ratio, quantile)),
                       "dominated": bool(np.quantile(ratio, quantile) <= n ** xi),
                       "samples": len(rs)})
    slopes = []
    for pat in sorted({p["pattern"] for p in points}):
        sel = [p for p in points if p["pattern"] == pat]
        for n in sorted({p["N"] for p in sel}):
            cur = [p for p in sel if p["N"] == n]
            sl, se = fit_slope([p["eta"] for p in cur], [p["median"] for p in cur])
            slopes.append({"pattern": pat, "against": "eta", "N": n, "slope": sl, "stderr": se})
        for eta in sorted({p["eta"] for p in sel}):
            cur = [p for p in sel if p["eta"] == eta]
            if len(cur) > 1:
                sl, se = fit_slope([p["N"] for p in cur], [p["median"] for p in cur])
                slopes.append({"pattern": pat, "against": "N", "eta": eta, "slope": sl, "stderr": se})
        sl, se = fit_slope([p["N"] * p["eta"] for p in sel], [p["median"] for p in sel])
        slopes.append({"pattern": pat, "against": "N*eta", "slope": sl, "stderr": se})
    return {"points": points, "slopes": slopes, "quantile": quantile, "xi": xi}


def estimate_S_av(exp: LLExperiment) -> LLResult:
    """Sample |S^av| over independent draws at every (N, eta, pattern) grid point."""
    if exp.mode != "averaged":
        exp = replace(exp, mode="averaged")
    return _run(exp)


def estimate_S_iso(exp: LLExperiment, pairs=None) -> LLResult:
    """Sample max over index pairs of |S^iso|; default pairs include hatted indices."""
    exp = replace(exp, mode="isotropic", pairs=tuple(pairs) if pairs else exp.pairs)
    return _run(exp)


# ---------------------------------------------------------------- fluctuation averaging


def _fa_job(args):
    exp, n, idx, rows_idx = args
    spec = replace(exp.ensemble, n=n)
    x = sample(spec, sample_rng(spec.seed, idx)).entries
    handle = HermitisationHandle(x, exp.z)
    q = spec.q
    out = []
    for eta in exp.etas:
        for pat in exp.patterns:
            bs = _as_quats(pat)
            m = len(bs)
            a = sum(is_regular(b) for b in bs)
            ws = exp.ws(eta, m + 1)
            ev = ChainEvaluator(handle, ws, list(bs))
            det = _det_iso(exp.z, ws, bs) if m == 0 else None
            worst, worst_fluct = 0.0, 0.0
            for i in rows_idx:
                for block in ("upper", "lower"):
                    val = row_sum(ev, i, block)
                    worst = max(worst, abs(val))
                    if det is not None:
                        # M is block diagonal in the index, so one entry survives the sum
                        col = i % n + (0 if block == "upper" else n)
                        worst_fluct = max(worst_fluct, abs(val - _det_entry(det, n, i, col)))
            bound = eta ** (-(m - a / 2 + 1))
            row = {"N": n, "eta": eta, "pattern": _pattern_name(bs), "m": m, "a": a,
                   "sample_idx": idx, "row_sum": worst, "bound": bound}
            if det is not None:
                row["fluct"] = worst_fluct
                row["fluct_bound"] = e_iso(eta, n, q) / eta
            out.append(row)
    return out


@dataclass
class ScalingReport:
    rows: list
    medians: dict
    slopes: dict
    predicted: dict


def fluctuation_averaging_scan(exp: LLExperiment, rows_per_sample: int = 4) -> ScalingReport:
    """Row sums of (G_1 B_1 ... G_{m+1}) over one column block, against eta^{-(m - a/2 + 1)}.

    For m = 0 the deviation from the deterministic row sum is also compared with the
    sharper ((N eta)^{-1/2} + 1/q)/eta scale.
    """
    jobs = []
    for n in exp.grid_ns:
        rng = np.random.default_rng(exp.ensemble.seed + n)
        idx = tuple(int(i) for i in rng.choice(2 * n, size=min(rows_per_sample, 2 * n), replace=False))
        jobs.extend((exp, n, s, idx) for s in range(exp.samples))
    rows = [r for rs in pmap(_fa_job, jobs, exp.threads) for r in rs]
    rows.sort(key=lambda r: (r["N"], r["pattern"], r["eta"], r["sample_idx"]))
    medians, slopes, predicted = {}, {}, {}
    for key in sorted({(r["N"], r["pattern"]) for r in rows}):
        sel = [r for r in rows if (r["N"], r["pattern"]) == key]
        etas = sorted({r["eta"] for r in sel})
        med = [float(np.median([r["row_sum"] for r in sel if r["eta"] == e])) for e in etas]
        name = f"N={key[0]} {key[1] or 'G'}"
        medians[name] = dict(zip(etas, med))
        slopes[name] = fit_slope(etas, med)
        predicted[name] = -(sel[0]["m"] - sel[0]["a"] / 2 + 1)
        if "fluct" in sel[0]:
            fmed = [float(np.median([r["fluct"] for r in sel if r["eta"] == e])) for e in etas]
            medians[name + " fluct"] = dict(zip(etas, fmed))
            slopes[name + " fluct"] = fit_slope(etas, fmed)
    return ScalingReport(rows, medians, slopes, predicted)


# ---------------------------------------------------------------- regularity audit


@dataclass
class Condition:
    name: str
    passed: bool
    observed_min: float
    observed_max: float
    detail: str = ""


@dataclass
class Def2Report:
    conditions: dict
    c: float
    C: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions.values())

    def table(self) -> list:
        return [(k, c.passed, c.observed_min, c.observed_max, c.detail) for k, c in self.conditions.items()]


def mean_h_htilde(handle: HermitisationHandle, eta1: float, eta2: float) -> float:
    """<H_z(i eta_1) H~_z(i eta_2)> = N^{-1} sum_{kl} d_k(eta_1) d_l(eta_2) |P_lk|^2."""
    s2 = handle.sigma ** 2
    d1 = 1.0 / (s2 + eta1 * eta1)
    d2 = 1.0 / (s2 + eta2 * eta2)
    p2 = np.abs(handle.p) ** 2
    return float(d2 @ p2 @ d1) / handle.n


def check_def2(x, z: complex, n_chain: int, tau: float, delta: float, C: float = 10.0,
               c: float | None = None, grid: int = 4, k_max: int = 6, patterns_per_k: int = 3,
               seed: int = 0) -> Def2Report:
    """Audit conditions (a)-(e) on a sub-grid of D(delta, tau).

    Observed constants are reported.  A condition passes when its observed values sit
    in [c, C] (lower bounds only where the condition has one).
    """
    c = 1.0 / C if c is None else c
    handle = HermitisationHandle(x, z)
    n = handle.n
    rng = np.random.default_rng(seed)
    lo = float(n) ** (-1.0 + tau)
    hi = min(1.0, 1.0 / delta) if delta > 0 else 1.0
    etas = np.geomspace(lo, max(hi, lo), grid)
    conds = {}

    xnorm = float(np.linalg.norm(np.asarray(x), 2))
    ca = math.log(max(xnorm, 1.0)) / math.log(n) ** 2
    conds["a"] = Condition("a", bool(ca <= C), ca, ca, f"||X||={xnorm:.4g}, log||X||/log^2 N")

    ims = []
    for eta in etas:
        for e in (-delta * eta, 0.0, delta * eta):
            ims.append(abs(handle.trace_g(complex(e, eta)).imag))
    conds["b"] = Condition("b", bool(c <= min(ims) and max(ims) <= C), float(min(ims)), float(max(ims)),
                           "Im<G_1>")

    vals = [e1 * e2 * mean_h_htilde(handle, e1, e2) for e1 in etas for e2 in etas]
    conds["c"] = Condition("c", bool(c <= min(vals) and max(vals) <= C), float(min(vals)), float(max(vals)),
                           "eta_1 eta_2 <H H~>")

    vals = [eta ** 3 * handle.mean_h(eta, 2) for eta in etas]
    conds["d"] = Condition("d", bool(c <= min(vals) and max(vals) <= C), float(min(vals)), float(max(vals)),
                           "eta_1^3 <H^2>, traced")

    engine = BasisTraceEngine(handle)
    consts = []
    for k in range(2, min(2 * n_chain, k_max) + 1):
        for _ in range(patterns_per_k):
            bs = [F if rng.random() < 0.5 else F_STAR for _ in range(k)]
            eta = float(rng.choice(etas))
            ws = [complex(rng.uniform(-delta, delta) * eta, (1 if rng.random() < 0.5 else -1) * eta)
                  for _ in range(k)]
            eta_min = min(abs(w.imag) for w in ws)
            val = engine.chain_trace(ws, bs) if k <= 4 else _rotated_product(handle, ws, bs)
            consts.append(abs(val) * eta_min ** (k / 2 - 1))
        engine.clear()
    conds["e"] = Condition("e", bool(max(consts) <= C), float(min(consts)), float(max(consts)),
                           f"|<G B ... G B>| eta^(k/2-1), k<={min(2 * n_chain, k_max)}")
    return Def2Report(conds, c, C)
