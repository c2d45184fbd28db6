"""The five config-driven experiment families and the ensemble sampler behind ``sample``.

Each runner maps an :class:`ExperimentConfig` to an :class:`Artifacts` triple: CSV
rows, a JSON-ready summary and a short plain-text report.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .quaternion import BASIS


@dataclass
class Artifacts:
    csv: str
    summary: dict
    report: str


DESCRIPTIONS = {
    "locallaw": (
        "Averaged and isotropic multi-resolvent local law. Samples X, evaluates "
        "<G_1 B_1 ... G_m B_m> (or entries of the isotropic chain) on an eta grid and "
        "compares with the deterministic chain M from the quaternion recursion. The "
        "error S is measured against the multi-resolvent local law bound "
        "Psi^av = N^{-1} eta^{-(m - a/2)} (a = number of regular F, F~ factors), and "
        "against Psi^iso for isotropic chains."),
    "flow": (
        "Characteristic flow with an Ornstein-Uhlenbeck matrix evolution (zig step). "
        "The spectral parameters follow dw/dt = -m - w/2, dz/dt = -z/2, which keeps "
        "the invariant m_t = e^{t/2} m_0 along each trajectory. Records S^av_t, its "
        "Ito drift (m/2) S_t + sum A_{p,r} and the martingale remainder, and the ratio "
        "|S_t| / Psi^av(eta_t) used by the stopping-time argument."),
    "stats": (
        "Bulk universality of Gaussian-divisible matrices X + sqrt(t) Ginibre with "
        "t = N^{-1+2 eps}. Rescales eigenvalues by sqrt(N sigma_z) around z and "
        "compares k = 1, 2 smooth linear statistics with the integral of the GinUE "
        "k-point correlation function. Only consistency within Monte Carlo error is "
        "checked, not a convergence rate."),
    "schur": (
        "Partial Schur decomposition for the Gaussian-divisible ensemble. Draws unit "
        "vectors from the tilted spherical density mu proportional to "
        "exp(-(N/t) v^*|X_z|^2 v) by exact rejection sampling and measures the "
        "concentration of the quadratic forms v^*Hv, v^*H~v, v^*X_zHv and of the 2x2 "
        "determinant around their means, on the scale log N / sqrt(N t). Also "
        "reports the normalizer K."),
    "detchains": (
        "Deterministic chain approximations M(w_1, B_1, ..., w_m) and their evolution "
        "along the characteristic flow. Integrates the chain ODE "
        "d<M_t B_m>/dt = (m/2)<M_t B_m> + sum_{p<r} A_{p,r} and compares with direct "
        "evaluation; also reports the trace bound |<M B_m>| <~ eta^{-(m - ceil(a/2) - 1)}."),
}


def list_experiments() -> list:
    return list(DESCRIPTIONS)


def describe(name: str) -> str:
    if name not in DESCRIPTIONS:
        raise KeyError(f"unknown experiment {name!r}; known: {', '.join(DESCRIPTIONS)}")
    return DESCRIPTIONS[name]


def _r(x) -> str:
    return repr(float(x))


def _csv(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for row in rows:
        wr.writerow([_r(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _threads(cfg: ExperimentConfig):
    return cfg.sampling.threads


# ---------------------------------------------------------------- locallaw


def eta_grid(cfg: ExperimentConfig) -> tuple:
    g = cfg.geometry
    if g.etas is not None:
        return tuple(g.etas)
    from .scalar_law import eta_cap

    hi, _ = eta_cap(g.delta)
    lo = max(float(n) ** (-1.0 + g.tau) for n in (g.ns or (cfg.ensemble.n,)))
    if g.eta_count == 1:
        return (math.sqrt(lo * hi),)
    return tuple(float(e) for e in np.geomspace(lo, hi, g.eta_count))


def run_locallaw(cfg: ExperimentConfig) -> Artifacts:
    from .locallaw import LLExperiment, estimate_S_av, estimate_S_iso

    g, c = cfg.geometry, cfg.chain
    exp = LLExperiment(ensemble=cfg.ensemble_spec(), z=g.z, patterns=c.patterns, etas=eta_grid(cfg),
                       samples=cfg.sampling.samples, mode=c.mode, energy=g.energy, signs=g.signs,
                       ns=g.ns, big_m=c.big_m, threads=_threads(cfg))
    res = estimate_S_av(exp) if c.mode == "averaged" else estimate_S_iso(exp)
    summary = {"mode": res.mode, "skipped": res.skipped, **res.summary}
    lines = [f"local law ({res.mode}), N = {', '.join(map(str, exp.grid_ns))}, "
             f"{exp.samples} samples, z = {exp.z}"]
    for p in res.summary.get("points", []):
        lines.append("  " + ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                                      for k, v in p.items()))
    for s in res.skipped:
        lines.append(f"  skipped: {s}")
    return Artifacts(res.to_csv(), summary, "\n".join(lines) + "\n")


# ---------------------------------------------------------------- flow


def _flow_job(args):
    from .flow import zig_run

    spec, z0, chains, t_end, dt, seed, method, big_m, bound, stream = args
    return zig_run(spec, z0, chains, t_end, dt=dt, seed=seed, method=method, big_m=big_m,
                   ratio_bound=bound, stream=stream)


def run_flow(cfg: ExperimentConfig) -> Artifacts:
    from .flow import ZigChain, flow_forward, flow_reverse, time_to_eta
    from .parallel import pmap
    from .scalar_law import solve_m

    g, c = cfg.geometry, cfg.chain
    chains = [ZigChain([g.w0] * len(p), [BASIS[b] for b in p]) for p in c.patterns]
    t_end = time_to_eta(g.z, g.w0, g.eta_end)
    jobs = [(cfg.ensemble_spec(), g.z, chains, t_end, g.dt, cfg.seed, g.method, c.big_m,
             c.ratio_bound, j) for j in range(cfg.sampling.samples)]
    results = pmap(_flow_job, jobs, _threads(cfg))

    header = ["trajectory", "t", "eta_t", "z_re", "z_im", "chain", "S_re", "S_im", "psi",
              "drift_re", "drift_im", "A_sum_re", "A_sum_im", "A_terms",
              "martingale_re", "martingale_im", "ratio"]
    rows = []
    for j, res in enumerate(results):
        for r in res.rows:
            rows.append([j] + [r[k] for k in header[1:]])

    st = flow_forward(g.z, g.w0, t_end)
    m0 = solve_m(g.z, g.w0).m
    back = flow_reverse(st.z, st.w, t_end)
    invariant = abs(solve_m(st.z, st.w).m - math.exp(t_end / 2) * m0)
    roundtrip = max(abs(back.w - g.w0), abs(back.z - g.z))

    per_chain = {}
    for ch in chains:
        ratios = np.array([res.max_ratio[ch.name] for res in results])
        per_chain[ch.name] = {"m": ch.m, "a": ch.a, "max_ratio_median": float(np.median(ratios)),
                              "max_ratio_max": float(ratios.max()),
                              "stable_fraction": float(np.mean(ratios <= c.ratio_bound))}
    stable_all = float(np.mean([all(res.stable.values()) for res in results]))
    summary = {"t_end": t_end, "trajectories": len(results), "ratio_bound": c.ratio_bound,
               "truncated": int(sum(res.truncated for res in results)),
               "stable_fraction": stable_all, "chains": per_chain,
               "invariant_residual": invariant, "reverse_forward_residual": roundtrip}
    lines = [f"zig flow N = {cfg.ensemble.n}, z0 = {g.z}, w0 = {g.w0}, eta {g.w0.imag} -> {g.eta_end} "
             f"(t_end = {t_end:.4f}), {len(results)} trajectories",
             f"  all chains below {c.ratio_bound}: {stable_all:.3f} of trajectories",
             f"  |m_t - e^(t/2) m_0| = {invariant:.2e}, reverse o forward residual = {roundtrip:.2e}"]
    for name, d in per_chain.items():
        lines.append(f"  chain {name}: median max ratio {d['max_ratio_median']:.3f}, "
                     f"max {d['max_ratio_max']:.3f}, stable {d['stable_fraction']:.3f}")
    return Artifacts(_csv(header, rows), summary, "\n".join(lines) + "\n")


# ---------------------------------------------------------------- stats


def divisible_t(cfg: ExperimentConfig) -> float:
    if cfg.geometry.t is not None:
        return cfg.geometry.t
    return float(cfg.ensemble.n) ** (-1.0 + 2.0 * cfg.ensemble.epsilon)


def run_stats(cfg: ExperimentConfig) -> Artifacts:
    from .spectral import ginue_integral, gaussian_divisible_samples, kpoint_statistic, product_bump

    g, k = cfg.geometry, cfg.chain.k
    t = divisible_t(cfg)
    samples = gaussian_divisible_samples(cfg.ensemble_spec(), t, g.z, cfg.sampling.samples,
                                         threads=_threads(cfg))
    f = product_bump(1.0)
    pred = ginue_integral(f, k)
    rows, vals = [], []
    for smp in samples:
        zeta = math.sqrt(smp.n * smp.sigma_z) * (smp.eigenvalues - g.z)
        v = kpoint_statistic(zeta, f, k)
        vals.append(v)
        rows.append([smp.seed, smp.sigma_z, v])
    vals = np.array(vals)
    se = float(np.std(vals, ddof=1) / math.sqrt(vals.size))
    est = float(vals.mean())
    sig = np.array([r[1] for r in rows])
    summary = {"k": k, "t": t, "estimate": est, "stderr": se, "prediction": pred,
               "z_score": (est - pred) / se if se > 0 else None, "samples": int(vals.size),
               "flagged_low_samples": bool(vals.size < 200),
               "sigma_z_mean": float(sig.mean()), "sigma_z_min": float(sig.min()),
               "sigma_z_max": float(sig.max())}
    report = (f"k = {k} statistic, N = {cfg.ensemble.n}, t = {t:.4g}, z = {g.z}: "
              f"{est:.5f} +- {se:.5f} vs GinUE {pred:.5f} ({summary['z_score']:+.2f} s.e.)\n"
              f"  sigma_z in [{sig.min():.4f}, {sig.max():.4f}]\n")
    return Artifacts(_csv(["sample_idx", "sigma_z", "statistic"], rows), summary, report)


# ---------------------------------------------------------------- schur


def run_schur(cfg: ExperimentConfig) -> Artifacts:
    from .ensembles import sample, sample_rng
    from .schur import concentration_suite, k_normalizer

    g = cfg.geometry
    n = cfg.ensemble.n
    t = g.t if g.t is not None else n ** -0.5
    x = sample(cfg.ensemble_spec(), sample_rng(cfg.seed, 0)).entries
    rep = concentration_suite(x, g.z, t, samples=cfg.sampling.samples, rng=sample_rng(cfg.seed, 1))
    rows = [[i, rep.conc["conc1"][i], rep.conc["conc2"][i], rep.conc["conc3"][i], rep.det_rel[i]]
            for i in range(rep.det_rel.size)]
    kres = k_normalizer(x, g.z, t, "integral")
    summary = {"t": t, "eta_z": rep.eta, "scale": rep.scale, "acceptance": rep.acceptance,
               "quantiles_099": rep.quantiles(0.99), "constants_099": rep.constants(0.99),
               "log_K": kres.log_value}
    c = rep.constants(0.99)
    report = (f"Schur sampling N = {n}, t = {t:.4g}, z = {g.z}, eta_z = {rep.eta:.4g}, "
              f"acceptance {rep.acceptance:.3f}\n"
              f"  0.99-quantile / (log N / sqrt(N t)): "
              + ", ".join(f"{k} {v:.3f}" for k, v in c.items())
              + f"\n  log K = {kres.log_value:.6f}\n")
    header = ["sample_idx", "conc1", "conc2", "conc3", "det_rel"]
    return Artifacts(_csv(header, rows), summary, report)


# ---------------------------------------------------------------- detchains


def run_detchains(cfg: ExperimentConfig) -> Artifacts:
    from .det_chains import (chain_norm_bound, chain_ode_check, count_regular, format_chain,
                             m_chain, parse_chain, trace_bound_exponent)
    from .flow import time_to_eta
    from .quaternion import E_PLUS

    g = cfg.geometry
    spec, b_last = parse_chain(cfg.chain.text)
    closing = b_last if b_last is not None else E_PLUS
    bs = list(spec.bs) + [closing]
    m, a = len(spec.ws), count_regular(bs)
    val = m_chain(g.z, spec).value
    t_max = min(time_to_eta(g.z, w, g.eta_end) for w in spec.ws)
    ode = chain_ode_check(g.z, spec, closing, t_max, step=g.dt)
    rows = []
    for t, y, d in zip(ode.times, ode.integrated, ode.direct):
        rows.append([float(t), y.real, y.imag, d.real, d.imag])
    eta0 = min(abs(w.imag) for w in spec.ws)
    summary = {"chain": format_chain(spec, b_last), "z": [g.z.real, g.z.imag],
               "M": [[c.real, c.imag] for c in val.coeffs()],
               "trace": [complex(ode.direct[0]).real, complex(ode.direct[0]).imag],
               "norm": chain_norm_bound(g.z, spec), "m": m, "a": a,
               "trace_bound_exponent": trace_bound_exponent(m, a),
               "trace_over_bound": abs(ode.direct[0]) * eta0 ** trace_bound_exponent(m, a),
               "ode_t_max": t_max, "ode_max_deviation": ode.max_deviation,
               "ode_truncated": ode.truncated}
    report = (f"chain {summary['chain']} at z = {g.z}: <M B_m> = {complex(ode.direct[0]):.6g}, "
              f"|M| = {summary['norm']:.4g}\n"
              f"  ODE to t = {t_max:.4f}: max deviation {ode.max_deviation:.2e}\n")
    header = ["t", "ode_re", "ode_im", "direct_re", "direct_im"]
    return Artifacts(_csv(header, rows), summary, report)


# ---------------------------------------------------------------- sample


def _eig_job(args):
    from .ensembles import sample, sample_rng

    spec, idx = args
    x = sample(spec, sample_rng(spec.seed, idx)).entries
    return np.linalg.eigvals(x)


def run_sample(cfg: ExperimentConfig) -> Artifacts:
    """Eigenvalues of ``samples`` draws from the configured ensemble."""
    from .parallel import pmap
    from .spectral import circular_law_chi2

    spec = cfg.ensemble_spec()
    eigs = pmap(_eig_job, [(spec, i) for i in range(cfg.sampling.samples)], _threads(cfg))
    rows = []
    for i, lam in enumerate(eigs):
        lam = lam[np.lexsort((lam.imag, lam.real))]
        rows.extend([i, j, v.real, v.imag] for j, v in enumerate(lam))
    pooled = np.concatenate(eigs)
    chi = circular_law_chi2(pooled)
    summary = {"model": spec.model, "n": spec.n, "epsilon": spec.epsilon, "q": spec.q,
               "samples": len(eigs), "spectral_radius_max": float(np.abs(pooled).max()),
               "circular_law_chi2": chi.statistic, "circular_law_p": chi.p_value}
    report = (f"{len(eigs)} {spec.model} samples, N = {spec.n}: max |lambda| = "
              f"{summary['spectral_radius_max']:.4f}, circular-law chi2 p = {chi.p_value:.3g}\n")
    return Artifacts(_csv(["sample_idx", "k", "re", "im"], rows), summary, report)


RUNNERS = {"locallaw": run_locallaw, "flow": run_flow, "stats": run_stats,
           "schur": run_schur, "detchains": run_detchains}
