import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparsebulk.det_chains import tr_chain_det_cyclic
from sparsebulk.ensembles import EnsembleSpec, ginibre, sample, sample_rng
from sparsebulk.flow import (StoppedFlowError, ZigChain, _a_terms, flow_forward, flow_residual,
                             flow_reverse, integral_bound_check, schedule, stopping_time, time_to_eta,
                             zig_run)
from sparsebulk.locallaw import e_av
from sparsebulk.quaternion import BASIS
from sparsebulk.resolvent import BasisTraceEngine, HermitisationHandle
from sparsebulk.scalar_law import m_of

bulk_z = st.builds(lambda r, th: 0.9 * math.sqrt(r) * complex(math.cos(th), math.sin(th)),
                   st.floats(0, 1), st.floats(0, 2 * math.pi))
start_w = st.builds(lambda e, eta: complex(e, eta), st.floats(-0.5, 0.5), st.floats(0.2, 3.0))


def test_time_zero_is_identity():
    st0 = flow_forward(0.3, 0.1 + 1j, 0.0)
    assert st0.z == 0.3 and st0.w == 0.1 + 1j
    assert flow_reverse(0.3, 0.1 + 1j, 0.0).w == 0.1 + 1j


@given(bulk_z, start_w, st.floats(0.0, 0.95))
def test_m_invariant(z, w, frac):
    t = frac * time_to_eta(z, w, 1e-3)
    s = flow_forward(z, w, t)
    assert abs(m_of(s.z, s.w) - math.exp(t / 2) * m_of(z, w)) < 1e-9
    assert abs(s.m - m_of(s.z, s.w)) < 1e-9


@given(bulk_z, start_w, st.floats(0.0, 0.95))
def test_reverse_undoes_forward(z, w, frac):
    t = frac * time_to_eta(z, w, 1e-3)
    s = flow_forward(z, w, t)
    back = flow_reverse(s.z, s.w, t)
    assert abs(back.w - w) < 1e-10 * max(1, abs(w)) and abs(back.z - z) < 1e-12


def test_forward_undoes_reverse():
    z, w, t = 0.4 + 0.1j, 0.05 + 0.2j, 0.3
    r = flow_reverse(z, w, t)
    f = flow_forward(r.z, r.w, t)
    assert abs(f.w - w) < 1e-10 and abs(f.z - z) < 1e-12


def test_reverse_small_time_expansion():
    # w_{-t} = w_0 + t (m_0 + w_0/2) + O(t^2)
    z, w = 0.3 + 0.2j, 0.1 + 0.5j
    m0 = m_of(z, w)
    ts = np.geomspace(1e-4, 1e-2, 5)
    res = [abs(flow_reverse(z, w, t).w - (w + t * (m0 + w / 2))) for t in ts]
    slope = np.polyfit(np.log(ts), np.log(res), 1)[0]
    assert abs(slope - 2) < 0.1


def test_characteristic_ode_residual():
    assert flow_residual(0.3, 0.1 + 0.8j, 0.5) < 1e-8


def test_time_to_eta_and_stopping():
    z, w = 0.3, 1j
    t = time_to_eta(z, w, 0.05)
    assert abs(flow_forward(z, w, t).w.imag - 0.05) < 1e-12
    with pytest.raises(StoppedFlowError):
        flow_forward(z, w, stopping_time(z, w, 100) + 1e-9, n=100)


def test_integral_bound():
    z, w = 0.3, 1j
    t = time_to_eta(z, w, 0.01)
    assert integral_bound_check(z, w, 1.0, t) <= 4
    assert integral_bound_check(z, w, 1.0, 1e-6) < 1e-4
    assert integral_bound_check(z, w, 1.0, 0.0) == 0.0
    r1 = integral_bound_check(z, w, 1.0, time_to_eta(z, w, 0.02))
    r2 = integral_bound_check(z, w, 1.0, time_to_eta(z, w, 0.01))
    assert abs(r2 / r1 - 1) < 0.2


def test_schedule():
    sch = schedule(0.25, 0.5, target_tau=0.25, n=1000)
    assert sch.taus == [0.75, 0.5, 0.25]
    assert sch.stages <= math.ceil(1 / 0.25) + 1
    assert all(t <= 1000 ** -0.25 * (1 + 1e-12) for t in sch.flow_times)
    with pytest.raises(ValueError):
        schedule(1.5, 0.5)


@pytest.mark.parametrize("names, ws0", [
    (("E+",), [0.3j]), (("F", "F~"), [0.4j, -0.35j]), (("E+", "E+"), [0.4j, 0.35j]),
    (("F", "E-"), [0.4 + 0.4j, 0.35j]), (("F", "E+", "F~"), [0.4j, 0.3j, -0.5j])])
def test_ito_drift_equals_generator(names, ws0):
    # d/dt E S = (m/2) S + sum A_{p,r}, checked against the OU generator by finite differences
    n, z0 = 8, 0.3
    x = ginibre(n, np.random.default_rng(5))
    bs = [BASIS[b] for b in names]

    def s_of(x, t):
        zt = z0 * math.exp(-t / 2)
        wt = [flow_forward(z0, w, t).w for w in ws0]
        eng = BasisTraceEngine(HermitisationHandle(x, zt))
        return eng.chain_trace(wt, bs) - tr_chain_det_cyclic(zt, wt, bs), eng, zt, wt

    s0, eng, zt, wt = s_of(x, 0.0)
    hd = HermitisationHandle(x, zt)
    terms = _a_terms(eng.chain_trace, tr_chain_det_cyclic, hd.trace_g, zt, wt, bs)
    rate = 0.5 * len(ws0) * s0 + sum(terms.values())
    k, h = 1e-5, 1e-3
    drift = (s_of(math.exp(-k / 2) * x, k)[0] - s0) / k
    lap = 0j
    for i in range(n):
        for j in range(n):
            for ph in (1, 1j):
                e = np.zeros((n, n), complex)
                e[i, j] = ph
                lap += (s_of(x + h * e, 0)[0] + s_of(x - h * e, 0)[0] - 2 * s0) / h ** 2
    generator = drift + lap / (4 * n)
    assert abs(generator - rate) < 1e-4 * max(1.0, abs(rate))


def test_zig_zero_time_matches_static():
    spec = EnsembleSpec(n=32, seed=4)
    res = zig_run(spec, 0.3, [((1j,), (BASIS["E+"],))], 0.0, seed=4)
    (row,) = res.rows
    x = sample(spec, sample_rng(4, 0)).entries
    static = HermitisationHandle(x, 0.3).trace_g(1j) - m_of(0.3, 1j)
    assert complex(row["S_re"], row["S_im"]) == pytest.approx(static, abs=1e-13)


@pytest.fixture(scope="module")
def short_run():
    spec = EnsembleSpec(n=64, seed=2)
    chains = [ZigChain([1j], [BASIS["E+"]]), ZigChain([1j, 1j], [BASIS["F"], BASIS["F~"]])]
    return spec, chains, zig_run(spec, 0.3, chains, 0.2, dt=0.01, seed=2)


def test_zig_rows_and_determinism(short_run):
    spec, chains, res = short_run
    assert len(res.rows) == 21 * 2 and not res.truncated
    again = zig_run(spec, 0.3, chains, 0.2, dt=0.01, seed=2)
    assert again.to_csv() == res.to_csv()
    other = zig_run(spec, 0.3, chains, 0.2, dt=0.01, seed=2, stream=1)
    assert other.to_csv() != res.to_csv()


def test_zig_diagonal_a_terms_bounded(short_run):
    spec, chains, res = short_run
    for r in res.rows:
        ch = next(c for c in chains if c.name == r["chain"])
        terms = dict(item.split(":") for item in r["A_terms"].split(";"))
        for p in range(1, ch.m + 1):
            val = abs(complex(terms[f"{p}-{p}"]))
            bound = e_av(r["eta_t"], spec.n, spec.q) * r["eta_t"] ** -(ch.m - ch.a / 2)
            assert val <= 10 * bound


def test_zig_limits():
    with pytest.raises(ValueError):
        zig_run(EnsembleSpec(n=1024), 0.3, [((1j,), (BASIS["E+"],))], 0.1)
    with pytest.raises(ValueError):
        zig_run(EnsembleSpec(n=16), 0.3, [((1j,), (BASIS["E+"],))], 0.1, dt=0.1)
