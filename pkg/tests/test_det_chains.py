import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparsebulk.det_chains import (ChainSpec, StabilityError, chain_norm_bound, chain_ode_check,
                                   format_chain, m_chain, m_chain_all, parse_chain, tr_chain_det,
                                   tr_chain_det_cyclic, trace_bound_exponent, two_chain_closed_form)
from sparsebulk.ensembles import ginibre
from sparsebulk.quaternion import (BASIS, E_MINUS, E_PLUS, F, F_STAR, Quat, embed, quat_inv,
                                   self_energy, trace_form)
from sparsebulk.resolvent import BasisTraceEngine, hermitise
from sparsebulk.scalar_law import m_of, m_quat

bulk_z = st.builds(lambda r, th: 0.9 * math.sqrt(r) * complex(math.cos(th), math.sin(th)),
                   st.floats(0.01, 1), st.floats(0, 2 * math.pi))
spectral_w = st.builds(lambda e, lg, s: complex(e, s * 10 ** lg),
                       st.floats(-0.5, 0.5), st.floats(-1.5, 0.5), st.sampled_from([-1, 1]))
basis = st.sampled_from(list(BASIS.values()))


def perturbed_m(z, w, b, eps):
    """Solve -M^{-1} = w + eps B + Z + S[M] by damped fixed-point iteration."""
    zq = Quat(0, 0, z, np.conj(z))
    m = m_quat(z, w)
    for _ in range(3000):
        m = 0.5 * m - 0.5 * quat_inv(Quat(w, w, 0, 0) + zq + self_energy(m) + eps * b)
    return m


def test_base_case():
    z, w = 0.3 + 0.1j, 0.2 + 0.5j
    assert m_chain(z, ChainSpec([w], [])).value.allclose(m_quat(z, w))
    assert abs(tr_chain_det(z, ChainSpec([w], []), E_PLUS) - m_of(z, w)) < 1e-14


@pytest.mark.parametrize("name", list(BASIS))
def test_two_chain_equals_derivative_of_perturbed_equation(name):
    # M(w, B, w) = d/d eps of the solution of the B-perturbed Dyson equation
    z, w, h = 0.4 + 0.1j, 0.2 + 0.6j, 1e-5
    b = BASIS[name]
    fd = (perturbed_m(z, w, b, h) - perturbed_m(z, w, b, -h)) * (1 / (2 * h))
    assert m_chain(z, ChainSpec([w, w], [b])).value.allclose(fd, atol=1e-8)


@given(bulk_z, spectral_w, spectral_w)
def test_resolvent_identity_for_identity_deformation(z, w1, w2):
    if abs(w1 - w2) < 1e-3:
        return
    lhs = m_chain(z, ChainSpec([w1, w2], [E_PLUS])).value
    rhs = (m_quat(z, w1) - m_quat(z, w2)) * (1 / (w1 - w2))
    assert lhs.allclose(rhs, atol=1e-8 * max(1, lhs.norm()))


@given(bulk_z, spectral_w, spectral_w)
def test_two_chain_f_modulus(z, w1, w2):
    if abs(w1 - w2) < 1e-3:
        return
    val = abs(tr_chain_det(z, ChainSpec([w1, w2], [F]), E_PLUS))
    # with the trace normalised over 2N the modulus is half of |z||u1-u2|/|w1-w2|
    assert val == pytest.approx(0.5 * two_chain_closed_form(z, w1, w2), rel=1e-9, abs=1e-12)


@given(bulk_z, spectral_w, spectral_w)
def test_e_plus_minus_orthogonality(z, w1, w2):
    assert abs(tr_chain_det(z, ChainSpec([w1, w2], [E_PLUS]), E_MINUS)) < 1e-12
    assert abs(tr_chain_det(z, ChainSpec([w1, w2], [E_MINUS]), E_PLUS)) < 1e-12


def test_cyclicity():
    z = 0.4 + 0.2j
    ws = [0.1 + 0.3j, -0.2 - 0.2j, 0.3 + 0.5j, 0.05 - 0.4j]
    bs = [F, E_MINUS, F_STAR, E_PLUS]
    vals = [tr_chain_det_cyclic(z, ws[k:] + ws[:k], bs[k:] + bs[:k]) for k in range(4)]
    assert np.ptp(np.abs(vals)) < 1e-10
    assert np.abs(np.array(vals) - vals[0]).max() < 1e-10


def test_sub_chains_consistent():
    z, ws = 0.2, [0.3j, -0.4j, 0.2 + 0.5j]
    spec = ChainSpec(ws, [F, F_STAR])
    table = m_chain_all(z, spec)
    assert table[(1, 3)].allclose(m_chain(z, spec).value)
    assert table[(2, 3)].allclose(m_chain(z, ChainSpec(ws[1:], [F_STAR])).value)


def test_chain_against_monte_carlo(rng):
    n, z = 1024, 0.3 + 0.2j
    ws, bs = [0.1j, -0.1j], [F, F_STAR]
    vals = [BasisTraceEngine(hermitise(ginibre(n, rng), z)).chain_trace(ws, bs) for _ in range(3)]
    det = tr_chain_det_cyclic(z, ws, bs)
    eta = 0.1
    assert abs(np.mean(vals) - det) < 5 / (n * eta)


def test_trace_bound_on_grid():
    z = 0.3
    worst = {}
    for eta in np.geomspace(1e-3, 1, 7):
        for bs in ((E_PLUS, E_PLUS), (F, F_STAR), (F, E_PLUS), (F, E_PLUS, F_STAR)):
            m, a = len(bs), sum(b in (F, F_STAR) for b in bs)
            ws = [1j * eta * (-1) ** j for j in range(m)]
            val = abs(tr_chain_det_cyclic(z, ws, list(bs)))
            worst[bs] = max(worst.get(bs, 0), val * eta ** trace_bound_exponent(m, a))
    assert max(worst.values()) < 5.0


@pytest.mark.parametrize("b", [F, F_STAR])
def test_opposite_sign_single_regular_bound(b):
    # (m, a) = (2, 1) without the |Re w| <~ |Im w| restriction
    z = 0.4
    for eta in np.geomspace(1e-3, 1, 6):
        for e1, e2 in ((-0.3, 0.1), (0.0, 0.1), (0.2, 0.3), (0.5, -0.5)):
            w1, w2 = complex(e1, eta), complex(e2, -eta)
            val = abs(tr_chain_det(z, ChainSpec([w1, w2], [b]), E_PLUS))
            assert val <= 3 * (1 + abs(w1.real + w2.real) / eta)


def test_norm_matches_embedding():
    z, ws = 0.3 + 0.1j, [0.2j, -0.3 + 0.1j]
    spec = ChainSpec(ws, [F])
    big = embed(m_chain(z, spec).value, 4)
    assert chain_norm_bound(z, spec) == pytest.approx(np.linalg.norm(big, 2), rel=1e-12)
    assert chain_norm_bound(0, ChainSpec([0.5j], [])) == pytest.approx(abs(m_of(0, 0.5j)))


def test_ode_single_resolvent():
    rep = chain_ode_check(0.4 + 0.2j, ChainSpec([0.2 + 2j], []), E_PLUS, 0.5, 1e-3)
    assert rep.max_deviation < 1e-8


def test_ode_two_chain():
    rep = chain_ode_check(0.4 + 0.2j, ChainSpec([0.2 + 2j, -0.1 + 1.5j], [F]), F_STAR, 0.5, 1e-3)
    assert rep.max_deviation < 1e-6
    assert chain_ode_check(0.3, ChainSpec([1j], []), E_PLUS, 0.0).max_deviation == 0


def test_stability_error_at_singular_point():
    with pytest.raises((StabilityError, ValueError, ZeroDivisionError, ArithmeticError)):
        m_chain(0.0, ChainSpec([1e-14j, 1e-14j], [E_MINUS]))


def test_parse_and_format():
    spec, last = parse_chain("w=0.1+0.5i; B=F; w=-0.2-0.3i; B=F~")
    assert spec.ws == [0.1 + 0.5j, -0.2 - 0.3j] or tuple(spec.ws) == (0.1 + 0.5j, -0.2 - 0.3j)
    assert last == F_STAR
    again, last2 = parse_chain(format_chain(spec, last))
    assert list(again.ws) == list(spec.ws) and last2 == last
    with pytest.raises(ValueError):
        parse_chain("B=F; w=1j")
