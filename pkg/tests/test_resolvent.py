import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsebulk.ensembles import ginibre
from sparsebulk.quaternion import BASIS, E_MINUS, E_PLUS, F, F_STAR, embed
from sparsebulk.resolvent import (BasisTraceEngine, ChainEvaluator, NumericError, _rotated_product,
                                  abs_resolvent_check, abs_resolvent_frame, chain_entry, chain_trace,
                                  hat, hermitisation_matrix, hermitise, row_sum)

N = 16
WS = [0.1 + 0.3j, -0.2 - 0.25j, 0.05 + 0.4j, 0.3 - 0.2j]


@pytest.fixture(scope="module")
def setup():
    x = ginibre(N, np.random.default_rng(0))
    z = 0.3 + 0.1j
    w_mat = hermitisation_matrix(x, z)
    gs = [np.linalg.inv(w_mat - w * np.eye(2 * N)) for w in WS]
    return x, z, hermitise(x, z), gs


def dense_chain(gs, bs, n):
    a = np.eye(2 * n, dtype=complex)
    for g, b in zip(gs, bs):
        a = a @ g @ embed(b, n)
    return a


def test_zero_matrix_resolvent():
    hd = hermitise(np.zeros((5, 5)), 0)
    w = 0.2 + 0.7j
    assert np.allclose(hd.dense(w), -np.eye(10) / w)
    assert hd.trace_g(w) == pytest.approx(-1 / w)


def test_blocks_match_dense_inverse(setup):
    _, _, hd, gs = setup
    assert np.abs(hd.dense(WS[0]) - gs[0]).max() < 1e-9


def test_e_minus_identity(setup):
    _, _, hd, _ = setup
    w = 0.2 + 0.35j
    em = embed(E_MINUS, N)
    assert np.abs(hd.dense(w) @ em + em @ hd.dense(-w)).max() < 1e-10


def test_apply_matches_dense(setup, rng):
    _, _, hd, gs = setup
    v = rng.normal(size=(2 * N, 3)) + 1j * rng.normal(size=(2 * N, 3))
    assert np.abs(hd.apply(WS[0], v) - gs[0] @ v).max() < 1e-10


def test_all_basis_traces(setup):
    _, _, hd, gs = setup
    eng = BasisTraceEngine(hd)
    basis = list(BASIS.values())
    err = 0.0
    for m in range(1, 5):
        for bs in itertools.product(basis, repeat=m):
            d = np.trace(dense_chain(gs[:m], bs, N)) / (2 * N)
            err = max(err, abs(eng.chain_trace(WS[:m], bs) - d), abs(_rotated_product(hd, WS[:m], bs) - d))
    assert err < 1e-10


def test_repeated_spectral_parameters(setup):
    x, z, hd, _ = setup
    g = np.linalg.inv(hermitisation_matrix(x, z) - 0.2j * np.eye(2 * N))
    for bs in ((F, F_STAR, F, F_STAR), (F, F, F_STAR, F_STAR), (E_MINUS, F, E_PLUS, F_STAR)):
        d = np.trace(dense_chain([g] * 4, bs, N)) / (2 * N)
        assert abs(BasisTraceEngine(hd).chain_trace([0.2j] * 4, bs) - d) < 1e-10


def test_scalar_chain_at_zero():
    hd = hermitise(np.zeros((6, 6)), 0)
    w = 0.3 + 0.4j
    val = chain_trace(ChainEvaluator(hd, [w, w], [F, F_STAR]))
    assert val == pytest.approx(1 / (2 * w * w))


def test_ward_identity(rng):
    x = ginibre(64, rng)
    hd = hermitise(x, 0.2)
    w = 0.1 + 0.05j
    lhs = BasisTraceEngine(hd).chain_trace([w, np.conj(w)], [E_PLUS, E_PLUS])
    assert lhs == pytest.approx(hd.trace_g(w).imag / w.imag, rel=1e-10)


def test_stochastic_trace_within_error(setup):
    _, _, hd, _ = setup
    ev = ChainEvaluator(hd, WS[:2], [F, F_STAR], mode="stochastic", probes=2000)
    res = chain_trace(ev, return_stderr=True)
    exact = BasisTraceEngine(hd).chain_trace(WS[:2], [F, F_STAR])
    assert abs(res.value - exact) < 5 * res.stderr + 1e-12


def test_entries_and_hat(setup):
    _, _, hd, gs = setup
    ev = ChainEvaluator(hd, WS[:3], [F, E_MINUS])
    d = gs[0] @ embed(F, N) @ gs[1] @ embed(E_MINUS, N) @ gs[2]
    assert abs(chain_entry(ev, 3, hat(3, N)) - d[3, N + 3]) < 1e-10
    assert hat(3, N) == 3 + N and hat(N + 3, N) == 3
    assert abs(row_sum(ev, 5, "lower") - d[5, N:].sum()) < 1e-10
    assert abs(row_sum(ev, 5, "upper") - d[5, :N].sum()) < 1e-10


def test_zero_matrix_entries_and_row_sums():
    n, w = 7, 0.3 + 0.2j
    ev = ChainEvaluator(hermitise(np.zeros((n, n)), 0), [w], [])
    assert chain_entry(ev, 2, 2) == pytest.approx(-1 / w)
    assert row_sum(ev, 2, "upper") == pytest.approx(-1 / w)


def test_invalid_inputs(setup):
    _, _, hd, _ = setup
    with pytest.raises(ValueError):
        ChainEvaluator(hd, [0.5], [])
    with pytest.raises(IndexError):
        chain_entry(ChainEvaluator(hd, [1j], []), 2 * N, 0)
    with pytest.raises(NumericError):
        hermitise(np.full((3, 3), np.nan))


def test_abs_resolvent_frame_matches_eigendecomposition(rng):
    n, z, w = 12, 0.2, 0.1 + 0.07j
    x = ginibre(n, rng)
    hd = hermitise(x, z)
    lam, vec = np.linalg.eigh(hermitisation_matrix(x, z))
    dense_abs = (vec / np.abs(lam - w)) @ vec.conj().T
    d, o = abs_resolvent_frame(hd, w)
    u, v = hd.u, hd.v
    frame = np.block([[(u * d) @ u.conj().T, (u * o) @ v.conj().T],
                      [(v * o) @ u.conj().T, (v * d) @ v.conj().T]])
    assert np.abs(frame - dense_abs).max() < 1e-10


def test_abs_resolvent_quadrature():
    # the cut-off at N^L leaves a tail of order 2 / (pi N^L)
    hd0 = hermitise(np.zeros((100, 100)), 0)
    rep = abs_resolvent_check(hd0, 0.3j)
    assert rep.residual < 1e-4 and rep.residual <= rep.tail_bound * 1.01
    hd = hermitise(ginibre(32, np.random.default_rng(1)), 0.2)
    coarse = abs_resolvent_check(hd, 0.05 + 0.1j, quad_points=40).residual
    fine = abs_resolvent_check(hd, 0.05 + 0.1j, quad_points=200).residual
    assert fine < 1e-3 and fine <= coarse


@settings(max_examples=20)
@given(st.integers(2, 10), st.floats(0.05, 2.0), st.floats(-0.5, 0.5))
def test_trace_of_h_matches_dense(n, eta, e):
    x = ginibre(n, np.random.default_rng(n))
    hd = hermitise(x, 0.1)
    w = complex(e, eta)
    dense = np.trace(np.linalg.inv(hermitisation_matrix(x, 0.1) - w * np.eye(2 * n))) / (2 * n)
    assert abs(hd.trace_g(w) - dense) < 1e-9 * (1 + abs(dense))
