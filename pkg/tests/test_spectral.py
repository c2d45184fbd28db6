import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsebulk.ensembles import EnsembleSpec, ginibre
from sparsebulk.resolvent import HermitisationHandle
from sparsebulk.spectral import (EigenSample, GinibreKernel, QuadratureError, bump, bump_laplacian,
                                 circular_law_chi2, eigen_samples, eta_z_solve, ginue_integral,
                                 ginue_kernel, ginue_rho_k, girko_check, kpoint_compare,
                                 kpoint_statistic, log_abs_det_eta, logdet_expansion_check,
                                 product_bump, product_bump_integral, sigma_z)

pts = st.builds(complex, st.floats(-3, 3), st.floats(-3, 3))


@given(pts)
def test_one_point_density_is_flat(z):
    assert ginue_rho_k([z]) == pytest.approx(1 / math.pi, rel=1e-12)


@given(pts, pts)
def test_two_point_closed_form(a, b):
    expected = (1 - math.exp(-abs(a - b) ** 2)) / math.pi ** 2
    assert ginue_rho_k([a, b]) == pytest.approx(expected, abs=1e-14)


@given(pts, pts)
def test_kernel_hermitian_and_cached(a, b):
    k = GinibreKernel()
    assert k(a, b) == pytest.approx(np.conj(k(b, a)), abs=1e-14)
    assert (a, b) in {key for key in k.cache} or complex(a) == a


def test_coincident_points_vanish():
    assert abs(ginue_rho_k([0.4 + 0.1j, 0.4 + 0.1j, -1.0])) < 1e-14
    with pytest.raises(ValueError):
        ginue_rho_k(np.zeros(7))


def test_kernel_reproducing():
    # int K(a, z) K(z, b) d^2 z = K(a, b)
    h, L = 0.05, 7.0
    ax = np.arange(-L, L, h) + h / 2
    grid = (ax[None, :] + 1j * ax[:, None]).ravel()
    a, b = 0.3 + 0.2j, -0.5 + 0.1j
    lhs = np.sum(ginue_kernel([a], grid)[0] * ginue_kernel(grid, [b])[:, 0]) * h * h
    assert abs(lhs - ginue_kernel([a], [b])[0, 0]) < 1e-10


@pytest.mark.parametrize("k", [1, 2])
def test_product_bump_integral(k):
    assert ginue_integral(product_bump(1.0), k) == pytest.approx(product_bump_integral(1.0, k), rel=2e-3)


def test_girko_small_explicit():
    x = np.array([[0.3 + 0.1j, 0.5], [-0.2j, -0.4 + 0.2j]])
    res = girko_check(x, half_width=1.5, grid=400, max_points=1 << 18)
    assert res.residual < 1e-3


def test_girko_converges_under_refinement():
    x = ginibre(24, np.random.default_rng(3))
    # log singularities at the eigenvalues make the error erratic at O(h^2 log h), not monotone
    r = [girko_check(x, center=0.1, half_width=1.2, grid=g).residual for g in (32, 64, 256)]
    assert r[2] < r[0] and r[1] < r[0]
    assert r[2] < 1e-3


def test_girko_zero_test_function():
    x = ginibre(8, np.random.default_rng(0))
    res = girko_check(x, f=lambda z: 0 * z, lap=lambda z: 0 * z)
    assert res.lhs == 0 and res.rhs == 0


def test_girko_limits():
    x = np.eye(2)
    with pytest.raises(QuadratureError):
        girko_check(x, grid=1024)
    with pytest.raises(ValueError):
        girko_check(x, f=bump())


def test_log_abs_det_from_resolvent():
    x = ginibre(16, np.random.default_rng(1))
    z = 0.2 - 0.1j
    exact = np.linalg.slogdet(x - z * np.eye(16))[1]
    assert log_abs_det_eta(x, z) == pytest.approx(exact, abs=1e-6)


def test_girko_eta_method_agrees():
    x = ginibre(6, np.random.default_rng(2))
    a = girko_check(x, grid=48, method="slogdet")
    b = girko_check(x, grid=48, method="eta")
    assert abs(a.rhs - b.rhs) < 1e-5


@given(st.floats(1e-3, 1.0))
def test_eta_z_for_zero_matrix(t):
    x = np.zeros((8, 8))
    assert eta_z_solve(x, 0.0, t) == pytest.approx(math.sqrt(t), rel=1e-10)
    assert sigma_z(x, 0.0, t) == pytest.approx(1 / t, rel=1e-8)


def test_eta_z_root_and_monotone():
    x = ginibre(64, np.random.default_rng(4))
    z, t = 0.3, 64 ** -0.5
    hd = HermitisationHandle(x, z)
    eta = eta_z_solve(x, z, t, handle=hd)
    obj = lambda e: t * float(np.mean(1 / (hd.sigma ** 2 + e * e)))
    assert obj(eta) == pytest.approx(1.0, abs=1e-10)
    es = np.geomspace(eta / 10, eta * 10, 20)
    assert np.all(np.diff([obj(e) for e in es]) < 0)
    with pytest.raises(ValueError):
        eta_z_solve(x, z, 0.0)


@settings(max_examples=10)
@given(st.floats(0, 2 * math.pi))
def test_sigma_z_phase_invariant(theta):
    x = ginibre(32, np.random.default_rng(6))
    z, t = 0.3 + 0.1j, 0.05
    ph = complex(math.cos(theta), math.sin(theta))
    assert sigma_z(ph * x, ph * z, t) == pytest.approx(sigma_z(x, z, t), rel=1e-9)


def test_sigma_z_near_one_for_ginibre():
    x = ginibre(512, np.random.default_rng(7))
    assert 0.6 < sigma_z(x, 0.2, 512 ** -0.5) < 1.4


def test_logdet_expansion_improves_with_order():
    x = ginibre(64, np.random.default_rng(8))
    res = [logdet_expansion_check(x, 0.2, 0.3 + 0.2j, 0.5, order).residual for order in (1, 2, 3, 4)]
    assert all(b < a for a, b in zip(res, res[1:]))
    r4 = logdet_expansion_check(x, 0.2, 0.3 + 0.2j, 0.5, 4)
    assert r4.residual < 3 * r4.next_term


def test_kpoint_statistic_counts_pairs():
    zeta = np.array([0.0, 1.0, 20.0])
    one = lambda p: np.ones(p.shape[0])
    assert kpoint_statistic(zeta, one, 1) == 2
    assert kpoint_statistic(zeta, one, 2) == 2
    with pytest.raises(ValueError):
        kpoint_statistic(zeta, one, 3)


@pytest.mark.parametrize("k", [1, 2])
def test_kpoint_ginibre_matches_ginue(k):
    samples = eigen_samples(EnsembleSpec(n=256, seed=11), 40)
    res = kpoint_compare(samples, 0.0, k, prediction=product_bump_integral(1.0, k), min_samples=40)
    assert not res.flagged
    assert abs(res.z_score) < 4


def test_kpoint_flags_small_sample_count():
    samples = [EigenSample(ginibre(16, np.random.default_rng(i)).diagonal()) for i in range(3)]
    res = kpoint_compare(samples, 0.0, 1, prediction=2.0)
    assert res.flagged and res.samples == 3


def test_eigen_sample_rejects_nan():
    with pytest.raises(ValueError):
        EigenSample(np.array([np.nan]))


def test_circular_law_chi2():
    lam = np.concatenate([s.eigenvalues for s in eigen_samples(EnsembleSpec(n=400, seed=12), 3)])
    assert circular_law_chi2(lam, bins=10).p_value > 1e-3
    assert circular_law_chi2(lam * 0.7, bins=10).p_value < 1e-6
