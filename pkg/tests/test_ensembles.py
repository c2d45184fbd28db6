import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparsebulk.ensembles import (ConfigurationError, EnsembleSpec, EntryLaw, EstimationError, base_law,
                                  cumulants_of_spec, ginibre, kappa22_exact, moment_table, ou_step,
                                  rescaled_cumulants, sample, sample_rng, truncate_heavy)


def test_dense_variance(rng):
    x = sample(EnsembleSpec(n=200, epsilon=1.0, model="sparse"), rng).entries
    assert np.count_nonzero(x) == 200 * 200
    assert abs(np.mean(np.abs(x) ** 2) * 200 - 1) < 0.02


def test_sparse_nonzero_count(rng):
    spec = EnsembleSpec(n=1000, epsilon=0.5, model="sparse")
    counts = np.array([sample(spec, rng).meta["nonzero"] for _ in range(50)])
    p = spec.p
    mean, sd = 1e6 * p, math.sqrt(1e6 * p * (1 - p))
    assert abs(counts.mean() - mean) < 3 * sd / math.sqrt(50)
    assert abs(mean - 1000 ** 1.5) < 1e-6


@pytest.mark.parametrize("model", ["sparse", "heavy", "ginibre"])
def test_first_and_second_moments_vanish(model, rng):
    spec = EnsembleSpec(n=1000, epsilon=0.5, model=model, base_law="lomax" if model == "heavy" else "gaussian")
    x = sample(spec, rng).entries.ravel() * math.sqrt(1000)
    if model == "sparse":
        x = x[x != 0]
    se = np.std(x) / math.sqrt(x.size)
    assert abs(x.mean()) < 3 * se * math.sqrt(2)
    se2 = np.std(x * x) / math.sqrt(x.size)
    assert abs((x * x).mean()) < 3 * se2 * math.sqrt(2)


def test_truncation_inactive_for_bounded_law():
    law = base_law("unimodular")
    assert truncate_heavy(law, lam=2.0) is law


def test_gaussian_tail_mismatch(rng):
    law = base_law("gaussian")
    r = np.abs(law.sample(rng, 10 ** 6))
    assert np.mean(r > 5) < 1e-4
    assert law.tail_prob(5.0) == pytest.approx(math.exp(-25))


def test_truncated_moment_bound(rng):
    spec = EnsembleSpec(n=400, epsilon=0.25, model="heavy", base_law="lomax", delta=0.5)
    x = sample(spec, rng).entries
    q = spec.q
    for r, c_r in ((3, 5.0), (4, 20.0)):
        emp = np.mean(np.abs(x) ** r)
        assert emp <= c_r / (spec.n * q ** (r - 2))
    assert np.abs(x).max() <= spec.n ** (-spec.epsilon) * spec.law().scale * (1 + 1e-12)


def test_entry_law_moments_match_sampling(rng):
    law = truncate_heavy(base_law("lomax", 1.0), lam=4.0)
    assert law.moment(2) == pytest.approx(1.0)
    y = law.sample(rng, 400000)
    assert np.mean(np.abs(y) ** 4) == pytest.approx(law.moment(4), rel=0.03)


def test_ou_variance_from_zero():
    n, t, steps = 60, 0.7, 35
    rng = np.random.default_rng(2)
    x = np.zeros((n, n), dtype=complex)
    for _ in range(steps):
        x = ou_step(x, t / steps, rng)
    var = np.mean(np.abs(x) ** 2)
    expected = (1 - math.exp(-t)) / n
    assert abs(var - expected) < 4 * expected * math.sqrt(1 / n ** 2)
    assert abs(np.mean(x * x)) < 4 * expected / n


def test_ou_zero_step(rng):
    x = ginibre(8, rng)
    assert np.array_equal(ou_step(x, 0.0, rng), x)
    with pytest.raises(ValueError):
        ou_step(x, 0.1, rng, method="milstein")


def test_ou_euler_close_to_exact():
    x = ginibre(16, np.random.default_rng(0))
    a = ou_step(x, 1e-4, np.random.default_rng(1), "exact")
    b = ou_step(x, 1e-4, np.random.default_rng(1), "euler")
    assert np.abs(a - b).max() < 1e-6


def test_ginibre_cumulants_vanish():
    rep = cumulants_of_spec(EnsembleSpec(n=128, seed=4), n_matrices=2)
    for (r, s), v in rep.kappa.items():
        if r + s >= 3:
            assert abs(v) < 4 * rep.stderr[(r, s)] + 1e-12
    assert abs(rep.kappa[(1, 1)] - 1) < 0.05


def test_sparse_kappa22_matches_moment_formula():
    spec = EnsembleSpec(n=128, epsilon=0.5, model="sparse", seed=9)
    rep = cumulants_of_spec(spec, n_matrices=3)
    exact = kappa22_exact(spec)
    assert exact > 1
    assert abs(rep.kappa[(2, 2)] - exact) < 4 * rep.stderr[(2, 2)]


@pytest.mark.parametrize("model", ["sparse", "heavy"])
def test_holomorphic_cumulants_vanish(model):
    spec = EnsembleSpec(n=128, epsilon=0.5, model=model, base_law="lomax", seed=5)
    rep = cumulants_of_spec(spec, n_matrices=2)
    for key in ((0, 1), (0, 2)):
        assert abs(rep.kappa[key]) < 4 * rep.stderr[key] + 1e-12


def test_cumulant_sample_floor():
    with pytest.raises(EstimationError):
        rescaled_cumulants(np.zeros(100), 10, 1.0)


@given(st.integers(2, 40), st.floats(0.05, 1.0))
def test_spec_validation(n, eps):
    spec = EnsembleSpec(n=n, epsilon=eps, model="sparse")
    assert spec.q == pytest.approx(n ** (eps / 2))
    assert 0 < spec.p <= 1


def test_spec_errors():
    with pytest.raises(ConfigurationError):
        EnsembleSpec(n=1)
    with pytest.raises(ConfigurationError):
        EnsembleSpec(n=10, model="wigner")
    with pytest.raises(ConfigurationError):
        EntryLaw(kind="cauchy")


def test_seeded_streams_are_reproducible():
    spec = EnsembleSpec(n=20, model="sparse", epsilon=0.6, seed=3)
    a = sample(spec, sample_rng(3, 7)).entries
    b = sample(spec, sample_rng(3, 7)).entries
    c = sample(spec, sample_rng(3, 8)).entries
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_moment_table(rng):
    tab = moment_table(ginibre(200, rng) * math.sqrt(200))
    assert tab[2][0] == pytest.approx(1.0, abs=0.02)
    assert tab[4][0] == pytest.approx(2.0, abs=0.05)
