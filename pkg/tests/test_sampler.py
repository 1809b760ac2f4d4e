import math

import numpy as np
import pytest
from scipy import stats

from hydrochain.sampler import (MAX_REJECTION_ROUNDS, RngStream, SiteDistribution, rejection_sample,
                                sample_chain, sample_p, sample_r)
from hydrochain.thermo import ThermoParams, cosine, harmonic

from conftest import ks_critical_1pct, quadrature_cdf


def test_streams_are_reproducible_and_distinct():
    a = RngStream(5, 3, 0).generator().standard_normal(4)
    b = RngStream(5, 3, 0).generator().standard_normal(4)
    c = RngStream(5, 4, 0).generator().standard_normal(4)
    d = RngStream(5, 3, 1).generator().standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)
    assert not np.allclose(a, d)


@pytest.mark.parametrize("pot,tau", [(harmonic(), 0.7), (cosine(0.5), 0.5)])
def test_rejection_sampler_matches_quadrature_cdf(pot, tau):
    rng = RngStream(11).generator()
    n = 20_000
    draws, proposed = rejection_sample(np.full(n, tau), ThermoParams(1.0), pot, rng)
    res = stats.kstest(draws, quadrature_cdf(tau, 1.0, pot))
    assert res.statistic < ks_critical_1pct(n)
    assert n / proposed >= math.sqrt(pot.c_minus / pot.c_plus) * 0.98


def test_cdf_oracle_is_sane():
    cdf = quadrature_cdf(0.3, 1.0, harmonic())
    r = np.array([-1.0, 0.3, 2.0])
    assert np.allclose(cdf(r), stats.norm.cdf(r, loc=0.3), atol=1e-5)


def test_momentum_draws_are_gaussian():
    d = SiteDistribution(0.0, 0.4, ThermoParams(2.0), harmonic())
    p = sample_p(d, RngStream(1).generator(), 20_000)
    res = stats.kstest(p, stats.norm(loc=0.4, scale=1 / math.sqrt(2.0)).cdf)
    assert res.statistic < ks_critical_1pct(p.size)


def test_site_distribution_fills_mode():
    d = SiteDistribution(1.0, 0.0, ThermoParams(1.0), cosine(0.5))
    assert abs(d.potential.dV(d.mode) - 1.0) < 1e-12
    assert isinstance(sample_r(d, RngStream(2).generator()), float)
    assert sample_r(d, RngStream(2).generator(), (3, 2)).shape == (3, 2)


def test_sample_chain_profiles_and_ledger():
    rng = RngStream(3).generator()
    st = sample_chain(200, lambda x: 2.0 * x, 0.0, ThermoParams(50.0), harmonic(), rng)
    assert st.n == 200
    # at large beta the draws hug the profile
    x = np.arange(1, 201) / 200
    assert np.max(np.abs(st.r - 2.0 * x)) < 1.0
    assert st.ledger.length == pytest.approx(np.mean(st.r))
    assert st.ledger.energy0 == pytest.approx(np.mean(0.5 * st.p**2 + 0.5 * st.r**2))
    with pytest.raises(ValueError):
        sample_chain(2, 0.0, 0.0, ThermoParams(1.0), harmonic(), rng)


def test_chain_mean_matches_elongation():
    rng = RngStream(4).generator()
    st = sample_chain(40_000, 1.0, 0.0, ThermoParams(1.0), harmonic(), rng)
    assert abs(np.mean(st.r) - 1.0) < 4 / math.sqrt(40_000)
    assert abs(np.mean(st.p)) < 4 / math.sqrt(40_000)


def test_iteration_cap_is_large():
    assert MAX_REJECTION_ROUNDS >= 10**6
