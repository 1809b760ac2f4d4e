import math
import pickle

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from hydrochain.thermo import (ThermoParams, ThermoTable, cosine, ell, ell_prime, free_energy,
                               gibbs_hat, gibbs_potential, harmonic, internal_energy,
                               log_partition_z, mode, parse_potential, partition_z, tabulate,
                               tension, tension_prime, thermo_entropy, thermo_table)

from conftest import oracle_ell, oracle_ell_prime, oracle_internal_energy, oracle_log_z

TAUS = np.linspace(-2, 2, 9)
BETAS = [0.5, 1.0, 2.0]


def test_potential_parsing():
    assert parse_potential("harmonic") == harmonic()
    c = parse_potential("cosine:a=0.25")
    assert c.cos_amplitude == 0.25
    assert (c.c_minus, c.c_plus) == (0.75, 1.25)
    assert parse_potential("cosine").cos_amplitude == 0.5
    for bad in ["quartic", "cosine:a=1.5", "cosine:a=x"]:
        with pytest.raises(ValueError):
            parse_potential(bad)


def test_potential_pickles_by_name():
    c = cosine(0.3)
    back = pickle.loads(pickle.dumps(c))
    assert back == c
    assert back.dV(0.7) == c.dV(0.7)


def test_params_validation():
    for bad in [0.0, -1.0, float("inf"), float("nan")]:
        with pytest.raises(ValueError):
            ThermoParams(bad)


@pytest.mark.parametrize("tau", [-1.5, 0.0, 0.8])
def test_mode_solves_stationarity(tau, potential):
    m = mode(tau, potential)
    assert abs(potential.dV(m) - tau) < 1e-12


@pytest.mark.parametrize("beta", BETAS)
def test_harmonic_closed_forms(beta):
    p, h = ThermoParams(beta), harmonic()
    for tau in TAUS:
        assert partition_z(tau, p, h) == pytest.approx(math.sqrt(2 * math.pi / beta) * math.exp(beta * tau**2 / 2), rel=1e-10)
        assert ell(tau, p, h) == pytest.approx(tau, abs=1e-12)
        assert ell_prime(tau, p, h) == pytest.approx(1.0, abs=1e-10)
        assert tension(tau, p, h) == pytest.approx(tau, abs=1e-10)
        assert tension_prime(tau, p, h) == pytest.approx(1.0, abs=1e-10)
        assert free_energy(tau, p, h) == pytest.approx(tau**2 / 2, abs=1e-10)
        assert gibbs_hat(tau, p, h) == pytest.approx(tau**2 / 2, abs=1e-10)
        assert internal_energy(tau, p, h) == pytest.approx(1 / beta + tau**2 / 2, abs=1e-10)
        assert thermo_entropy(tau, p, h) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("beta", BETAS)
def test_cosine_against_bessel_series(beta):
    p, c = ThermoParams(beta), cosine(0.5)
    for tau in TAUS:
        assert log_partition_z(tau, p, c) == pytest.approx(oracle_log_z(tau, beta, 0.5), abs=1e-10)
        assert ell(tau, p, c) == pytest.approx(oracle_ell(tau, beta, 0.5), abs=1e-10)
        assert ell_prime(tau, p, c) == pytest.approx(oracle_ell_prime(tau, beta, 0.5), abs=1e-9)
        assert internal_energy(tau, p, c) == pytest.approx(oracle_internal_energy(tau, beta, 0.5), abs=1e-9)


def test_gibbs_potential_adds_momentum_gaussian():
    p, c = ThermoParams(2.0), cosine(0.5)
    g = gibbs_potential(0.4, 0.3, p, c)
    assert g == pytest.approx(0.5 * math.log(math.pi) + 0.09 + log_partition_z(0.4, p, c), abs=1e-12)
    # d G / d pbar = beta pbar, d G / d tau = beta ell
    eps = 1e-5
    dp = (gibbs_potential(0.4, 0.3 + eps, p, c) - gibbs_potential(0.4, 0.3 - eps, p, c)) / (2 * eps)
    dt = (gibbs_potential(0.4 + eps, 0.3, p, c) - gibbs_potential(0.4 - eps, 0.3, p, c)) / (2 * eps)
    assert dp == pytest.approx(2.0 * 0.3, rel=1e-7)
    assert dt == pytest.approx(2.0 * ell(0.4, p, c), rel=1e-7)


@pytest.mark.parametrize("beta", BETAS)
def test_duality_on_fine_grid(beta, potential):
    p = ThermoParams(beta)
    for tau in np.linspace(-2, 2, 41):
        assert abs(tension(ell(tau, p, potential), p, potential) - tau) < 1e-8


def test_free_energy_is_integral_of_tension():
    p, c = ThermoParams(1.0), cosine(0.5)
    for r in [-1.2, 0.4, 1.9]:
        direct = integrate.quad(lambda x: tension(x, p, c), 0.0, r, epsabs=1e-12)[0]
        assert free_energy(r, p, c) == pytest.approx(direct, abs=1e-9)


def test_table_matches_scalar_routines(potential):
    p = ThermoParams(1.0)
    tab = ThermoTable(p, potential, n_nodes=512)
    taus = np.linspace(-3, 3, 13)
    assert np.allclose(tab.ell(taus), [ell(t, p, potential) for t in taus], atol=1e-11)
    assert np.allclose(tab.ell_prime(taus), [ell_prime(t, p, potential) for t in taus], atol=1e-10)
    rs = tab.ell(taus)
    assert np.allclose(tab.tension(rs), taus, atol=1e-10)
    # outside the table the scalar routines take over
    assert tab.ell(5.0) == pytest.approx(ell(5.0, p, potential), abs=1e-10)


def test_table_free_energy_derivative_is_tension():
    tab = thermo_table(ThermoParams(1.0), cosine(0.5))
    r = np.linspace(-2, 2, 17)
    h = 1e-5
    d = (tab.free_energy(r + h) - tab.free_energy(r - h)) / (2 * h)
    assert np.allclose(d, tab.tension(r), atol=1e-8)
    assert tab.free_energy(0.0) == 0.0


def test_bregman_forms_agree():
    tab = thermo_table(ThermoParams(1.0), cosine(0.5))
    r = np.linspace(-1, 2, 7)
    b1 = tab.bregman(r, 0.7)
    direct = tab.free_energy(r) - 0.7 * r + tab.gibbs_hat(0.7)
    assert np.allclose(b1, direct, atol=1e-10)
    assert np.allclose(tab.bregman_divergence(r, tab.ell(0.7)), b1, atol=1e-10)


def test_tabulate_rows_are_consistent():
    rows = tabulate([-1.0, 0.0, 1.0], ThermoParams(1.0), harmonic())
    for tau, r, f, g, u, s in rows:
        assert g == pytest.approx(tau * r - f, abs=1e-14)
        assert s == pytest.approx(u - f, abs=1e-14)
        assert u == pytest.approx(1 + tau**2 / 2, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(tau=st.floats(-3, 3), beta=st.sampled_from(BETAS))
def test_duality_property(tau, beta):
    p, c = ThermoParams(beta), cosine(0.5)
    tab = thermo_table(p, c)
    assert abs(float(tab.tension(tab.ell(tau))) - tau) < 1e-9


@settings(max_examples=30, deadline=None)
@given(t1=st.floats(-3, 3), t2=st.floats(-3, 3))
def test_elongation_is_increasing(t1, t2):
    tab = thermo_table(ThermoParams(1.0), cosine(0.5))
    if t1 < t2:
        assert tab.ell(t1) < tab.ell(t2)
    # c_minus / beta <= ... : ell' lies between 1/c_plus and 1/c_minus times beta Var bounds
    assert 1.0 / 1.5 - 1e-9 <= tab.ell_prime(t1) <= 1.0 / 0.5 + 1e-9


@settings(max_examples=30, deadline=None)
@given(tau=st.floats(-2, 2), r=st.floats(-3, 3))
def test_fenchel_inequality(tau, r):
    # Ghat is the Legendre transform of the convex F
    tab = thermo_table(ThermoParams(1.0), cosine(0.5))
    assert tab.gibbs_hat(tau) >= tau * r - tab.free_energy(r) - 1e-10
    assert tab.bregman(r, tau) >= -1e-12
