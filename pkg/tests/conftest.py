import math

import numpy as np
import pytest
from scipy import special

from hydrochain.thermo import ThermoParams, cosine, harmonic

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def record():
    def _record(number, passed, detail):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
    return _record


POTENTIALS = {"harmonic": harmonic(), "cosine": cosine(0.5)}


@pytest.fixture(params=sorted(POTENTIALS))
def potential(request):
    return POTENTIALS[request.param]


# ---------------------------------------------------------------------------
# independent oracles for the cosine family V = r^2/2 + a (1 - cos r)
#
# Jacobi-Anger, exp(z cos r) = I_0(z) + 2 sum_k I_k(z) cos(k r), turns the
# partition function into a Gaussian series:
#   Z = e^{-b a} sqrt(2 pi / b) e^{b tau^2 / 2} S(tau),
#   S = I_0(b a) + 2 sum_k I_k(b a) cos(k tau) e^{-k^2 / (2 b)}.


def _series(tau, beta, a, kmax=60):
    k = np.arange(1, kmax + 1)
    ik = special.iv(k, beta * a)
    damp = np.exp(-k**2 / (2 * beta))
    s = special.iv(0, beta * a) + 2 * np.sum(ik * np.cos(k * tau) * damp)
    ds = -2 * np.sum(k * ik * np.sin(k * tau) * damp)
    d2s = -2 * np.sum(k**2 * ik * np.cos(k * tau) * damp)
    return s, ds, d2s


def oracle_log_z(tau, beta, a):
    s, _, _ = _series(tau, beta, a)
    return -beta * a + 0.5 * math.log(2 * math.pi / beta) + 0.5 * beta * tau**2 + math.log(s)


def oracle_ell(tau, beta, a):
    s, ds, _ = _series(tau, beta, a)
    return tau + ds / (beta * s)


def oracle_ell_prime(tau, beta, a):
    s, ds, d2s = _series(tau, beta, a)
    return 1.0 + (d2s / s - (ds / s) ** 2) / beta


def oracle_internal_energy(tau, beta, a):
    """1/(2 beta) + <r^2>/2 + a (1 - <cos r>), with <cos r> = S_z / S."""
    k = np.arange(1, 61)
    damp = np.exp(-k**2 / (2 * beta))
    s, _, _ = _series(tau, beta, a)
    s_z = special.ivp(0, beta * a) + 2 * np.sum(special.ivp(k, beta * a) * np.cos(k * tau) * damp)
    mean = oracle_ell(tau, beta, a)
    second = oracle_ell_prime(tau, beta, a) / beta + mean**2
    return 0.5 / beta + 0.5 * second + a * (1.0 - s_z / s)


# sampler oracle


def quadrature_cdf(tau, beta, potential, lo=-12.0, hi=14.0, cells=4000):
    """CDF of exp(beta tau r - beta V(r)) by cellwise Gauss-Legendre, normalized."""
    edges = np.linspace(lo, hi, cells + 1)
    x, w = np.polynomial.legendre.leggauss(10)
    mid, half = 0.5 * (edges[1:] + edges[:-1]), 0.5 * np.diff(edges)
    pts = mid[:, None] + half[:, None] * x[None, :]
    logd = beta * (tau * pts - potential.V(pts))
    dens = np.exp(logd - logd.max())
    mass = (dens * w[None, :]).sum(axis=1) * half
    cum = np.concatenate([[0.0], np.cumsum(mass)])
    cum /= cum[-1]
    return lambda r: np.interp(r, edges, cum)


def ks_critical_1pct(n):
    return 1.628 / math.sqrt(n)
