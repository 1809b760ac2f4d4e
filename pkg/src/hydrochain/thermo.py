"""Equilibrium thermodynamics of a single spring.

Everything here follows from the tilted one-site density

    rho(r) ~ exp(beta * tau * r - beta * V(r))

whose log-normalisation generates the elongation ell(tau) and its
derivatives.  The free energy F(r) is the integral of the inverse map
tau(r) = ell^{-1}(r), and the Legendre transform of F gives back a
Gibbs potential in the tension variable.

Scalar routines use adaptive quadrature (scipy.integrate.quad) and are
meant to be exact to ~1e-10.  ThermoTable caches the same maps on a
Chebyshev grid for the hot loops of the PDE solver and the particle
simulation.
"""

from __future__ import annotations

import functools
import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline

# half-width of the quadrature window, in units of 1/sqrt(beta * c_minus)
WINDOW = 12.0


@dataclass(frozen=True)
class PotentialModel:
    """Strongly convex nearest-neighbour interaction.

    ``cos_amplitude`` is set for members of the family
    V(r) = r^2/2 + a (1 - cos r); the compiled particle and PDE kernels
    only understand this family.
    """

    name: str
    V: Callable = field(compare=False, repr=False)
    dV: Callable = field(compare=False, repr=False)
    d2V: Callable = field(compare=False, repr=False)
    c_minus: float
    c_plus: float
    cos_amplitude: float | None = None

    def __reduce__(self):
        # the callables are closures; rebuild from the config string instead
        if self.cos_amplitude is None:
            raise TypeError(f"potential {self.name!r} cannot be pickled")
        return (parse_potential, (self.name,))


@dataclass(frozen=True)
class ThermoParams:
    beta: float = 1.0

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be positive, got {self.beta!r}")


def harmonic() -> PotentialModel:
    return cosine(0.0)


def cosine(a: float = 0.5) -> PotentialModel:
    """V(r) = r^2/2 + a (1 - cos r), convex for 0 <= a < 1."""
    a = float(a)
    if not 0.0 <= a < 1.0:
        raise ValueError(f"cosine amplitude must lie in [0, 1), got {a}")
    if a == 0.0:
        return PotentialModel(
            name="harmonic",
            V=lambda r: 0.5 * np.square(r),
            dV=lambda r: np.asarray(r, dtype=float) * 1.0,
            d2V=lambda r: np.ones_like(np.asarray(r, dtype=float)),
            c_minus=1.0,
            c_plus=1.0,
            cos_amplitude=0.0,
        )
    return PotentialModel(
        name=f"cosine:a={a!r}",
        V=lambda r: 0.5 * np.square(r) + a * (1.0 - np.cos(r)),
        dV=lambda r: r + a * np.sin(r),
        d2V=lambda r: 1.0 + a * np.cos(r),
        c_minus=1.0 - a,
        c_plus=1.0 + a,
        cos_amplitude=a,
    )


_COSINE_SPEC = re.compile(r"^cosine(?::a=(?P<a>[-+0-9.eE]+))?$")


def parse_potential(spec: str) -> PotentialModel:
    """Build a potential from its config string ("harmonic", "cosine:a=0.5")."""
    spec = spec.strip()
    if spec == "harmonic":
        return harmonic()
    match = _COSINE_SPEC.match(spec)
    if match is None:
        raise ValueError(f"unknown potential {spec!r}; expected 'harmonic' or 'cosine:a=<value>'")
    a = match.group("a")
    return cosine(0.5 if a is None else float(a))


# ---------------------------------------------------------------------------
# scalar quadrature routines


def mode(tau: float, potential: PotentialModel) -> float:
    """Solve V'(m) = tau (the argmax of tau r - V(r))."""
    lo = (tau - potential.dV(0.0)) / potential.c_plus
    hi = (tau - potential.dV(0.0)) / potential.c_minus
    lo, hi = min(lo, hi), max(lo, hi)
    m = 0.5 * (lo + hi)
    for _ in range(100):
        g = float(potential.dV(m)) - tau
        if g > 0:
            hi = min(hi, m)
        else:
            lo = max(lo, m)
        step = g / float(potential.d2V(m))
        m_new = m - step
        if not lo <= m_new <= hi:
            m_new = 0.5 * (lo + hi)
        if abs(m_new - m) <= 1e-15 * max(1.0, abs(m)):
            return m_new
        m = m_new
    if abs(float(potential.dV(m)) - tau) < 1e-10 * max(1.0, abs(tau)):
        return m
    raise ArithmeticError(f"mode search did not converge for tau={tau}")


def _window(tau, beta, potential):
    m = mode(tau, potential)
    half = WINDOW / math.sqrt(beta * potential.c_minus)
    return m, m - half, m + half


def _tilted_moment(tau, beta, potential, fn):
    """Return (int w fn, int w) with w = exp(beta[tau x - V(m+x) + V(m)]), x = r - m."""
    m, a, b = _window(tau, beta, potential)
    vm = float(potential.V(m))

    def weight(r):
        return math.exp(beta * (tau * (r - m) - float(potential.V(r)) + vm))

    opts = dict(epsabs=1e-14, epsrel=1e-12, limit=200)

    def both_sides(g):
        # splitting at the mode keeps odd integrands from cancelling inside one quad call
        return integrate.quad(g, a, m, **opts)[0] + integrate.quad(g, m, b, **opts)[0]

    num = both_sides(lambda r: weight(r) * fn(r - m, r))
    den = both_sides(weight)
    return num, den, m


def log_partition_z(tau: float, params: ThermoParams, potential: PotentialModel) -> float:
    beta = params.beta
    _, den, m = _tilted_moment(tau, beta, potential, lambda x, r: 1.0)
    return beta * (tau * m - float(potential.V(m))) + math.log(den)


def partition_z(tau: float, params: ThermoParams, potential: PotentialModel) -> float:
    """Z(tau, beta) = int exp(beta tau r - beta V(r)) dr."""
    return math.exp(log_partition_z(tau, params, potential))


def gibbs_potential(tau: float, pbar: float, params: ThermoParams, potential: PotentialModel) -> float:
    # the momentum integral contributes log sqrt(2 pi / beta)
    beta = params.beta
    return 0.5 * math.log(2 * math.pi / beta) + 0.5 * beta * pbar**2 + log_partition_z(tau, params, potential)


def ell(tau: float, params: ThermoParams, potential: PotentialModel) -> float:
    """Mean elongation <r> under the tilted measure."""
    num, den, m = _tilted_moment(tau, params.beta, potential, lambda x, r: x)
    return m + num / den


def ell_prime(tau: float, params: ThermoParams, potential: PotentialModel) -> float:
    """d ell / d tau = beta Var(r)."""
    beta = params.beta
    mean = ell(tau, params, potential)
    num, den, _ = _tilted_moment(tau, beta, potential, lambda x, r: (r - mean) ** 2)
    return beta * num / den


def tension(r: float, params: ThermoParams, potential: PotentialModel) -> float:
    """Invert ell: bracket, bisect to width 1e-3, then Newton."""
    r = float(r)
    guess = float(potential.dV(r))
    lo, hi = guess - 1.0, guess + 1.0
    for _ in range(200):
        if ell(lo, params, potential) <= r:
            break
        lo -= hi - lo
    else:
        raise ArithmeticError(f"could not bracket tension for r={r}")
    for _ in range(200):
        if ell(hi, params, potential) >= r:
            break
        hi += hi - lo
    else:
        raise ArithmeticError(f"could not bracket tension for r={r}")

    while hi - lo > 1e-3:
        mid = 0.5 * (lo + hi)
        if ell(mid, params, potential) < r:
            lo = mid
        else:
            hi = mid

    # safeguarded Newton: the root may sit on a bracket end, so allow a sliver outside
    tau = 0.5 * (lo + hi)
    slack = 1e-9 * (1.0 + abs(lo) + abs(hi))
    for _ in range(60):
        f = ell(tau, params, potential) - r
        if f < 0:
            lo = max(lo, tau)
        else:
            hi = min(hi, tau)
        step = f / ell_prime(tau, params, potential)
        tau_new = tau - step
        if not lo - slack <= tau_new <= hi + slack:
            tau = 0.5 * (lo + hi)
            continue
        if abs(step) < 1e-13 * (1.0 + abs(tau)):
            return tau_new
        tau = tau_new
    return tau


def tension_prime(r: float, params: ThermoParams, potential: PotentialModel) -> float:
    return 1.0 / ell_prime(tension(r, params, potential), params, potential)


def internal_energy(tau: float, params: ThermoParams, potential: PotentialModel) -> float:
    """U = 1/(2 beta) + <V(r)> at zero mean momentum."""
    num, den, _ = _tilted_moment(tau, params.beta, potential, lambda x, r: float(potential.V(r)))
    return 0.5 / params.beta + num / den


def free_energy(r: float, params: ThermoParams, potential: PotentialModel) -> float:
    """F(r) = int_0^r tau(xi) d xi."""
    return float(thermo_table(params, potential).free_energy(r))


def gibbs_hat(tau: float, params: ThermoParams, potential: PotentialModel) -> float:
    """Legendre transform of F: tau ell(tau) - F(ell(tau))."""
    r = ell(tau, params, potential)
    return tau * r - free_energy(r, params, potential)


def thermo_entropy(tau: float, params: ThermoParams, potential: PotentialModel) -> float:
    u = internal_energy(tau, params, potential)
    f = free_energy(ell(tau, params, potential), params, potential)
    return params.beta * (u - f)


# ---------------------------------------------------------------------------
# cached table


def _gauss_moments(taus, beta, potential, order=256):
    """Vectorised tilted moments on a fixed Gauss-Legendre rule.

    Returns ell, ell', ell'' and <V> at every tension in ``taus``.
    """
    nodes, weights = np.polynomial.legendre.leggauss(order)
    half = WINDOW / math.sqrt(beta * potential.c_minus)
    modes = np.array([mode(float(t), potential) for t in taus])
    x = half * nodes[None, :]
    r = modes[:, None] + x
    expo = beta * (taus[:, None] * x - potential.V(r) + potential.V(modes)[:, None])
    w = weights[None, :] * np.exp(expo)
    z = w.sum(axis=1)
    mean_x = (w * x).sum(axis=1) / z
    dx = x - mean_x[:, None]
    k2 = (w * dx**2).sum(axis=1) / z
    k3 = (w * dx**3).sum(axis=1) / z
    mean_v = (w * potential.V(r)).sum(axis=1) / z
    return modes + mean_x, beta * k2, beta**2 * k3, mean_v


class ThermoTable:
    """Tension/elongation duality sampled on Chebyshev nodes in tau.

    ell and ell' are piecewise cubic Hermite interpolants in tau (slopes
    ell' and ell'' come from the second and third cumulants); tau(r) is
    the Hermite interpolant through the swapped nodes (ell_k, tau_k) with
    slopes 1/ell'_k.  The free energy is the exact antiderivative of that
    interpolant, so F' equals the tabulated tension to rounding.
    Arguments outside the table fall back to the scalar routines.
    """

    def __init__(self, params: ThermoParams, potential: PotentialModel,
                 tau_lo: float = -4.0, tau_hi: float = 4.0, n_nodes: int = 2048):
        self.params = params
        self.potential = potential
        self.tau_lo, self.tau_hi = float(tau_lo), float(tau_hi)
        k = np.arange(n_nodes)
        cheb = np.cos(np.pi * (2 * k + 1) / (2 * n_nodes))[::-1]
        mid, half = 0.5 * (tau_hi + tau_lo), 0.5 * (tau_hi - tau_lo)
        # include the endpoints so the table covers the full domain
        taus = np.concatenate([[tau_lo], mid + half * cheb, [tau_hi]])
        ells, ellp, ellpp, mean_v = _gauss_moments(taus, params.beta, potential)
        if np.any(np.diff(ells) <= 0):
            raise ArithmeticError("tabulated elongation is not strictly increasing")

        self.tau_nodes = taus
        self.ell_nodes = ells
        self.ell_prime_nodes = ellp
        self.ell_second_nodes = ellpp
        self.mean_v_nodes = mean_v
        self.r_lo, self.r_hi = float(ells[0]), float(ells[-1])

        self._ell = CubicHermiteSpline(taus, ells, ellp, extrapolate=False)
        self._ell_prime = CubicHermiteSpline(taus, ellp, ellpp, extrapolate=False)
        self._tension = CubicHermiteSpline(ells, taus, 1.0 / ellp, extrapolate=False)
        self._antider = self._tension.antiderivative()
        self._f_offset = 0.0
        if self.r_lo < 0.0 < self.r_hi:
            self._f_offset = float(self._antider(0.0))

    # each map: interpolate inside the table, scalar quadrature outside
    def _eval(self, spline, x, lo, hi, fallback):
        x = np.asarray(x, dtype=float)
        out = np.asarray(spline(x), dtype=float)
        outside = (x < lo) | (x > hi)
        if np.any(outside):
            out = np.array(out, copy=True)
            out[outside] = [fallback(float(v)) for v in np.atleast_1d(x[outside])]
        return out[()] if out.ndim == 0 else out

    def ell(self, tau):
        return self._eval(self._ell, tau, self.tau_lo, self.tau_hi,
                          lambda t: ell(t, self.params, self.potential))

    def ell_prime(self, tau):
        return self._eval(self._ell_prime, tau, self.tau_lo, self.tau_hi,
                          lambda t: ell_prime(t, self.params, self.potential))

    def tension(self, r):
        return self._eval(self._tension, r, self.r_lo, self.r_hi,
                          lambda v: tension(v, self.params, self.potential))

    def tension_prime(self, r):
        return 1.0 / self.ell_prime(self.tension(r))

    def free_energy(self, r):
        r = np.asarray(r, dtype=float)
        if not self.r_lo < 0.0 < self.r_hi:
            out = np.vectorize(self._free_energy_direct, otypes=[float])(r)
            return out[()] if out.ndim == 0 else out
        return self._eval(lambda v: np.asarray(self._antider(v)) - self._f_offset,
                          r, self.r_lo, self.r_hi, self._free_energy_direct)

    def _free_energy_direct(self, r):
        nodes, weights = np.polynomial.legendre.leggauss(64)
        xi = 0.5 * r * (nodes + 1.0)
        vals = self.tension(xi)
        return float(0.5 * r * np.dot(weights, vals))

    def bregman(self, r, tau):
        """F(r) - tau r + Ghat(tau) >= 0, evaluated without cancellation.

        Equal to int_{ell(tau)}^{r} (tension(xi) - tau) d xi; a 6-point
        Gauss-Legendre rule is exact for the cubic pieces up to the
        kink positions, which is ample for a diagnostic.
        """
        r = np.asarray(r, dtype=float)
        r0 = float(self.ell(tau))
        nodes, weights = np.polynomial.legendre.leggauss(6)
        half = 0.5 * (r - r0)
        xi = r0 + half[..., None] * (nodes + 1.0)
        vals = self.tension(xi.ravel()).reshape(xi.shape) - tau
        return half * (vals @ weights)

    def bregman_divergence(self, r, r0):
        """F(r) - F(r0) - tension(r0) (r - r0) >= 0 by quadrature of tension."""
        r = np.asarray(r, dtype=float)
        slope = float(self.tension(r0))
        nodes, weights = np.polynomial.legendre.leggauss(6)
        half = 0.5 * (r - r0)
        xi = r0 + half[..., None] * (nodes + 1.0)
        vals = self.tension(xi.ravel()).reshape(xi.shape) - slope
        return half * (vals @ weights)

    def gibbs_hat(self, tau):
        r = self.ell(tau)
        return tau * r - self.free_energy(r)

    def internal_energy(self, tau):
        return np.vectorize(lambda t: internal_energy(t, self.params, self.potential))(tau)

    def entropy(self, tau):
        return self.params.beta * (self.internal_energy(tau) - self.free_energy(self.ell(tau)))

    def kernel_arrays(self):
        """Node arrays for the compiled kernels: (tau, ell, ell', ell'')."""
        return (self.tau_nodes, self.ell_nodes, self.ell_prime_nodes, self.ell_second_nodes)


@functools.lru_cache(maxsize=16)
def thermo_table(params: ThermoParams, potential: PotentialModel) -> ThermoTable:
    return ThermoTable(params, potential)


def tabulate(taus, params: ThermoParams, potential: PotentialModel):
    """Rows (tau, ell, F, Ghat, U, S) at each tension, all by direct quadrature."""
    rows = []
    table = thermo_table(params, potential)
    for t in taus:
        t = float(t)
        r = ell(t, params, potential)
        f = float(table.free_energy(r))
        u = internal_energy(t, params, potential)
        rows.append((t, r, f, t * r - f, u, params.beta * (u - f)))
    return rows
