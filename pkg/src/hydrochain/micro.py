"""Euler-Maruyama integration of the stochastic anharmonic chain.

Indices in comments are 1-based as in the physics (sites 1..N); the
arrays are 0-based.  Position noise uses N increments xi~_1..xi~_N and
momentum noise uses xi_0..xi_{N-1}; each increment enters the two
adjacent rows with opposite signs, so the bulk noise conserves total
length and momentum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numba
import numpy as np

from .chain import ChainState, ThermoLedger
from .protocol import TensionProtocol, smoothstep_tension
from .sampler import DYNAMICS_STREAM, INIT_STREAM, RngStream, sample_chain
from .thermo import PotentialModel, ThermoParams, thermo_table


def stability_bound(n: int, delta1: float, delta2: float, c_plus: float) -> float:
    return 0.2 / (n * n * max(delta1 * c_plus, delta2, 1.0 / n))


@dataclass(frozen=True)
class SimConfig:
    n: int
    beta: float
    delta1: float
    delta2: float
    protocol: TensionProtocol
    potential: PotentialModel
    dt: float | None = None

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"a chain needs at least 3 sites, got n={self.n}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.delta1 < 0 or self.delta2 < 0:
            raise ValueError("viscosities must be nonnegative")
        if self.potential.cos_amplitude is None:
            raise ValueError(f"potential {self.potential.name!r} has no compiled kernel")
        bound = self.dt_bound
        if self.dt is None:
            object.__setattr__(self, "dt", bound)
        elif not 0 < self.dt <= bound * (1 + 1e-12):
            raise ValueError(f"dt={self.dt:g} violates the stability bound {bound:g}")

    @property
    def dt_bound(self) -> float:
        return stability_bound(self.n, self.delta1, self.delta2, self.potential.c_plus)

    @property
    def params(self) -> ThermoParams:
        return ThermoParams(self.beta)


# ---------------------------------------------------------------------------
# observables


def energy_n(state: ChainState, potential: PotentialModel) -> float:
    """E_N = (1/N) sum (p_i^2 / 2 + V(r_i))."""
    return float(np.mean(0.5 * state.p**2 + potential.V(state.r)))


def length_n(state: ChainState) -> float:
    return float(np.mean(state.r))


def empirical_pairing(state: ChainState, J: Callable) -> tuple[float, float]:
    """((1/N) sum J(i/N) r_i, (1/N) sum J(i/N) p_i)."""
    n = state.n
    w = np.broadcast_to(np.asarray(J(np.arange(1, n + 1) / n), dtype=float), (n,))
    return float(np.dot(w, state.r) / n), float(np.dot(w, state.p) / n)


def drift(state: ChainState, t: float, cfg: SimConfig):
    """Deterministic parts of dr_i/dt and dp_i/dt."""
    n = state.n
    r, p = state.r, state.p
    tb = float(cfg.protocol(t))
    vp = cfg.potential.dV(r)
    d1, d2 = cfg.delta1 * n * n, cfg.delta2 * n * n

    # V' with ghosts V'_0 = V'_1 (Neumann) and V'_{N+1} = tau(t)
    vg = np.concatenate([[vp[0]], vp, [tb]])
    dr = n * np.diff(np.concatenate([[0.0], p])) + d1 * (vg[2:] + vg[:-2] - 2 * vg[1:-1])

    # p with ghosts p_0 = 0 and p_{N+1} = p_N
    pg = np.concatenate([[0.0], p, [p[-1]]])
    vn = np.append(vp[1:], tb)
    dp = n * (vn - vp) + d2 * (pg[2:] + pg[:-2] - 2 * pg[1:-1])
    return dr, dp


# ---------------------------------------------------------------------------
# compiled integrator


@numba.njit(cache=True)
def _kahan_add(acc, i, value):
    y = value - acc[i + 1]
    s = acc[i] + y
    acc[i + 1] = (s - acc[i]) - y
    acc[i] = s


@numba.njit(cache=True)
def _em_advance(r, p, t, dt, n_steps, beta, delta1, delta2, a,
                tau0, tau1, t_star, rng, acc, vp, xt, xw):
    """Advance (r, p) in place by n_steps Euler-Maruyama steps.

    acc holds Kahan pairs (work, c, heat, c).  Returns the new time.
    Per step, n draws for the position noise are taken before n draws
    for the momentum noise.
    """
    n = r.size
    nf = float(n)
    sd = math.sqrt(dt)
    sa = math.sqrt(2.0 * delta1 / beta)
    sb = math.sqrt(2.0 * delta2 / beta)
    c1 = delta1 * nf * nf
    c2 = delta2 * nf * nf
    t0 = t
    for step_no in range(n_steps):
        t = t0 + step_no * dt
        tb = smoothstep_tension(t, tau0, tau1, t_star)
        tb_mid = smoothstep_tension(t + 0.5 * dt, tau0, tau1, t_star)
        length_old = 0.0
        svpp = 0.0
        if a == 0.0:
            for i in range(n):
                vp[i] = r[i]
                length_old += r[i]
            svpp = 2.0 * nf - 1.0
        else:
            for i in range(n):
                ri = r[i]
                vp[i] = ri + a * math.sin(ri)
                vpp = 1.0 + a * math.cos(ri)
                svpp += vpp if i == 0 else 2.0 * vpp
                length_old += ri
        for i in range(n):
            xt[i] = rng.standard_normal() * sd
        for i in range(n):
            xw[i] = rng.standard_normal() * sd

        # heat: Ito rates at the left point, then the martingale parts
        sp = p[0] * p[0]
        q_noise = sb * p[0] * xw[0]
        for i in range(1, n):
            dpi = p[i] - p[i - 1]
            sp += dpi * dpi
            q_noise += sb * dpi * xw[i]
        sv = 0.0
        for i in range(n - 1):
            dvi = vp[i + 1] - vp[i]
            sv += dvi * dvi
            q_noise += sa * dvi * xt[i]
        edge = tb - vp[n - 1]
        q_noise += sa * edge * xt[n - 1]
        q_rate = (delta2 * nf * (2.0 * nf - 1.0) / beta - nf * delta2 * sp
                  + nf * delta1 * svpp / beta - nf * delta1 * (edge * edge + sv))
        _kahan_add(acc, 2, q_rate * dt + q_noise)

        # state update; p_prev carries the pre-step value of p[i-1]
        p_prev = 0.0
        for i in range(n):
            vl = vp[i - 1] if i > 0 else vp[0]
            vr = vp[i + 1] if i < n - 1 else tb
            pi = p[i]
            if i < n - 1:
                force = vp[i + 1] - vp[i]
                visc_p = c2 * (p[i + 1] + p_prev - 2.0 * pi)
                noise_p = -sb * nf * (xw[i + 1] - xw[i])
            else:
                force = tb - vp[i]
                visc_p = -c2 * (pi - p_prev)
                noise_p = sb * nf * xw[i]
            noise_r = -sa * nf * (xt[i] - xt[i - 1]) if i > 0 else -sa * nf * xt[0]
            r[i] += (nf * (pi - p_prev) + c1 * (vr + vl - 2.0 * vp[i])) * dt + noise_r
            p[i] = pi + (nf * force + visc_p) * dt + noise_p
            p_prev = pi

        length_new = 0.0
        for i in range(n):
            length_new += r[i]
        _kahan_add(acc, 0, tb_mid * (length_new - length_old) / nf)
    return t0 + n_steps * dt


class Integrator:
    """Reusable scratch space for one realization."""

    def __init__(self, cfg: SimConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        n = cfg.n
        self._scratch = (np.empty(n), np.empty(n), np.empty(n))

    def advance(self, state: ChainState, n_steps: int) -> ChainState:
        cfg = self.cfg
        r = np.array(state.r, dtype=float)
        p = np.array(state.p, dtype=float)
        led = state.ledger
        acc = np.array([led.work, 0.0, led.heat_direct, 0.0])
        t = _em_advance(r, p, float(state.t), float(cfg.dt), int(n_steps), float(cfg.beta),
                        float(cfg.delta1), float(cfg.delta2), float(cfg.potential.cos_amplitude),
                        *cfg.protocol.kernel_args(), self.rng, acc, *self._scratch)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(p))):
            raise FloatingPointError(f"non-finite chain state at t={t:g}; reduce dt")
        ledger = replace(led, work=float(acc[0]), heat_direct=float(acc[2]), length=float(np.mean(r)))
        return ChainState(r, p, t, ledger)


def step(state: ChainState, cfg: SimConfig, rng: np.random.Generator) -> ChainState:
    """One Euler-Maruyama step with the ledger carried along."""
    return Integrator(cfg, rng).advance(state, 1)


# ---------------------------------------------------------------------------
# trajectories


def gibbs_start(cfg: SimConfig, stream: RngStream) -> ChainState:
    """Local Gibbs state at tau(0) with zero mean momentum."""
    rng = replace(stream, purpose=INIT_STREAM).generator()
    return sample_chain(cfg.n, float(cfg.protocol(0.0)), 0.0, cfg.params, cfg.potential, rng)


@dataclass
class TrajectorySummary:
    times: np.ndarray
    energy: np.ndarray
    length: np.ndarray
    work: np.ndarray
    heat: np.ndarray
    momentum: np.ndarray
    observations: dict = field(default_factory=dict)
    final: ChainState | None = None

    @property
    def first_law_residual(self) -> np.ndarray:
        """E_N(t) - E_N(0) - W_N(t) - Q_N(t) at every sample time."""
        return self.energy - self.energy[0] - self.work - self.heat

    def rows(self):
        return [(t, e, l, w, q) for t, e, l, w, q in
                zip(self.times, self.energy, self.length, self.work, self.heat)]


def sample_steps(t_end: float, dt_max: float, sample_times: Sequence[float] | None = None):
    """Uniform step dt <= dt_max landing exactly on t_end, and the step
    indices nearest to the requested sample times (always including 0
    and t_end)."""
    n_steps = max(1, math.ceil(t_end / dt_max - 1e-9)) if t_end > 0 else 0
    dt = t_end / n_steps if n_steps else dt_max
    wanted = [0.0, t_end] + ([] if sample_times is None else [float(s) for s in sample_times])
    idx = sorted({min(n_steps, max(0, round(s / dt))) for s in wanted if 0 <= s <= t_end})
    return dt, idx


def run(cfg: SimConfig, stream: RngStream, t_end: float,
        sample_times: Sequence[float] | None = None,
        observers: Mapping[str, Callable[[ChainState], object]] | None = None,
        initial: ChainState | None = None) -> TrajectorySummary:
    """Integrate one realization from the Gibbs start to t_end.

    The step is shrunk (never enlarged) so that t_end is hit exactly;
    observers receive immutable snapshots at the sample steps.
    """
    observers = observers or {}
    dt, idx = sample_steps(t_end, cfg.dt, sample_times)
    if dt != cfg.dt:
        cfg = replace(cfg, dt=dt)
    state = initial if initial is not None else gibbs_start(cfg, stream)
    integ = Integrator(cfg, replace(stream, purpose=DYNAMICS_STREAM).generator())

    rows = []
    obs = {name: [] for name in observers}
    done = 0
    for k in idx:
        if k > done:
            state = integ.advance(state, k - done)
            done = k
        if k == 0:
            # the sampled time is exact at the start
            state = replace(state, t=0.0)
        rows.append((state.t, energy_n(state, cfg.potential), state.ledger.length,
                     state.ledger.work, state.ledger.heat_direct, float(np.mean(state.p))))
        for name, fn in observers.items():
            obs[name].append(fn(state))

    arr = np.array(rows, dtype=float).reshape(-1, 6)
    return TrajectorySummary(times=arr[:, 0], energy=arr[:, 1], length=arr[:, 2],
                             work=arr[:, 3], heat=arr[:, 4], momentum=arr[:, 5],
                             observations=obs, final=state)


# ---------------------------------------------------------------------------
# one-block diagnostic


def one_block_residual(trajectory: Sequence, k: int, l: float,
                       params: ThermoParams, potential: PotentialModel) -> float:
    """Time average of (1/N) sum_{i=[Nl]}^{N-[Nl]} (mean_k V'(r) - tau(mean_k r))^2.

    ``trajectory`` is a sequence of ChainState or r arrays; block means run
    over the 2k+1 sites |j - i| <= k.
    """
    if k < 1:
        raise ValueError("block half-width k must be >= 1")
    table = thermo_table(params, potential)
    kernel = np.full(2 * k + 1, 1.0 / (2 * k + 1))
    vals = []
    for snap in trajectory:
        r = np.asarray(snap.r if isinstance(snap, ChainState) else snap, dtype=float)
        n = r.size
        cut = int(math.floor(n * l))
        if cut < k + 1:
            raise ValueError(f"[N l] = {cut} must be at least k + 1 = {k + 1}")
        # valid-mode block means are centred at sites k+1 .. n-k (1-based)
        vbar = np.convolve(potential.dV(r), kernel, mode="valid")
        rbar = np.convolve(r, kernel, mode="valid")
        lo, hi = cut - (k + 1), n - cut - (k + 1)
        diff = vbar[lo:hi + 1] - table.tension(rbar[lo:hi + 1])
        vals.append(np.sum(diff**2) / n)
    return float(np.mean(vals))
