import math
from dataclasses import replace

import numpy as np
import pytest

from hydrochain.experiments import (AGGREGATE_HEADER, clausius_experiment, clausius_sweep,
                                    first_law_experiment, fit_log_decay, limit_check, macro_pairing,
                                    mean_se, one_block_experiment, relaxation_experiment,
                                    riemann_pairing, run_ensemble, stationarity_check)
from hydrochain.experiments import test_function as named_function
from hydrochain.chain import ChainState
from hydrochain.macro import MacroState, PDEConfig, equilibrium_state, integrate
from hydrochain.micro import Integrator, SimConfig
from hydrochain.protocol import TensionProtocol
from hydrochain.sampler import RngStream
from hydrochain.thermo import ThermoParams, cosine, harmonic


def test_mean_se():
    m, s = mean_se([1.0, 2.0, 3.0, 4.0])
    assert m == 2.5
    assert s == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    m, s = mean_se([[1.0, 2.0], [3.0, 6.0]])
    assert np.allclose(m, [2.0, 4.0])


def test_test_functions():
    x = np.array([0.25, 0.5])
    assert np.allclose(named_function("1")(x), 1.0)
    assert np.allclose(named_function("x")(x), x)
    assert np.allclose(named_function("sin(pi x)")(x), np.sin(np.pi * x))
    with pytest.raises(ValueError):
        named_function("cos")


def test_ensemble_independent_of_worker_count():
    cfg = SimConfig(16, 1.0, 1.0, 1.0, TensionProtocol(0.0, 1.0, 0.05), cosine(0.5))
    a = run_ensemble(cfg, 4, 0.01, [0.005], seed=3, test_functions=["x"], workers=1)
    b = run_ensemble(cfg, 4, 0.01, [0.005], seed=3, test_functions=["x"], workers=2)
    for name in ("energy", "length", "work", "heat", "momentum", "pairings", "final_r"):
        assert np.array_equal(getattr(a, name), getattr(b, name)), name
    assert a.pairings.shape == (4, 3, 1, 2)
    rows = a.aggregate_rows()
    assert len(rows) == 3 and len(rows[0]) == len(AGGREGATE_HEADER)


def test_ensemble_realizations_differ():
    cfg = SimConfig(16, 1.0, 1.0, 1.0, TensionProtocol.constant(0.5), harmonic())
    ens = run_ensemble(cfg, 3, 0.005, seed=1)
    assert not np.allclose(ens.energy[0], ens.energy[1])
    with pytest.raises(ValueError):
        run_ensemble(cfg, 0, 0.01)


def test_stationarity_at_constant_tension():
    cfg = SimConfig(32, 1.0, 1.0, 1.0, TensionProtocol.constant(1.0), harmonic())
    cfg = replace(cfg, dt=cfg.dt_bound / 16)
    rep = stationarity_check(cfg, 20, [0.02, 0.05], seed=4)
    assert rep.passed, rep
    assert set(rep.observables) == {"length", "energy", "momentum"}


def test_pairings_of_uniform_state():
    cfg = PDEConfig(32, 1.0, 1.0, TensionProtocol.constant(0.6), ThermoParams(1.0), harmonic())
    s = equilibrium_state(cfg)
    r, p = macro_pairing(s, cfg, named_function("1"))
    assert r == pytest.approx(0.6, abs=1e-12) and p == 0.0
    r, p = riemann_pairing(s, cfg, named_function("1"), 50)
    assert r == pytest.approx(0.6, abs=1e-12) and p == 0.0
    # a linear profile is paired exactly by the midpoint rule
    lin = MacroState(cfg.grid.x.copy(), np.zeros(32))
    assert macro_pairing(lin, cfg, named_function("1"))[0] == pytest.approx(0.5, abs=1e-14)


def test_limit_check_structure():
    rep = limit_check([8, 16], 4, [0.02], ["1", "x"], seed=2)
    assert rep.macro_m == 32
    assert len(rep.entries) == 4 and len(rep.work) == 2
    e = rep.entry(16, "x", 0.02)
    assert e.realizations == 4 and e.se > 0 and e.grid_budget >= 0
    assert e.error == pytest.approx(math.hypot(e.micro_r - e.macro_r, e.micro_p - e.macro_p))
    assert len(rep.checks) == 2
    with pytest.raises(KeyError):
        rep.entry(32, "x", 0.02)


def test_clausius_null_transformation():
    rep, traj = clausius_experiment(tau0=0.5, tau1=0.5, m=32, t_end=1.0)
    assert rep.delta_F == 0.0 and rep.delta_U == 0.0
    assert abs(rep.work) < 1e-14 and abs(rep.dissipated) < 1e-14
    assert rep.relaxed


def test_clausius_ramp_harmonic():
    rep, traj = clausius_experiment(t_star=1.0, m=32)
    assert rep.gap > 0 and rep.relaxed
    assert rep.identity_error < 1e-6
    assert rep.delta_F == pytest.approx(0.5, abs=1e-10)
    assert rep.delta_U == pytest.approx(0.5, abs=1e-10)
    # the entropy balance margin is beta times the gap
    assert rep.second_law_margin(1.0) == pytest.approx(rep.gap, abs=1e-12)
    assert abs(rep.first_law_error) < 1e-15


def test_clausius_gap_shrinks_with_slower_ramps():
    reports, decreasing = clausius_sweep([1.0, 4.0], m=32)
    assert decreasing
    assert reports[1].gap < reports[0].gap


def test_fit_log_decay_recovers_exponential():
    t = np.linspace(0, 10, 101)
    v = 3.0 * np.exp(-2.0 * t)
    slope, icept, r2, n, trunc = fit_log_decay(t, v, 1.0, 10.0, 1e-20)
    assert slope == pytest.approx(-2.0, abs=1e-12)
    assert icept == pytest.approx(math.log(3.0), abs=1e-12)
    assert r2 == pytest.approx(1.0, abs=1e-14) and n == 91 and not trunc
    slope, _, _, n, trunc = fit_log_decay(t, v, 1.0, 10.0, 1e-6)
    assert trunc and n < 91 and slope == pytest.approx(-2.0, abs=1e-12)
    assert math.isnan(fit_log_decay(t, np.zeros_like(t), 0, 10, 1e-20)[0])


def test_relaxation_at_equilibrium_is_identically_zero():
    rep, _ = relaxation_experiment(tau0=1.0, tau1=1.0, m=16, sample_dt=1.0)
    assert all(v == 0.0 for v in rep.values)
    assert math.isnan(rep.slope)


@pytest.mark.parametrize("delta", [0.5, 1.0])
def test_relaxation_rate_matches_slowest_mode(delta):
    # with equal viscosities the slowest mode k = pi/2 has eigenvalues
    # -delta k^2 +- i k, so the quadratic functional decays at 2 delta k^2
    rep, _ = relaxation_experiment(m=64, delta1=delta, delta2=delta)
    assert rep.r_squared > 0.999
    assert rep.slope == pytest.approx(-2 * delta * (math.pi / 2) ** 2, rel=0.02)
    assert rep.nonincreasing


def test_first_law_experiment_small():
    cfg = SimConfig(16, 1.0, 1.0, 1.0, TensionProtocol(0.0, 1.0, 0.05), harmonic())
    rep, ens = first_law_experiment(cfg, 6, 0.05, seed=5)
    assert rep.realizations == 6
    # the pathwise residual is Euler-Maruyama error, O(dt) but large at the bound
    assert rep.pathwise_residual_max == pytest.approx(np.max(np.abs(ens.first_law_residual)))
    assert rep.macro.gap > 0
    assert rep.work_N_se > 0 and math.isfinite(rep.work_z)
    assert ens.energy.shape[0] == 6


def test_one_block_harmonic_is_zero():
    cfg = SimConfig(64, 1.0, 1.0, 1.0, TensionProtocol.constant(1.0), harmonic())
    rep, _ = one_block_experiment(cfg, 2, 0.002, ks=(1, 2, 4), l=0.2, seed=6)
    assert rep.nonincreasing
    assert max(rep.means) < 1e-18


def test_harmonic_mean_dynamics_converge_at_first_order():
    # for the harmonic chain the ensemble mean obeys the noise-free recursion,
    # so a nearly noiseless run (huge beta) gives the exact mean pairing and
    # isolates the discretisation error of the limit from Monte Carlo noise
    prot = TensionProtocol(0.0, 1.0, 1.0)
    pc = PDEConfig(512, 1.0, 1.0, prot, ThermoParams(1.0), harmonic())
    ref = integrate(equilibrium_state(pc), pc, 0.5).final
    errs = []
    for n in (32, 64, 128):
        cfg = SimConfig(n, 1e12, 1.0, 1.0, prot, harmonic())
        steps = int(math.ceil(0.5 / cfg.dt))
        cfg = replace(cfg, dt=0.5 / steps)
        start = ChainState(np.zeros(n), np.zeros(n), 0.0)
        out = Integrator(cfg, RngStream(1).generator()).advance(start, steps)
        x = np.arange(1, n + 1) / n
        row = []
        for j in ("1", "x", "sin(pi x)"):
            J = named_function(j)(x)
            mr, mp = macro_pairing(ref, pc, named_function(j))
            row.append(math.hypot(np.mean(J * out.r) - mr, np.mean(J * out.p) - mp))
        errs.append(row)
    errs = np.array(errs)
    orders = np.log2(errs[:-1] / errs[1:])
    assert np.all((orders > 0.8) & (orders < 1.3)), (errs, orders)
