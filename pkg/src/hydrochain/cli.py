"""Command-line front end.

Configuration is a flat JSON object whose keys mirror the long flags
(``--t-end`` <-> ``t_end``).  Precedence: built-in defaults, then the
``--config`` file, then flags; HYDROCHAIN_SEED overrides the seed.  A
manifest written by a previous run is accepted as a config file.

Exit codes:
  0  success, all invariant bands hold
  1  an invariant band was violated
  2  command-line usage error
  3  unknown configuration key
  4  configuration value of the wrong type or out of range
  5  timestep above a stability bound
  6  output directory cannot be created or written
  7  the experiment failed at run time
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_BANDS = 1
EXIT_USAGE = 2
EXIT_UNKNOWN_KEY = 3
EXIT_TYPE = 4
EXIT_STABILITY = 5
EXIT_OUTPUT = 6
EXIT_RUNTIME = 7

COMMANDS = ("thermo", "micro-run", "pde-run", "limit-check", "clausius",
            "relaxation", "first-law", "one-block")

SEED_ENV = "HYDROCHAIN_SEED"


class ConfigError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _int_list(text):
    return [int(v) for v in _split(text)]


def _float_list(text):
    return [float(v) for v in _split(text)]


def _str_list(text):
    return [v.strip() for v in _split(text)]


def _split(text):
    if isinstance(text, (list, tuple)):
        return list(text)
    return [v for v in str(text).split(",") if v.strip()]


def _tau_range(text):
    parts = str(text).split(":")
    if len(parts) != 3:
        raise ValueError("expected start:stop:step")
    a, b, step = (float(v) for v in parts)
    if not step > 0 or b < a:
        raise ValueError("need start <= stop and a positive step")
    return f"{a!r}:{b!r}:{step!r}"


# key -> (parser, default, help)
SCHEMA = {
    "command": (str, None, "experiment to run"),
    "potential": (str, "harmonic", "'harmonic' or 'cosine:a=<value>'"),
    "beta": (float, 1.0, "inverse temperature"),
    "delta1": (float, 1.0, "position-noise viscosity"),
    "delta2": (float, 1.0, "momentum-noise viscosity"),
    "tau0": (float, 0.0, "initial boundary tension"),
    "tau1": (float, 1.0, "final boundary tension"),
    "tstar": (float, 1.0, "ramp duration T*"),
    "n": (int, 64, "chain length N"),
    "n_ladder": (_int_list, [64, 128, 256], "comma-separated N values for limit-check"),
    "m": (int, None, "PDE cell count (default 2 max N, or 256)"),
    "realizations": (int, 20, "ensemble size R"),
    "t_end": (float, None, "final time"),
    "times": (_float_list, [0.5], "comma-separated sample times for limit-check"),
    "test_functions": (_str_list, ["1", "x", "sin(pi x)"], "comma-separated test functions"),
    "sample_dt": (float, None, "spacing of stored samples"),
    "dt": (float, None, "micro timestep override (validated)"),
    "pde_dt": (float, None, "PDE timestep override (validated)"),
    "dt_factor": (float, 1.0, "divide the default micro timestep by this factor"),
    "tau_range": (_tau_range, "-2:2:0.1", "start:stop:step for thermo"),
    "ks": (_int_list, [1, 2, 4, 8], "block half-widths for one-block"),
    "l": (float, 0.1, "cutoff fraction for one-block"),
    "conjugate": (bool, False, "solve the (tau, p) form in pde-run"),
    "seed": (int, None, "base seed"),
    "out": (str, "hydrochain-out", "output directory"),
    "workers": (int, 1, "worker processes for ensembles"),
}

# execution settings that cannot change any output
NON_RESULT_KEYS = ("out", "workers")


def _default_seed():
    from .experiments import DEFAULT_SEED
    return DEFAULT_SEED


def _coerce(key, value):
    parser = SCHEMA[key][0]
    if value is None:
        return None
    try:
        if parser is bool:
            if isinstance(value, bool):
                return value
            if str(value).lower() in ("1", "true", "yes", "on"):
                return True
            if str(value).lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError("expected a boolean")
        if parser is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError("expected an integer")
            return int(value) if not isinstance(value, str) else int(value.strip())
        if parser is float:
            if isinstance(value, bool):
                raise ValueError("expected a number")
            out = float(value)
            if not math.isfinite(out):
                raise ValueError("expected a finite number")
            return out
        if parser is str:
            if not isinstance(value, str):
                raise ValueError("expected a string")
            return value
        return parser(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {key!r}: cannot use {value!r} ({exc})", EXIT_TYPE) from None


def build_parser():
    ap = argparse.ArgumentParser(prog="hydrochain", description="Anharmonic chain hydrodynamics")
    ap.add_argument("command", nargs="?", choices=COMMANDS)
    ap.add_argument("--config", help="flat JSON config or a manifest.json")
    ap.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")
    for key, (parser, _, text) in SCHEMA.items():
        if key == "command":
            continue
        flag = "--" + key.replace("_", "-")
        if parser is bool:
            ap.add_argument(flag, dest=key, nargs="?", const="true", default=None, help=text)
        else:
            ap.add_argument(flag, dest=key, default=None, help=text)
    return ap


def _read_config_file(path):
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}", EXIT_USAGE) from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}", EXIT_TYPE) from None
    if isinstance(data, dict) and isinstance(data.get("config"), dict):
        data = data["config"]
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object", EXIT_TYPE)
    return data


def _attach_negative_values(argv):
    """Let values such as ``--tau-range -2:2:0.1`` through argparse."""
    out, argv = [], list(argv)
    i = 0
    while i < len(argv):
        tok = argv[i]
        nxt = argv[i + 1] if i + 1 < len(argv) else None
        if (tok.startswith("--") and "=" not in tok and nxt is not None
                and len(nxt) > 1 and nxt[0] == "-" and (nxt[1].isdigit() or nxt[1] == ".")):
            out.append(f"{tok}={nxt}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def parse_and_validate(argv=None, env=None):
    """Resolved config dict; raises ConfigError with the exit code."""
    env = os.environ if env is None else env
    args = build_parser().parse_args(_attach_negative_values(sys.argv[1:] if argv is None else argv))
    cfg = {key: _coerce(key, spec[1]) for key, spec in SCHEMA.items()}

    if args.config:
        for key, value in _read_config_file(args.config).items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}", EXIT_UNKNOWN_KEY)
            cfg[key] = _coerce(key, value)
    if args.command:
        cfg["command"] = args.command
    for key in SCHEMA:
        if key != "command" and getattr(args, key, None) is not None:
            cfg[key] = _coerce(key, getattr(args, key))
    if env.get(SEED_ENV):
        cfg["seed"] = _coerce("seed", env[SEED_ENV])
    if cfg["seed"] is None:
        cfg["seed"] = _default_seed()
    if cfg["command"] not in COMMANDS:
        raise ConfigError(f"command must be one of {', '.join(COMMANDS)}", EXIT_USAGE)
    _check_values(cfg)
    return cfg, bool(args.dry_run)


def _check_values(cfg):
    from .micro import stability_bound
    from .thermo import parse_potential

    try:
        pot = parse_potential(cfg["potential"])
    except ValueError as exc:
        raise ConfigError(f"config key 'potential': {exc}", EXIT_TYPE) from None
    positive = ["beta", "tstar", "realizations", "n", "workers", "dt_factor", "l"]
    for key in positive:
        if not cfg[key] > 0:
            raise ConfigError(f"config key {key!r} must be positive, got {cfg[key]!r}", EXIT_TYPE)
    for key in ("delta1", "delta2"):
        if cfg[key] < 0:
            raise ConfigError(f"config key {key!r} must be nonnegative", EXIT_TYPE)
    if cfg["delta1"] == 0 and cfg["delta2"] == 0 and cfg["command"] != "thermo":
        raise ConfigError("config keys 'delta1' and 'delta2' cannot both vanish", EXIT_TYPE)
    for key in ("t_end", "sample_dt", "dt", "pde_dt", "m"):
        if cfg[key] is not None and not cfg[key] > 0:
            raise ConfigError(f"config key {key!r} must be positive", EXIT_TYPE)
    if cfg["n"] < 3 or any(n < 3 for n in cfg["n_ladder"]):
        raise ConfigError("config key 'n': a chain needs at least 3 sites", EXIT_TYPE)
    if cfg["m"] is not None and cfg["m"] < 8:
        raise ConfigError("config key 'm' must be at least 8", EXIT_TYPE)
    if not 0 < cfg["l"] < 0.5:
        raise ConfigError("config key 'l' must lie in (0, 1/2)", EXIT_TYPE)
    from .experiments import TEST_FUNCTIONS
    for j in cfg["test_functions"]:
        if j not in TEST_FUNCTIONS:
            raise ConfigError(f"config key 'test_functions': unknown {j!r}", EXIT_TYPE)

    if cfg["dt"] is not None:
        ns = cfg["n_ladder"] if cfg["command"] == "limit-check" else [cfg["n"]]
        for n in ns:
            bound = stability_bound(n, cfg["delta1"], cfg["delta2"], pot.c_plus)
            if cfg["dt"] > bound * (1 + 1e-12):
                raise ConfigError(f"config key 'dt': {cfg['dt']!r} exceeds the stability bound "
                                  f"{bound!r} at n={n}", EXIT_STABILITY)
    if cfg["pde_dt"] is not None:
        from .macro import PDEConfig
        from .protocol import TensionProtocol
        from .thermo import ThermoParams
        m = _macro_m(cfg)
        bound = PDEConfig(m, max(cfg["delta1"], 1e-300), cfg["delta2"], TensionProtocol(),
                          ThermoParams(cfg["beta"]), pot).dt_bound
        if cfg["pde_dt"] > bound * (1 + 1e-12):
            raise ConfigError(f"config key 'pde_dt': {cfg['pde_dt']!r} exceeds the CFL bound "
                              f"{bound!r} at m={m}", EXIT_STABILITY)


def _macro_m(cfg):
    if cfg["m"] is not None:
        return cfg["m"]
    if cfg["command"] == "limit-check":
        return 2 * max(cfg["n_ladder"])
    if cfg["command"] == "first-law":
        return 2 * cfg["n"]
    return 256 if cfg["command"] in ("pde-run", "clausius") else 64


def manifest_config(cfg):
    return {k: v for k, v in sorted(cfg.items()) if k not in NON_RESULT_KEYS}


def _version():
    try:
        return metadata.version("hydrochain")
    except metadata.PackageNotFoundError:
        from . import __version__
        return __version__


# ---------------------------------------------------------------------------
# commands


def _objects(cfg):
    from .protocol import TensionProtocol
    from .thermo import ThermoParams, parse_potential

    pot = parse_potential(cfg["potential"])
    prot = TensionProtocol(cfg["tau0"], cfg["tau1"], cfg["tstar"])
    return pot, prot, ThermoParams(cfg["beta"])


def _sim_config(cfg, n, pot, prot):
    from .micro import SimConfig, stability_bound

    dt = cfg["dt"]
    if dt is None:
        dt = stability_bound(n, cfg["delta1"], cfg["delta2"], pot.c_plus) / cfg["dt_factor"]
    return SimConfig(n, cfg["beta"], cfg["delta1"], cfg["delta2"], prot, pot, dt)


def _pde_config(cfg, m, pot, prot, params):
    from .macro import PDEConfig
    return PDEConfig(m, cfg["delta1"], cfg["delta2"], prot, params, pot, cfg["pde_dt"])


def _tau_grid(text):
    a, b, step = (float(v) for v in text.split(":"))
    count = int(math.floor((b - a) / step + 1e-9)) + 1
    return a + step * np.arange(count)


def cmd_thermo(cfg, out):
    from .outputs import csv_text
    from .thermo import tabulate

    pot, _, params = _objects(cfg)
    rows = tabulate(_tau_grid(cfg["tau_range"]), params, pot)
    text = csv_text(["tau", "ell", "F", "Ghat", "U", "S"], rows)
    sys.stdout.write(text)
    (out / "thermo.csv").write_text(text)
    return {"thermo.csv"}, True, {"rows": len(rows)}


def _trajectory_rows(ens, k):
    return [(t, e, l, w, q) for t, e, l, w, q in zip(ens.times, ens.energy[k], ens.length[k],
                                                     ens.work[k], ens.heat[k])]


def cmd_micro_run(cfg, out):
    from .experiments import AGGREGATE_HEADER, run_ensemble
    from .outputs import write_csv

    pot, prot, _ = _objects(cfg)
    sim = _sim_config(cfg, cfg["n"], pot, prot)
    t_end = cfg["t_end"] if cfg["t_end"] is not None else 0.1
    sdt = cfg["sample_dt"] or t_end / 10
    sample = np.arange(0.0, t_end + 0.5 * sdt, sdt)
    ens = run_ensemble(sim, cfg["realizations"], t_end, sample, cfg["seed"], workers=cfg["workers"])
    files = set()
    for k in range(ens.realizations):
        name = f"trajectory_{k:04d}.csv"
        write_csv(out / name, ["t", "E_N", "L_N", "W_N", "Q_N"], _trajectory_rows(ens, k))
        files.add(name)
    write_csv(out / "ensemble.csv", AGGREGATE_HEADER, ens.aggregate_rows())
    write_csv(out / "snapshot.csv", ["i", "r", "p"],
              [(i + 1, r, p) for i, (r, p) in enumerate(zip(ens.final_r[0], ens.final_p[0]))])
    files |= {"ensemble.csv", "snapshot.csv"}
    report = {"n": sim.n, "dt": sim.dt, "realizations": ens.realizations, "t_end": t_end,
              "first_law_residual_max": float(np.max(np.abs(ens.first_law_residual)))}
    return files, True, report


def _functional_rows(traj):
    return traj.rows()


def cmd_pde_run(cfg, out):
    from .macro import energy_identity_residual, equilibrium_state, integrate
    from .outputs import write_csv

    pot, prot, params = _objects(cfg)
    pcfg = _pde_config(cfg, _macro_m(cfg), pot, prot, params)
    t_end = cfg["t_end"] if cfg["t_end"] is not None else 1.0
    sdt = cfg["sample_dt"] or t_end / 20
    sample = np.arange(0.0, t_end + 0.5 * sdt, sdt)
    conj = cfg["conjugate"]
    traj = integrate(equilibrium_state(pcfg, conjugate=conj), pcfg, t_end, sample)
    th = pcfg.thermo
    fin = traj.final
    if conj:
        tau = fin.tau_hat
        r = np.asarray(th.ell(tau))
    else:
        r = fin.r
        tau = np.asarray(th.tension(r))
    write_csv(out / "snapshot.csv", ["x", "r", "p", "tau_of_r"],
              list(zip(pcfg.grid.x, r, fin.p, tau)))
    files = {"snapshot.csv"}
    report = {"m": pcfg.m, "dt": pcfg.dt, "t_end": float(traj.times[-1]), "conjugate": conj}
    ok = True
    if not conj:
        write_csv(out / "functionals.csv", ["t", "F", "L", "W", "dissipation", "residual"],
                  _functional_rows(traj))
        files.add("functionals.csv")
        f = traj.free_energy()
        excess = float(np.max(f - f[0] - traj.work))
        report.update(energy_identity_residual=energy_identity_residual(traj),
                      work=float(traj.work[-1]), dissipated=float(traj.dissipated[-1]),
                      max_free_energy_excess=excess)
        ok = excess <= 1e-8
    return files, ok, report


def cmd_limit_check(cfg, out):
    from .experiments import limit_check

    pot, prot, _ = _objects(cfg)
    rep = limit_check(cfg["n_ladder"], cfg["realizations"], cfg["times"], cfg["test_functions"],
                      beta=cfg["beta"], delta1=cfg["delta1"], delta2=cfg["delta2"], protocol=prot,
                      potential=pot, m=_macro_m(cfg), seed=cfg["seed"], workers=cfg["workers"],
                      dt=cfg["dt"], dt_factor=cfg["dt_factor"])
    return set(), rep.passed, rep


def cmd_clausius(cfg, out):
    from .experiments import clausius_experiment
    from .outputs import write_csv

    pot, _, params = _objects(cfg)
    rep, traj = clausius_experiment(tau0=cfg["tau0"], tau1=cfg["tau1"], t_star=cfg["tstar"],
                                    m=_macro_m(cfg), t_end=cfg["t_end"], beta=cfg["beta"],
                                    delta1=cfg["delta1"], delta2=cfg["delta2"], potential=pot,
                                    sample_dt=cfg["sample_dt"] or 0.05)
    write_csv(out / "functionals.csv", ["t", "F", "L", "W", "dissipation", "residual"],
              _functional_rows(traj))
    tol = 1e-8
    ok = rep.gap >= -tol and (rep.identity_error <= 1e-6 or abs(rep.gap) <= tol)
    return {"functionals.csv"}, ok, rep


def cmd_relaxation(cfg, out):
    from .experiments import relaxation_experiment
    from .outputs import write_csv

    pot, _, params = _objects(cfg)
    rep, traj = relaxation_experiment(tau0=cfg["tau0"], tau1=cfg["tau1"], t_star=cfg["tstar"],
                                      m=_macro_m(cfg), t_end=cfg["t_end"], beta=cfg["beta"],
                                      delta1=cfg["delta1"], delta2=cfg["delta2"], potential=pot,
                                      sample_dt=cfg["sample_dt"] or 0.1)
    write_csv(out / "relaxation.csv", ["t", "F_tau1"], list(zip(rep.times, rep.values)))
    ok = rep.slope < 0 and rep.nonincreasing
    return {"relaxation.csv"}, bool(ok), rep


def cmd_first_law(cfg, out):
    from .experiments import AGGREGATE_HEADER, first_law_experiment
    from .outputs import write_csv

    pot, prot, _ = _objects(cfg)
    sim = _sim_config(cfg, cfg["n"], pot, prot)
    t_end = cfg["t_end"] if cfg["t_end"] is not None else cfg["tstar"] + 1.0
    rep, ens = first_law_experiment(sim, cfg["realizations"], t_end, m=_macro_m(cfg),
                                    seed=cfg["seed"], workers=cfg["workers"])
    write_csv(out / "ensemble.csv", AGGREGATE_HEADER, ens.aggregate_rows())
    ok = rep.work_within_bands and rep.second_law_within_bands
    return {"ensemble.csv"}, ok, rep


def cmd_one_block(cfg, out):
    from .experiments import one_block_experiment

    pot, prot, _ = _objects(cfg)
    sim = _sim_config(cfg, cfg["n"], pot, prot)
    t_end = cfg["t_end"] if cfg["t_end"] is not None else 0.05
    rep, _ = one_block_experiment(sim, cfg["realizations"], t_end, cfg["ks"], cfg["l"],
                                  cfg["sample_dt"], cfg["seed"], cfg["workers"])
    return set(), rep.nonincreasing, rep


DISPATCH = {
    "thermo": cmd_thermo, "micro-run": cmd_micro_run, "pde-run": cmd_pde_run,
    "limit-check": cmd_limit_check, "clausius": cmd_clausius, "relaxation": cmd_relaxation,
    "first-law": cmd_first_law, "one-block": cmd_one_block,
}


def _prepare_output(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}", EXIT_OUTPUT) from None
    return out


def dispatch(cfg) -> int:
    """Run the configured command, write report and manifest; return the exit code."""
    from .outputs import write_json

    out = _prepare_output(cfg["out"])
    try:
        files, ok, report = DISPATCH[cfg["command"]](cfg, out)
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"hydrochain: {cfg['command']} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    write_json(out / "report.json", {"command": cfg["command"], "passed": bool(ok), "report": report})
    files = sorted(set(files) | {"report.json"})
    write_json(out / "manifest.json", {"config": manifest_config(cfg), "version": _version(),
                                       "seed": cfg["seed"], "outputs": files})
    if not ok:
        print(f"hydrochain: {cfg['command']}: invariant band violated (see report.json)",
              file=sys.stderr)
        return EXIT_BANDS
    return EXIT_OK


def main(argv=None) -> int:
    try:
        cfg, dry = parse_and_validate(argv)
    except ConfigError as exc:
        print(f"hydrochain: {exc}", file=sys.stderr)
        return exc.code
    except SystemExit as exc:
        return int(exc.code or 0)
    if dry:
        print(json.dumps(manifest_config(cfg), sort_keys=True, indent=2))
        return EXIT_OK
    try:
        return dispatch(cfg)
    except ConfigError as exc:
        print(f"hydrochain: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
