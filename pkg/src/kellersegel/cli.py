"""Command-line interface.

Subcommands::

    kellersegel profile shoot --a A --epsilon E [--out DIR]
    kellersegel profile map --epsilon E [--a-min --a-max --n] [--out DIR]
    kellersegel profile invert --mass M --epsilon E [--allow-nonunique]
    kellersegel profile thresholds --epsilon E
    kellersegel profile reconstruct (--mass M | --a A) --epsilon E [--out DIR]
    kellersegel simulate CONFIG [--set key=value ...]
    kellersegel verify RUNDIR CLAIMS

Exit codes: 0 success, 1 usage or configuration error, 2 invariant or
claim failure, 3 numerical instability.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from . import config as cfgmod
from . import diagnostics as dg
from . import profiles as pr
from . import spectral as sp
from . import storage
from .errors import (
    ConfigError,
    InstabilityError,
    IntegrationFailure,
    KellerSegelError,
    LocalizationError,
    OutOfUniquenessRange,
    PositivityError,
    UniquenessWarning,
)
from .simulator import (
    PHYSICAL,
    RESCALED,
    Params,
    SimState,
    SolverConfig,
    gaussian_state,
    self_similar_state,
    step,
)

EXIT_OK, EXIT_USAGE, EXIT_FAILURE, EXIT_INSTABILITY = 0, 1, 2, 3


class UsageError(KellerSegelError):
    """Bad command-line input."""


def _err(msg: str) -> None:
    print(f"kellersegel: {msg}", file=sys.stderr)


def _args_hash(args: argparse.Namespace) -> str:
    items = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out")}
    return hashlib.sha256(json.dumps(items, sort_keys=True, default=str).encode()).hexdigest()


def _emit(payload: dict, args, filename: str | None = None) -> None:
    h = _args_hash(args)
    if args.out and filename:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        storage.write_json(out / filename, payload, h)
    print(json.dumps(storage._jsonable(payload), sort_keys=True))


# ---------------------------------------------------------------- profile

def cmd_profile_shoot(args) -> int:
    sol = pr.integrate_profile(pr.ShootingConfig(epsilon=args.epsilon, a=args.a, y_max=args.y_max))
    summary = pr.summary_dict(sol)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        storage.write_csv(out / "shoot.csv", ["y", "phi", "phi_prime", "S"],
                          np.column_stack([sol.y, sol.phi, sol.phi_prime, sol.S]), _args_hash(args))
    _emit(summary, args, "shoot.json")
    return EXIT_OK if all(summary["bounds_ok"]) else EXIT_FAILURE


def cmd_profile_map(args) -> int:
    a = np.geomspace(args.a_min, args.a_max, args.n)
    mm = pr.sweep_mass_map(args.epsilon, a)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        storage.write_csv(out / "mass_map.csv", storage.MASS_MAP_COLUMNS,
                          storage.mass_map_rows(mm.a, args.epsilon, mm.mass), _args_hash(args))
    _emit({"epsilon": args.epsilon, "tilde_M": pr.tildeM_of(args.epsilon),
           "mstar_lower_bound": mm.mstar_estimate, "a_at_mstar": mm.a_at_mstar,
           "increasing": bool(np.all(np.diff(mm.mass) > 0))}, args, "mass_map.json")
    return EXIT_OK


def cmd_profile_invert(args) -> int:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", UniquenessWarning)
        a = pr.invert_mass(args.mass, args.epsilon, strict=not args.allow_nonunique)
    for w in caught:
        _err(str(w.message))
    _emit({"mass": args.mass, "epsilon": args.epsilon, "a": a,
           "tilde_M": pr.tildeM_of(args.epsilon), "unique": not caught}, args, "invert.json")
    return EXIT_OK


def cmd_profile_thresholds(args) -> int:
    _emit({"epsilon": args.epsilon, "tilde_M": pr.tildeM_of(args.epsilon),
           "A": pr.A_of(args.epsilon)}, args, "thresholds.json")
    return EXIT_OK


def cmd_profile_reconstruct(args) -> int:
    if (args.mass is None) == (args.a is None):
        raise UsageError("give exactly one of --mass or --a")
    a = args.a if args.a is not None else pr.invert_mass(args.mass, args.epsilon, strict=True)
    sol = pr.integrate_profile(pr.ShootingConfig(epsilon=args.epsilon, a=a))
    r_max = min(args.r_max, math.sqrt(sol.y_max))
    prof = pr.reconstruct_profile(sol, np.linspace(0.0, r_max, args.n_r))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        storage.write_csv(out / "profile.csv", storage.PROFILE_COLUMNS,
                          np.column_stack([prof.r, prof.U, prof.V, prof.V_prime]), _args_hash(args))
    _emit({"epsilon": args.epsilon, "a": a, "mass": prof.M, "sigma": prof.sigma,
           "mass_quadrature": prof.mass_quadrature()}, args, "profile.json")
    return EXIT_OK


# ---------------------------------------------------------------- simulate

def build_run(rc: cfgmod.RunConfig) -> tuple[SimState, Params, SolverConfig]:
    grid = sp.GridSpec(rc["grid.n"], rc["grid.L"])
    params = Params(rc["params.epsilon"], rc["params.alpha"], rc["params.chemotaxis"])
    solver = SolverConfig(dt=rc["solver.dt"], scheme=rc["solver.scheme"])
    frame = rc["solver.frame"]
    if rc["init.kind"] == "profile":
        state = self_similar_state(rc["init.mass"], rc["params.epsilon"], 0.0, grid, RESCALED)
    else:
        state = gaussian_state(rc["init.mass"], rc["init.sigma"], grid, frame, rc["init.v0"])
    return state, params, solver


def _frame_end(state: SimState, t_end: float) -> float:
    return t_end if state.frame == PHYSICAL else math.log1p(t_end)


def _profile_reference(state: SimState, params: Params) -> SimState | None:
    if (state.frame != RESCALED or params.alpha != 0 or not params.chemotaxis_on
            or not state.mass < pr.tildeM_of(params.epsilon)):
        return None
    return self_similar_state(state.mass, params.epsilon, 0.0, state.grid, RESCALED)


def run_simulation(rc: cfgmod.RunConfig, run_dir: Path) -> tuple[int, dict]:
    """Integrate one configured run, writing series, snapshots and a summary."""
    state, params, solver = build_run(rc)
    h = rc.hash
    start = state
    end = _frame_end(state, rc["solver.t_end"])
    if not end > state.time:
        raise ConfigError("solver.t_end lies before the initial time of the data")
    rec = dg.Recorder(params, heat_indices=(1.0, 2.0, math.inf),
                      profile=_profile_reference(state, params))
    every = rc["output.every"]
    n_total = int(math.ceil((end - state.time) / solver.dt - 1e-9))
    stops = sorted(set(min(state.time + k * every * solver.dt, end)
                       for k in range(1, n_total // every + 2)))
    rec(state)
    status, message = EXIT_OK, ""
    stationarity = 0.0
    ref_norm = sp.lp_values(start.u.values, 2.0, start.grid.cell_area)
    try:
        for stop in stops:
            while stop - state.time > 1e-9 * solver.dt:
                dt = min(solver.dt, stop - state.time)
                state = step(state, params, solver, dt)
            rec(state)
            drift = sp.lp_values(state.u.values - start.u.values, 2.0, start.grid.cell_area)
            stationarity = max(stationarity, drift / ref_norm)
    except InstabilityError as exc:
        status, message = EXIT_INSTABILITY, str(exc)
        if exc.last_state is not None:
            state = exc.last_state
    except (PositivityError, LocalizationError) as exc:
        status, message = EXIT_FAILURE, str(exc)

    series = rec.series()
    storage.write_series_csv(run_dir / "series.csv", series, h)
    snap_meta = {"frame": state.frame, "epsilon": params.epsilon, "alpha": params.alpha}
    storage.write_snapshot(run_dir / "u.snap", state.u, "u", state.time, h, snap_meta)
    storage.write_snapshot(run_dir / "v.snap", state.v, "v", state.time, h, snap_meta)

    mass = series["mass"]
    rel_u = series["min_u"] / series["linf_u"]
    summary = {
        "run_id": rc.run_id,
        "status": {EXIT_OK: "ok", EXIT_FAILURE: "invariant_violation",
                   EXIT_INSTABILITY: "instability"}[status],
        "message": message,
        "frame": state.frame,
        "final_time": state.time,
        "final_physical_time": state.physical_time,
        "dt": solver.dt,
        "epsilon": params.epsilon,
        "alpha": params.alpha,
        "mass_initial": float(mass[0]),
        "mass_drift_relative": float(np.max(np.abs(mass - mass[0])) / mass[0]),
        "min_u_relative": float(np.min(rel_u)),
        "exponent_check": _exponent_check(series, solver.dt),
    }
    if rc["init.kind"] == "profile":
        summary["stationarity_drift"] = stationarity
    storage.write_json(run_dir / "summary.json", summary, h)
    return status, summary


def default_window(t: np.ndarray, dt: float) -> tuple[float, float]:
    """Last decade of the run, excluding the transient t < 1000 dt."""
    t_max = float(np.max(t))
    return (max(t_max / 10.0, 1000.0 * dt), t_max)


def _exponent_check(series: dict, dt: float) -> dict:
    t = series["t"]
    window = default_window(t, dt)
    try:
        fit = dg.fit_decay_exponent(np.column_stack([t, series["linf_u"]]), window)
    except KellerSegelError as exc:
        return {"quantity": "linf_u", "skipped": str(exc)}
    return {"quantity": "linf_u", "expected": -1.0, "fitted": fit.exponent,
            "window": list(window), "tolerance": dg.EXPONENT_TOL,
            "pass": abs(fit.exponent + 1.0) < dg.EXPONENT_TOL}


def cmd_simulate(args) -> int:
    rc = cfgmod.load(args.config, args.set or ())
    run_dir = Path(rc["output.dir"]) / rc.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(
        storage.header_line(rc.hash) + "\n" + rc.normalized())
    status, summary = run_simulation(rc, run_dir)
    print(json.dumps(storage._jsonable(summary), sort_keys=True))
    print(str(run_dir))
    if summary["message"]:
        _err(summary["message"])
    return status


# ---------------------------------------------------------------- verify

CLAIMS = {
    "u_decay": "time decay of the L^p norms of u",
    "gradv_decay": "time decay of the L^r norms of grad v",
    "gradu_decay": "time decay of the L^2 norm of grad u",
    "lapv_decay": "time decay of the L^2 norm of the Laplacian of v",
    "heat_convergence": "convergence to the heat kernel when the chemoattractant degrades",
    "profile_convergence": "convergence to the self-similar profile of the same mass",
    "improved_gradv_decay": "improved decay of grad v when the chemoattractant degrades",
}


def parse_claims(text: str) -> list[tuple[str, dict[str, str]]]:
    """One claim per line: ``name key=value ...``; ``#`` starts a comment."""
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        name, *rest = body.split()
        if name not in CLAIMS:
            raise UsageError(f"claims line {lineno}: unknown claim {name!r}")
        opts = {}
        for item in rest:
            if "=" not in item:
                raise UsageError(f"claims line {lineno}: option {item!r} is not key=value")
            k, v = item.split("=", 1)
            opts[k] = v
        out.append((name, opts))
    return out


def _window(opts: dict, default: tuple[float, float]) -> tuple[float, float]:
    if "window" not in opts:
        return default
    lo, hi = (float(x) for x in opts["window"].split(","))
    return (lo, hi)


def evaluate_claim(name: str, opts: dict, series: dict, summary: dict) -> dg.Verdict:
    t = series["t"] if "t" in series else None
    if t is None:
        raise dg.MissingSeries("series 't' not recorded")
    window = _window(opts, default_window(t, float(summary.get("dt", 0.0))))
    tol = float(opts.get("tolerance", dg.EXPONENT_TOL))
    ref = CLAIMS[name]

    def fit_of(col):
        return dg.fit_decay_exponent(np.column_stack([t, dg._column(series, col)]), window)

    if name == "u_decay":
        p = dg.parse_index(opts.get("p", "inf"))
        return dg.verdict_from_fit(f"{name} p={opts.get('p', 'inf')}", ref,
                                   -(1 - 1 / p), fit_of(dg.u_column(p)), tol)
    if name == "gradv_decay":
        r = dg.parse_index(opts.get("r", "inf"))
        return dg.verdict_from_fit(f"{name} r={opts.get('r', 'inf')}", ref,
                                   -(0.5 - 1 / r), fit_of(dg.gradv_column(r)), tol)
    if name == "gradu_decay":
        return dg.verdict_from_fit(name, ref, -1.0, fit_of("l2_gradu"), tol)
    if name == "lapv_decay":
        return dg.verdict_from_fit(name, ref, -0.5, fit_of("l2_lapv"), tol)
    if name == "improved_gradv_decay":
        r, q = opts.get("r", "inf"), opts.get("q", "4")
        fit, bound, ok = dg.check_improved_gradv_decay(series, r, q, window, tol)
        return dg.Verdict(f"{name} r={r} q={q}", ref, bound, fit.exponent, tol, ok,
                          {"window": list(window), "residual": fit.residual})
    if name == "heat_convergence":
        p = opts.get("p", "2")
        ratio = float(opts.get("ratio", 0.1))
        rep = dg.convergence_to_heat(series, [p], window)[0]
        fitted = rep.final_value / rep.distances[0]
        ok = bool(np.all(np.diff(rep.distances) <= 0)) and fitted < ratio
        return dg.Verdict(f"{name} p={p}", ref, ratio, fitted, 0.0, ok,
                          {"window": list(window), "initial": float(rep.distances[0]),
                           "final": rep.final_value})
    if name == "profile_convergence":
        p = opts.get("p", "1")
        threshold = float(opts.get("threshold", 1e-2))
        rep = dg.convergence_to_profile(series, float(summary["mass_initial"]), p,
                                        opts.get("r"), axis="s", tail_decades=2.0)
        ok = rep.monotone_tail and rep.final_value < threshold
        return dg.Verdict(f"{name} p={p}", ref, threshold, rep.final_value, 0.0, ok,
                          {"monotone_tail": rep.monotone_tail})
    raise UsageError(f"unknown claim {name!r}")


def cmd_verify(args) -> int:
    run_dir = Path(args.rundir)
    claims = parse_claims(Path(args.claims).read_text())
    series_path = run_dir / "series.csv"
    if not series_path.exists():
        _err(f"{series_path} not found")
        return EXIT_FAILURE
    meta, series = storage.read_csv(series_path)
    summary = storage.read_json(run_dir / "summary.json") if (run_dir / "summary.json").exists() else {}
    verdicts = []
    try:
        for name, opts in claims:
            verdicts.append(evaluate_claim(name, opts, series, summary).as_dict())
    except dg.MissingSeries as exc:
        _err(str(exc))
        return EXIT_FAILURE
    report = {"run": str(run_dir), "verdicts": verdicts}
    storage.write_json(run_dir / "verdicts.json", report, meta.get("config_hash", ""))
    print(json.dumps(storage._jsonable(report), sort_keys=True))
    return EXIT_OK if all(v["pass"] for v in verdicts) else EXIT_FAILURE


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kellersegel", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    prof = sub.add_parser("profile", help="self-similar profile tools")
    psub = prof.add_subparsers(dest="action", required=True)

    def add(name, func, help_text):
        p = psub.add_parser(name, help=help_text)
        p.add_argument("--epsilon", type=float, required=True)
        p.add_argument("--out", default=None, help="directory for output files")
        p.set_defaults(func=func)
        return p

    p = add("shoot", cmd_profile_shoot, "integrate the profile ODE for one a")
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--y-max", type=float, default=80.0)
    p = add("map", cmd_profile_map, "tabulate the mass map")
    p.add_argument("--a-min", type=float, default=1e-3)
    p.add_argument("--a-max", type=float, default=1e4)
    p.add_argument("--n", type=int, default=40)
    p = add("invert", cmd_profile_invert, "shooting parameter for a mass")
    p.add_argument("--mass", type=float, required=True)
    p.add_argument("--allow-nonunique", action="store_true",
                   help="return the smallest root above the uniqueness threshold")
    add("thresholds", cmd_profile_thresholds, "uniqueness thresholds A(eps) and tilde M(eps)")
    p = add("reconstruct", cmd_profile_reconstruct, "radial profile table r,U,V,Vprime")
    p.add_argument("--mass", type=float, default=None)
    p.add_argument("--a", type=float, default=None)
    p.add_argument("--r-max", type=float, default=8.0)
    p.add_argument("--n-r", type=int, default=401)

    sim = sub.add_parser("simulate", help="run the PDE from a config file")
    sim.add_argument("config")
    sim.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override a config key (repeatable)")
    sim.set_defaults(func=cmd_simulate)

    ver = sub.add_parser("verify", help="check claims against a finished run")
    ver.add_argument("rundir")
    ver.add_argument("claims")
    ver.set_defaults(func=cmd_verify)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, UsageError, OSError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    except InstabilityError as exc:
        _err(str(exc))
        return EXIT_INSTABILITY
    except (OutOfUniquenessRange, IntegrationFailure, KellerSegelError, ValueError) as exc:
        _err(str(exc))
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
