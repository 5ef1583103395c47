"""Time-series diagnostics: decay exponents and convergence reports.

Runs are recorded as columns of physical-frame quantities.  Rescaled runs
are converted with the exact scalings of the change of variables, e.g.
||u(t)||_p = (t+1)^{-(1-1/p)} ||u~(s)||_p and
||grad v(t)||_r = (t+1)^{-(1/2-1/r)} ||grad v~(s)||_r, so fits never depend
on the frame a run was computed in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import spectral as sp
from .errors import DomainError, KellerSegelError
from .simulator import (
    PHYSICAL,
    Params,
    SimState,
    SolverConfig,
    advance_to,
    free_energy,
    rescaled_lyapunov,
    step,
)
from .spectral import Field

EXPONENT_TOL = 0.05


class MissingSeries(KellerSegelError, KeyError):
    """A required time-series column was not recorded."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


@dataclass(frozen=True)
class DecayFit:
    """Least-squares fit of log(norm) against log(t)."""

    exponent: float
    prefactor: float
    residual: float
    window: tuple[float, float]
    n_points: int


@dataclass(frozen=True)
class ConvergenceReport:
    """Scaled distance series with a tail-monotonicity flag."""

    times: np.ndarray
    distances: np.ndarray
    monotone_tail: bool
    final_value: float
    label: str = ""

    def __post_init__(self):
        if np.any(self.distances < 0):
            raise DomainError("distances must be non-negative")


@dataclass(frozen=True)
class Verdict:
    """Outcome of checking one quantitative claim."""

    claim: str
    paper_ref: str
    expected: float
    fitted: float
    tolerance: float
    passed: bool
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {"claim": self.claim, "paper_ref": self.paper_ref, "expected": self.expected,
               "fitted": self.fitted, "tolerance": self.tolerance, "pass": bool(self.passed)}
        if self.details:
            out["details"] = self.details
        return out


def _index_name(p: float) -> str:
    return "inf" if math.isinf(p) else f"{p:g}"


def parse_index(p) -> float:
    """Norm index from a number or the strings 'inf'/'∞'."""
    if isinstance(p, str):
        if p.strip().lower() in ("inf", "infinity", "∞"):
            return math.inf
        p = float(p)
    p = float(p)
    if not p >= 1:
        raise DomainError(f"norm index must be >= 1, got {p}")
    return p


def u_column(p: float) -> str:
    return {1.0: "l1_u", 2.0: "l2_u", math.inf: "linf_u"}.get(p, f"l{_index_name(p)}_u")


def gradv_column(r: float) -> str:
    return {2.0: "l2_gradv", math.inf: "linf_gradv"}.get(r, f"l{_index_name(r)}_gradv")


def gradu_column(p: float) -> str:
    return f"l{_index_name(p)}_gradu"


def lapv_column(r: float) -> str:
    return f"l{_index_name(r)}_lapv"


def heat_column(p: float) -> str:
    return f"heat_dist_l{_index_name(p)}"


def profile_u_column(p: float) -> str:
    return f"profile_dist_u_l{_index_name(p)}"


def profile_gradv_column(r: float) -> str:
    return f"profile_dist_gradv_l{_index_name(r)}"


BASE_COLUMNS = ("t", "mass", "linf_u", "l1_u", "l2_u", "l2_gradv", "linf_gradv", "energy")


class Recorder:
    """Observer that appends physical-frame norms of each state it sees.

    Columns always include :data:`BASE_COLUMNS` plus ``s``, ``min_u``,
    ``l2_gradu`` and ``l2_lapv``.  Optional comparisons add
    ``heat_dist_l{p}`` (t^{1-1/p} ||u - M G(t)||_p) and, for rescaled runs,
    ``profile_dist_u_l{p}`` / ``profile_dist_gradv_l{r}`` against a
    stationary profile state.
    """

    def __init__(self, params: Params, u_indices: Sequence[float] = (),
                 gradv_indices: Sequence[float] = (), heat_indices: Sequence[float] = (),
                 profile: SimState | None = None, profile_indices: Sequence[float] = (1.0,),
                 profile_gradv_indices: Sequence[float] = (2.0,), energy: bool = True):
        self.params = params
        self.u_indices = [float(p) for p in u_indices]
        self.gradv_indices = [float(r) for r in gradv_indices]
        self.heat_indices = [float(p) for p in heat_indices]
        self.profile = profile
        self.profile_indices = [float(p) for p in profile_indices] if profile is not None else []
        self.profile_gradv_indices = ([float(r) for r in profile_gradv_indices]
                                      if profile is not None else [])
        self.energy = energy
        self.rows: list[dict] = []
        self._profile_grad = None
        if profile is not None:
            gx, gy = sp.gradient(profile.v)
            self._profile_grad = (gx.values, gy.values)

    def __call__(self, state: SimState) -> None:
        self.rows.append(state_norms(state, self.params, self))

    @property
    def columns(self) -> list[str]:
        return list(self.rows[0].keys()) if self.rows else list(BASE_COLUMNS)

    def series(self) -> dict[str, np.ndarray]:
        return {c: np.array([row[c] for row in self.rows]) for c in self.columns}


def state_norms(state: SimState, params: Params, rec: Recorder | None = None) -> dict:
    """Physical-frame norms and energies of one state."""
    g = state.grid
    dA = g.cell_area
    u = state.u.values
    rescaled = state.frame != PHYSICAL
    t = state.physical_time
    T = t + 1.0 if rescaled else 1.0
    vx, vy = sp.gradient(state.v)
    gv = np.hypot(vx.values, vy.values)
    ux, uy = sp.gradient(state.u)
    gu = np.hypot(ux.values, uy.values)
    lap = sp.laplacian(state.v).values

    def u_norm(p):  # ||u(t)||_p
        return sp.lp_values(u, p, dA) * T ** (-(1.0 - 1.0 / p))

    def gv_norm(r):  # ||grad v(t)||_r
        return sp.lp_values(gv, r, dA) * T ** (-(0.5 - 1.0 / r))

    row = {
        "t": t,
        "mass": float(np.sum(u) * dA),
        "linf_u": u_norm(math.inf),
        "l1_u": u_norm(1.0),
        "l2_u": u_norm(2.0),
        "l2_gradv": gv_norm(2.0),
        "linf_gradv": gv_norm(math.inf),
    }
    if rec is None or rec.energy:
        row["energy"] = (rescaled_lyapunov(state, params, pos_tol=np.inf) if rescaled
                         else free_energy(state, params, pos_tol=np.inf))
    else:
        row["energy"] = float("nan")
    row["s"] = state.time if rescaled else math.log1p(t)
    row["min_u"] = float(np.min(u)) * (1.0 / T)
    row["l2_gradu"] = sp.lp_values(gu, 2.0, dA) * T ** -1.0
    row["l2_lapv"] = sp.lp_values(lap, 2.0, dA) * T ** -0.5
    if rec is None:
        return row
    for p in rec.u_indices:
        row[u_column(p)] = u_norm(p)
    for r in rec.gradv_indices:
        row[gradv_column(r)] = gv_norm(r)
    if rec.heat_indices:
        M = row["mass"]
        if rescaled:
            # M G(t) in rescaled variables is M G(xi, t/(t+1))
            ref = sp.heat_kernel_values(M, t / T, g) if t > 0 else None
        else:
            ref = sp.heat_kernel_values(M, t, g) if t > 0 else None
        for p in rec.heat_indices:
            if ref is None:
                row[heat_column(p)] = float("nan")
                continue
            d = sp.lp_values(u - ref, p, dA) * T ** (-(1.0 - 1.0 / p))
            row[heat_column(p)] = t ** (1.0 - 1.0 / p) * d
    if rec.profile is not None:
        if not rescaled:
            raise DomainError("profile distances are defined for rescaled runs")
        du = u - rec.profile.u.values
        for p in rec.profile_indices:
            row[profile_u_column(p)] = sp.lp_values(du, p, dA)
        px, py = rec._profile_grad
        dg = np.hypot(vx.values - px, vy.values - py)
        for r in rec.profile_gradv_indices:
            row[profile_gradv_column(r)] = sp.lp_values(dg, r, dA)
    return row


def _window_mask(t: np.ndarray, window) -> np.ndarray:
    lo, hi = window
    # half-ulp slack so sample times landing on the window ends are kept
    return (t >= lo * (1 - 1e-12)) & (t <= hi * (1 + 1e-12))


def fit_decay_exponent(series, window: tuple[float, float] | None = None) -> DecayFit:
    """Ordinary least squares of log(norm) on log(t) within ``window``.

    ``series`` is a sequence of (t, norm) pairs or a pair of arrays.
    Without a window the last decade of the series is used.
    """
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 2:
        raise DomainError("series must be a list of (t, norm) pairs")
    if arr.shape[0] == 2 and arr.shape[1] != 2:
        arr = arr.T
    t, y = arr[:, 0], arr[:, 1]
    if window is None:
        window = (t.max() / 10.0, t.max())
    sel = _window_mask(t, window) & np.isfinite(y)
    if sel.sum() < 5:
        raise DomainError(f"need >= 5 points in window {window}, got {int(sel.sum())}")
    if np.any(y[sel] <= 0) or np.any(t[sel] <= 0):
        raise DomainError("times and norms must be positive in the fit window")
    lt, ly = np.log(t[sel]), np.log(y[sel])
    slope, intercept = np.polyfit(lt, ly, 1)
    resid = float(np.max(np.abs(ly - (slope * lt + intercept))))
    return DecayFit(float(slope), float(math.exp(intercept)), resid,
                    (float(window[0]), float(window[1])), int(sel.sum()))


def _column(run: Mapping[str, np.ndarray], name: str) -> np.ndarray:
    if name not in run:
        raise MissingSeries(f"series '{name}' not recorded")
    return np.asarray(run[name], dtype=float)


def expected_exponents(p_list: Iterable, r_list: Iterable) -> list[tuple[str, str, float]]:
    """(quantity, column, expected exponent) for the regularizing-effect rates."""
    out = []
    for p in map(parse_index, p_list):
        out.append((f"u L^{_index_name(p)}", u_column(p), -(1.0 - 1.0 / p)))
        if p == 2.0:
            out.append(("grad u L^2", gradu_column(p), -(1.0 - 1.0 / p) - 0.5))
    for r in map(parse_index, r_list):
        out.append((f"grad v L^{_index_name(r)}", gradv_column(r), -(0.5 - 1.0 / r)))
        if r == 2.0:
            out.append(("Laplacian v L^2", lapv_column(r), -(0.5 - 1.0 / r) - 0.5))
    return out


def check_reg_effects(run: Mapping[str, np.ndarray], p_list=(2, "inf"), r_list=(2, "inf"),
                      window: tuple[float, float] | None = None,
                      tolerance: float = EXPONENT_TOL) -> list[tuple[str, float, DecayFit, bool]]:
    """Fit every decay rate of the regularizing-effect estimates.

    Expected exponents: -(1-1/p) for u, -(1/2-1/r) for grad v, one half
    lower for grad u (p = 2) and for the Laplacian of v (r = 2).
    """
    t = _column(run, "t")
    out = []
    for name, col, expected in expected_exponents(p_list, r_list):
        fit = fit_decay_exponent(np.column_stack([t, _column(run, col)]), window)
        out.append((name, expected, fit, abs(fit.exponent - expected) < tolerance))
    return out


def _tail_monotone(x: np.ndarray, d: np.ndarray, decades: float, rtol: float) -> bool:
    finite = np.isfinite(d) & (x > 0)
    x, d = x[finite], d[finite]
    if x.size < 2:
        return True
    sel = x >= x.max() / 10.0 ** decades
    tail = d[sel]
    return bool(np.all(np.diff(tail) <= rtol * np.abs(tail[:-1])))


def convergence_to_profile(run: Mapping[str, np.ndarray], profile_mass: float, p: float = 1.0,
                           r: float | None = None, axis: str = "s", tail_decades: float = 1.0,
                           mass_rtol: float = 1e-8) -> ConvergenceReport:
    """||u~(s) - U_M||_p (+ ||grad v~ - grad V_M||_r) from a recorded rescaled run.

    These equal t^{1-1/p} ||u(t) - u_M(t)||_p etc. up to the factor
    (t/(t+1))^{...} that tends to one.
    """
    mass = _column(run, "mass")
    if abs(mass[0] - profile_mass) > mass_rtol * profile_mass:
        raise DomainError(f"run mass {mass[0]:.12g} differs from profile mass {profile_mass:.12g}")
    d = _column(run, profile_u_column(parse_index(p))).copy()
    label = f"u L^{_index_name(parse_index(p))}"
    if r is not None:
        d = d + _column(run, profile_gradv_column(parse_index(r)))
        label += f" + grad v L^{_index_name(parse_index(r))}"
    x = _column(run, axis)
    return ConvergenceReport(x, d, _tail_monotone(x, d, tail_decades, 0.0), float(d[-1]), label)


def convergence_to_heat(run: Mapping[str, np.ndarray], p_list=(2.0,), window=None,
                        tail_decades: float = 1.0) -> list[ConvergenceReport]:
    """t^{1-1/p} ||u(t) - M G(t)||_p series, one report per p."""
    t = _column(run, "t")
    sel = np.ones_like(t, dtype=bool) if window is None else _window_mask(t, window)
    out = []
    for p in map(parse_index, p_list):
        d = _column(run, heat_column(p))[sel]
        ts = t[sel]
        out.append(ConvergenceReport(ts, d, _tail_monotone(ts, d, tail_decades, 0.0),
                                     float(d[-1]), f"heat L^{_index_name(p)}"))
    return out


def improved_gradv_bound(r: float, q: float) -> float:
    """Exponent bound -(1/2 - 1/r) - (1/r - 1/q + 1/2) for alpha > 0."""
    r, q = parse_index(r), parse_index(q)
    if r < 2:
        raise DomainError("r must be >= 2")
    if math.isinf(r):
        if not q > 2:
            raise DomainError("q must exceed 2 when r is infinite")
    elif not q > 2 * r / (r + 2):
        raise DomainError(f"q must exceed 2r/(r+2) = {2 * r / (r + 2):.6g}")
    inv_r = 0.0 if math.isinf(r) else 1.0 / r
    inv_q = 0.0 if math.isinf(q) else 1.0 / q
    return -(0.5 - inv_r) - (inv_r - inv_q + 0.5)


def check_improved_gradv_decay(run: Mapping[str, np.ndarray], r="inf", q=4.0, window=None,
                               tolerance: float = EXPONENT_TOL) -> tuple[DecayFit, float, bool]:
    """Fit ||grad v||_r and compare with the improved bound for alpha > 0."""
    bound = improved_gradv_bound(r, q)
    t = _column(run, "t")
    fit = fit_decay_exponent(np.column_stack([t, _column(run, gradv_column(parse_index(r)))]),
                             window)
    return fit, bound, fit.exponent <= bound + tolerance


def scaled_difference(a: SimState, b: SimState, p: float, r: float) -> float:
    """t^{1-1/p} ||u1 - u2||_p + t^{1/2-1/r} ||grad v1 - grad v2||_r (physical units)."""
    g = a.grid
    dA = g.cell_area
    t = a.physical_time
    T = t + 1.0 if a.frame != PHYSICAL else 1.0
    du = sp.lp_values(a.u.values - b.u.values, p, dA) * T ** (-(1.0 - 1.0 / p))
    gx, gy = sp.gradient(a.v - b.v)
    dg = sp.lp_values(np.hypot(gx.values, gy.values), r, dA) * T ** (-(0.5 - 1.0 / r))
    return t ** (1.0 - 1.0 / p) * du + t ** (0.5 - 1.0 / r) * dg


@dataclass(frozen=True)
class ContinuityTable:
    """D(delta) for each perturbation size, with linearity ratios."""

    deltas: np.ndarray
    D: np.ndarray
    data_size: np.ndarray
    constant: float
    ratios: dict

    def linear(self, lo: float = 1.8, hi: float = 2.2) -> bool:
        return all(lo <= v <= hi for v in self.ratios.values())


def continuous_dependence_experiment(base: SimState, direction: Field, deltas: Sequence[float],
                                     params: Params, cfg: SolverConfig, until: float,
                                     sample_times: Sequence[float], p: float = 2.0,
                                     r: float = 2.0, v_direction: Field | None = None
                                     ) -> ContinuityTable:
    """Sup over sample times of the scaled distance between base and perturbed runs.

    Perturbed data are u0 + delta*direction (and v0 + delta*v_direction).
    The sup is over the sampled times only, a lower bound of the true sup.
    Ratios D(delta)/D(delta/2) are reported for every such pair in ``deltas``.
    """
    p, r = parse_index(p), parse_index(r)
    deltas = [float(d) for d in deltas]
    samples = [float(x) for x in sample_times]
    D = []
    sizes = []
    for delta in deltas:
        if delta == 0:
            D.append(0.0)
            sizes.append(0.0)
            continue
        pert = SimState(base.u + delta * direction,
                        base.v if v_direction is None else base.v + delta * v_direction,
                        base.time, base.frame)
        size = sp.lp_values(delta * direction.values, 1.0, base.grid.cell_area)
        if v_direction is not None:
            gx, gy = sp.gradient(delta * v_direction)
            size += sp.lp_values(np.hypot(gx.values, gy.values), 2.0, base.grid.cell_area)
        sizes.append(size)
        D.append(_paired_sup(base, pert, params, cfg, until, samples, p, r))
    D = np.array(D)
    sizes = np.array(sizes)
    ratios = {}
    for i, d in enumerate(deltas):
        for j, e in enumerate(deltas):
            if d > 0 and math.isclose(e, d / 2, rel_tol=1e-12) and D[j] > 0:
                ratios[d] = float(D[i] / D[j])
    nz = sizes > 0
    const = float(np.max(D[nz] / sizes[nz])) if np.any(nz) else 0.0
    return ContinuityTable(np.array(deltas), D, sizes, const, ratios)


def _paired_sup(a: SimState, b: SimState, params, cfg, until, samples, p, r) -> float:
    best = 0.0
    stops = sorted(x for x in samples if a.time < x <= until)
    for stop in stops:
        a = advance_to(a, params, cfg, stop)
        b = advance_to(b, params, cfg, stop)
        best = max(best, scaled_difference(a, b, p, r))
    return best


def verdict_from_fit(claim: str, ref: str, expected: float, fit: DecayFit,
                     tolerance: float = EXPONENT_TOL) -> Verdict:
    return Verdict(claim, ref, expected, fit.exponent, tolerance,
                   abs(fit.exponent - expected) < tolerance,
                   {"window": list(fit.window), "residual": fit.residual,
                    "n_points": fit.n_points})
