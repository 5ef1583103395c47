"""Time stepping of the doubly parabolic Keller-Segel system.

Physical variables:

    u_t = Delta u - div(u grad v),
    eps v_t = Delta v + u - alpha v.

Rescaled variables xi = x / sqrt(t+1), s = log(t+1),
u~(xi, s) = e^s u(xi e^{s/2}, e^s - 1), v~(xi, s) = v(xi e^{s/2}, e^s - 1):

    u~_s = Delta u~ + div(xi u~)/2 - div(u~ grad v~),
    eps v~_s = Delta v~ + eps xi/2 . grad v~ + u~ - alpha e^s v~.

Both are advanced with exponential time differencing: the diffusion (and
the decay term of v) is applied exactly in Fourier space and the rest of
the Duhamel integral is quadrated with phi-functions.  Nonlinear fluxes
are written in divergence form so the zero mode of u, i.e. its mass, is
never touched by the explicit part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np

from . import spectral as sp
from .errors import DomainError, InstabilityError, PositivityError
from .errors import OutOfUniquenessRange
from .profiles import (
    RadialProfile,
    ShootingConfig,
    integrate_profile,
    invert_mass,
    reconstruct_profile,
    tildeM_of,
)
from .spectral import Field, GridSpec

PHYSICAL = "physical"
RESCALED = "rescaled"
SCHEMES = ("etd1", "etd2", "imex-drift")


@dataclass(frozen=True)
class Params:
    """Model parameters."""

    epsilon: float
    alpha: float = 0.0
    chemotaxis_on: bool = True

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise DomainError(f"alpha must be non-negative, got {self.alpha}")


@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping controls.

    ``pos_tol`` is relative to max u; ``loc_tol_u``/``loc_tol_v`` bound the
    boundary magnitude relative to the field maximum.
    """

    dt: float
    scheme: str = "etd2"
    dealias: bool = True
    pos_tol: float = 1e-10
    growth_limit: float = 10.0
    loc_tol_u: float = 1e-12
    loc_tol_v: float = 1e-6
    check_localization: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        if self.scheme not in SCHEMES:
            raise DomainError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")


@dataclass(frozen=True)
class SimState:
    """Cell density and chemoattractant at one instant.

    ``time`` is t in the physical frame and s in the rescaled frame.
    ``previous`` holds the last explicit terms (used by ETD2).
    """

    u: Field
    v: Field
    time: float
    frame: str = PHYSICAL
    previous: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.frame not in (PHYSICAL, RESCALED):
            raise DomainError(f"unknown frame {self.frame!r}")
        if self.u.grid != self.v.grid:
            raise DomainError("u and v live on different grids")
        if self.frame == PHYSICAL and not self.time >= 0:
            raise DomainError("physical time must be >= 0")

    @property
    def grid(self) -> GridSpec:
        return self.u.grid

    @property
    def physical_time(self) -> float:
        return self.time if self.frame == PHYSICAL else math.expm1(self.time)

    @property
    def mass(self) -> float:
        return self.u.integral()


def phi_functions(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """phi1(z) = (e^z - 1)/z and phi2(z) = (e^z - 1 - z)/z^2.

    Taylor series are used for |z| < 1e-4 to avoid cancellation.
    """
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-4
    zs = np.where(small, 1.0, z)
    em1 = np.expm1(zs)
    phi1 = np.where(small, 1 + z / 2 + z * z / 6 + z ** 3 / 24, em1 / zs)
    phi2 = np.where(small, 0.5 + z / 6 + z * z / 24 + z ** 3 / 120, (em1 - zs) / (zs * zs))
    return phi1, phi2


@lru_cache(maxsize=32)
def _linear_coefficients(grid: GridSpec, h: float, rate_shift: float, scale: float):
    # exponential, h*phi1, h*phi2 and implicit-Euler factor for L = -(k^2 + shift)/scale
    z = -(grid.k_squared + rate_shift) * h / scale
    p1, p2 = phi_functions(z)
    return np.exp(z), h * p1, h * p2, 1.0 / (1.0 - z)


class _Workspace:
    """Per-grid arrays reused across steps."""

    def __init__(self, grid: GridSpec):
        self.grid = grid
        self.ikx, self.iky = grid.derivative_symbols
        self.mask = grid.dealias_mask
        X, Y = grid.mesh
        self.half_x = 0.5 * X
        self.half_y = 0.5 * Y

    def real(self, coeffs: np.ndarray) -> np.ndarray:
        return np.fft.irfft2(coeffs, s=(self.grid.n, self.grid.n))


@lru_cache(maxsize=8)
def _workspace(grid: GridSpec) -> _Workspace:
    return _Workspace(grid)


def _check_step(state: SimState, u_new: np.ndarray, v_new: np.ndarray, cfg: SolverConfig):
    if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(v_new))):
        raise InstabilityError(f"non-finite values after step at time {state.time:.6g}", state)
    old_peak = float(np.max(np.abs(state.u.values)))
    new_peak = float(np.max(np.abs(u_new)))
    if old_peak > 0 and new_peak > cfg.growth_limit * old_peak:
        raise InstabilityError(
            f"max|u| grew by {new_peak / old_peak:.3g}x in one step at time {state.time:.6g}", state)
    umin = float(np.min(u_new))
    if umin < -cfg.pos_tol * new_peak:
        raise PositivityError(
            f"min u = {umin:.3e} below -{cfg.pos_tol:.1e} * max u at time {state.time:.6g}")
    if cfg.check_localization:
        sp.check_localized(u_new, state.grid, cfg.loc_tol_u, "u")
        sp.check_localized(v_new, state.grid, cfg.loc_tol_v, "v")


def _chemotactic_flux(ws: _Workspace, u: np.ndarray, vh: np.ndarray):
    vx = ws.real(ws.ikx * vh)
    vy = ws.real(ws.iky * vh)
    return u * vx, u * vy, vx, vy


def _finish(ws: _Workspace, fx: np.ndarray, fy: np.ndarray, dealias: bool) -> np.ndarray:
    N = ws.ikx * np.fft.rfft2(fx) + ws.iky * np.fft.rfft2(fy)
    if dealias:
        N = np.where(ws.mask, N, 0.0)
    return N


def step_physical(state: SimState, params: Params, cfg: SolverConfig,
                  dt: float | None = None) -> SimState:
    """One ETD (or semi-implicit) step in physical variables.

    ``dt`` overrides ``cfg.dt`` for this step (used to land on output times).
    """
    if state.frame != PHYSICAL:
        raise DomainError("step_physical needs a physical-frame state")
    ws = _workspace(state.grid)
    h = cfg.dt if dt is None else dt
    u = state.u.values
    uh = np.fft.rfft2(u)
    vh = np.fft.rfft2(state.v.values)
    if params.chemotaxis_on:
        fx, fy, _, _ = _chemotactic_flux(ws, u, vh)
        Nu = -_finish(ws, fx, fy, cfg.dealias)
    else:
        Nu = np.zeros_like(uh)
    Nv = uh / params.epsilon
    cu = _linear_coefficients(state.grid, h, 0.0, 1.0)
    cv = _linear_coefficients(state.grid, h, params.alpha, params.epsilon)
    uh_new, vh_new = _advance(cfg.scheme, state.previous, uh, vh, Nu, Nv, cu, cv, h)
    return _commit(state, ws, uh_new, vh_new, state.time + h, (Nu, Nv, h), cfg)


def _advance(scheme, previous, uh, vh, Nu, Nv, cu, cv, h):
    if scheme == "imex-drift":
        return cu[3] * (uh + h * Nu), cv[3] * (vh + h * Nv)
    uh_new = cu[0] * uh + cu[1] * Nu
    vh_new = cv[0] * vh + cv[1] * Nv
    if scheme == "etd2" and previous is not None:
        # linear extrapolation of the explicit terms; ratio handles uneven steps
        w = h / previous[2]
        uh_new += w * cu[2] * (Nu - previous[0])
        vh_new += w * cv[2] * (Nv - previous[1])
    return uh_new, vh_new


def _commit(state, ws, uh_new, vh_new, new_time, explicit, cfg) -> SimState:
    u_new = ws.real(uh_new)
    v_new = ws.real(vh_new)
    _check_step(state, u_new, v_new, cfg)
    g = state.grid
    keep = explicit if cfg.scheme == "etd2" else None
    return SimState(Field(g, u_new), Field(g, v_new), new_time, state.frame, keep)


def step_rescaled(state: SimState, params: Params, cfg: SolverConfig,
                  dt: float | None = None) -> SimState:
    """One step in rescaled variables; drift and chemotaxis are explicit."""
    if state.frame != RESCALED:
        raise DomainError("step_rescaled needs a rescaled-frame state")
    ws = _workspace(state.grid)
    h = cfg.dt if dt is None else dt
    s = state.time
    u = state.u.values
    uh = np.fft.rfft2(u)
    vh = np.fft.rfft2(state.v.values)
    vx = ws.real(ws.ikx * vh)
    vy = ws.real(ws.iky * vh)
    if params.chemotaxis_on:
        fx = u * (ws.half_x - vx)
        fy = u * (ws.half_y - vy)
    else:
        fx = u * ws.half_x
        fy = u * ws.half_y
    Nu = _finish(ws, fx, fy, cfg.dealias)
    drift_v = np.fft.rfft2(ws.half_x * vx + ws.half_y * vy)
    if cfg.dealias:
        drift_v = np.where(ws.mask, drift_v, 0.0)
    Nv = drift_v + uh / params.epsilon
    cu = _linear_coefficients(state.grid, h, 0.0, 1.0)
    if params.alpha > 0:
        # exact integral of alpha e^s over the step, as an averaged rate
        shift = params.alpha * math.exp(s) * math.expm1(h) / h
        cv = _linear_coefficients.__wrapped__(state.grid, h, shift, params.epsilon)
    else:
        cv = _linear_coefficients(state.grid, h, 0.0, params.epsilon)
    uh_new, vh_new = _advance(cfg.scheme, state.previous, uh, vh, Nu, Nv, cu, cv, h)
    return _commit(state, ws, uh_new, vh_new, s + h, (Nu, Nv, h), cfg)


def step(state: SimState, params: Params, cfg: SolverConfig, dt: float | None = None) -> SimState:
    """Dispatch on the state's frame."""
    if state.frame == PHYSICAL:
        return step_physical(state, params, cfg, dt)
    return step_rescaled(state, params, cfg, dt)


def evolve(state: SimState, params: Params, cfg: SolverConfig, n_steps: int,
           every: int = 0, observer: Callable[[SimState], None] | None = None) -> SimState:
    """Advance ``n_steps`` steps, calling ``observer`` every ``every`` steps.

    The observer also sees the initial state when ``every > 0``.
    """
    if observer is not None and every > 0:
        observer(state)
    for i in range(1, n_steps + 1):
        state = step(state, params, cfg)
        if observer is not None and every > 0 and i % every == 0:
            observer(state)
    return state


def advance_to(state: SimState, params: Params, cfg: SolverConfig, until: float,
               sample_times=(), observer: Callable[[SimState], None] | None = None) -> SimState:
    """Step up to frame time ``until``, landing exactly on every sample time.

    Steps have size ``cfg.dt`` except the last one before each sample time,
    which is shortened.  ``observer`` sees the initial state and the state
    at each sample time inside (time, until].
    """
    stops = sorted(float(x) for x in sample_times if state.time < x <= until)
    if not stops or stops[-1] < until:
        stops.append(float(until))
    wanted = set(float(x) for x in sample_times)
    if observer is not None:
        observer(state)
    tiny = 1e-9 * cfg.dt
    for stop in stops:
        while stop - state.time > tiny:
            h = cfg.dt if stop - state.time > cfg.dt * (1 + 1e-9) else stop - state.time
            state = step(state, params, cfg, h)
        state = replace(state, time=stop)
        if observer is not None and stop in wanted:
            observer(state)
    return state


def to_rescaled(state: SimState, grid: GridSpec | None = None) -> SimState:
    """Physical state at time t mapped to rescaled variables at s = log(1+t)."""
    if state.frame != PHYSICAL:
        raise DomainError("to_rescaled needs a physical-frame state")
    target = state.grid if grid is None else grid
    s = math.log1p(state.time)
    scale = math.exp(0.5 * s)
    u = sp.dilate(state.u, scale, target)
    v = sp.dilate(state.v, scale, target)
    return SimState(math.exp(s) * u, v, s, RESCALED)


def from_rescaled(state: SimState, grid: GridSpec | None = None) -> SimState:
    """Rescaled state at s mapped back to physical variables at t = e^s - 1."""
    if state.frame != RESCALED:
        raise DomainError("from_rescaled needs a rescaled-frame state")
    target = state.grid if grid is None else grid
    s = state.time
    scale = math.exp(-0.5 * s)
    u = sp.dilate(state.u, scale, target)
    v = sp.dilate(state.v, scale, target)
    return SimState(math.exp(-s) * u, v, math.expm1(s), PHYSICAL)


def apply_semigroup_S(f: Field, s: float, outside_tol: float = 1e-10) -> Field:
    """e^s (G(e^s - 1) * f)(e^{s/2} xi): the linear u~ flow over rescaled time s."""
    if not s > 0:
        raise DomainError("semigroup time must be positive")
    g = sp.heat_propagate(f, math.expm1(s))
    return math.exp(s) * sp.dilate(g, math.exp(0.5 * s), outside_tol=outside_tol)


def apply_semigroup_Seps(f: Field, s: float, epsilon: float, outside_tol: float = 1e-10) -> Field:
    """(G((e^s - 1)/eps) * f)(e^{s/2} xi): the linear v~ flow over rescaled time s."""
    if not s > 0:
        raise DomainError("semigroup time must be positive")
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    g = sp.heat_propagate(f, math.expm1(s) / epsilon)
    return sp.dilate(g, math.exp(0.5 * s), outside_tol=outside_tol)


def _entropy(u: np.ndarray, pos_tol: float) -> np.ndarray:
    peak = float(np.max(u))
    if float(np.min(u)) < -pos_tol * max(peak, 0.0):
        raise PositivityError("u is negative beyond the tolerance; entropy undefined")
    pos = u > 0
    out = np.zeros_like(u)
    out[pos] = u[pos] * np.log(u[pos])
    return out


def _energy_terms(state: SimState, pos_tol: float) -> tuple[float, float, float, float]:
    g = state.grid
    u, v = state.u.values, state.v.values
    vx, vy = sp.gradient(state.v)
    dA = g.cell_area
    return (float(np.sum(_entropy(u, pos_tol)) * dA),
            float(np.sum(u * v) * dA),
            float(np.sum(vx.values ** 2 + vy.values ** 2) * dA),
            float(np.sum(v * v) * dA))


def free_energy(state: SimState, params: Params, pos_tol: float = 1e-10) -> float:
    """int u log u - int u v + 1/2 int |grad v|^2 + alpha/2 int v^2."""
    if state.frame != PHYSICAL:
        raise DomainError("free_energy needs a physical-frame state")
    ent, cross, grad2, v2 = _energy_terms(state, pos_tol)
    return ent - cross + 0.5 * grad2 + 0.5 * params.alpha * v2


def rescaled_lyapunov(state: SimState, params: Params, pos_tol: float = 1e-10) -> float:
    """-M s + int u~ log u~ - int u~ v~ + 1/2 int |grad v~|^2 (+ alpha e^s/2 int v~^2).

    Equals the physical free energy at t = e^s - 1.
    """
    if state.frame != RESCALED:
        raise DomainError("rescaled_lyapunov needs a rescaled-frame state")
    ent, cross, grad2, v2 = _energy_terms(state, pos_tol)
    s = state.time
    value = -state.mass * s + ent - cross + 0.5 * grad2
    if params.alpha > 0:
        value += 0.5 * params.alpha * math.exp(s) * v2
    return value


def gaussian_state(M: float, sigma: float, grid: GridSpec, frame: str = PHYSICAL,
                   v0: float = 0.0) -> SimState:
    """Gaussian cell density of mass M and standard deviation sigma.

    The density equals M G(t0) with t0 = sigma^2/2 and the clock starts at
    t0, so the pure heat flow reproduces M G(t) exactly.  ``v0`` is the
    peak of an optional Gaussian chemoattractant of the same width.
    """
    if not (M > 0 and sigma > 0):
        raise DomainError("mass and sigma must be positive")
    t0 = 0.5 * sigma * sigma
    if frame == PHYSICAL:
        u = sp.heat_kernel_values(M, t0, grid)
        v = v0 * np.exp(-grid.radius_sq / (2 * sigma * sigma))
        return SimState(Field(grid, u), Field(grid, v), t0, PHYSICAL)
    if frame != RESCALED:
        raise DomainError(f"unknown frame {frame!r}")
    s0 = math.log1p(t0)
    stretch = math.exp(s0)
    u = sp.heat_kernel_values(M, t0 / stretch, grid)
    v = v0 * np.exp(-grid.radius_sq * stretch / (2 * sigma * sigma))
    return SimState(Field(grid, u), Field(grid, v), s0, RESCALED)


# profiles feeding the PDE are integrated more tightly than the mass map so
# that the stationary pair is consistent far below the stepper's error
PROFILE_REL_TOL = 1e-12
PROFILE_ABS_TOL = 1e-16


@lru_cache(maxsize=32)
def _profile_for(M: float, epsilon: float, r_step: float, strict: bool) -> RadialProfile:
    a = invert_mass(M, epsilon, strict=strict)
    sol = integrate_profile(ShootingConfig(epsilon=epsilon, a=a, rel_tol=PROFILE_REL_TOL,
                                           abs_tol=PROFILE_ABS_TOL))
    R = math.sqrt(sol.y_max)
    n = max(int(math.ceil(R / r_step)), 16)
    return reconstruct_profile(sol, np.linspace(0.0, R, n + 1))


def selfsimilar_profile(M: float, epsilon: float, r_step: float = 0.05,
                        strict: bool = True) -> RadialProfile:
    """Radial profile of mass M sampled with spacing close to ``r_step``."""
    if strict and not 0 < M < tildeM_of(epsilon):
        raise OutOfUniquenessRange(f"M={M} outside (0, {tildeM_of(epsilon):.6g})")
    return _profile_for(float(M), float(epsilon), float(r_step), strict)


def self_similar_state(M: float, epsilon: float, t: float, grid: GridSpec,
                       frame: str = PHYSICAL, r_step: float | None = None) -> SimState:
    """Self-similar solution u_M(x,t) = U(x/sqrt t)/t, v_M(x,t) = V(x/sqrt t).

    In the rescaled frame the state is the stationary pair (U, V) at s = t.
    The profile is tabulated with radial spacing ``r_step`` (default: half
    the grid spacing in profile units) and evaluated by quintic splines, so
    the sampling error of the initial data shrinks with the grid spacing.
    """
    if frame == PHYSICAL:
        if not t > 0:
            raise DomainError("self-similar state needs t > 0")
        scale = math.sqrt(t)
    elif frame == RESCALED:
        scale = 1.0
    else:
        raise DomainError(f"unknown frame {frame!r}")
    step_r = 0.5 * grid.dx / scale if r_step is None else r_step
    prof = selfsimilar_profile(M, epsilon, step_r)
    r = np.sqrt(grid.radius_sq) / scale
    amp = 1.0 / t if frame == PHYSICAL else 1.0
    u = amp * prof.U_at(r.ravel()).reshape(r.shape)
    v = prof.V_at(r.ravel()).reshape(r.shape)
    return SimState(Field(grid, u), Field(grid, v), float(t), frame)
