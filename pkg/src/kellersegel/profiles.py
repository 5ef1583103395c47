"""Self-similar profiles of the doubly parabolic Keller-Segel system.

Radial profiles (U, V) are encoded through cumulated densities in the
variable y = r**2.  With phi the cumulated mass and S the cumulated
chemoattractant flux, the profile problem becomes the shooting problem

    phi'' + phi'/4 + phi' S / (2 y) = 0,
    S' + eps S / 4 = phi',
    phi(0) = 0, phi'(0) = a, S(0) = 0,

and the total mass of the profile is M(a, eps) = 2 pi phi(inf).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import make_interp_spline
from scipy.optimize import minimize_scalar
from scipy.special import exp1

from .errors import (
    DomainError,
    IntegrationFailure,
    InvalidState,
    NumericalError,
    OutOfUniquenessRange,
    UniquenessWarning,
)

TWO_PI = 2.0 * math.pi
EIGHT_PI = 8.0 * math.pi

# relative slack used by per-node bound checks (integrator error budget)
BOUND_SLACK = 1e-9
A_LO = 1e-8
A_HI = 1e6


@dataclass(frozen=True)
class ShootingConfig:
    """Parameters of one shooting integration."""

    epsilon: float
    a: float
    y_max: float = 80.0
    rel_tol: float = 1e-10
    abs_tol: float = 1e-14
    h_init: float = 1e-6

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")
        if not (self.a > 0 and math.isfinite(self.a)):
            raise DomainError(f"a must be positive, got {self.a}")
        if not self.y_max >= 40:
            raise DomainError(f"y_max must be >= 40, got {self.y_max}")
        for name in ("rel_tol", "abs_tol"):
            tol = getattr(self, name)
            if not 0 < tol <= 1e-3:
                raise DomainError(f"{name} must lie in (0, 1e-3], got {tol}")
        if not self.h_init > 0:
            raise DomainError("h_init must be positive")

    @property
    def scaled_abs_tol(self) -> float:
        """Absolute tolerance scaled with a (all components are O(a) for small a)."""
        return self.abs_tol * min(1.0, self.a)

    @property
    def start_step(self) -> float:
        """Series step, shrunk for large a so that a*h stays small."""
        return self.h_init / max(1.0, self.a)


def ode_rhs(y: float, state, epsilon: float) -> np.ndarray:
    """Right-hand side of the cumulated-density system for y > 0.

    ``state`` is (phi, phi', S); returns (phi', phi'', S').
    """
    phi, dphi, S = state
    if not (np.isfinite(phi) and np.isfinite(dphi) and np.isfinite(S)):
        raise InvalidState(f"non-finite state {tuple(state)} at y={y}")
    if not y > 0:
        raise DomainError("ode_rhs needs y > 0; use series_start near the origin")
    d2phi = -0.25 * dphi - dphi * S / (2.0 * y)
    dS = dphi - 0.25 * epsilon * S
    return np.array([dphi, d2phi, dS])


def _second_derivatives(a: float, epsilon: float) -> tuple[float, float]:
    # y -> 0 limits of phi'' and S'' (S ~ a y near the origin)
    d2phi = -0.25 * a - 0.5 * a * a
    d2S = d2phi - 0.25 * epsilon * a
    return d2phi, d2S


def series_start(a: float, epsilon: float, h: float) -> tuple[float, float, float]:
    """Second-order Taylor values (phi, phi', S) at y = h."""
    if not h > 0:
        raise DomainError(f"series step must be positive, got {h}")
    d2phi, d2S = _second_derivatives(a, epsilon)
    return (a * h + 0.5 * d2phi * h * h, a + d2phi * h, a * h + 0.5 * d2S * h * h)


def _rhs_fast(y, s, epsilon):
    return [s[1], -0.25 * s[1] - s[1] * s[2] / (2.0 * y), s[1] - 0.25 * epsilon * s[2]]


def _phi_prime_event(floor: float):
    # phi' below -floor is a genuine sign change, not tolerance-level noise
    def event(y, s, epsilon):
        return s[1] + floor

    event.terminal = True
    event.direction = -1
    return event


@dataclass(frozen=True)
class ProfileSolution:
    """Sampled trajectory of the shooting problem."""

    y: np.ndarray
    phi: np.ndarray
    phi_prime: np.ndarray
    S: np.ndarray
    a: float
    epsilon: float
    mass: float
    tail_correction: float
    start_step: float = field(default=0.0, repr=False)
    abs_slack: float = field(default=0.0, repr=False)
    dense: Callable | None = field(default=None, repr=False, compare=False)

    @property
    def y_max(self) -> float:
        return float(self.y[-1])

    def evaluate(self, y) -> np.ndarray:
        """(phi, phi', S) at arbitrary points of [0, y_max], shape (3, len(y))."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if np.any(y < 0) or np.any(y > self.y_max * (1 + 1e-12)):
            raise DomainError("evaluation point outside [0, y_max]")
        out = np.empty((3, y.size))
        near = y <= self.start_step
        if np.any(near):
            out[:, near] = np.array(series_start_vec(self.a, self.epsilon, y[near]))
        far = ~near
        if np.any(far):
            if self.dense is None:
                for i, row in enumerate((self.phi, self.phi_prime, self.S)):
                    out[i, far] = np.interp(y[far], self.y, row)
            else:
                out[:, far] = self.dense(np.minimum(y[far], self.y_max))
        return out

    def check_bounds(self) -> dict[str, bool]:
        """Evaluate every a-priori bound at every stored node."""
        return {k: bool(np.all(v)) for k, v in bound_masks(self).items()}


def series_start_vec(a: float, epsilon: float, y: np.ndarray):
    d2phi, d2S = _second_derivatives(a, epsilon)
    return (a * y + 0.5 * d2phi * y * y, a + d2phi * y, a * y + 0.5 * d2S * y * y)


def bound_masks(sol: ProfileSolution, slack: float = BOUND_SLACK) -> dict[str, np.ndarray]:
    """Per-node truth values of the a-priori bounds on a solution.

    Comparisons allow a relative ``slack`` plus the solution's absolute
    integration slack, so only violations above the error budget count.
    """
    tol = sol.abs_slack
    a, eps = sol.a, sol.epsilon
    y, phi, dphi, S = sol.y, sol.phi, sol.phi_prime, sol.S
    m = min(1.0, eps)
    half_mass = sol.mass / TWO_PI
    with np.errstate(over="ignore"):
        denom = (m + a) * np.exp(m * y / 4.0) - a
        s_bound = np.where(y > 0, m * a * y / np.where(y > 0, denom, 1.0), 0.0)
    decay = a * np.exp(-y / 4.0)
    masks = {
        "phi_prime_decay": ((dphi > 0) | (np.abs(dphi) <= tol)) & (dphi <= decay * (1 + slack) + tol),
        "S_upper": ((S > 0) | (y == 0) | (np.abs(S) <= tol)) & (S <= s_bound * (1 + slack) + tol),
        "phi_sandwich": (half_mass * (1 - np.exp(-y / 4.0)) <= phi * (1 + slack) + tol)
        & (phi <= half_mass * (1 + slack) + tol),
        "mass_lower": np.array([sol.mass / EIGHT_PI >= a * m / (a + m) * (1 - slack)]),
    }
    if a < max(A_of(eps), 1.0):
        masks["epsS_below_2"] = eps * S < 2.0
    return masks


def integrate_profile(config: ShootingConfig, check: bool = True) -> ProfileSolution:
    """Adaptive DOP853 integration of the shooting problem up to y_max.

    The mass is 2 pi (phi(y_max) + 4 phi'(y_max)); the second term bounds the
    remaining tail integral of phi'.
    """
    a, eps = config.a, config.epsilon
    h = config.start_step
    start = series_start(a, eps, h)
    res = solve_ivp(
        _rhs_fast,
        (h, config.y_max),
        start,
        method="DOP853",
        rtol=config.rel_tol,
        atol=config.scaled_abs_tol,
        args=(eps,),
        events=_phi_prime_event(10.0 * config.scaled_abs_tol),
        dense_output=True,
    )
    if res.status == 1:
        raise IntegrationFailure("phi' reached zero", float(res.t_events[0][0]))
    if res.status != 0:
        raise IntegrationFailure(f"integrator failed: {res.message}", float(res.t[-1]))
    if not np.all(np.isfinite(res.y)):
        bad = np.argmax(~np.all(np.isfinite(res.y), axis=0))
        raise IntegrationFailure("non-finite state", float(res.t[bad]))
    y = np.concatenate(([0.0], res.t))
    phi = np.concatenate(([0.0], res.y[0]))
    dphi = np.concatenate(([a], res.y[1]))
    S = np.concatenate(([0.0], res.y[2]))
    tail = 4.0 * dphi[-1]
    sol = ProfileSolution(
        y=y, phi=phi, phi_prime=dphi, S=S, a=a, epsilon=eps,
        mass=float(TWO_PI * (phi[-1] + tail)), tail_correction=float(TWO_PI * tail),
        start_step=h, abs_slack=10.0 * config.scaled_abs_tol, dense=res.sol,
    )
    if check:
        for name, mask in bound_masks(sol).items():
            if not np.all(mask):
                idx = int(np.argmin(mask)) if mask.size == y.size else y.size - 1
                raise IntegrationFailure(f"bound {name} violated", float(y[idx]))
        # strictness is only decidable above the rounding level of phi
        floor = sol.abs_slack + 4 * np.finfo(float).eps * np.abs(phi[1:])
        if np.any(np.diff(phi) < -floor) or np.any(np.diff(dphi) > sol.abs_slack):
            raise IntegrationFailure("phi not increasing and concave", float(y[-1]))
    return sol


@lru_cache(maxsize=4096)
def _mass_cached(a: float, epsilon: float) -> float:
    return integrate_profile(ShootingConfig(epsilon=epsilon, a=a), check=False).mass


def mass_of(a: float, epsilon: float) -> float:
    """Mass M(a, eps) of the profile with central density 2a."""
    ShootingConfig(epsilon=float(epsilon), a=float(a))
    return _mass_cached(float(a), float(epsilon))


def fixed_step_mass(a, epsilon, y_max: float = 80.0, h: float = 2e-3) -> np.ndarray:
    """Independent mass oracle: classical RK4 on a uniform grid.

    Vectorised over a batch of (a, epsilon) pairs.  Starts at y = 0 using the
    limit S/y -> phi' instead of a series, so it shares nothing with
    :func:`integrate_profile` except the equations.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    eps = np.broadcast_to(np.asarray(epsilon, dtype=float), a.shape)
    state = np.stack([np.zeros_like(a), a.copy(), np.zeros_like(a)])

    def f(y, s):
        ratio = s[2] / y if y > 0 else s[1]
        return np.stack([s[1], -0.25 * s[1] - 0.5 * s[1] * ratio, s[1] - 0.25 * eps * s[2]])

    n = int(round(y_max / h))
    for i in range(n):
        y = i * h
        k1 = f(y, state)
        k2 = f(y + 0.5 * h, state + 0.5 * h * k1)
        k3 = f(y + 0.5 * h, state + 0.5 * h * k2)
        k4 = f(y + h, state + h * k3)
        state = state + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return TWO_PI * (state[0] + 4.0 * state[1])


def A_of(epsilon: float) -> float:
    """Upper end of the a-range where eps*S < 2 is guaranteed (inf if eps <= 1/2)."""
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    if epsilon <= 0.5:
        return math.inf
    g = math.exp(1.0 - 1.0 / (2.0 * epsilon))
    denom = 2.0 * epsilon - g
    # the denominator vanishes from above as eps -> 1/2; rounding can hit zero
    return min(epsilon, 1.0) * g / denom if denom > 0 else math.inf


def tildeM_of(epsilon: float) -> float:
    """Mass threshold below which the self-similar profile is unique."""
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    if epsilon <= 0.5:
        return EIGHT_PI
    g = math.exp(1.0 - 1.0 / (2.0 * epsilon))
    if epsilon < 1.0:
        return 4.0 * math.pi * g
    return 4.0 * math.pi * max(1.0, g / epsilon)


def _bisect_log(target: float, epsilon: float, lo: float, hi: float, rtol: float) -> float:
    f_lo = mass_of(lo, epsilon) - target
    f_hi = mass_of(hi, epsilon) - target
    if f_lo > 0 or f_hi < 0:
        raise NumericalError(f"mass {target} not bracketed by a in [{lo:g}, {hi:g}]")
    llo, lhi = math.log(lo), math.log(hi)
    for _ in range(200):
        mid = 0.5 * (llo + lhi)
        if mass_of(math.exp(mid), epsilon) < target:
            llo = mid
        else:
            lhi = mid
        if lhi - llo < 1e-14:
            break
    a = math.exp(0.5 * (llo + lhi))
    if abs(mass_of(a, epsilon) - target) > rtol * target:
        raise NumericalError("bisection did not reach the mass tolerance")
    return a


def invert_mass(M: float, epsilon: float, strict: bool = False, rtol: float = 1e-8) -> float:
    """Shooting parameter a with M(a, eps) = M, by bisection in log a.

    For M below the uniqueness threshold the bracket is
    (1e-8, min(max(A(eps), 1), 1e6)).  At or above the threshold the
    smallest root is returned after expanding the upper end, with a
    :class:`UniquenessWarning`; ``strict=True`` raises instead.
    """
    if not M > 0:
        raise DomainError("mass must be positive")
    threshold = tildeM_of(epsilon)
    hi = min(max(A_of(epsilon), 1.0), A_HI)
    if M >= threshold:
        if strict:
            raise OutOfUniquenessRange(
                f"M={M:.6g} >= uniqueness threshold {threshold:.6g} for eps={epsilon}")
        warnings.warn(
            f"M={M:.6g} exceeds the uniqueness threshold {threshold:.6g}; "
            "returning the smallest shooting parameter", UniquenessWarning, stacklevel=2)
    while mass_of(hi, epsilon) < M:
        if hi >= A_HI:
            raise NumericalError(f"no shooting parameter below {A_HI:g} reaches M={M}")
        hi = min(2.0 * hi, A_HI)
    return _bisect_log(M, epsilon, A_LO, hi, rtol)


@dataclass(frozen=True)
class MassMap:
    """Tabulated mass map with the refined supremum over the sampled range."""

    epsilon: float
    a: np.ndarray
    mass: np.ndarray
    mstar_estimate: float
    a_at_mstar: float


def sweep_mass_map(epsilon: float, a_grid: Sequence[float]) -> MassMap:
    """Tabulate M(a, eps) and refine its supremum by golden-section search.

    The supremum is over the sampled a-range, so it is a lower bound of
    the true threshold M*(eps).
    """
    a = np.asarray(a_grid, dtype=float)
    if a.ndim != 1 or a.size == 0 or np.any(a <= 0) or np.any(np.diff(a) <= 0):
        raise DomainError("a_grid must be positive and strictly increasing")
    masses = np.array([mass_of(x, epsilon) for x in a])
    i = int(np.argmax(masses))
    best_a, best_m = float(a[i]), float(masses[i])
    if 0 < i < a.size - 1:
        la = np.log(a[i - 1:i + 2])
        res = minimize_scalar(lambda t: -mass_of(math.exp(t), epsilon),
                              bracket=tuple(la), method="golden", tol=1e-8)
        if -res.fun > best_m:
            best_a, best_m = math.exp(res.x), float(-res.fun)
    return MassMap(epsilon=float(epsilon), a=a, mass=masses,
                   mstar_estimate=best_m, a_at_mstar=best_a)


@dataclass(frozen=True)
class RadialProfile:
    """Reconstructed radial profile (U, V, V') on an r-grid."""

    r: np.ndarray
    U: np.ndarray
    V: np.ndarray
    V_prime: np.ndarray
    M: float
    a: float
    epsilon: float
    sigma: float
    tail_y: float = field(default=80.0, repr=False)
    tail_S: float = field(default=0.0, repr=False)
    tail_kappa: float = field(default=1.0, repr=False)
    spline_degree: int = field(default=5, repr=False)

    def _tail_V(self, r2):
        return 0.5 * self.tail_S * np.exp(self.tail_kappa * self.tail_y) * exp1(self.tail_kappa * r2)

    def V_at(self, r) -> np.ndarray:
        """Spline evaluation of V with the exponential tail beyond the grid."""
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        inside = r <= self.r[-1]
        out[inside] = _spline(self.r, self.V, self.spline_degree)(r[inside])
        out[~inside] = self._tail_V(r[~inside] ** 2)
        return out

    def U_at(self, r) -> np.ndarray:
        """Spline evaluation of U; beyond the grid U = sigma e^V e^{-r^2/4}."""
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        inside = r <= self.r[-1]
        out[inside] = _spline(self.r, self.U, self.spline_degree)(r[inside])
        ro = r[~inside]
        out[~inside] = self.sigma * np.exp(self._tail_V(ro ** 2) - ro ** 2 / 4.0)
        return out

    def mass_quadrature(self) -> float:
        """2 pi int r U dr by Simpson's rule on the stored grid."""
        from scipy.integrate import simpson
        return TWO_PI * float(simpson(self.r * self.U, x=self.r))

    def log_sigma_spread(self, rel_floor: float = 1e-8) -> float:
        """Max deviation of log U - V + r^2/4 from log sigma where U is resolved."""
        keep = self.U > rel_floor * self.U[0]
        g = np.log(self.U[keep]) - self.V[keep] + self.r[keep] ** 2 / 4.0
        return float(np.max(np.abs(g - math.log(self.sigma))))


_SPLINES: dict = {}


def _spline(x: np.ndarray, y: np.ndarray, k: int):
    # splines are memoised per (grid, values) array pair; arrays are never mutated
    key = (id(x), id(y), k)
    entry = _SPLINES.get(key)
    if entry is None or entry[0] is not x or entry[1] is not y:
        if len(_SPLINES) > 64:
            _SPLINES.clear()
        entry = (x, y, make_interp_spline(x, y, k=k))
        _SPLINES[key] = entry
    return entry[2]


def _simpson_panels(f: Callable, lo: np.ndarray, hi: np.ndarray, m: int) -> np.ndarray:
    # composite Simpson with m (even) panels on every interval [lo_i, hi_i]
    t = np.linspace(0.0, 1.0, m + 1)
    w = np.ones(m + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    pts = lo[:, None] + (hi - lo)[:, None] * t[None, :]
    vals = f(pts.ravel()).reshape(pts.shape)
    return (hi - lo) / (3.0 * m) * (vals @ w)


def reconstruct_profile(sol: ProfileSolution, r_grid: Sequence[float],
                        panel_width: float = 0.02, spline_degree: int = 5) -> RadialProfile:
    """Build (U, V, V') on ``r_grid`` from the cumulated densities.

    U(r) = 2 phi'(r^2), V'(r) = -S(r^2)/r and V(r) = int_r^inf S(rho^2)/rho drho;
    the integral is composite Simpson on the dense solution up to sqrt(y_max)
    plus an analytic exponential-integral tail.
    """
    r = np.asarray(r_grid, dtype=float)
    R = math.sqrt(sol.y_max)
    if r.ndim != 1 or r.size < spline_degree + 1 or np.any(np.diff(r) <= 0):
        raise DomainError(f"r_grid must be strictly increasing with >= {spline_degree + 1} points")
    if r[0] < 0 or r[-1] > R * (1 + 1e-12):
        raise DomainError(f"r_grid must lie in [0, {R:.6g}]")
    r = np.minimum(r, R)
    vals = sol.evaluate(r * r)
    U = 2.0 * vals[1]
    S = vals[2]
    Vp = np.where(r > 0, -S / np.where(r > 0, r, 1.0), 0.0)

    def integrand(rho):
        s = sol.evaluate(rho * rho)[2]
        return np.where(rho > 0, s / np.where(rho > 0, rho, 1.0), 0.0)

    nodes = np.append(r, R)
    widths = np.diff(nodes)
    m = 2 * np.maximum(1, np.ceil(widths / panel_width).astype(int) // 2 + 1)
    seg = np.zeros(r.size)
    for mm in np.unique(m):
        sel = m == mm
        if np.any(widths[sel] > 0):
            seg[sel] = _simpson_panels(integrand, nodes[:-1][sel], nodes[1:][sel], int(mm))
    Y = sol.y_max
    end = sol.evaluate(Y)[:, 0]
    S_Y, dphi_Y = float(end[2]), float(end[1])
    kappa = sol.epsilon / 4.0 - dphi_Y / S_Y
    if not kappa > 0:
        kappa = min(1.0, sol.epsilon) / 4.0
    tail = 0.5 * S_Y * math.exp(kappa * Y) * float(exp1(kappa * Y))
    V = tail + np.cumsum(seg[::-1])[::-1]
    keep = U > 1e-8 * U[0]
    log_sigma = float(np.mean(np.log(U[keep]) - V[keep] + r[keep] ** 2 / 4.0))
    return RadialProfile(
        r=r, U=U, V=V, V_prime=Vp, M=sol.mass, a=sol.a, epsilon=sol.epsilon,
        sigma=math.exp(log_sigma), tail_y=Y, tail_S=S_Y, tail_kappa=kappa,
        spline_degree=spline_degree,
    )


def profile_for_mass(M: float, epsilon: float, r_grid: Sequence[float] | None = None,
                     strict: bool = True) -> RadialProfile:
    """Profile of prescribed mass (inverts the mass map first)."""
    a = invert_mass(M, epsilon, strict=strict)
    sol = integrate_profile(ShootingConfig(epsilon=epsilon, a=a))
    if r_grid is None:
        r_grid = np.linspace(0.0, math.sqrt(sol.y_max), 801)
    return reconstruct_profile(sol, r_grid)


def profile_continuity_check(M_list: Sequence[float], epsilon: float, p: float = 1.0,
                             r: float = 2.0, r_max: float = 8.0, n_r: int = 1601) -> float:
    """Largest adjacent-mass distance ||U_i - U_j||_p + ||V'_i - V'_j||_r.

    Norms are planar (weight 2 pi r dr) on a shared radial grid.
    """
    masses = [float(m) for m in M_list]
    if any(b < a_ for a_, b in zip(masses, masses[1:])):
        raise DomainError("M_list must be sorted")
    threshold = tildeM_of(epsilon)
    if any(not 0 < m < threshold for m in masses):
        raise OutOfUniquenessRange("masses must lie in (0, tildeM(eps))")
    if len(masses) < 2:
        return 0.0
    grid = np.linspace(0.0, r_max, n_r)
    profiles = {}
    for m in sorted(set(masses)):
        profiles[m] = profile_for_mass(m, epsilon, grid)
    best = 0.0
    for m1, m2 in zip(masses, masses[1:]):
        if m1 == m2:
            continue
        P, Q = profiles[m1], profiles[m2]
        d = _radial_norm(P.U - Q.U, grid, p) + _radial_norm(P.V_prime - Q.V_prime, grid, r)
        best = max(best, d)
    return best


def _radial_norm(f: np.ndarray, r: np.ndarray, p: float) -> float:
    from scipy.integrate import simpson
    if math.isinf(p):
        return float(np.max(np.abs(f)))
    return float(simpson(TWO_PI * r * np.abs(f) ** p, x=r)) ** (1.0 / p)


def summary_dict(sol: ProfileSolution) -> dict:
    """JSON-ready summary of one shooting run."""
    A = A_of(sol.epsilon)
    bounds = sol.check_bounds()
    return {
        "epsilon": sol.epsilon,
        "a": sol.a,
        "mass": sol.mass,
        "tilde_M": tildeM_of(sol.epsilon),
        "A_eps": "inf" if math.isinf(A) else A,
        "bounds_ok": list(bounds.values()),
        "bound_names": list(bounds.keys()),
    }
