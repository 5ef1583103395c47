"""Property-based checks of the invariants of every module."""

import math

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from kellersegel import config, diagnostics as dg, profiles as pr, spectral as sp, storage
from kellersegel.simulator import Params, SimState, SolverConfig, phi_functions, step
from kellersegel.spectral import Field, GridSpec

GRID = GridSpec(64, 8.0)
SLOW = settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
FAST = settings(max_examples=60, deadline=None)

eps_st = st.floats(0.05, 50.0)
a_st = st.floats(1e-3, 20.0)


@FAST
@given(eps_st)
def test_uniqueness_threshold_in_range(eps):
    M = pr.tildeM_of(eps)
    assert 4 * math.pi * (1 - 1e-15) <= M <= 8 * math.pi * (1 + 1e-15)


@FAST
@given(st.floats(0.5001, 20.0))
def test_A_is_positive_and_finite_above_half(eps):
    A = pr.A_of(eps)
    assert A > 0


@SLOW
@given(a_st, st.floats(0.2, 5.0))
def test_mass_lower_bound_and_profile_invariants(a, eps):
    sol = pr.integrate_profile(pr.ShootingConfig(epsilon=eps, a=a))
    m = min(1.0, eps)
    assert sol.mass / (8 * math.pi) >= a * m / (a + m) * (1 - 1e-9)
    assert all(sol.check_bounds().values())
    assert np.all(np.diff(sol.phi) > 0)


@SLOW
@given(st.floats(1e-3, 2.0), st.floats(1.01, 3.0), st.floats(0.3, 1.0))
def test_mass_map_increasing_below_uniqueness_range(a, factor, eps):
    # strict monotonicity is only claimed below max(A(eps), 1)
    hi = a * factor
    if hi >= max(pr.A_of(eps), 1.0):
        return
    assert pr.mass_of(hi, eps) > pr.mass_of(a, eps)


@SLOW
@given(st.floats(0.05, 3.0), st.sampled_from([0.5, 1.0, 2.0]))
def test_invert_round_trip(a0, eps):
    if pr.mass_of(a0, eps) >= pr.tildeM_of(eps):
        return
    a = pr.invert_mass(pr.mass_of(a0, eps), eps)
    assert abs(a - a0) / a0 < 1e-6


@FAST
@given(st.integers(0, 2 ** 32 - 1))
def test_transform_round_trip(seed):
    f = Field(GRID, np.random.default_rng(seed).standard_normal((64, 64)))
    back = sp.inverse_transform(sp.transform(f))
    assert np.linalg.norm(back.values - f.values) <= 1e-12 * np.linalg.norm(f.values)


@FAST
@given(st.integers(-31, 31), st.integers(0, 31))
def test_spectral_derivative_of_modes(jx, jy):
    X, Y = GRID.mesh
    k = math.pi / GRID.L
    phase = k * (jx * X + jy * Y)
    gx, gy = sp.gradient(Field(GRID, np.cos(phase)))
    assert np.max(np.abs(gx.values + jx * k * np.sin(phase))) < 1e-10
    assert np.max(np.abs(gy.values + jy * k * np.sin(phase))) < 1e-10


@FAST
@given(st.integers(0, 2 ** 32 - 1))
def test_dealias_idempotent(seed):
    F = sp.transform(Field(GRID, np.random.default_rng(seed).standard_normal((64, 64))))
    once = sp.dealias(F)
    assert np.array_equal(sp.dealias(once).coefficients, once.coefficients)


@FAST
@given(st.floats(0.01, 100.0), st.floats(1.0, 8.0) | st.just(math.inf))
def test_lp_homogeneity(c, p):
    f = Field(GRID, np.exp(-GRID.radius_sq / 2))
    assert math.isclose(sp.lp_norm(c * f, p), c * sp.lp_norm(f, p), rel_tol=1e-12)


@FAST
@given(st.floats(-700.0, 1.0))
def test_phi_functions_identities(z):
    p1, p2 = phi_functions(np.array([z]))
    # phi1 = 1 + z phi2 holds for the exact functions
    assert math.isclose(p1[0], 1.0 + z * p2[0], rel_tol=1e-7, abs_tol=1e-12)


@SLOW
@given(st.floats(0.2, 3.0), st.floats(0.9, 1.3), st.sampled_from(["etd1", "etd2"]))
def test_step_conserves_mass(M, sigma, scheme):
    g = GridSpec(128, 10.0)
    u = sp.heat_kernel_values(M, sigma ** 2 / 2, g)
    s = SimState(Field(g, u), Field(g, np.zeros_like(u)), 0.0)
    for _ in range(5):
        s = step(s, Params(1.0), SolverConfig(dt=1e-2, scheme=scheme))
    assert abs(s.mass - M) <= 1e-12 * M


@FAST
@given(st.floats(0.1, 10.0), st.floats(-3.0, 0.0))
def test_fit_recovers_exact_power_law(c, beta):
    t = np.geomspace(2, 200, 12)
    fit = dg.fit_decay_exponent(np.column_stack([t, c * t ** beta]), (2, 200))
    assert abs(fit.exponent - beta) < 1e-10


@FAST
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=8))
def test_float_text_round_trip(xs):
    for x in xs:
        assert float(storage.format_float(x)) == x


@FAST
@given(st.integers(5, 9).map(lambda e: 2 ** e), st.floats(0.1, 100.0), st.floats(1e-4, 1.0))
def test_config_hash_is_stable(n, eps, dt):
    raw = {"grid.n": str(n), "params.epsilon": repr(eps), "init.mass": "1",
           "solver.dt": repr(dt), "solver.t_end": "1"}
    a = config.resolve(raw)
    b = config.resolve(config.parse_text(a.normalized()))
    assert a.hash == b.hash
