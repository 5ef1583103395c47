import math

import numpy as np
import pytest

from kellersegel import spectral as sp
from kellersegel.errors import DomainError, InvalidState, LocalizationError, WeightOverflow
from kellersegel.spectral import Field, GridSpec, SpectralField


@pytest.fixture(scope="module")
def grid():
    return GridSpec(128, 10.0)


def gaussian(grid, sigma):
    return np.exp(-grid.radius_sq / (2 * sigma * sigma))


def test_grid_validation():
    for n in (16, 100, 48):
        with pytest.raises(DomainError):
            GridSpec(n, 1.0)
    with pytest.raises(DomainError):
        GridSpec(64, 0.0)
    g = GridSpec(64, 4.0)
    assert g.dx == pytest.approx(0.125)
    assert g.x[0] == -4.0 and g.x[-1] == pytest.approx(4.0 - g.dx)


def test_field_validation(grid):
    with pytest.raises(InvalidState):
        Field(grid, np.full((grid.n, grid.n), np.nan))
    with pytest.raises(DomainError):
        Field(grid, np.zeros((4, 4)))
    with pytest.raises(DomainError):
        SpectralField(grid, np.zeros((grid.n, grid.n), complex))


def test_constant_has_only_zero_mode(grid):
    F = sp.transform(Field(grid, np.full((grid.n, grid.n), 3.0)))
    c = F.coefficients.copy()
    assert c[0, 0] == pytest.approx(3.0 * grid.n ** 2)
    c[0, 0] = 0
    assert np.max(np.abs(c)) < 1e-9


def test_single_cosine_mode(grid):
    X, _ = grid.mesh
    F = sp.transform(Field(grid, np.cos(math.pi * X / grid.L * 3)))
    nz = np.argwhere(np.abs(F.coefficients) > 1e-8)
    assert sorted(map(tuple, nz)) == [(3, 0), (grid.n - 3, 0)]


def test_round_trip_random(grid):
    rng = np.random.default_rng(7)
    f = Field(grid, rng.standard_normal((grid.n, grid.n)))
    back = sp.inverse_transform(sp.transform(f))
    assert np.linalg.norm(back.values - f.values) / np.linalg.norm(f.values) < 1e-12


def test_derivative_of_cosine(grid):
    X, _ = grid.mesh
    k = math.pi / grid.L
    gx, gy = sp.gradient(Field(grid, np.cos(k * X)))
    assert np.max(np.abs(gx.values + k * np.sin(k * X))) < 1e-12
    assert np.max(np.abs(gy.values)) < 1e-12


def test_laplacian_of_gaussian(grid):
    s = 1.0
    f = Field(grid, gaussian(grid, s))
    r2 = grid.radius_sq
    exact = (r2 / s ** 4 - 2 / s ** 2) * np.exp(-r2 / (2 * s * s))
    assert np.max(np.abs(sp.laplacian(f).values - exact)) < 1e-8


def test_div_grad_is_laplacian(grid):
    f = Field(grid, gaussian(grid, 1.3))
    assert np.max(np.abs(sp.divergence(*sp.gradient(f)).values - sp.laplacian(f).values)) < 1e-12


def test_heat_propagation_of_gaussian():
    g = GridSpec(128, 20.0)
    t0, t = 1.0, 2.0
    f = sp.heat_kernel_field(1.0, t0, g)
    out = sp.heat_propagate(f, t)
    assert np.max(np.abs(out.values - sp.heat_kernel_values(1.0, t0 + t, g))) < 1e-10


def test_heat_identity_semigroup_and_zero_mode(grid):
    f = Field(grid, gaussian(grid, 1.0))
    assert sp.heat_propagate(f, 0.0) is f
    a = sp.heat_propagate(sp.heat_propagate(f, 0.3), 0.4)
    b = sp.heat_propagate(f, 0.7)
    assert np.max(np.abs(a.values - b.values)) < 1e-12
    # the zero-mode multiplier is exactly one, so mass moves only by rounding
    assert np.exp(-grid.k_squared[0, 0] * 0.7) == 1.0
    assert b.integral() == pytest.approx(f.integral(), rel=1e-14)
    with pytest.raises(DomainError):
        sp.heat_propagate(f, -1.0)


def test_heat_kernel_field():
    g = GridSpec(128, 20.0)
    f = sp.heat_kernel_field(3.0, 2.0, g)
    assert f.integral() == pytest.approx(3.0, abs=1e-10)
    assert np.max(f.values) == pytest.approx(3.0 / (8 * math.pi), rel=1e-14)
    assert sp.lp_norm(f, 2) == pytest.approx(sp.gaussian_lp_norm(3.0, 2.0, 2), rel=1e-8)
    with pytest.raises(DomainError):
        sp.heat_kernel_field(1.0, 0.0, g)


def test_lp_norms(grid):
    f = Field(grid, gaussian(grid, 1.0))
    assert sp.lp_norm(3.0 * f, 3) == pytest.approx(3.0 * sp.lp_norm(f, 3), rel=1e-14)
    assert sp.lp_norm(f, 1) == pytest.approx(2 * math.pi, abs=1e-10)
    assert sp.lp_norm(f, math.inf) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        sp.lp_norm(f, 0.5)


def test_weighted_norm():
    g = GridSpec(128, 12.0)
    f = Field(g, np.exp(-g.radius_sq / 4))
    # int e^{-|xi|^2/2} e^{|xi|^2/4} = int e^{-|xi|^2/4} = 4 pi
    assert sp.weighted_l2_norm(f, 1.0) ** 2 == pytest.approx(4 * math.pi, rel=1e-8)
    assert sp.weighted_l2_norm(2.5 * f, 1.0) == pytest.approx(2.5 * sp.weighted_l2_norm(f, 1.0))
    wide = Field(g, np.exp(-g.radius_sq / 40))
    with pytest.raises(WeightOverflow):
        sp.weighted_l2_norm(wide, 1.0)
    with pytest.raises(DomainError):
        sp.weighted_l2_norm(f, 0.0)


def test_dealias_properties(grid):
    rng = np.random.default_rng(3)
    F = sp.transform(Field(grid, rng.standard_normal((grid.n, grid.n))))
    once = sp.dealias(F)
    assert np.array_equal(sp.dealias(once).coefficients, once.coefficients)
    X, Y = grid.mesh
    k = math.pi / grid.L
    low = Field(grid, np.cos(5 * k * X) + np.sin(7 * k * Y))
    kept = sp.inverse_transform(sp.dealias(sp.transform(low)))
    assert np.max(np.abs(kept.values - low.values)) < 1e-12


def test_dealias_removes_aliased_product():
    # direct convolution oracle: modes j1 + j2 beyond n/2 alias to j1 + j2 - n
    g = GridSpec(32, 1.0)
    n = g.n
    j1, j2 = 9, 10  # both kept by the 2/3 rule (cutoff index n/3 ~ 10.7)
    x = np.arange(n)
    e1 = np.exp(2j * np.pi * j1 * x / n)
    e2 = np.exp(2j * np.pi * j2 * x / n)
    prod = np.real(np.outer(e1 * e2, np.ones(n)))
    F = sp.transform(Field(g, prod))
    alias = (j1 + j2) - n  # = -13 -> index n - 13
    assert abs(F.coefficients[alias % n, 0]) > 1.0
    D = sp.dealias(F)
    assert abs(D.coefficients[alias % n, 0]) == 0.0


def test_drift_diffusion_eigenfunction():
    g = GridSpec(128, 12.0)
    for theta in (0.5, 1.0, 2.0):
        f = Field(g, np.exp(-theta * g.radius_sq / 4))
        out = sp.drift_diffusion_operator(f, theta)
        inner = g.radius_sq < 64
        assert np.max(np.abs(out.values - theta * f.values)[inner]) < 1e-8


def test_localization_check(grid):
    f = gaussian(grid, 1.0)
    sp.check_localized(f, grid, 1e-12)
    with pytest.raises(LocalizationError):
        sp.check_localized(gaussian(grid, 4.0), grid, 1e-12)


def test_sample_tensor_and_dilate():
    g = GridSpec(128, 12.0)
    f = Field(g, np.exp(-g.radius_sq / 2))
    pts = np.array([0.123, -1.7, 2.05])
    vals = sp.sample_tensor(f, pts, pts)
    assert np.max(np.abs(vals - np.exp(-(pts[:, None] ** 2 + pts[None, :] ** 2) / 2))) < 1e-10
    d = sp.dilate(f, 2.0)
    assert np.max(np.abs(d.values - np.exp(-4 * g.radius_sq / 2))) < 1e-10
    with pytest.raises(DomainError):
        sp.dilate(Field(g, np.exp(-g.radius_sq / 50)), 2.0)
