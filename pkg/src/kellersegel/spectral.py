"""Periodic pseudo-spectral fields on the square [-L, L)^2.

Real fields are transformed with ``rfft2``; only the non-negative half of
the second wavenumber axis is stored, the rest follows from Hermitian
symmetry.  Integrals use the rectangle rule, which is spectrally accurate
for smooth fields that decay before reaching the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DomainError, InvalidState, LocalizationError, WeightOverflow


@dataclass(frozen=True)
class GridSpec:
    """n x n periodic grid on [-L, L)^2."""

    n: int
    half_width: float

    def __post_init__(self):
        n = self.n
        if not isinstance(n, (int, np.integer)) or n < 32 or n & (n - 1):
            raise DomainError(f"n must be a power of two >= 32, got {n}")
        if not (self.half_width > 0 and math.isfinite(self.half_width)):
            raise DomainError(f"half_width must be positive, got {self.half_width}")

    @property
    def L(self) -> float:
        return float(self.half_width)

    @property
    def dx(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def cell_area(self) -> float:
        return self.dx * self.dx

    @cached_property
    def x(self) -> np.ndarray:
        return -self.half_width + self.dx * np.arange(self.n)

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.x, indexing="ij")

    @cached_property
    def radius_sq(self) -> np.ndarray:
        X, Y = self.mesh
        return X * X + Y * Y

    @cached_property
    def k_full(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        """(kx, ky) broadcastable to the rfft2 coefficient shape."""
        kx = self.k_full[:, None]
        ky = 2.0 * np.pi * np.fft.rfftfreq(self.n, d=self.dx)[None, :]
        return kx, ky

    @cached_property
    def k_squared(self) -> np.ndarray:
        kx, ky = self.wavenumbers
        return kx * kx + ky * ky

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """True for modes kept by the 2/3 rule."""
        kx, ky = self.wavenumbers
        cut = (2.0 / 3.0) * np.pi / self.dx
        return (np.abs(kx) <= cut) & (np.abs(ky) <= cut)

    @cached_property
    def derivative_symbols(self) -> tuple[np.ndarray, np.ndarray]:
        """i*kx, i*ky with the unpaired Nyquist modes zeroed (real derivatives)."""
        kx, ky = self.wavenumbers
        kx = kx.copy()
        ky = ky.copy()
        kx[self.n // 2, 0] = 0.0
        ky[0, -1] = 0.0
        return 1j * kx, 1j * ky

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        """Outermost ring of grid cells."""
        m = np.zeros((self.n, self.n), dtype=bool)
        m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = True
        return m


@dataclass(frozen=True)
class Field:
    """Real samples on a grid."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n, self.grid.n):
            raise DomainError(f"values shape {v.shape} does not match n={self.grid.n}")
        if not np.all(np.isfinite(v)):
            raise InvalidState("field contains non-finite values")
        object.__setattr__(self, "values", v)

    def __add__(self, other: "Field") -> "Field":
        _same_grid(self, other)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        _same_grid(self, other)
        return Field(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> "Field":
        return Field(self.grid, c * self.values)

    __rmul__ = __mul__

    def integral(self) -> float:
        return float(np.sum(self.values) * self.grid.cell_area)


@dataclass(frozen=True)
class SpectralField:
    """rfft2 coefficients of a real field."""

    grid: GridSpec
    coefficients: np.ndarray = field(repr=False)

    def __post_init__(self):
        shape = (self.grid.n, self.grid.n // 2 + 1)
        if self.coefficients.shape != shape:
            raise DomainError(f"coefficient shape {self.coefficients.shape} != {shape}")


def _same_grid(*fields) -> None:
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise DomainError("fields live on different grids")


def transform(f: Field) -> SpectralField:
    return SpectralField(f.grid, np.fft.rfft2(f.values))


def inverse_transform(F: SpectralField) -> Field:
    return Field(F.grid, np.fft.irfft2(F.coefficients, s=(F.grid.n, F.grid.n)))


def _irfft(grid: GridSpec, coeffs: np.ndarray) -> np.ndarray:
    return np.fft.irfft2(coeffs, s=(grid.n, grid.n))


def gradient(f: Field) -> tuple[Field, Field]:
    g = f.grid
    F = np.fft.rfft2(f.values)
    ikx, iky = g.derivative_symbols
    return Field(g, _irfft(g, ikx * F)), Field(g, _irfft(g, iky * F))


def laplacian(f: Field) -> Field:
    g = f.grid
    return Field(g, _irfft(g, -g.k_squared * np.fft.rfft2(f.values)))


def divergence(fx: Field, fy: Field) -> Field:
    _same_grid(fx, fy)
    g = fx.grid
    ikx, iky = g.derivative_symbols
    return Field(g, _irfft(g, ikx * np.fft.rfft2(fx.values) + iky * np.fft.rfft2(fy.values)))


def heat_propagate(f: Field, t: float) -> Field:
    """Exact periodic heat flow e^{t Delta} f."""
    if not t >= 0:
        raise DomainError(f"propagation time must be >= 0, got {t}")
    if t == 0:
        return f
    g = f.grid
    return Field(g, _irfft(g, np.exp(-g.k_squared * t) * np.fft.rfft2(f.values)))


def heat_kernel_values(M: float, t: float, grid: GridSpec) -> np.ndarray:
    if not t > 0:
        raise DomainError(f"heat kernel needs t > 0, got {t}")
    return M / (4.0 * np.pi * t) * np.exp(-grid.radius_sq / (4.0 * t))


def heat_kernel_field(M: float, t: float, grid: GridSpec) -> Field:
    """Samples of M G(x, t) = M/(4 pi t) exp(-|x|^2/(4t))."""
    return Field(grid, heat_kernel_values(M, t, grid))


def gaussian_lp_norm(M: float, t: float, p: float) -> float:
    """Closed-form L^p norm of M G(t) on the plane."""
    if math.isinf(p):
        return M / (4.0 * math.pi * t)
    return M * (4.0 * math.pi * t) ** (-(1.0 - 1.0 / p)) * p ** (-1.0 / p)


def lp_values(values: np.ndarray, p: float, cell_area: float) -> float:
    if not p >= 1:
        raise DomainError(f"norm index must be >= 1, got {p}")
    a = np.abs(values)
    if math.isinf(p):
        return float(np.max(a))
    if p == 1:
        return float(np.sum(a) * cell_area)
    if p == 2:
        return float(math.sqrt(np.sum(a * a) * cell_area))
    return float((np.sum(a ** p) * cell_area) ** (1.0 / p))


def lp_norm(f: Field, p: float) -> float:
    """Rectangle-rule L^p norm; p = inf gives the grid maximum of |f|."""
    return lp_values(f.values, p, f.grid.cell_area)


def weighted_l2_norm(f: Field, theta: float, boundary_tol: float = 1e-10) -> float:
    """Norm in L^2(K_theta) with K_theta = exp(theta |xi|^2 / 4)."""
    if not theta > 0:
        raise DomainError("theta must be positive")
    g = f.grid
    with np.errstate(over="ignore"):
        integrand = f.values ** 2 * np.exp(theta * g.radius_sq / 4.0)
    peak = np.max(integrand)
    if peak == 0:
        return 0.0
    if not np.isfinite(peak) or np.max(integrand[g.boundary_mask]) > boundary_tol * peak:
        raise WeightOverflow("weighted integrand is not negligible at the boundary")
    return float(math.sqrt(np.sum(integrand) * g.cell_area))


def dealias(F: SpectralField) -> SpectralField:
    """Zero modes with max(|kx|, |ky|) above 2/3 of the Nyquist wavenumber."""
    return SpectralField(F.grid, np.where(F.grid.dealias_mask, F.coefficients, 0.0))


def drift_diffusion_operator(f: Field, theta: float) -> Field:
    """-(Delta + theta xi/2 . grad) f; e^{-theta|xi|^2/4} has eigenvalue theta."""
    gx, gy = gradient(f)
    X, Y = f.grid.mesh
    return Field(f.grid, -(laplacian(f).values + 0.5 * theta * (X * gx.values + Y * gy.values)))


def boundary_magnitude(values: np.ndarray, grid: GridSpec) -> float:
    """Largest |f| on the outer ring relative to the largest |f| overall."""
    peak = float(np.max(np.abs(values)))
    if peak == 0:
        return 0.0
    return float(np.max(np.abs(values[grid.boundary_mask]))) / peak


def check_localized(values: np.ndarray, grid: GridSpec, tol: float, name: str = "field") -> None:
    rel = boundary_magnitude(values, grid)
    if rel > tol:
        raise LocalizationError(f"{name} boundary magnitude {rel:.3e} exceeds {tol:.1e}")


def _interp_matrix(grid: GridSpec, points: np.ndarray) -> np.ndarray:
    # e^{i k (p - x0)} / n, Nyquist column replaced by its real cosine part
    k = grid.k_full
    shift = points - grid.x[0]
    E = np.exp(1j * np.outer(shift, k)) / grid.n
    E[:, grid.n // 2] = np.cos(k[grid.n // 2] * shift) / grid.n
    return E


def sample_tensor(f: Field, xs: np.ndarray, ys: np.ndarray, outside_tol: float = 1e-10) -> np.ndarray:
    """Trigonometric interpolation of ``f`` on the tensor grid xs x ys.

    Points outside the box are assigned zero provided ``f`` is negligible at
    the boundary (relative magnitude below ``outside_tol``); otherwise a
    :class:`DomainError` is raised.
    """
    g = f.grid
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    lo, hi = -g.L, g.L - g.dx
    in_x = (xs >= lo - 1e-12) & (xs <= hi + 1e-12)
    in_y = (ys >= lo - 1e-12) & (ys <= hi + 1e-12)
    if not (np.all(in_x) and np.all(in_y)):
        if boundary_magnitude(f.values, g) > outside_tol:
            raise DomainError("requested points leave the box while the field is not negligible there")
    F = np.fft.fft2(f.values)
    out = np.real(_interp_matrix(g, xs) @ F @ _interp_matrix(g, ys).T) / 1.0
    out[~in_x, :] = 0.0
    out[:, ~in_y] = 0.0
    return out


def dilate(f: Field, factor: float, target: GridSpec | None = None,
           outside_tol: float = 1e-10) -> Field:
    """Field g(xi) = f(factor * xi) sampled on ``target`` (default: same grid)."""
    target = f.grid if target is None else target
    pts = factor * target.x
    if factor == 1.0 and target == f.grid:
        return f
    return Field(target, sample_tensor(f, pts, pts, outside_tol))
