"""Fourier representation of 2*pi-periodic fields and the spectral calculus
every other module consumes.

Conventions
-----------
A field on the torus T = R/(2*pi*Z) is stored as the N complex Fourier
coefficients c_k of

    f(x) = sum_{k=-N/2}^{N/2-1} c_k exp(i k x),

kept in FFT order, so ``field.coeffs[k]`` is c_k for any wavenumber k thanks
to Python's negative indexing.  The coefficients are the analytic ones:
sin(x) carries c_{+1} = -i/2 and c_{-1} = +i/2, cos(x) carries c_{+-1} = 1/2.
A field represents a real-valued function iff c_{-k} = conj(c_k) for every
paired k and the lone Nyquist coefficient c_{-N/2} is real.

Norms are true integrals over [0, 2*pi):

    ||f||_{L^2}^2 = 2*pi * sum_k |c_k|^2            (Parseval)
    ||f||_{H^s}^2 = 2*pi * sum_k (1+k^2)^s |c_k|^2   for s >= 0

and for s < 0 the homogeneous weight |k|^{2s} is used, which requires a
mean-zero field.

Odd-order derivatives zero the unpaired Nyquist mode so that real fields
stay real; even-order multipliers are symmetric and leave it in place.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Grid:
    """Uniform collocation grid with N retained Fourier modes on [0, 2*pi).

    ``dealias`` selects the 2/3-rule treatment of pointwise products
    (retain |k| <= floor(N/3)).  It is off by default: products are then the
    plain aliased pseudospectral ones.
    """

    num_modes: int
    dealias: bool = False

    def __post_init__(self) -> None:
        if self.num_modes < 8 or self.num_modes % 2 != 0:
            raise ValueError(
                f"num_modes must be an even integer >= 8, got {self.num_modes}"
            )

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Integer wavenumbers in FFT order: 0, 1, ..., N/2-1, -N/2, ..., -1."""
        n = self.num_modes
        return np.fft.fftfreq(n, d=1.0 / n)

    @cached_property
    def abs_wavenumbers(self) -> np.ndarray:
        return np.abs(self.wavenumbers)

    @cached_property
    def points(self) -> np.ndarray:
        """Collocation points x_j = 2*pi*j/N."""
        n = self.num_modes
        return TWO_PI * np.arange(n) / n

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Boolean mask of modes kept by the 2/3 rule (|k| <= floor(N/3))."""
        return self.abs_wavenumbers <= self.num_modes // 3

    @cached_property
    def reflect_index(self) -> np.ndarray:
        """Index array mapping mode k to mode -k (Nyquist maps to itself)."""
        n = self.num_modes
        return (-np.arange(n)) % n


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Immutable complex Fourier coefficient vector tied to a grid."""

    coeffs: np.ndarray
    grid: Grid

    def __post_init__(self) -> None:
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.shape != (self.grid.num_modes,):
            raise ValueError(
                f"expected {self.grid.num_modes} coefficients, got shape {c.shape}"
            )
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _check_same_grid(self, other)
        return SpectralField(self.coeffs + other.coeffs, self.grid)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _check_same_grid(self, other)
        return SpectralField(self.coeffs - other.coeffs, self.grid)

    def __mul__(self, scalar: complex) -> "SpectralField":
        return SpectralField(self.coeffs * scalar, self.grid)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return SpectralField(-self.coeffs, self.grid)


def _check_same_grid(a: SpectralField, b: SpectralField) -> None:
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")


# -- transforms --------------------------------------------------------------

def phys_from_coeffs(coeffs: np.ndarray) -> np.ndarray:
    """Collocation values from analytic coefficients (any leading batch dims)."""
    return np.fft.ifft(coeffs, axis=-1) * coeffs.shape[-1]


def coeffs_from_phys(values: np.ndarray) -> np.ndarray:
    """Analytic coefficients from collocation values (any leading batch dims)."""
    return np.fft.fft(values, axis=-1) / values.shape[-1]


def to_physical(field: SpectralField) -> np.ndarray:
    """Evaluate the field at the N collocation points."""
    return phys_from_coeffs(field.coeffs)


def to_spectral(values: np.ndarray, grid: Grid) -> SpectralField:
    """Build a field from its N collocation values."""
    values = np.asarray(values)
    if values.shape != (grid.num_modes,):
        raise ValueError(
            f"expected {grid.num_modes} collocation values, got shape {values.shape}"
        )
    return SpectralField(coeffs_from_phys(values.astype(np.complex128)), grid)


def zero_field(grid: Grid) -> SpectralField:
    return SpectralField(np.zeros(grid.num_modes, dtype=np.complex128), grid)


def field_from_function(fn, grid: Grid) -> SpectralField:
    """Sample a callable f(x) at the collocation points and transform."""
    return to_spectral(np.asarray(fn(grid.points), dtype=np.complex128), grid)


def field_from_modes(grid: Grid, modes: dict[int, complex]) -> SpectralField:
    """Build a field from a {wavenumber: coefficient} mapping."""
    c = np.zeros(grid.num_modes, dtype=np.complex128)
    half = grid.num_modes // 2
    for k, val in modes.items():
        if not -half <= k < half:
            raise ValueError(f"wavenumber {k} outside the retained band")
        c[k] = val
    return SpectralField(c, grid)


# -- linear operators ---------------------------------------------------------

def derivative(field: SpectralField, order: int) -> SpectralField:
    """Spectral derivative of the given order, multiplier (ik)^order.

    Odd orders zero the unpaired Nyquist mode, keeping real fields real.
    """
    if order < 1:
        raise ValueError("order must be a positive integer")
    k = field.grid.wavenumbers
    mult = (1j * k) ** order
    if order % 2 == 1:
        mult = mult.copy()
        mult[field.grid.num_modes // 2] = 0.0
    return SpectralField(field.coeffs * mult, field.grid)


def half_laplacian(field: SpectralField) -> SpectralField:
    """The operator (-d^2/dx^2)^(1/2): multiplier |k|, annihilates the mean."""
    return SpectralField(field.coeffs * field.grid.abs_wavenumbers, field.grid)


def mean_zero_project(field: SpectralField) -> SpectralField:
    """Zero the k=0 coefficient, leaving all others unchanged."""
    c = field.coeffs.copy()
    c[0] = 0.0
    return SpectralField(c, field.grid)


def antiderivative(field: SpectralField) -> SpectralField:
    """Mean-zero antiderivative: coefficient c_k / (ik); requires mean zero."""
    c = field.coeffs
    scale = max(1.0, float(np.max(np.abs(c))))
    if abs(c[0]) > 1e-12 * scale:
        raise ValueError("antiderivative requires a mean-zero field")
    k = field.grid.wavenumbers
    out = np.zeros_like(c)
    out[1:] = c[1:] / (1j * k[1:])
    return SpectralField(out, field.grid)


def real_part(field: SpectralField) -> SpectralField:
    """The real-valued function Re f, as a field: (c_k + conj(c_{-k}))/2."""
    c = field.coeffs
    refl = np.conj(c[field.grid.reflect_index])
    return SpectralField(0.5 * (c + refl), field.grid)


def imag_part(field: SpectralField) -> SpectralField:
    """The real-valued function Im f, as a field: (c_k - conj(c_{-k}))/(2i)."""
    c = field.coeffs
    refl = np.conj(c[field.grid.reflect_index])
    return SpectralField((c - refl) / 2j, field.grid)


def is_conjugate_symmetric(field: SpectralField, tol: float = 1e-12) -> bool:
    """Whether the field represents a real-valued function."""
    c = field.coeffs
    refl = np.conj(c[field.grid.reflect_index])
    scale = max(1.0, float(np.max(np.abs(c))))
    return bool(np.max(np.abs(c - refl)) <= tol * scale)


# -- norms and products -------------------------------------------------------

def sobolev_norm(field: SpectralField, s: float) -> float:
    """H^s norm: inhomogeneous weights <k>^2s for s >= 0, homogeneous |k|^2s
    (mean-zero fields only) for s < 0.  s = 0 is the L^2 norm on [0, 2*pi)."""
    c = field.coeffs
    k = field.grid.wavenumbers
    if s >= 0:
        w = (1.0 + k * k) ** s
        return float(np.sqrt(TWO_PI * np.sum(w * np.abs(c) ** 2)))
    scale = max(1.0, float(np.max(np.abs(c))))
    if abs(c[0]) > 1e-12 * scale:
        raise ValueError("negative-order norms require a mean-zero field")
    kk = np.abs(k[1:])
    return float(np.sqrt(TWO_PI * np.sum(kk ** (2 * s) * np.abs(c[1:]) ** 2)))


def l2_inner(a: SpectralField, b: SpectralField) -> complex:
    """L^2 inner product int a * conj(b) dx = 2*pi sum a_k conj(b_k)."""
    _check_same_grid(a, b)
    return complex(TWO_PI * np.sum(a.coeffs * np.conj(b.coeffs)))


def integral(field: SpectralField) -> complex:
    """int f dx over the torus = 2*pi * c_0."""
    return complex(TWO_PI * field.coeffs[0])


def pointwise_product(
    a: SpectralField, b: SpectralField, dealias: bool | None = None
) -> SpectralField:
    """Spectral coefficients of the collocation-pointwise product a*b.

    With ``dealias`` (default: the grid's flag) both inputs and the result
    are truncated by the 2/3 rule; otherwise the product is the plain
    aliased pseudospectral one.
    """
    _check_same_grid(a, b)
    grid = a.grid
    if dealias is None:
        dealias = grid.dealias
    ca, cb = a.coeffs, b.coeffs
    if dealias:
        mask = grid.dealias_mask
        ca = ca * mask
        cb = cb * mask
    prod = phys_from_coeffs(ca) * phys_from_coeffs(cb)
    out = coeffs_from_phys(prod)
    if dealias:
        out = out * grid.dealias_mask
    return SpectralField(out, grid)
