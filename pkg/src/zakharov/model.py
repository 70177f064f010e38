"""The damped, driven Zakharov system in first-order complex form.

The physical model couples a Schrodinger envelope u(x,t) to a mean-zero ion
density deviation n(x,t) on the torus:

    i u_t + u_xx + i*gamma*u = n u + f,
    n_tt - n_xx + delta*n_t  = (|u|^2)_xx.

We evolve the equivalent first-order system in the complex pair (u, n~),
where the physical density is n = Re(n~) and d = (-d^2/dx^2)^(1/2):

    (i d/dt + d^2/dx^2 + i*gamma) u  = alpha1 * Re(n~) * u + f,
    (i d/dt - d + i*delta)       n~  = alpha2 * d(|u|^2).

Writing d/dt (u, n~) = L (u, n~) + N(u, n~, f), the linear part is diagonal
per Fourier mode,

    L_u(k) = -i k^2 - gamma,      L_n(k) = -i |k| - delta,

and the nonlinearity is N = ( -i alpha1 Re(n~) u - i f ,  -i alpha2 d(|u|^2) ).

The couplings alpha1, alpha2 interpolate to the exactly solvable decoupled
case alpha1 = alpha2 = gamma = 0, f = sin x, whose stationary solution is
(u, n~) = (-sin x, 0).

Recovery convention for the wave pair: n = Re(n~) and n_t = d(Im n~).  With
delta = 0 this makes the linear Dirac flow solve the linear wave equation
exactly, which fixes the sign of the imaginary part.

Diagnostics follow the conserved quantities of the undamped, unforced limit:
mass ||u||_2^2 and the energy

    E = int |u_x|^2 + 1/2 int n^2 + 1/2 int nu^2 + int n |u|^2,

with nu the mean-zero stream function of n_t (n_t = nu_x).  The Lyapunov
functional used in the large-dissipation regime is

    H = ||dx^{-1}(z_t + eps z)||_2^2 + ||z||_2^2 + 2||w_x||_2^2
        + 2 int z (|w+v|^2 - |v|^2) + ||w||_2^2,

for the deviation w = u - v, z = n - n_eq, z_t = n_t - (n_t)_eq from a
stationary reference, with eps = min(1/(2*delta), delta/2, gamma).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import (
    TWO_PI,
    Grid,
    SpectralField,
    antiderivative,
    coeffs_from_phys,
    field_from_modes,
    half_laplacian,
    imag_part,
    is_conjugate_symmetric,
    phys_from_coeffs,
    real_part,
    sobolev_norm,
    zero_field,
)


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters: dissipation rates and coupling strengths."""

    gamma: float
    delta: float
    alpha1: float = 1.0
    alpha2: float = 1.0

    def __post_init__(self) -> None:
        if self.gamma < 0 or self.delta < 0:
            raise ValueError("dissipation parameters gamma, delta must be >= 0")


@dataclass(frozen=True)
class Forcing:
    """Time-independent forcing profile for the envelope equation.

    The profile must be conjugate-symmetric (a real-valued function); the
    built-in named profiles all are.
    """

    profile: SpectralField
    description: str = ""

    def __post_init__(self) -> None:
        if not is_conjugate_symmetric(self.profile, tol=1e-10):
            raise ValueError("forcing profile must be conjugate-symmetric")

    @property
    def grid(self) -> Grid:
        return self.profile.grid


def forcing_from_spec(spec: str, grid: Grid) -> Forcing:
    """Build one of the named forcing profiles.

    "sin"                 f = sin x
    "zero"                f = 0
    "modes:k1,c1;k2,c2"   explicit coefficients; each pair sets c_k += c and
                          c_{-k} += conj(c) so the profile stays real
                          (k = 0 contributes its real part once).
    """
    spec = spec.strip()
    if spec == "sin":
        return Forcing(field_from_modes(grid, {1: -0.5j, -1: 0.5j}), "sin")
    if spec == "zero":
        return Forcing(zero_field(grid), "zero")
    if spec.startswith("modes:"):
        c = np.zeros(grid.num_modes, dtype=np.complex128)
        half = grid.num_modes // 2
        body = spec[len("modes:"):]
        for item in body.split(";"):
            item = item.strip()
            if not item:
                continue
            try:
                k_str, val_str = item.split(",")
                k = int(k_str)
                val = complex(val_str)
            except ValueError as exc:
                raise ValueError(f"bad modes entry {item!r} in {spec!r}") from exc
            if not -half <= k < half:
                raise ValueError(f"wavenumber {k} outside the retained band")
            if k == 0:
                c[0] += val.real
            else:
                c[k] += val
                c[-k] += np.conj(val)
        return Forcing(SpectralField(c, grid), spec)
    raise ValueError(f"unknown forcing spec {spec!r}")


@dataclass(frozen=True)
class ZakharovState:
    """State pair: Schrodinger envelope u and complex Dirac variable n~.

    The n~ zero mode is pinned to 0 (mean-zero density convention).
    """

    u: SpectralField
    n_dirac: SpectralField

    def __post_init__(self) -> None:
        if self.u.grid != self.n_dirac.grid:
            raise ValueError("state components live on different grids")
        c0 = self.n_dirac.coeffs[0]
        scale = max(1.0, float(np.max(np.abs(self.n_dirac.coeffs))))
        if abs(c0) > 1e-10 * scale:
            raise ValueError("n_dirac must be mean-zero")
        if c0 != 0:
            c = self.n_dirac.coeffs.copy()
            c[0] = 0.0
            object.__setattr__(self, "n_dirac", SpectralField(c, self.grid))

    @property
    def grid(self) -> Grid:
        return self.u.grid


def zero_state(grid: Grid) -> ZakharovState:
    return ZakharovState(zero_field(grid), zero_field(grid))


@dataclass(frozen=True)
class EnergyReport:
    """Scalar diagnostics of a state at one instant.

    ``dirac_energy`` is the L^2 norm of the physical density Re(n~);
    ``dirac_energy_complex`` is the L^2 norm of the full complex variable.
    ``lyapunov_h`` is present only when a stationary reference was supplied.
    """

    time: float
    mass: float
    schrodinger_energy: float
    dirac_energy: float
    dirac_energy_complex: float
    full_energy: float
    lyapunov_h: float | None = None


# -- right-hand side ----------------------------------------------------------

def linear_symbol(params: ModelParams, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode diagonal of the linear operator for the u and n~ blocks."""
    k = grid.wavenumbers
    lu = -1j * k * k - params.gamma
    ln = -1j * np.abs(k) - params.delta
    return lu, ln


def nonlinear_terms(
    u: np.ndarray,
    n: np.ndarray,
    f: np.ndarray,
    params: ModelParams,
    grid: Grid,
) -> tuple[np.ndarray, np.ndarray]:
    """Nonlinearity + forcing on raw coefficient arrays (batchable).

    Returns (-i alpha1 Re(n~) u - i f,  -i alpha2 d(|u|^2)); the second
    component is mean-zero by construction.
    """
    if grid.dealias:
        mask = grid.dealias_mask
        u = u * mask
        n = n * mask
    u_phys = phys_from_coeffs(u)
    n_phys = phys_from_coeffs(n)
    prod = coeffs_from_phys(n_phys.real * u_phys)
    sq = coeffs_from_phys(np.abs(u_phys) ** 2)
    if grid.dealias:
        prod = prod * grid.dealias_mask
        sq = sq * grid.dealias_mask
    nu = -1j * (params.alpha1 * prod + f)
    nn = -1j * params.alpha2 * (grid.abs_wavenumbers * sq)
    return nu, nn


def nonlinear_rhs(
    state: ZakharovState, forcing: Forcing, params: ModelParams
) -> ZakharovState:
    """Nonlinear part of the right-hand side as a state-shaped increment."""
    if state.grid != forcing.grid:
        raise ValueError("state and forcing live on different grids")
    nu, nn = nonlinear_terms(
        state.u.coeffs, state.n_dirac.coeffs, forcing.profile.coeffs,
        params, state.grid,
    )
    grid = state.grid
    return ZakharovState(SpectralField(nu, grid), SpectralField(nn, grid))


def full_rhs(
    state: ZakharovState, forcing: Forcing, params: ModelParams
) -> ZakharovState:
    """d/dt (u, n~) = L(u, n~) + N(u, n~, f) as a state-shaped increment."""
    grid = state.grid
    lu, ln = linear_symbol(params, grid)
    nu, nn = nonlinear_terms(
        state.u.coeffs, state.n_dirac.coeffs, forcing.profile.coeffs,
        params, grid,
    )
    return ZakharovState(
        SpectralField(lu * state.u.coeffs + nu, grid),
        SpectralField(ln * state.n_dirac.coeffs + nn, grid),
    )


def linearized_terms(
    u: np.ndarray,
    n: np.ndarray,
    du: np.ndarray,
    dn: np.ndarray,
    params: ModelParams,
    grid: Grid,
) -> tuple[np.ndarray, np.ndarray]:
    """Directional derivative of L + N at (u, n~) in direction (du, dn~).

    The base state broadcasts over any leading batch dims of the direction,
    so a whole basis of directions can be pushed through at once.  The
    forcing is constant and drops out.
    """
    lu, ln = linear_symbol(params, grid)
    if grid.dealias:
        mask = grid.dealias_mask
        u = u * mask
        n = n * mask
        du_c = du * mask
        dn_c = dn * mask
    else:
        du_c, dn_c = du, dn
    u_phys = phys_from_coeffs(u)
    n_phys = phys_from_coeffs(n)
    du_phys = phys_from_coeffs(du_c)
    dn_phys = phys_from_coeffs(dn_c)
    prod = coeffs_from_phys(n_phys.real * du_phys + dn_phys.real * u_phys)
    sq = coeffs_from_phys(2.0 * (np.conj(u_phys) * du_phys).real)
    if grid.dealias:
        prod = prod * grid.dealias_mask
        sq = sq * grid.dealias_mask
    out_u = lu * du - 1j * params.alpha1 * prod
    out_n = ln * dn - 1j * params.alpha2 * (grid.abs_wavenumbers * sq)
    return out_u, out_n


# -- real vectorization -------------------------------------------------------
# Real coordinates are needed because Re(n~) u is not complex-differentiable.
# Layout: (Re u_hat, Im u_hat, Re n_hat, Im n_hat), each block of length N.

def pack_state(u: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Stack complex coefficient arrays into real vectors (batchable)."""
    return np.concatenate([u.real, u.imag, n.real, n.imag], axis=-1)


def unpack_state(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of pack_state (batchable)."""
    n_modes = x.shape[-1] // 4
    u = x[..., :n_modes] + 1j * x[..., n_modes:2 * n_modes]
    n = x[..., 2 * n_modes:3 * n_modes] + 1j * x[..., 3 * n_modes:]
    return u, n


def state_to_vector(state: ZakharovState) -> np.ndarray:
    return pack_state(state.u.coeffs, state.n_dirac.coeffs)


def vector_to_state(x: np.ndarray, grid: Grid) -> ZakharovState:
    u, n = unpack_state(np.asarray(x, dtype=float))
    return ZakharovState(SpectralField(u, grid), SpectralField(n, grid))


def rhs_vector(
    x: np.ndarray, f: np.ndarray, params: ModelParams, grid: Grid
) -> np.ndarray:
    """Full right-hand side on real vectors (batchable)."""
    u, n = unpack_state(x)
    lu, ln = linear_symbol(params, grid)
    nu, nn = nonlinear_terms(u, n, f, params, grid)
    return pack_state(lu * u + nu, ln * n + nn)


# -- wave-pair recovery and diagnostics ---------------------------------------

def recover_wave_pair(n_dirac: SpectralField) -> tuple[SpectralField, SpectralField]:
    """Physical density and its time derivative: n = Re(n~), n_t = d(Im n~)."""
    c0 = n_dirac.coeffs[0]
    scale = max(1.0, float(np.max(np.abs(n_dirac.coeffs))))
    if abs(c0) > 1e-10 * scale:
        raise ValueError("wave-pair recovery requires a mean-zero n~")
    return real_part(n_dirac), half_laplacian(imag_part(n_dirac))


def lyapunov_epsilon(params: ModelParams) -> float:
    """The decay-rate constant min(1/(2*delta), delta/2, gamma)."""
    if params.delta <= 0 or params.gamma <= 0:
        raise ValueError("lyapunov_epsilon requires gamma > 0 and delta > 0")
    return min(1.0 / (2.0 * params.delta), params.delta / 2.0, params.gamma)


def lyapunov_functional(
    state: ZakharovState, reference, eps: float
) -> float:
    """Lyapunov functional H of the deviation from a stationary reference.

    The reference supplies the stationary envelope v and the stationary
    Dirac variable; the deviation wave pair is (z, z_t) = (n, n_t)(state)
    minus (n, n_t)(reference).  When the wave dissipation vanishes the
    reference pair reduces to (m, 0) and H matches its classical form.
    """
    grid = state.grid
    v = reference.v
    ref_state = reference.state
    w = state.u - v
    n, nt = recover_wave_pair(state.n_dirac)
    n_ref, nt_ref = recover_wave_pair(ref_state.n_dirac)
    z = n - n_ref
    zt = nt - nt_ref

    combo = antiderivative(zt + eps * z)
    term1 = sobolev_norm(combo, 0) ** 2
    term2 = sobolev_norm(z, 0) ** 2
    wx = SpectralField(
        state.grid.wavenumbers * 1j * w.coeffs, grid
    )
    term3 = 2.0 * sobolev_norm(wx, 0) ** 2
    u_phys = phys_from_coeffs(state.u.coeffs)
    v_phys = phys_from_coeffs(v.coeffs)
    z_phys = phys_from_coeffs(z.coeffs).real
    coupling = (TWO_PI / grid.num_modes) * float(
        np.sum(z_phys * (np.abs(u_phys) ** 2 - np.abs(v_phys) ** 2))
    )
    term5 = sobolev_norm(w, 0) ** 2
    return term1 + term2 + term3 + 2.0 * coupling + term5


def energy_report(
    state: ZakharovState,
    forcing: Forcing,
    params: ModelParams,
    reference=None,
    eps: float | None = None,
    time: float = 0.0,
) -> EnergyReport:
    """All scalar diagnostics of a state; see EnergyReport.

    The conserved energy E integrates the quartic coupling term in
    collocation space (exact for the spectral trapezoid rule).
    """
    grid = state.grid
    u = state.u
    mass = sobolev_norm(u, 0) ** 2
    schrodinger = sobolev_norm(u, 1)
    n, nt = recover_wave_pair(state.n_dirac)
    dirac = sobolev_norm(n, 0)
    dirac_complex = sobolev_norm(state.n_dirac, 0)

    ux = SpectralField(1j * grid.wavenumbers * u.coeffs, grid)
    nu_stream = antiderivative(nt)
    u_phys = phys_from_coeffs(u.coeffs)
    n_phys = phys_from_coeffs(n.coeffs).real
    quartic = (TWO_PI / grid.num_modes) * float(np.sum(n_phys * np.abs(u_phys) ** 2))
    energy = (
        sobolev_norm(ux, 0) ** 2
        + 0.5 * dirac ** 2
        + 0.5 * sobolev_norm(nu_stream, 0) ** 2
        + quartic
    )

    lyap = None
    if reference is not None:
        if eps is None:
            eps = lyapunov_epsilon(params)
        lyap = lyapunov_functional(state, reference, eps)

    return EnergyReport(
        time=time,
        mass=mass,
        schrodinger_energy=schrodinger,
        dirac_energy=dirac,
        dirac_energy_complex=dirac_complex,
        full_energy=energy,
        lyapunov_h=lyap,
    )
