"""Stationary solutions: resolvent fixed point, Newton refinement, density
reconstruction, and a priori bound verification.

Setting time derivatives to zero in the first-order complex system gives a
scalar equation for the stationary envelope v.  The Dirac variable is slaved
to v mode by mode,

    n~_k[v] = -i alpha2 |k| s_k / (delta + i |k|),    s = |v|^2 coefficients,

so the physical stationary density is n[v] = Re n~[v], with symbol
-alpha2 k^2 / (k^2 + delta^2) acting on |v|^2.  The envelope then solves

    [ d^2/dx^2 + i gamma - alpha1 n[v] ] v = f.

In the limit of vanishing wave dissipation n[v] reduces to the classical
wave-equation reconstruction -alpha2 (|v|^2 - mean |v|^2), and the operator
above becomes the resolvent whose inverse is bounded by 1/gamma; that bound
holds for any real potential and is what makes the fixed-point iteration
v <- R_{gamma,v}^{-1} f a contraction for large gamma.  For small gamma the
contraction fails and a Newton iteration on the full first-order residual
takes over.

Solving the stationary problem of the *first-order* system (rather than of
the second-order wave form) is what makes the computed equilibria exact
fixed points of the time stepper and exact roots of the flow Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import (
    Forcing,
    ModelParams,
    ZakharovState,
    forcing_from_spec,
    full_rhs,
    pack_state,
    rhs_vector,
    state_to_vector,
    unpack_state,
    vector_to_state,
)
from .spectral import (
    Grid,
    SpectralField,
    coeffs_from_phys,
    phys_from_coeffs,
    sobolev_norm,
    zero_field,
)
from .stability import state_jacobian


class ConvergenceError(RuntimeError):
    """A stationary iteration failed to converge; carries the last iterate."""

    def __init__(self, message: str, last_iterate: SpectralField | None = None,
                 condition: float | None = None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.condition = condition


@dataclass(frozen=True)
class Equilibrium:
    """A converged stationary solution.

    ``v`` is the stationary envelope, ``m`` the reconstructed wave-system
    density -alpha2(|v|^2 - mean).  ``residual_norm`` is the L^2 norm of the
    first-order stationary residual.  ``increments`` records the H^1 update
    sizes of the producing iteration.
    """

    v: SpectralField
    m: SpectralField
    params: ModelParams
    forcing: Forcing
    residual_norm: float
    iterations: int
    method: str
    increments: tuple[float, ...] = ()

    @property
    def grid(self) -> Grid:
        return self.v.grid

    @property
    def state(self) -> ZakharovState:
        """Full state (v, n~[v]) of the first-order system."""
        return ZakharovState(self.v, stationary_dirac(self.v, self.params))


def _intensity_coeffs(v: SpectralField) -> np.ndarray:
    """Pseudospectral coefficients of |v|^2 (dealiased if the grid says so)."""
    grid = v.grid
    c = v.coeffs * grid.dealias_mask if grid.dealias else v.coeffs
    s = coeffs_from_phys(np.abs(phys_from_coeffs(c)) ** 2)
    if grid.dealias:
        s = s * grid.dealias_mask
    return s


def stationary_dirac(v: SpectralField, params: ModelParams) -> SpectralField:
    """The Dirac variable slaved to a stationary envelope."""
    grid = v.grid
    k = grid.abs_wavenumbers
    s = _intensity_coeffs(v)
    out = np.zeros_like(s)
    nz = k > 0
    out[nz] = -1j * params.alpha2 * k[nz] * s[nz] / (params.delta + 1j * k[nz])
    return SpectralField(out, grid)


def equilibrium_density(v: SpectralField, params: ModelParams) -> np.ndarray:
    """Coefficients of the stationary physical density Re n~[v]."""
    grid = v.grid
    k2 = grid.abs_wavenumbers ** 2
    s = _intensity_coeffs(v)
    out = np.zeros_like(s)
    nz = k2 > 0
    out[nz] = -params.alpha2 * k2[nz] * s[nz] / (k2[nz] + params.delta ** 2)
    return out


def reconstruct_density(v: SpectralField, params: ModelParams) -> SpectralField:
    """Wave-system density reconstruction -alpha2 (|v|^2 - mean |v|^2)."""
    s = _intensity_coeffs(v)
    out = -params.alpha2 * s
    out[0] = 0.0
    return SpectralField(out, v.grid)


def _product_matrix(density: np.ndarray) -> np.ndarray:
    """Matrix of the aliased pseudospectral product w -> density * w.

    With the FFT-order convention this is the cyclic convolution matrix
    C[k, j] = density_hat[(k - j) mod N].
    """
    n = density.shape[0]
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return density[idx]


def resolvent_matrix(v: SpectralField, params: ModelParams) -> np.ndarray:
    """Dense coefficient-space matrix of d^2/dx^2 + i gamma - alpha1 n[v]."""
    grid = v.grid
    k = grid.wavenumbers
    mat = np.diag(-k * k + 1j * params.gamma).astype(np.complex128)
    density = equilibrium_density(v, params)
    if grid.dealias:
        mask = grid.dealias_mask.astype(float)
        mat -= params.alpha1 * (mask[:, None] * _product_matrix(density) * mask[None, :])
    else:
        mat -= params.alpha1 * _product_matrix(density)
    return mat


def solve_resolvent(
    v: SpectralField, rhs: SpectralField, params: ModelParams
) -> SpectralField:
    """Apply the inverse of the stationary operator at frozen potential.

    The potential is real, so the operator is self-adjoint plus i*gamma and
    the solve cannot be singular for gamma > 0; the solution obeys
    ||w||_2 <= ||rhs||_2 / gamma.
    """
    if params.gamma <= 0:
        raise ValueError("resolvent solve requires gamma > 0")
    mat = resolvent_matrix(v, params)
    try:
        w = np.linalg.solve(mat, rhs.coeffs)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"resolvent solve failed: {exc}") from exc
    res = float(np.linalg.norm(mat @ w - rhs.coeffs))
    scale = float(np.linalg.norm(rhs.coeffs))
    if scale > 0 and res > 1e-10 * scale:
        raise ConvergenceError(f"resolvent solve residual {res:.3e} exceeds tolerance")
    return SpectralField(w, v.grid)


def _residual_norm(state: ZakharovState, forcing: Forcing, params: ModelParams) -> float:
    rhs = full_rhs(state, forcing, params)
    return float(np.sqrt(
        sobolev_norm(rhs.u, 0) ** 2 + sobolev_norm(rhs.n_dirac, 0) ** 2
    ))


def _make_equilibrium(
    v: SpectralField, forcing: Forcing, params: ModelParams,
    iterations: int, method: str, increments=(),
) -> Equilibrium:
    m = reconstruct_density(v, params)
    state = ZakharovState(v, stationary_dirac(v, params))
    res = _residual_norm(state, forcing, params)
    return Equilibrium(
        v=v, m=m, params=params, forcing=forcing,
        residual_norm=res, iterations=iterations, method=method,
        increments=tuple(increments),
    )


def fixed_point_solve(
    forcing: Forcing,
    params: ModelParams,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> Equilibrium:
    """Contraction iteration v <- R^{-1}_{gamma, v} f from v = 0.

    Converges for large gamma (or small forcing); raises ConvergenceError in
    the small-gamma regime, where the caller should switch to newton_solve
    seeded from a neighboring solution.
    """
    if params.gamma <= 0:
        raise ValueError("fixed-point iteration requires gamma > 0")
    grid = forcing.grid
    v = zero_field(grid)
    increments: list[float] = []
    for it in range(1, max_iter + 1):
        v_next = solve_resolvent(v, forcing.profile, params)
        inc = sobolev_norm(v_next - v, 1)
        increments.append(inc)
        v = v_next
        if inc < tol:
            return _make_equilibrium(v, forcing, params, it, "fixed_point", increments)
    raise ConvergenceError(
        f"fixed-point iteration did not reach tol={tol:g} in {max_iter} iterations "
        f"(last increment {increments[-1]:.3e}); likely outside the contraction regime",
        last_iterate=v,
    )


def newton_solve(
    v0: SpectralField,
    forcing: Forcing,
    params: ModelParams,
    tol: float = 1e-12,
    max_iter: int = 25,
) -> Equilibrium:
    """Newton iteration on the full first-order stationary residual.

    Works in the 4N real coordinates with the exact flow Jacobian, so the
    slaved Dirac component is solved along with the envelope.  Quadratic
    convergence near roots; raises ConvergenceError with a condition
    estimate when the Jacobian is near-singular (fold) or on divergence.
    """
    if params.gamma <= 0:
        raise ValueError("newton_solve requires gamma > 0")
    grid = v0.grid
    f = forcing.profile.coeffs
    state = ZakharovState(v0, stationary_dirac(v0, params))
    x = state_to_vector(state)
    res_prev = np.inf
    for it in range(1, max_iter + 1):
        r = rhs_vector(x, f, params, grid)
        res = float(np.sqrt(2.0 * np.pi) * np.linalg.norm(r))
        if res < tol:
            u, _ = unpack_state(x)
            return _make_equilibrium(
                SpectralField(u, grid), forcing, params, it - 1, "newton")
        if res > 1e6 * max(1.0, res_prev):
            raise ConvergenceError(
                f"Newton residual diverged to {res:.3e} at iteration {it}")
        jac = state_jacobian(vector_to_state(x, grid), params)
        try:
            dx = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            cond = float(np.linalg.cond(jac))
            raise ConvergenceError(
                f"singular stationary Jacobian (cond ~ {cond:.3e}), possible fold",
                condition=cond,
            ) from exc
        if not np.all(np.isfinite(dx)) or np.linalg.norm(dx) > 1e8:
            cond = float(np.linalg.cond(jac))
            raise ConvergenceError(
                f"ill-conditioned stationary Jacobian (cond ~ {cond:.3e})",
                condition=cond,
            )
        # damped update: halve until the residual stops growing
        lam = 1.0
        for _ in range(8):
            r_try = rhs_vector(x + lam * dx, f, params, grid)
            if np.linalg.norm(r_try) < np.linalg.norm(r) or lam < 1e-3:
                break
            lam *= 0.5
        x = x + lam * dx
        res_prev = res
    raise ConvergenceError(
        f"Newton did not reach tol={tol:g} in {max_iter} iterations "
        f"(last residual {res:.3e})",
        last_iterate=SpectralField(unpack_state(x)[0], grid),
    )


def solve_equilibrium(
    forcing: Forcing,
    params: ModelParams,
    tol: float = 1e-12,
    v0: SpectralField | None = None,
) -> Equilibrium:
    """Fixed point where it contracts, Newton polish always (method hybrid)."""
    if v0 is None:
        try:
            coarse = fixed_point_solve(forcing, params, tol=max(tol, 1e-8))
            v0 = coarse.v
        except ConvergenceError as exc:
            if exc.last_iterate is None:
                raise
            v0 = exc.last_iterate
    eq = newton_solve(v0, forcing, params, tol=tol)
    return Equilibrium(
        v=eq.v, m=eq.m, params=eq.params, forcing=eq.forcing,
        residual_norm=eq.residual_norm, iterations=eq.iterations,
        method="hybrid", increments=eq.increments,
    )


# -- a priori bounds ----------------------------------------------------------

@dataclass(frozen=True)
class BoundCheck:
    name: str
    left: float
    right: float
    passed: bool
    advisory: bool = False


@dataclass(frozen=True)
class BoundReport:
    checks: tuple[BoundCheck, ...]
    h3_norm: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if not c.advisory)

    def __str__(self) -> str:
        lines = []
        for c in self.checks:
            tag = "PASS" if c.passed else "FAIL"
            extra = " (advisory)" if c.advisory else ""
            lines.append(f"{c.name}: {c.left:.6e} <= {c.right:.6e} {tag}{extra}")
        lines.append(f"H^3 norm of v (informational): {self.h3_norm:.6e}")
        return "\n".join(lines)


GRADIENT_BOUND_CONSTANT = 10.0


def verify_apriori(eq: Equilibrium) -> BoundReport:
    """Check the stationary a priori estimates on a computed equilibrium.

    The L^2 bound ||v||_2 <= ||f||_2 / gamma is exact; the gradient bound
    carries an unspecified constant, fixed here to 10, and is advisory.
    """
    gamma = eq.params.gamma
    f_l2 = sobolev_norm(eq.forcing.profile, 0)
    v_l2 = sobolev_norm(eq.v, 0)
    vx = SpectralField(1j * eq.grid.wavenumbers * eq.v.coeffs, eq.grid)
    vx_l2 = sobolev_norm(vx, 0)
    grad_bound = GRADIENT_BOUND_CONSTANT * max(
        gamma ** -3 * f_l2 ** 3, gamma ** -2 * f_l2 ** 2, gamma ** -0.5 * f_l2
    )
    checks = (
        BoundCheck("l2_bound", v_l2, f_l2 / gamma, v_l2 <= f_l2 / gamma + 1e-10),
        BoundCheck("gradient_bound", vx_l2, grad_bound, vx_l2 <= grad_bound,
                   advisory=True),
    )
    return BoundReport(checks=checks, h3_norm=sobolev_norm(eq.v, 3))


# -- equilibrium file format ---------------------------------------------------

def save_equilibrium(eq: Equilibrium, path) -> None:
    """Plain-text header plus CSV of k, Re v, Im v, Re m, Im m (exact floats)."""
    grid = eq.grid
    half = grid.num_modes // 2
    lines = [
        "# zakharov equilibrium v1",
        f"# method={eq.method}",
        f"# iterations={eq.iterations}",
        f"# residual={format(eq.residual_norm, '.17g')}",
        f"# gamma={format(eq.params.gamma, '.17g')}",
        f"# delta={format(eq.params.delta, '.17g')}",
        f"# alpha1={format(eq.params.alpha1, '.17g')}",
        f"# alpha2={format(eq.params.alpha2, '.17g')}",
        f"# forcing={eq.forcing.description}",
        f"# num_modes={grid.num_modes}",
        f"# dealias={int(grid.dealias)}",
        "k,re_v,im_v,re_m,im_m",
    ]
    for k in range(-half, half):
        cv = eq.v.coeffs[k]
        cm = eq.m.coeffs[k]
        lines.append(
            f"{k},{format(cv.real, '.17g')},{format(cv.imag, '.17g')},"
            f"{format(cm.real, '.17g')},{format(cm.imag, '.17g')}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_equilibrium(path) -> Equilibrium:
    """Inverse of save_equilibrium; reconstructs forcing from its spec string."""
    header: dict[str, str] = {}
    rows: list[str] = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, val = body.split("=", 1)
                header[key.strip()] = val.strip()
        elif line and not line.startswith("k,"):
            rows.append(line)
    n_modes = int(header["num_modes"])
    grid = Grid(n_modes, dealias=bool(int(header.get("dealias", "0"))))
    params = ModelParams(
        gamma=float(header["gamma"]), delta=float(header["delta"]),
        alpha1=float(header["alpha1"]), alpha2=float(header["alpha2"]),
    )
    forcing = forcing_from_spec(header["forcing"], grid)
    v = np.zeros(n_modes, dtype=np.complex128)
    m = np.zeros(n_modes, dtype=np.complex128)
    for row in rows:
        parts = row.split(",")
        k = int(parts[0])
        v[k] = float(parts[1]) + 1j * float(parts[2])
        m[k] = float(parts[3]) + 1j * float(parts[4])
    return Equilibrium(
        v=SpectralField(v, grid), m=SpectralField(m, grid),
        params=params, forcing=forcing,
        residual_norm=float(header["residual"]),
        iterations=int(header["iterations"]),
        method=header["method"],
    )
