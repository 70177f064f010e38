"""Branch tracing: pseudo-arclength continuation of equilibria and periodic
orbits, with Hopf, fold, period-doubling, and torus event detection.

Equilibria are continued in the 4N real state coordinates augmented by the
active parameter; the corrector is Newton on the bordered system (flow
residual + arclength hyperplane).  Orbits are found by single shooting on
F(x0, T) = Phi_T(x0) - x0 with an integral phase condition, and continued in
(x0, T, parameter).  The monodromy matrix is obtained by finite differences
of the flow map; all perturbed trajectories are integrated simultaneously
as one batch, which is what keeps Floquet analysis affordable.  Multipliers
through -1 flag period doubling; complex pairs through the unit circle flag
torus bifurcations.  Events are refined by bisection in the parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .etdrk4 import precompute, step_arrays
from .model import (
    Forcing,
    ModelParams,
    ZakharovState,
    pack_state,
    recover_wave_pair,
    rhs_vector,
    state_to_vector,
    unpack_state,
    vector_to_state,
)
from .spectral import Grid, SpectralField, sobolev_norm
from .stability import (
    StabilityReport,
    critical_eigenvector,
    spectrum,
    state_jacobian,
)
from .stationary import ConvergenceError, Equilibrium, _make_equilibrium


class ContinuationError(RuntimeError):
    pass


class OrbitCollapseError(ContinuationError):
    """Shooting converged to a zero-amplitude (equilibrium) solution."""


PARAM_NAMES = ("gamma", "delta")


def _with_param(params: ModelParams, name: str, value: float) -> ModelParams:
    if name not in PARAM_NAMES:
        raise ValueError(f"continuation parameter must be one of {PARAM_NAMES}")
    return replace(params, **{name: float(value)})


def total_l2_norm(state: ZakharovState) -> float:
    """L^2 norm of the total solution (u, n) with n the physical density."""
    n, _ = recover_wave_pair(state.n_dirac)
    return float(np.sqrt(sobolev_norm(state.u, 0) ** 2 + sobolev_norm(n, 0) ** 2))


@dataclass
class OrbitPoint:
    """A converged periodic orbit of the flow.

    ``x0`` satisfies the phase condition; ``residual`` is ||Phi_T(x0) - x0||
    at the shooting step and ``residual_halfstep`` the same at half the step
    (the integration-independent verification).  ``floquet_multipliers`` are
    the monodromy eigenvalues, ``trivial_multiplier_error`` the distance of
    the closest one from 1.
    """

    x0: ZakharovState
    period: float
    params: ModelParams
    forcing: Forcing
    floquet_multipliers: np.ndarray
    orbit_class: str
    residual: float
    residual_halfstep: float
    trivial_multiplier_error: float
    amplitude: float
    step_size: float
    monodromy: np.ndarray | None = None


@dataclass
class BranchPoint:
    param_name: str
    param_value: float
    solution: Equilibrium | OrbitPoint
    norm_stat: float
    stability: StabilityReport | None = None

    @property
    def is_orbit(self) -> bool:
        return isinstance(self.solution, OrbitPoint)


@dataclass
class BranchEvent:
    kind: str  # hopf | pd | torus | fold
    param_value: float
    bracket: tuple[float, float] | None
    accuracy: float
    point: BranchPoint | None = None
    data: dict = field(default_factory=dict)


@dataclass
class Branch:
    param_name: str
    points: list[BranchPoint] = field(default_factory=list)
    events: list[BranchEvent] = field(default_factory=list)
    truncated: str | None = None


# -- equilibrium continuation ---------------------------------------------------


def _newton_bordered(
    y: np.ndarray,
    y_pred: np.ndarray,
    tangent: np.ndarray,
    param_name: str,
    base_params: ModelParams,
    f: np.ndarray,
    grid: Grid,
    tol: float,
    max_iter: int = 10,
) -> tuple[np.ndarray, int] | None:
    """Correct (x, p) onto the branch through the arclength hyperplane."""
    dim = y.size - 1
    for it in range(1, max_iter + 1):
        x, p = y[:dim], y[dim]
        try:
            params = _with_param(base_params, param_name, p)
        except ValueError:
            return None
        r = rhs_vector(x, f, params, grid)
        arc = float(np.dot(y - y_pred, tangent))
        res = np.sqrt(np.dot(r, r) + arc * arc)
        if res < tol:
            return y, it
        jac = state_jacobian(vector_to_state(x, grid), params)
        dfdp = _param_derivative(x, param_name)
        big = np.zeros((dim + 1, dim + 1))
        big[:dim, :dim] = jac
        big[:dim, dim] = dfdp
        big[dim, :] = tangent
        rhs_full = np.concatenate([r, [arc]])
        try:
            dy = np.linalg.solve(big, -rhs_full)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(dy)):
            return None
        y = y + dy
    return None


def _param_derivative(x: np.ndarray, param_name: str) -> np.ndarray:
    """d(rhs)/d(param) on real vectors: -u for gamma, -n~ for delta."""
    u, n = unpack_state(x)
    if param_name == "gamma":
        return pack_state(-u, np.zeros_like(n))
    return pack_state(np.zeros_like(u), -n)


def continue_equilibria(
    start: Equilibrium,
    param_name: str,
    param_range: tuple[float, float],
    ds: float,
    *,
    max_points: int = 400,
    newton_tol: float = 1e-10,
    param_tol: float = 1e-4,
    refine_events: bool = True,
    stop_on: set[str] | None = None,
    spectrum_threshold: float = 1e-8,
) -> Branch:
    """Trace an equilibrium branch from ``start`` across ``param_range``.

    ``param_range`` is ordered (from, to); the sweep runs toward ``to`` and
    traverses folds, recording them as events.  Every accepted point carries
    its stability spectrum; sign changes of the leading complex pair are
    refined by bisection to ``param_tol`` and recorded as Hopf events.
    """
    p_from, p_to = param_range
    grid = start.grid
    forcing = start.forcing
    f = forcing.profile.coeffs
    base = start.params
    direction = 1.0 if p_to >= p_from else -1.0
    lo, hi = min(p_from, p_to), max(p_from, p_to)

    branch = Branch(param_name=param_name)

    def accept(x: np.ndarray, p: float) -> BranchPoint:
        params = _with_param(base, param_name, p)
        v, _ = unpack_state(x)
        eq = _make_equilibrium(SpectralField(v, grid), forcing, params, 0, "newton")
        rep = spectrum(
            state_jacobian(eq.state, params), threshold=spectrum_threshold,
            param_value=p,
        )
        bp = BranchPoint(
            param_name=param_name,
            param_value=p,
            solution=eq,
            norm_stat=total_l2_norm(eq.state),
            stability=rep,
        )
        branch.points.append(bp)
        return bp

    x0 = state_to_vector(start.state)
    p0 = float(getattr(base, param_name))
    accept(x0, p0)

    y_prev = np.concatenate([x0, [p0]])
    tangent = np.zeros(y_prev.size)
    tangent[-1] = direction
    step = ds

    while len(branch.points) < max_points:
        y_pred = y_prev + step * tangent
        sol = _newton_bordered(
            y_pred, y_pred, tangent, param_name, base, f, grid, newton_tol
        )
        if sol is None:
            if step > 1e-6:
                step = max(step / 2.0, 1e-6)
                continue
            branch.truncated = "corrector failed at minimum step"
            break
        y_new, n_iter = sol

        prev_bp = branch.points[-1]
        new_norm_guess = float(
            np.linalg.norm(y_new[:-1] - y_prev[:-1])
        )
        if new_norm_guess > 50.0 * step and step > 1e-6:
            step = max(step / 2.0, 1e-6)
            continue

        bp = accept(y_new[:-1], float(y_new[-1]))

        if abs(bp.norm_stat - prev_bp.norm_stat) > max(5.0 * step, 1e-8) and step > 1e-6:
            # possible branch jump: retry the step at half length
            branch.points.pop()
            step = max(step / 2.0, 1e-6)
            continue

        new_tangent = np.concatenate([y_new]) - y_prev
        nrm = np.linalg.norm(new_tangent)
        if nrm == 0:
            branch.truncated = "zero tangent"
            break
        new_tangent /= nrm

        # fold: the parameter component of the tangent reverses
        if np.sign(new_tangent[-1]) != 0 and np.sign(tangent[-1]) != 0 and (
            np.sign(new_tangent[-1]) != np.sign(tangent[-1])
        ):
            branch.events.append(
                BranchEvent(
                    kind="fold",
                    param_value=bp.param_value,
                    bracket=(prev_bp.param_value, bp.param_value),
                    accuracy=abs(bp.param_value - prev_bp.param_value),
                    point=bp,
                )
            )
            if stop_on and "fold" in stop_on:
                return branch

        # Hopf: leading complex pair crosses the imaginary axis
        a, b = prev_bp.stability, bp.stability
        if (
            a is not None and b is not None
            and a.leading_pair is not None and b.leading_pair is not None
            and a.leading_pair.imag > 1e-4 and b.leading_pair.imag > 1e-4
            and a.leading_pair.real * b.leading_pair.real < 0
        ):
            event = _refine_hopf(
                prev_bp, bp, param_name, base, forcing, grid,
                newton_tol, param_tol, spectrum_threshold,
            )
            branch.events.append(event)
            if stop_on and "hopf" in stop_on:
                return branch

        tangent = new_tangent
        y_prev = y_new
        if n_iter <= 3:
            step = min(step * 2.0, ds * 4.0)

        p_now = float(y_new[-1])
        if not (lo - 1e-12 <= p_now <= hi + 1e-12):
            break
        low_p = _with_param(base, param_name, p_now)
        if low_p.gamma <= 1e-4:
            branch.truncated = "gamma floor reached"
            break

    return branch


def _refine_hopf(
    bp_stable: BranchPoint,
    bp_unstable: BranchPoint,
    param_name: str,
    base: ModelParams,
    forcing: Forcing,
    grid: Grid,
    newton_tol: float,
    param_tol: float,
    spectrum_threshold: float,
) -> BranchEvent:
    """Bisect the leading-pair real part between two branch points."""
    f = forcing.profile.coeffs
    pa, ra = bp_stable.param_value, bp_stable.stability.leading_pair.real
    pb = bp_unstable.param_value
    xa = state_to_vector(bp_stable.solution.state)
    xb = state_to_vector(bp_unstable.solution.state)
    best_point = bp_unstable
    while abs(pb - pa) > param_tol:
        pm = 0.5 * (pa + pb)
        xm = 0.5 * (xa + xb)
        params = _with_param(base, param_name, pm)
        ym = np.concatenate([xm, [pm]])
        tangent = np.zeros(ym.size)
        tangent[-1] = 1.0
        # natural continuation: parameter frozen via the bordered row
        sol = _newton_bordered(ym, ym, tangent, param_name, base, f, grid, newton_tol)
        if sol is None:
            break
        ym, _ = sol
        params = _with_param(base, param_name, float(ym[-1]))
        rep = spectrum(
            state_jacobian(vector_to_state(ym[:-1], grid), params),
            threshold=spectrum_threshold, param_value=pm,
        )
        if rep.leading_pair is None:
            break
        v, _ = unpack_state(ym[:-1])
        eq = _make_equilibrium(SpectralField(v, grid), forcing, params, 0, "newton")
        point = BranchPoint(param_name, pm, eq, total_l2_norm(eq.state), rep)
        if np.sign(rep.leading_pair.real) == np.sign(ra):
            pa, xa = pm, ym[:-1]
        else:
            pb, xb = pm, ym[:-1]
            best_point = point
    p_star = 0.5 * (pa + pb)
    eq_star = best_point.solution
    jac = state_jacobian(eq_star.state, eq_star.params)
    lam, vec = critical_eigenvector(jac)
    return BranchEvent(
        kind="hopf",
        param_value=p_star,
        bracket=(min(pa, pb), max(pa, pb)),
        accuracy=abs(pb - pa),
        point=best_point,
        data={"eigenvalue": lam, "eigenvector": vec},
    )


# -- flow maps -------------------------------------------------------------------


def flow_map(
    x: np.ndarray,
    t_span: float,
    params: ModelParams,
    forcing: Forcing,
    grid: Grid,
    h_target: float,
    samples: int = 0,
) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
    """Integrate real state vectors (batched) for t_span, landing exactly.

    With ``samples`` > 0, also returns the trajectory at that many
    equispaced sample marks (single trajectories only).
    """
    n_steps = max(int(np.ceil(t_span / h_target - 1e-12)), 4)
    h = t_span / n_steps
    coeffs = precompute(params, grid, h)
    f = forcing.profile.coeffs
    u, n = unpack_state(np.asarray(x, dtype=float))
    taken = []
    mark_every = max(n_steps // samples, 1) if samples else 0
    t = 0.0
    for i in range(n_steps):
        if samples and i % mark_every == 0:
            taken.append(pack_state(u, n))
        u, n = step_arrays(u, n, t, coeffs, f, params, grid)
        t += h
    out = pack_state(u, n)
    if not np.all(np.isfinite(out)):
        raise ContinuationError("flow map blew up (non-finite state)")
    if samples:
        return out, np.array(taken)
    return out


def _monodromy_batch(
    x0: np.ndarray,
    t_span: float,
    params: ModelParams,
    forcing: Forcing,
    grid: Grid,
    h_target: float,
    sigma: float = 1e-6,
    param_name: str | None = None,
    param_sigma: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Endpoint, monodromy DPhi/dx0 and optionally DPhi/dparam, one batch.

    Perturbed columns are independent trajectories run simultaneously; the
    parameter derivative needs a separate batch only because the linear
    coefficients change with the parameter.
    """
    dim = x0.size
    batch = np.vstack([x0[None, :], x0[None, :] + sigma * np.eye(dim)])
    out = flow_map(batch, t_span, params, forcing, grid, h_target)
    end = out[0]
    mono = (out[1:] - end[None, :]).T / sigma
    dparam = None
    if param_name is not None:
        p = float(getattr(params, param_name))
        pp = _with_param(params, param_name, p + param_sigma)
        end_p = flow_map(x0, t_span, pp, forcing, grid, h_target)
        dparam = (end_p - end) / param_sigma
    return end, mono, dparam


def classify_multipliers(
    multipliers: np.ndarray,
    pd_window: float = 0.05,
    torus_window: float = 0.05,
    unstable_margin: float = 1e-3,
) -> tuple[str, float]:
    """Orbit class from the nontrivial Floquet multipliers.

    Returns (class, trivial multiplier error).  The trivial multiplier (the
    one closest to 1) is excluded from the classification.
    """
    mults = np.asarray(multipliers)
    trivial_idx = int(np.argmin(np.abs(mults - 1.0)))
    triv_err = float(np.abs(mults[trivial_idx] - 1.0))
    rest = np.delete(mults, trivial_idx)
    if rest.size == 0:
        return "stable", triv_err
    real_mask = np.abs(rest.imag) < 1e-4 * np.maximum(1.0, np.abs(rest))
    real_mults = rest[real_mask]
    complex_mults = rest[~real_mask]
    if real_mults.size and np.any(np.abs(real_mults + 1.0) < pd_window):
        return "period_doubling_critical", triv_err
    if complex_mults.size and np.any(
        np.abs(np.abs(complex_mults) - 1.0) < torus_window
    ):
        return "torus_critical", triv_err
    if np.any(np.abs(rest) > 1.0 + unstable_margin):
        return "unstable", triv_err
    return "stable", triv_err


def shoot_orbit(
    guess_x0: ZakharovState,
    guess_period: float,
    params: ModelParams,
    forcing: Forcing,
    *,
    tol: float = 1e-8,
    h_target: float = 2.5e-3,
    max_iter: int = 14,
    phase_reference: np.ndarray | None = None,
    sigma: float = 1e-6,
    min_amplitude: float = 1e-8,
) -> OrbitPoint:
    """Newton shooting for a periodic orbit near (guess_x0, guess_period).

    Unknowns are (x0, T); equations are Phi_T(x0) - x0 = 0 plus the integral
    phase condition <x0 - x_ref, F(x_ref)> = 0.  The Floquet multipliers are
    the eigenvalues of the finite-difference monodromy at the solution.
    """
    if guess_period <= 0:
        raise ValueError("guess period must be positive")
    grid = guess_x0.grid
    x0 = state_to_vector(guess_x0)
    x_ref = x0.copy() if phase_reference is None else np.asarray(phase_reference)
    f = forcing.profile.coeffs
    fdot_ref = rhs_vector(x_ref, f, params, grid)
    nf = np.linalg.norm(fdot_ref)
    if nf == 0:
        raise ValueError("phase reference is an equilibrium; cannot fix phase")
    fdot_ref = fdot_ref / nf

    period = float(guess_period)
    res_norm = np.inf
    mono = None
    for it in range(max_iter):
        if period < 10.0 * h_target:
            raise ContinuationError(
                f"period collapsed to {period:.3e} (below 10 steps)")
        end, mono, _ = _monodromy_batch(
            x0, period, params, forcing, grid, h_target, sigma=sigma)
        res = end - x0
        phase = float(np.dot(x0 - x_ref, fdot_ref))
        res_norm = float(np.sqrt(np.dot(res, res) + phase * phase))
        if res_norm < tol:
            break
        dim = x0.size
        big = np.zeros((dim + 1, dim + 1))
        big[:dim, :dim] = mono - np.eye(dim)
        big[:dim, dim] = rhs_vector(end, f, params, grid)
        big[dim, :dim] = fdot_ref
        rhs_full = np.concatenate([res, [phase]])
        try:
            dy = np.linalg.solve(big, -rhs_full)
        except np.linalg.LinAlgError as exc:
            raise ContinuationError(f"singular shooting system: {exc}") from exc
        lam = 1.0
        for _ in range(5):
            x_try = x0 + lam * dy[:dim]
            t_try = period + lam * dy[dim]
            if t_try <= 0:
                lam *= 0.5
                continue
            end_try = flow_map(x_try, t_try, params, forcing, grid, h_target)
            phase_try = float(np.dot(x_try - x_ref, fdot_ref))
            r_try = float(np.sqrt(
                np.sum((end_try - x_try) ** 2) + phase_try ** 2))
            if r_try < res_norm or lam < 0.2:
                break
            lam *= 0.5
        x0 = x0 + lam * dy[:dim]
        period += lam * dy[dim]
    else:
        raise ContinuationError(
            f"shooting did not converge (residual {res_norm:.3e} after {max_iter} iterations)")

    # fresh monodromy and residual at the converged point
    end, mono, _ = _monodromy_batch(
        x0, period, params, forcing, grid, h_target, sigma=sigma)
    res_final = float(np.linalg.norm(end - x0))
    half = flow_map(x0, period / 2.0, params, forcing, grid, h_target)
    amplitude = float(np.linalg.norm(half - x0))
    if amplitude < min_amplitude:
        raise OrbitCollapseError(
            f"orbit collapsed to equilibrium (amplitude {amplitude:.3e})")
    end_half = flow_map(x0, period, params, forcing, grid, h_target / 2.0)
    res_half = float(np.linalg.norm(end_half - x0))
    multipliers = np.linalg.eigvals(mono)
    orbit_class, triv_err = classify_multipliers(multipliers)
    return OrbitPoint(
        x0=vector_to_state(x0, grid),
        period=period,
        params=params,
        forcing=forcing,
        floquet_multipliers=multipliers,
        orbit_class=orbit_class,
        residual=res_final,
        residual_halfstep=res_half,
        trivial_multiplier_error=triv_err,
        amplitude=amplitude,
        step_size=h_target,
        monodromy=mono,
    )


def orbit_average_norm(orbit: OrbitPoint, samples: int = 64) -> float:
    """Period-averaged L^2 norm of the total solution over one orbit."""
    grid = orbit.x0.grid
    _, marks = flow_map(
        state_to_vector(orbit.x0), orbit.period, orbit.params, orbit.forcing,
        grid, orbit.step_size, samples=samples,
    )
    vals = [total_l2_norm(vector_to_state(m, grid)) for m in marks]
    return float(np.mean(vals))


def orbit_from_hopf(
    event: BranchEvent,
    amplitude: float = 1e-2,
    *,
    param_offset: float = 5e-3,
    tol: float = 1e-8,
    h_target: float = 2.5e-3,
) -> OrbitPoint:
    """Branch-switch from a refined Hopf event to a small periodic orbit.

    The initial guess is the equilibrium displaced along the real part of
    the critical eigenvector, with period 2*pi / Im(lambda*); both
    displacement signs and both parameter sides are attempted.
    """
    if amplitude <= 0:
        raise ValueError("amplitude must be positive")
    if event.kind != "hopf" or event.point is None:
        raise ValueError("orbit_from_hopf needs a refined Hopf event")
    eq: Equilibrium = event.point.solution
    lam = event.data["eigenvalue"]
    vec = np.asarray(event.data["eigenvector"])
    if abs(lam.imag) < 1e-8:
        raise ValueError("critical eigenvalue has no imaginary part")
    period0 = 2.0 * np.pi / abs(lam.imag)
    x_eq = state_to_vector(eq.state)
    direction = vec.real / np.linalg.norm(vec.real)
    param_name = event.point.param_name
    p_star = event.param_value
    base = eq.params
    grid = eq.grid

    errors = []
    for dp in (param_offset, -param_offset, 0.0):
        p_try = p_star + dp
        params = _with_param(base, param_name, p_try)
        if params.gamma <= 0 or params.delta < 0:
            continue
        # re-center the equilibrium at the offset parameter
        try:
            from .stationary import newton_solve

            eq_off = newton_solve(eq.v, eq.forcing, params, tol=1e-11)
            x_center = state_to_vector(eq_off.state)
        except ConvergenceError:
            x_center = x_eq
        for sign in (1.0, -1.0):
            guess = x_center + sign * amplitude * direction
            try:
                return shoot_orbit(
                    vector_to_state(guess, grid), period0, params, eq.forcing,
                    tol=tol, h_target=h_target,
                    phase_reference=guess,
                )
            except (ContinuationError, np.linalg.LinAlgError) as exc:
                errors.append(f"dp={dp:+.2e} sign={sign:+.0f}: {exc}")
    raise ContinuationError(
        "orbit_from_hopf failed for both displacement signs and parameter sides:\n"
        + "\n".join(errors)
    )


def continue_orbits(
    start: OrbitPoint,
    param_name: str,
    param_range: tuple[float, float],
    ds: float,
    *,
    max_points: int = 200,
    tol: float = 1e-8,
    param_tol: float = 1e-4,
    h_target: float | None = None,
    stop_on: set[str] | None = None,
    sigma: float = 1e-6,
) -> Branch:
    """Pseudo-arclength continuation of a periodic orbit in (x0, T, param).

    Records period-doubling events when a real multiplier crosses -1 and
    torus events when a complex pair crosses the unit circle, both refined
    by bisection to ``param_tol``.  ``stop_on`` ends the sweep early once an
    event of one of the given kinds has been recorded.
    """
    p_from, p_to = param_range
    if h_target is None:
        h_target = start.step_size
    grid = start.x0.grid
    forcing = start.forcing
    base = start.params
    direction = 1.0 if p_to >= p_from else -1.0
    lo, hi = min(p_from, p_to), max(p_from, p_to)

    branch = Branch(param_name=param_name)

    def accept(orbit: OrbitPoint) -> BranchPoint:
        bp = BranchPoint(
            param_name=param_name,
            param_value=float(getattr(orbit.params, param_name)),
            solution=orbit,
            norm_stat=orbit_average_norm(orbit),
            stability=None,
        )
        branch.points.append(bp)
        return bp

    accept(start)
    if p_from == p_to:
        return branch

    dim = state_to_vector(start.x0).size
    y_prev = np.concatenate(
        [state_to_vector(start.x0), [start.period],
         [float(getattr(base, param_name))]]
    )
    tangent = np.zeros(dim + 2)
    tangent[-1] = direction
    step = ds

    while len(branch.points) < max_points:
        y_pred = y_prev + step * tangent
        sol = _orbit_corrector(
            y_pred, y_pred, tangent, param_name, base, forcing, grid,
            h_target, tol, sigma,
        )
        if sol is None:
            if step > 1e-6:
                step = max(step / 2.0, 1e-6)
                continue
            branch.truncated = "orbit corrector failed at minimum step"
            break
        y_new, orbit = sol
        prev_bp = branch.points[-1]
        bp = accept(orbit)

        new_tangent = y_new - y_prev
        nrm = np.linalg.norm(new_tangent)
        if nrm == 0:
            branch.truncated = "zero tangent"
            break
        new_tangent /= nrm
        if np.sign(new_tangent[-1]) != np.sign(tangent[-1]) and tangent[-1] != 0:
            branch.events.append(BranchEvent(
                kind="fold", param_value=bp.param_value,
                bracket=(prev_bp.param_value, bp.param_value),
                accuracy=abs(bp.param_value - prev_bp.param_value), point=bp,
            ))
            if stop_on and "fold" in stop_on:
                return branch

        for kind in ("pd", "torus"):
            crossing = _multiplier_crossing(
                prev_bp.solution, bp.solution, kind)
            if crossing:
                event = _refine_orbit_event(
                    kind, prev_bp, bp, param_name, base, forcing, grid,
                    h_target, tol, param_tol, sigma,
                )
                branch.events.append(event)
                if stop_on and kind in stop_on:
                    return branch

        tangent = new_tangent
        y_prev = y_new
        step = min(step * 1.5, ds * 4.0)

        p_now = float(y_new[-1])
        if not (lo - 1e-12 <= p_now <= hi + 1e-12):
            break

    return branch


def _orbit_corrector(
    y: np.ndarray,
    y_pred: np.ndarray,
    tangent: np.ndarray,
    param_name: str,
    base: ModelParams,
    forcing: Forcing,
    grid: Grid,
    h_target: float,
    tol: float,
    sigma: float,
    max_iter: int = 10,
) -> tuple[np.ndarray, OrbitPoint] | None:
    dim = y.size - 2
    x_ref = y_pred[:dim].copy()
    params_ref = _with_param(base, param_name, float(y_pred[-1]))
    fdot_ref = rhs_vector(x_ref, forcing.profile.coeffs, params_ref, grid)
    nrm = np.linalg.norm(fdot_ref)
    if nrm == 0:
        return None
    fdot_ref /= nrm
    f = forcing.profile.coeffs

    mono = None
    for _ in range(max_iter):
        x0, period, p = y[:dim], float(y[dim]), float(y[dim + 1])
        if period < 10.0 * h_target or p <= 0:
            return None
        try:
            params = _with_param(base, param_name, p)
        except ValueError:
            return None
        try:
            end, mono, dparam = _monodromy_batch(
                x0, period, params, forcing, grid, h_target,
                sigma=sigma, param_name=param_name,
            )
        except ContinuationError:
            return None
        res = end - x0
        phase = float(np.dot(x0 - x_ref, fdot_ref))
        arc = float(np.dot(y - y_pred, tangent))
        res_norm = float(np.sqrt(np.dot(res, res) + phase**2 + arc**2))
        if res_norm < tol:
            multipliers = np.linalg.eigvals(mono)
            orbit_class, triv_err = classify_multipliers(multipliers)
            end_half = flow_map(x0, period, params, forcing, grid, h_target / 2.0)
            half_point = flow_map(x0, period / 2.0, params, forcing, grid, h_target)
            orbit = OrbitPoint(
                x0=vector_to_state(x0, grid),
                period=period,
                params=params,
                forcing=forcing,
                floquet_multipliers=multipliers,
                orbit_class=orbit_class,
                residual=float(np.linalg.norm(res)),
                residual_halfstep=float(np.linalg.norm(end_half - x0)),
                trivial_multiplier_error=triv_err,
                amplitude=float(np.linalg.norm(half_point - x0)),
                step_size=h_target,
                monodromy=mono,
            )
            if orbit.amplitude < 1e-8:
                return None
            return y, orbit
        big = np.zeros((dim + 2, dim + 2))
        big[:dim, :dim] = mono - np.eye(dim)
        big[:dim, dim] = rhs_vector(end, f, params, grid)
        big[:dim, dim + 1] = dparam
        big[dim, :dim] = fdot_ref
        big[dim + 1, :] = tangent
        rhs_full = np.concatenate([res, [phase, arc]])
        try:
            dy = np.linalg.solve(big, -rhs_full)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(dy)):
            return None
        y = y + dy
    return None


def _multiplier_crossing(a: OrbitPoint, b: OrbitPoint, kind: str) -> bool:
    ga = _event_indicator(a, kind)
    gb = _event_indicator(b, kind)
    if ga is None or gb is None:
        return False
    return ga * gb < 0


def _event_indicator(orbit: OrbitPoint, kind: str) -> float | None:
    """Signed distance of the critical multiplier from its boundary.

    pd: (most negative real multiplier) + 1 flips sign as it passes -1.
    torus: max |mu| - 1 over nontrivial complex pairs.
    """
    mults = np.asarray(orbit.floquet_multipliers)
    trivial_idx = int(np.argmin(np.abs(mults - 1.0)))
    rest = np.delete(mults, trivial_idx)
    if rest.size == 0:
        return None
    real_mask = np.abs(rest.imag) < 1e-4 * np.maximum(1.0, np.abs(rest))
    if kind == "pd":
        real_neg = rest[real_mask & (rest.real < 0)]
        if real_neg.size == 0:
            return None
        return float(np.min(real_neg.real) + 1.0)
    complex_mults = rest[~real_mask]
    if complex_mults.size == 0:
        return None
    return float(np.max(np.abs(complex_mults)) - 1.0)


def _refine_orbit_event(
    kind: str,
    bp_a: BranchPoint,
    bp_b: BranchPoint,
    param_name: str,
    base: ModelParams,
    forcing: Forcing,
    grid: Grid,
    h_target: float,
    tol: float,
    param_tol: float,
    sigma: float,
) -> BranchEvent:
    """Bisect a Floquet-multiplier crossing in the parameter."""
    pa, pb = bp_a.param_value, bp_b.param_value
    ga = _event_indicator(bp_a.solution, kind)
    orbit_a, orbit_b = bp_a.solution, bp_b.solution
    best = bp_b
    while abs(pb - pa) > param_tol:
        pm = 0.5 * (pa + pb)
        w = 0.0 if pb == pa else (pm - pa) / (pb - pa)
        x_guess = (1 - w) * state_to_vector(orbit_a.x0) + w * state_to_vector(orbit_b.x0)
        t_guess = (1 - w) * orbit_a.period + w * orbit_b.period
        params = _with_param(base, param_name, pm)
        try:
            orbit_m = shoot_orbit(
                vector_to_state(x_guess, grid), t_guess, params, forcing,
                tol=tol, h_target=h_target, phase_reference=x_guess,
                sigma=sigma,
            )
        except ContinuationError:
            break
        gm = _event_indicator(orbit_m, kind)
        if gm is None:
            break
        point = BranchPoint(
            param_name, pm, orbit_m, orbit_average_norm(orbit_m), None)
        if np.sign(gm) == np.sign(ga):
            pa, orbit_a = pm, orbit_m
        else:
            pb, orbit_b = pm, orbit_m
            best = point
    return BranchEvent(
        kind=kind,
        param_value=0.5 * (pa + pb),
        bracket=(min(pa, pb), max(pa, pb)),
        accuracy=abs(pb - pa),
        point=best,
    )


def double_period_branch(
    pd_orbit: OrbitPoint,
    perturbation: float = 1e-3,
    *,
    tol: float = 1e-8,
    amplitude_floor: float = 1e-6,
) -> OrbitPoint:
    """Restart shooting at twice the period along the -1 multiplier direction.

    Rejects convergence back onto the doubled cover of the original orbit
    (the two half-loops must differ by more than ``amplitude_floor``).
    """
    if pd_orbit.monodromy is None:
        raise ValueError("period doubling restart needs the stored monodromy")
    mults, vecs = np.linalg.eig(pd_orbit.monodromy)
    idx = int(np.argmin(np.abs(mults + 1.0)))
    if abs(mults[idx] + 1.0) > 0.2:
        raise ValueError(
            f"no multiplier near -1 (closest {mults[idx]:.4f}); not a PD-critical orbit")
    direction = vecs[:, idx].real
    nrm = np.linalg.norm(direction)
    if nrm == 0:
        direction = vecs[:, idx].imag
        nrm = np.linalg.norm(direction)
    direction = direction / nrm
    x0 = state_to_vector(pd_orbit.x0) + perturbation * direction
    grid = pd_orbit.x0.grid
    doubled = shoot_orbit(
        vector_to_state(x0, grid), 2.0 * pd_orbit.period,
        pd_orbit.params, pd_orbit.forcing,
        tol=tol, h_target=pd_orbit.step_size, phase_reference=x0,
    )
    x_new = state_to_vector(doubled.x0)
    half = flow_map(
        x_new, doubled.period / 2.0, doubled.params, doubled.forcing,
        grid, doubled.step_size,
    )
    loop_gap = float(np.linalg.norm(half - x_new))
    if loop_gap < amplitude_floor:
        raise OrbitCollapseError(
            f"converged to the doubled cover of the original orbit "
            f"(half-loop gap {loop_gap:.3e})")
    return doubled


# -- branch CSV -------------------------------------------------------------------


def write_branch_csv(path, branches: list[tuple[str, Branch]]) -> None:
    """Branch diagram CSV; one row per point plus one per refined event.

    Columns: param_name, param_value, branch_id, solution_type
    (eq | orbit | orbit2T), norm_stat, period (blank for equilibria),
    stability (max Re lambda for equilibria, max nontrivial |mu| for
    orbits), event_flag (none | hopf | pd | torus | fold).
    """
    lines = [
        "param_name,param_value,branch_id,solution_type,norm_stat,period,stability,event_flag"
    ]

    def fmt(x):
        return format(float(x), ".17g")

    for branch_id, branch in branches:
        flagged: dict[int, str] = {}
        rows = []
        for bp in branch.points:
            if bp.is_orbit:
                orbit: OrbitPoint = bp.solution
                mults = np.asarray(orbit.floquet_multipliers)
                triv = int(np.argmin(np.abs(mults - 1.0)))
                rest = np.delete(mults, triv)
                stab = float(np.max(np.abs(rest))) if rest.size else 0.0
                sol_type = "orbit2T" if branch_id.endswith("2T") else "orbit"
                rows.append((bp.param_value, sol_type, bp.norm_stat,
                             orbit.period, stab, "none"))
            else:
                stab = bp.stability.max_real_part if bp.stability else float("nan")
                rows.append((bp.param_value, "eq", bp.norm_stat, None, stab, "none"))
        for ev in branch.events:
            if ev.point is None:
                continue
            bp = ev.point
            if bp.is_orbit:
                orbit = bp.solution
                mults = np.asarray(orbit.floquet_multipliers)
                triv = int(np.argmin(np.abs(mults - 1.0)))
                rest = np.delete(mults, triv)
                stab = float(np.max(np.abs(rest))) if rest.size else 0.0
                rows.append((ev.param_value, "orbit", bp.norm_stat,
                             orbit.period, stab, ev.kind))
            else:
                stab = bp.stability.max_real_part if bp.stability else float("nan")
                rows.append((ev.param_value, "eq", bp.norm_stat, None, stab, ev.kind))
        for pv, sol_type, norm_stat, period, stab, flag in rows:
            lines.append(
                f"{branch.param_name},{fmt(pv)},{branch_id},{sol_type},"
                f"{fmt(norm_stat)},{fmt(period) if period is not None else ''},"
                f"{fmt(stab)},{flag}"
            )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def save_orbit(orbit: OrbitPoint, path, samples: int = 64) -> None:
    """Orbit file: equilibrium-format header extended with the period, then
    one coefficient block per time sample (sample_index column)."""
    grid = orbit.x0.grid
    half = grid.num_modes // 2
    _, marks = flow_map(
        state_to_vector(orbit.x0), orbit.period, orbit.params, orbit.forcing,
        grid, orbit.step_size, samples=samples,
    )
    lines = [
        "# zakharov orbit v1",
        "# method=shooting",
        f"# residual={format(orbit.residual, '.17g')}",
        f"# period={format(orbit.period, '.17g')}",
        f"# samples={len(marks)}",
        f"# gamma={format(orbit.params.gamma, '.17g')}",
        f"# delta={format(orbit.params.delta, '.17g')}",
        f"# alpha1={format(orbit.params.alpha1, '.17g')}",
        f"# alpha2={format(orbit.params.alpha2, '.17g')}",
        f"# forcing={orbit.forcing.description}",
        f"# num_modes={grid.num_modes}",
        "sample_index,k,re_u,im_u,re_n,im_n",
    ]
    for i, mark in enumerate(marks):
        u, n = unpack_state(mark)
        for k in range(-half, half):
            lines.append(
                f"{i},{k},{format(u[k].real, '.17g')},{format(u[k].imag, '.17g')},"
                f"{format(n[k].real, '.17g')},{format(n[k].imag, '.17g')}"
            )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
