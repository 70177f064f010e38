"""Linearization about equilibria: real-vectorized Jacobian and spectra.

Because the density coupling enters through Re(n~), the right-hand side is
not complex-differentiable; the linearization therefore acts on the real
coordinate stack (Re u_hat, Im u_hat, Re n_hat, Im n_hat) of length 4N.
The matrix is assembled exactly, by pushing the 4N coordinate directions
through the analytic directional derivative of the right-hand side in one
batched call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelParams, ZakharovState, linearized_terms, pack_state, unpack_state
from .spectral import Grid


@dataclass(frozen=True)
class StabilityReport:
    """Spectrum of the linearized flow at one equilibrium.

    ``eigenvalues`` are sorted by descending real part.  ``leading_pair`` is
    the member with positive imaginary part of the complex-conjugate pair of
    largest real part (None if the spectrum is purely real).  The
    classification compares max_real_part against ``threshold``.
    """

    eigenvalues: np.ndarray
    max_real_part: float
    leading_pair: complex | None
    classification: str
    threshold: float
    param_value: float | None = None


def state_jacobian(state: ZakharovState, params: ModelParams) -> np.ndarray:
    """Exact 4N x 4N real Jacobian of the right-hand side at a state."""
    grid = state.grid
    n_modes = grid.num_modes
    dim = 4 * n_modes
    eye = np.eye(n_modes)
    zero = np.zeros((n_modes, n_modes))
    du = np.concatenate([eye, 1j * eye, zero, zero], axis=0)
    dn = np.concatenate([zero, zero, eye, 1j * eye], axis=0)
    out_u, out_n = linearized_terms(
        state.u.coeffs, state.n_dirac.coeffs, du, dn, params, grid
    )
    cols = pack_state(out_u, out_n)
    jac = cols.T.copy()
    assert jac.shape == (dim, dim)
    return jac


def assemble_jacobian(eq, params: ModelParams | None = None) -> np.ndarray:
    """Jacobian at an equilibrium (params default to the equilibrium's own)."""
    if params is None:
        params = eq.params
    return state_jacobian(eq.state, params)


def spectrum(
    jac: np.ndarray,
    threshold: float = 1e-8,
    imag_floor: float = 1e-4,
    param_value: float | None = None,
) -> StabilityReport:
    """Dense eigenvalue decomposition, sorted by descending real part."""
    if not np.all(np.isfinite(jac)):
        raise ValueError("Jacobian contains non-finite entries")
    try:
        eigs = np.linalg.eigvals(jac)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigensolver failed: {exc}") from exc
    order = np.argsort(-eigs.real)
    eigs = eigs[order]
    max_real = float(eigs[0].real)
    complex_part = eigs[eigs.imag > imag_floor]
    leading = complex(complex_part[0]) if complex_part.size else None
    if max_real < -threshold:
        cls = "stable"
    elif max_real > threshold:
        cls = "unstable"
    else:
        cls = "hopf_critical"
    return StabilityReport(
        eigenvalues=eigs,
        max_real_part=max_real,
        leading_pair=leading,
        classification=cls,
        threshold=threshold,
        param_value=param_value,
    )


def leading_pair_real(report: StabilityReport) -> float | None:
    return report.leading_pair.real if report.leading_pair is not None else None


def hopf_test(
    report_before: StabilityReport, report_after: StabilityReport,
    imag_floor: float = 1e-4,
) -> tuple[float, float] | None:
    """Bracket a Hopf crossing between two consecutive branch spectra.

    Returns (param_before, param_after) when the real part of the leading
    complex pair changes sign and its imaginary part stays above the floor
    at both ends (a real-axis crossing is a fold, not a Hopf).
    """
    a, b = report_before, report_after
    if a.leading_pair is None or b.leading_pair is None:
        return None
    if a.leading_pair.imag <= imag_floor or b.leading_pair.imag <= imag_floor:
        return None
    if a.leading_pair.real * b.leading_pair.real < 0:
        return (a.param_value, b.param_value)
    return None


def critical_eigenvector(jac: np.ndarray, imag_floor: float = 1e-4) -> tuple[complex, np.ndarray]:
    """Leading complex eigenvalue (Im > floor) and its right eigenvector."""
    eigs, vecs = np.linalg.eig(jac)
    mask = eigs.imag > imag_floor
    if not np.any(mask):
        raise ValueError("no complex eigenvalue above the imaginary-part floor")
    idx = np.argmax(np.where(mask, eigs.real, -np.inf))
    return complex(eigs[idx]), vecs[:, idx]


def write_spectrum_csv(path, entries) -> None:
    """Fig-style spectrum scatter: columns param_value, re_lambda, im_lambda.

    ``entries`` is an iterable of (param_value, eigenvalue array) pairs.
    """
    lines = ["param_value,re_lambda,im_lambda"]
    for param_value, eigs in entries:
        for lam in np.asarray(eigs):
            lines.append(
                f"{format(float(param_value), '.17g')},"
                f"{format(float(lam.real), '.17g')},{format(float(lam.imag), '.17g')}"
            )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
