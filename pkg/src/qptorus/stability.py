"""Lyapunov-exponent stability of converged solutions.

The per-sample transition blocks of a converged batch, converted to
physical (q, qdot) coordinates, form a smooth field over the section
angles. The field is interpolated entrywise with the solution's own
harmonic basis and iterated period by period with QR re-orthonormalization
to accumulate the volume-growth exponents.

The periodic degenerate case (d = 1) skips interpolation and reports
ln|mu| / T1 from the Floquet multipliers of the single monodromy block.
"""

import numpy as np
from dataclasses import dataclass

from .shooting import evaluate


class StabilityError(RuntimeError):
    pass


@dataclass
class StabilityReport:
    exponents: np.ndarray  # first-order exponents, sorted descending
    flag: str  # "stable" | "marginal" | "unstable"
    stable: bool
    n_periods: int
    history: np.ndarray  # running estimates, (n_periods, 2n)
    threshold: float

    @property
    def order_exponents(self):
        """Cumulative h-th order exponents of the final estimate."""
        return np.cumsum(self.exponents)


def physical_monodromy(psi_qu, omega1):
    """Convert a (q, u) transition block to (q, qdot) coordinates."""
    n = psi_qu.shape[0] // 2
    out = psi_qu.copy()
    out[:n, n:] /= omega1
    out[n:, :n] *= omega1
    return out


class TransitionField:
    """Trigonometric interpolant of the transition blocks over the section."""

    def __init__(self, coeffs, k_matrix):
        self.coeffs = coeffs  # (U, 2n, 2n)
        self.k_matrix = k_matrix

    def __call__(self, phi_tilde):
        from .harmonics import basis_row
        h = basis_row(self.k_matrix, phi_tilde)
        return np.einsum("u,uij->ij", h, self.coeffs)

    @classmethod
    def constant(cls, matrix):
        """Field that returns `matrix` everywhere (testing and d = 1 reuse)."""
        m = np.asarray(matrix, dtype=float)
        return cls(m[None, :, :].copy(), np.zeros((1, 0), dtype=int))


def transition_matrix_field(batch, freq, scheme):
    """Fit the per-sample transition blocks as a function of the section angle.

    Blocks are converted from (q, u) to physical velocity coordinates
    before fitting; evaluation at the grid points reproduces the inputs.
    """
    omega1 = freq.omega[0]
    phys = np.array([physical_monodromy(p, omega1) for p in batch.psi])
    # entrywise DFT over samples: coeffs[u] = sum_s gamma_inv[u, s] * phys[s]
    coeffs = np.einsum("us,sij->uij", scheme.gamma_inv, phys)
    return TransitionField(coeffs, scheme.k_matrix)


def field_interpolation_error(field, model, coeffs, scheme, S1, phi_probes,
                              workers=1):
    """Entrywise relative error of the field vs direct integration.

    Starts a fresh trajectory at each probe angle from the reconstructed
    section state and compares its transition block with the interpolant;
    reported as a quality metric, not gated on.
    """
    from .integrator import newmark_integrate
    from .shooting import reconstruct_state
    worst = 0.0
    omega1 = coeffs.freq.omega[0]
    for phi in phi_probes:
        phi = np.atleast_1d(phi)
        z0 = reconstruct_state(coeffs, scheme, model.n, phi)
        _, psi, _, _ = newmark_integrate(model, z0, coeffs.freq, phi, S1)
        direct = physical_monodromy(psi, omega1)
        interp = field(phi)
        scale = max(np.abs(direct).max(), 1.0)
        worst = max(worst, np.abs(direct - interp).max() / scale)
    return worst


def lyapunov_exponents(field, freq, n_ly=500, threshold_scale=1e-3):
    """First-order Lyapunov exponents by periodwise QR re-orthonormalization.

    Walks the section angle by the per-revolution shift, multiplies the
    interpolated transition blocks onto an orthonormal frame, and averages
    the log volume growth over elapsed time. `n_ly` is the number of
    revolutions.
    """
    if n_ly < 10:
        raise StabilityError("need at least 10 revolutions")
    omega1 = freq.omega[0]
    rho = freq.rho
    T1 = 2.0 * np.pi / omega1
    m = field.coeffs.shape[1]
    Q = np.eye(m)
    logsums = np.zeros(m)
    history = np.empty((n_ly, m))
    for i in range(1, n_ly + 1):
        phi = np.mod(2.0 * np.pi * (i - 1) * rho, 2.0 * np.pi)
        psi = field(phi)
        if not np.all(np.isfinite(psi)):
            raise StabilityError("transition field produced non-finite values")
        M = psi @ Q
        Q, Rm = np.linalg.qr(M)
        diag = np.diag(Rm)
        if not np.all(np.isfinite(diag)) or np.any(diag == 0.0):
            raise StabilityError("degenerate QR step in exponent iteration")
        signs = np.sign(diag)
        Q = Q * signs
        logsums += np.log(np.abs(diag))
        history[i - 1] = logsums / (i * T1)
    exponents = np.sort(history[-1])[::-1]
    return _report(exponents, omega1, n_ly, history, threshold_scale)


def floquet_exponents(psi_physical, omega1, threshold_scale=1e-3):
    """Exponents ln|mu|/T1 of a single periodic-orbit monodromy block."""
    T1 = 2.0 * np.pi / omega1
    mults = np.linalg.eigvals(psi_physical)
    exponents = np.sort(np.log(np.abs(mults)) / T1)[::-1]
    history = exponents[None, :].copy()
    return _report(exponents, omega1, 1, history, threshold_scale)


def _report(exponents, omega1, n_periods, history, threshold_scale):
    band = threshold_scale * omega1
    top = exponents[0]
    if top <= -band:
        flag = "stable"
    elif top >= band:
        flag = "unstable"
    else:
        flag = "marginal"
    return StabilityReport(exponents=exponents, flag=flag,
                           stable=(flag == "stable"), n_periods=n_periods,
                           history=history, threshold=band)


def stability_report(model, coeffs, scheme, S1, n_ly=500, workers=1):
    """Convenience wrapper: evaluate once and classify the solution."""
    ev = evaluate(model, coeffs, scheme, S1, workers=workers,
                  with_jacobian=False, sens=True)
    if scheme.d == 1:
        psi = physical_monodromy(ev.batch.psi[0], coeffs.freq.omega[0])
        return floquet_exponents(psi, coeffs.freq.omega[0])
    field = transition_matrix_field(ev.batch, coeffs.freq, scheme)
    return lyapunov_exponents(field, coeffs.freq, n_ly)
