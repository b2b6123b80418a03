"""Section-coefficient shooting.

The unknowns are the Fourier coefficients Z(0) of the initial section
(state-major by state variable, harmonic-ordered within each block) plus
any released base frequencies. One evaluation runs the pipeline

    coefficients -> sampled section -> trajectory batch -> terminal
    coefficients -> rotated terminal coefficients -> residual,

with analytic Jacobians assembled sample-blockwise so the dense
(samples x samples) trajectory Jacobian is never materialized.

For d = 1 the machinery degenerates to classical single-orbit shooting:
the basis is the constant alone and the rotation is the 1x1 identity, so
the residual reduces to z(2*pi) - z(0).
"""

import json
import numpy as np
from dataclasses import dataclass

from . import harmonics
from .model import FrequencyVector
from .integrator import integrate_batch, IntegrationError


class ShootingError(RuntimeError):
    """Newton non-convergence or inconsistent shooting inputs."""


@dataclass
class TorusCoefficients:
    """Initial-section Fourier coefficients plus the frequency vector."""

    Z0: np.ndarray
    freq: FrequencyVector

    def __post_init__(self):
        self.Z0 = np.asarray(self.Z0, dtype=float).reshape(-1)

    def copy(self):
        return TorusCoefficients(self.Z0.copy(), self.freq.replace(self.freq.omega))


@dataclass
class ShootingEvaluation:
    """Residual, terminal coefficients and Jacobians of one evaluation."""

    residual: np.ndarray
    Z_end: np.ndarray
    Z_end_rotated: np.ndarray
    jac_Z0: np.ndarray
    jac_omega: dict
    batch: object
    zbar0: np.ndarray


def _check_dims(coeffs, scheme, model):
    if coeffs.Z0.size != 2 * model.n * scheme.u_tilde:
        raise ShootingError(
            "coefficient vector has length %d, scheme expects %d"
            % (coeffs.Z0.size, 2 * model.n * scheme.u_tilde))
    if coeffs.freq.d != scheme.d:
        raise ShootingError("frequency vector dimension does not match scheme")


def section_samples(coeffs, scheme, n):
    """Sampled section, state-major (2n, S) matrix."""
    zmat = coeffs.Z0.reshape(2 * n, scheme.u_tilde)
    return zmat @ scheme.gamma.T


def reconstruct_state(coeffs, scheme, n, phi_tilde):
    """State [q; u] on the initial section at angles phi_tilde."""
    h = scheme.basis_row(phi_tilde)
    return coeffs.Z0.reshape(2 * n, scheme.u_tilde) @ h


def reconstruct_from(Z, scheme, n, phi_tilde):
    """Reconstruction from an arbitrary coefficient vector."""
    h = scheme.basis_row(phi_tilde)
    return np.asarray(Z).reshape(2 * n, scheme.u_tilde) @ h


def evaluate(model, coeffs, scheme, S1, workers=1, track_dof=None,
             with_jacobian=True, sens=None):
    """Run the shooting pipeline once.

    Returns a ShootingEvaluation; with `with_jacobian=False` the Jacobian
    fields are None and the (identical) residual is cheaper to obtain.
    Pass `sens=True` to keep the per-sample transition blocks without
    assembling the Jacobian (stability post-processing).
    """
    _check_dims(coeffs, scheme, model)
    if sens is None:
        sens = with_jacobian
    elif with_jacobian and not sens:
        raise ShootingError("the Jacobian needs the transition blocks")
    n = model.n
    u_t = scheme.u_tilde
    rho = coeffs.freq.rho
    zbar0_mat = section_samples(coeffs, scheme, n)
    batch = integrate_batch(model, zbar0_mat.reshape(-1), coeffs.freq,
                            scheme, S1, workers=workers, track_dof=track_dof,
                            sens=sens)
    zend_mat = batch.terminal.reshape(2 * n, scheme.s_tilde)
    Z_end = (zend_mat @ scheme.gamma_inv.T).reshape(-1)
    R_rot = scheme.rotation(rho)
    Z_hat = (Z_end.reshape(2 * n, u_t) @ R_rot.T).reshape(-1)
    residual = Z_hat - coeffs.Z0

    jac_Z0 = None
    jac_omega = None
    if with_jacobian:
        A = R_rot @ scheme.gamma_inv  # (U, S)
        jac_Z0 = np.einsum("sij,as,sb->iajb", batch.psi, A, scheme.gamma,
                           optimize=True).reshape(2 * n * u_t, 2 * n * u_t)
        jac_Z0 -= np.eye(2 * n * u_t)
        jac_omega = {}
        dmat = batch.domega1.reshape(2 * n, scheme.s_tilde)
        dR1 = scheme.rotation_derivative(rho, coeffs.freq.omega, 1)
        jac_omega[1] = ((dmat @ A.T).reshape(-1)
                        + (Z_end.reshape(2 * n, u_t) @ dR1.T).reshape(-1))
        for i in range(2, scheme.d + 1):
            dRi = scheme.rotation_derivative(rho, coeffs.freq.omega, i)
            jac_omega[i] = (Z_end.reshape(2 * n, u_t) @ dRi.T).reshape(-1)
    return ShootingEvaluation(residual, Z_end, Z_hat, jac_Z0, jac_omega,
                              batch, zbar0_mat.reshape(-1))


def jacobian_fd_check(model, coeffs, scheme, S1, h=1e-6, freq_indices=(),
                      workers=1):
    """Worst relative column error of the analytic Jacobian vs central FD."""
    base = evaluate(model, coeffs, scheme, S1, workers=workers)
    nz = coeffs.Z0.size
    worst = 0.0

    def resid(Z0, omega):
        c = TorusCoefficients(Z0, coeffs.freq.replace(omega))
        return evaluate(model, c, scheme, S1, workers=workers,
                        with_jacobian=False).residual

    for j in range(nz):
        dz = np.zeros(nz)
        dz[j] = h
        col = (resid(coeffs.Z0 + dz, coeffs.freq.omega)
               - resid(coeffs.Z0 - dz, coeffs.freq.omega)) / (2.0 * h)
        ref = base.jac_Z0[:, j]
        err = np.linalg.norm(col - ref) / max(np.linalg.norm(ref), 1.0)
        worst = max(worst, err)
    for i in freq_indices:
        dw = np.zeros(coeffs.freq.d)
        dw[i - 1] = h
        col = (resid(coeffs.Z0, coeffs.freq.omega + dw)
               - resid(coeffs.Z0, coeffs.freq.omega - dw)) / (2.0 * h)
        ref = base.jac_omega[i]
        err = np.linalg.norm(col - ref) / max(np.linalg.norm(ref), 1.0)
        worst = max(worst, err)
    return worst


def newton_correct(model, coeffs, scheme, S1, constraints=(), released=(),
                   epsilon=1e-8, max_iter=20, workers=1):
    """Newton iteration on (Z0, released frequencies) at fixed parameter.

    `constraints` is a sequence of callables `(coeffs, released) -> row`
    producing `(row_z, row_omega_dict, rhs)`; together they must fill the
    dimension deficit introduced by the released frequencies. Convergence
    requires |R|_2 < epsilon * max(1, |Z0|_2) and constraint residuals
    below 1e-10.
    """
    released = sorted(int(i) for i in released)
    if len(constraints) != len(released):
        raise ShootingError(
            "%d released frequencies need exactly %d constraint rows"
            % (len(released), len(released)))
    cur = coeffs.copy()
    nz = cur.Z0.size
    history = []
    for it in range(max_iter + 1):
        try:
            ev = evaluate(model, cur, scheme, S1, workers=workers)
        except IntegrationError as err:
            raise ShootingError("integration failed: %s" % err)
        rows = [c(cur, released) for c in constraints]
        rnorm = np.linalg.norm(ev.residual)
        cres = max((abs(r[2]) for r in rows), default=0.0)
        scale = max(1.0, np.linalg.norm(cur.Z0))
        history.append(rnorm)
        if rnorm < epsilon * scale and cres < 1e-10:
            return cur, {"iterations": it, "residual_norm": rnorm,
                         "history": history, "evaluation": ev}
        if it == max_iter:
            break
        nun = nz + len(released)
        A = np.zeros((nun, nun))
        b = np.empty(nun)
        A[:nz, :nz] = ev.jac_Z0
        for c_i, i in enumerate(released):
            A[:nz, nz + c_i] = ev.jac_omega[i]
        b[:nz] = -ev.residual
        for r_i, (row_z, row_om, rhs) in enumerate(rows):
            A[nz + r_i, :nz] = row_z
            for i, coef in row_om.items():
                if i in released:
                    A[nz + r_i, nz + released.index(i)] = coef
            b[nz + r_i] = rhs
        try:
            delta = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            raise ShootingError(
                "singular bordered matrix; a phase condition is likely "
                "missing for a released frequency")

        # damped update: halve up to 4 times if the residual fails to drop
        step = 1.0
        for _ in range(5):
            trial = cur.copy()
            trial.Z0 = cur.Z0 + step * delta[:nz]
            om = cur.freq.omega.copy()
            for c_i, i in enumerate(released):
                om[i - 1] += step * delta[nz + c_i]
            trial.freq = cur.freq.replace(om)
            try:
                r_trial = evaluate(model, trial, scheme, S1, workers=workers,
                                   with_jacobian=False).residual
            except IntegrationError:
                step *= 0.5
                continue
            if np.linalg.norm(r_trial) < rnorm or step <= 0.0625:
                cur = trial
                break
            step *= 0.5
        else:
            cur = trial
    raise ShootingError(
        "Newton did not converge in %d iterations (|R| = %.3e)"
        % (max_iter, history[-1]))


def coupling_condition_error(model, coeffs, scheme, ev):
    """Pointwise coupling error max_s |z(0, phi_s) - z(2pi, phi_s - 2pi rho)|."""
    n = model.n
    worst = 0.0
    rho = coeffs.freq.rho
    for s in range(scheme.s_tilde):
        phi = scheme.sample_grid[:, s]
        z0 = reconstruct_state(coeffs, scheme, n, phi)
        z1 = reconstruct_from(ev.Z_end, scheme, n, phi - 2.0 * np.pi * rho)
        worst = max(worst, np.abs(z0 - z1).max())
    return worst


def amplitude_metric(batch):
    """Max |q_dof| over all samples and integration nodes (needs track_dof)."""
    if batch.dof_history is None:
        raise ShootingError("batch was integrated without DOF tracking")
    return float(np.abs(batch.dof_history).max())


def torus_spectrum(model, coeffs, scheme, S1, dof, floor=1e-8):
    """Frequency content |k1*w1 + k.w| of the converged torus at one DOF.

    Transforms the tracked trajectory bundle to section coefficients per
    step, demodulates the per-revolution phase drift of every signed
    harmonic, and FFTs over the revolution angle. Returns a list of
    (k1, k_row, angular_frequency, amplitude) sorted by amplitude.
    """
    ev = evaluate(model, coeffs, scheme, S1, track_dof=dof,
                  with_jacobian=False)
    hist = ev.batch.dof_history  # (S, S1+1)
    q_steps = hist[:, :-1].T  # (S1, S)
    coefs = q_steps @ scheme.gamma_inv.T  # (S1, U)
    L = scheme.L_tilde
    rho = coeffs.freq.rho
    w1 = coeffs.freq.omega[0]
    phi1 = 2.0 * np.pi * np.arange(S1) / S1
    out = []

    def fft_lines(series, kdotrho, k_row):
        demod = series * np.exp(-1j * kdotrho * phi1)
        Y = np.fft.fft(demod) / S1
        freqs = np.fft.fftfreq(S1, d=1.0 / S1)  # integer k1
        for idx in range(S1):
            amp = 2.0 * abs(Y[idx])
            if amp >= floor:
                k1 = int(freqs[idx])
                w = abs(k1 + kdotrho) * w1
                out.append((k1, k_row, w, amp))

    # constant row: real series, fold conjugates onto k1 >= 0
    Y = np.fft.fft(coefs[:, 0].astype(complex)) / S1
    freqs = np.fft.fftfreq(S1, d=1.0 / S1)
    zero_row = tuple(np.zeros(scheme.d - 1, dtype=int))
    for idx in range(S1):
        k1 = int(freqs[idx])
        if k1 < 0:
            continue
        amp = (abs(Y[idx]) if k1 == 0 else 2.0 * abs(Y[idx]))
        if amp >= floor:
            out.append((k1, zero_row, abs(k1) * w1, amp))
    for l in range(L):
        k_row = scheme.k_matrix[l]
        c = coefs[:, 1 + 2 * l]
        s = coefs[:, 2 + 2 * l]
        series = 0.5 * (c - 1j * s)  # coefficient of e^{+i k.phi}
        fft_lines(series, float(k_row @ rho), tuple(int(v) for v in k_row))
    out.sort(key=lambda t: -t[3])
    return out


SNAPSHOT_VERSION = 1


def save_snapshot(path, coeffs, scheme, residual_norm=None, meta=None):
    """Write a restartable solution snapshot (JSON, full precision)."""
    data = {
        "version": SNAPSHOT_VERSION,
        "scheme": scheme.to_dict(),
        "omega": [float(w) for w in coeffs.freq.omega],
        "e": int(coeffs.freq.e),
        "Z0": [float(v) for v in coeffs.Z0],
        "residual_norm": (None if residual_norm is None
                          else float(residual_norm)),
    }
    if meta:
        data["meta"] = meta
    with open(path, "w") as fh:
        json.dump(data, fh)


def load_snapshot(path):
    """Read a snapshot; returns (TorusCoefficients, HarmonicScheme, data)."""
    with open(path) as fh:
        data = json.load(fh)
    if data.get("version") != SNAPSHOT_VERSION:
        raise ShootingError("unsupported snapshot version")
    scheme = harmonics.HarmonicScheme.from_dict(data["scheme"])
    freq = FrequencyVector(np.array(data["omega"]), data["e"])
    coeffs = TorusCoefficients(np.array(data["Z0"]), freq)
    return coeffs, scheme, data
