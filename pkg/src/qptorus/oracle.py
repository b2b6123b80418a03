"""Independent verification paths.

Everything here deliberately avoids the implicit integration machinery:
trajectories come from adaptive explicit Runge-Kutta on the first-order
form, closed-form responses from frequency-domain solves, and periodic
orbits from a stand-alone shooting loop with a variationally integrated
monodromy. The only shared code is the model callbacks.
"""

import numpy as np
from dataclasses import dataclass

from scipy.integrate import solve_ivp
from scipy.signal import get_window

from .model import evaluate_rhs, rhs_jacobian, FrequencyVector
from .shooting import TorusCoefficients


class OracleError(RuntimeError):
    pass


@dataclass
class TimeSeries:
    times: np.ndarray
    states: np.ndarray  # (len(times), 2n)
    rtol: float
    atol: float
    sol: object = None  # dense-output interpolant when available

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise OracleError("time series must have strictly increasing times")

    def resample(self, times):
        if self.sol is None:
            raise OracleError("series carries no dense output")
        return np.asarray(self.sol(np.asarray(times))).T


def time_integrate(model, x0, t_span, rtol=1e-10, atol=1e-12, omega=None,
                   t_eval=None):
    """Adaptive embedded Runge-Kutta integration of the physical system."""
    if rtol <= 0 or atol <= 0:
        raise OracleError("tolerances must be positive")
    om = None if omega is None else np.atleast_1d(
        np.asarray(getattr(omega, "omega", omega), dtype=float))

    def rhs(t, x):
        return evaluate_rhs(model, x, t, omega=om)

    sol = solve_ivp(rhs, t_span, np.asarray(x0, dtype=float), method="RK45",
                    rtol=rtol, atol=atol, dense_output=True, t_eval=t_eval)
    if not sol.success:
        raise OracleError(
            "integration failed (%s); likely stiffness, try a shorter span"
            % sol.message)
    return TimeSeries(sol.t, sol.y.T, rtol, atol, sol.sol)


def torus_point(coeffs, scheme, n, t):
    """Physical state predicted by the section coefficients at time t.

    Valid at times where the trajectory revisits the initial section,
    t = k * 2*pi/omega_1; the section angles advance by the revolution
    shift. Velocity is converted from the per-angle derivative.
    """
    om = coeffs.freq.omega
    w1 = om[0]
    phi_tilde = np.mod(om[1:] * t, 2.0 * np.pi)
    z = coeffs.Z0.reshape(2 * n, scheme.u_tilde) @ scheme.basis_row(phi_tilde)
    q = z[:n]
    qd = w1 * z[n:]
    return np.concatenate((q, qd))


def compare_torus_to_timeseries(coeffs, scheme, omega, series,
                                transient_skip):
    """Max pointwise state error between the section and a trajectory.

    Samples the series at the revolution marks t_k = k*T1 past
    `transient_skip` (where the section prediction is exact) and compares
    against the reconstructed states.
    """
    om = np.atleast_1d(np.asarray(getattr(omega, "omega", omega), dtype=float))
    T1 = 2.0 * np.pi / om[0]
    n = series.states.shape[1] // 2
    t0, t1 = series.times[0], series.times[-1]
    k_lo = int(np.ceil(max(t0, transient_skip) / T1))
    k_hi = int(np.floor(t1 / T1))
    if k_hi < k_lo:
        raise OracleError("series too short past the transient")
    marks = T1 * np.arange(k_lo, k_hi + 1)
    truth = series.resample(marks)
    worst = 0.0
    for t, x in zip(marks, truth):
        pred = torus_point(coeffs, scheme, n, t)
        worst = max(worst, np.abs(pred - x).max())
    return worst


def spectrum(series, dof=0, window="flattop", n_samples=None,
             floor_rel=1e-4):
    """One-sided amplitude spectrum of one DOF with peak extraction.

    Resamples the dense output uniformly, applies an amplitude-accurate
    window, and returns (angular_frequencies, amplitudes, peaks) where
    peaks is a list of (angular_frequency, amplitude) above the noise
    floor. A zero signal yields an empty peak list.
    """
    if n_samples is None:
        n_samples = 1 << int(np.ceil(np.log2(max(series.times.size, 1024))))
    t0, t1 = series.times[0], series.times[-1]
    times = np.linspace(t0, t1, n_samples, endpoint=False)
    if series.sol is not None:
        data = series.resample(times)[:, dof]
    else:
        if series.times.size != n_samples or np.ptp(np.diff(series.times)) > 1e-12 * (t1 - t0):
            raise OracleError("non-uniform series without dense output")
        data = series.states[:, dof]
        times = series.times
    w = get_window(window, n_samples)
    gain = w.sum() / n_samples
    spec = np.fft.rfft(data * w) / (n_samples * gain)
    amps = np.abs(spec)
    amps[1:] *= 2.0
    dt = times[1] - times[0]
    freqs = 2.0 * np.pi * np.fft.rfftfreq(n_samples, d=dt)
    peak_floor = floor_rel * amps.max() if amps.max() > 0 else np.inf
    peaks = []
    for i in range(1, amps.size - 1):
        if amps[i] >= peak_floor and amps[i] >= amps[i - 1] and amps[i] > amps[i + 1]:
            peaks.append((freqs[i], amps[i]))
    return freqs, amps, peaks


def peak_amplitude_at(freqs, amps, target, halfwidth):
    """Largest spectral amplitude within `halfwidth` of the target frequency."""
    mask = np.abs(freqs - target) <= halfwidth
    if not np.any(mask):
        return 0.0
    return float(amps[mask].max())


def linear_quasiperiodic_response(M, D, K, forcing_terms, freq, scheme,
                                  theta=None):
    """Closed-form steady coefficients of the linear system (f_nl = 0).

    Solves the frequency-response problem per cosine term and packs the
    result into the section-coefficient layout (constant and first-order
    slots only). Velocities are stored as per-angle derivatives.
    """
    M = np.asarray(M, dtype=float)
    D = np.asarray(D, dtype=float)
    K = np.asarray(K, dtype=float)
    n = M.shape[0]
    om = freq.omega
    rho = freq.rho
    qc = np.zeros((n, scheme.u_tilde))
    uc = np.zeros((n, scheme.u_tilde))

    def first_harmonic_slot(i):
        # row with k_i = 1 and zeros elsewhere
        for l in range(scheme.L_tilde):
            row = scheme.k_matrix[l]
            if row[i - 2] == 1 and np.all(np.delete(row, i - 2) == 0):
                return 1 + 2 * l
        raise OracleError(
            "scheme lacks the first harmonic of direction %d" % i)

    for amp, idx in forcing_terms:
        f = np.asarray(amp, dtype=float)
        if theta is not None:
            f = np.asarray(theta) @ f
        w = om[idx - 1]
        A = np.block([[K - w ** 2 * M, w * D],
                      [-w * D, K - w ** 2 * M]])
        try:
            ab = np.linalg.solve(A, np.concatenate((f, np.zeros(n))))
        except np.linalg.LinAlgError:
            raise OracleError(
                "resonance singularity at forcing frequency %g" % w)
        a, b = ab[:n], ab[n:]
        if idx == 1:
            qc[:, 0] += a
            uc[:, 0] += b
        else:
            slot = first_harmonic_slot(idx)
            r = rho[idx - 2]
            qc[:, slot] += a
            qc[:, slot + 1] += b
            uc[:, slot] += r * b
            uc[:, slot + 1] += -r * a
    Z0 = np.vstack((qc, uc)).reshape(-1)
    return TorusCoefficients(Z0, FrequencyVector(om.copy(), freq.e))


def classical_shooting(model, x0, omega1, rtol=1e-10, atol=1e-12,
                       max_iter=25, tol=1e-10):
    """Periodic-orbit shooting on the explicit integrator.

    Newton on x(T1) - x(0) with the monodromy from variational
    integration of the analytic state Jacobian. Fully independent of the
    implicit solution path.
    """
    n2 = np.asarray(x0).size
    T1 = 2.0 * np.pi / omega1
    om = np.array([omega1])

    def aug_rhs(t, y):
        x = y[:n2]
        Phi = y[n2:].reshape(n2, n2)
        fx = evaluate_rhs(model, x, t, omega=om)
        J = rhs_jacobian(model, x, t)
        return np.concatenate((fx, (J @ Phi).reshape(-1)))

    x = np.asarray(x0, dtype=float).copy()
    for it in range(max_iter):
        y0 = np.concatenate((x, np.eye(n2).reshape(-1)))
        sol = solve_ivp(aug_rhs, (0.0, T1), y0, method="RK45", rtol=rtol,
                        atol=atol)
        if not sol.success:
            raise OracleError("variational integration failed")
        xT = sol.y[:n2, -1]
        Phi = sol.y[n2:, -1].reshape(n2, n2)
        res = xT - x
        if np.linalg.norm(res) < tol * max(1.0, np.linalg.norm(x)):
            return x, Phi, {"iterations": it, "residual": np.linalg.norm(res)}
        x = x + np.linalg.solve(np.eye(n2) - Phi, res)
    raise OracleError("classical shooting did not converge")
