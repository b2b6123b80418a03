import numpy as np
import pytest

from qptorus.model import make_duffing, make_cubic_chain, FrequencyVector
from qptorus.harmonics import HarmonicScheme
from qptorus.shooting import TorusCoefficients, evaluate
from qptorus.oracle import (TimeSeries, OracleError, time_integrate,
                            compare_torus_to_timeseries, spectrum,
                            peak_amplitude_at, linear_quasiperiodic_response,
                            classical_shooting, torus_point)


def test_undamped_oscillator_period_return():
    m = make_duffing(1.0, 0.0, 0.0)
    rtol = 1e-10
    series = time_integrate(m, [1.0, 0.0], (0.0, 2 * np.pi), rtol=rtol)
    assert np.abs(series.states[-1] - [1.0, 0.0]).max() < rtol * 10


def test_energy_conservation_over_100_periods():
    m = make_duffing(1.0, 0.0, 0.0)
    series = time_integrate(m, [1.0, 0.0], (0.0, 200 * np.pi), rtol=1e-10,
                            atol=1e-12)
    energy = 0.5 * series.states[:, 1] ** 2 + 0.5 * series.states[:, 0] ** 2
    assert np.abs(energy - energy[0]).max() / energy[0] < 1e-6


def test_damped_oscillator_matches_closed_form():
    zeta, wn = 0.05, 1.0
    m = make_duffing(wn ** 2, 2 * zeta * wn, 0.0)
    wd = wn * np.sqrt(1 - zeta ** 2)
    t_eval = np.linspace(0.0, 60.0, 400)
    series = time_integrate(m, [1.0, -zeta * wn], (0.0, 60.0), rtol=1e-10,
                            atol=1e-13, t_eval=t_eval)
    exact = np.exp(-zeta * wn * t_eval) * np.cos(wd * t_eval)
    assert np.abs(series.states[:, 0] - exact).max() < 1e-6


def test_times_must_increase():
    with pytest.raises(OracleError):
        TimeSeries(np.array([0.0, 0.0, 1.0]), np.zeros((3, 2)), 1e-8, 1e-8)


def test_compare_zero_solution_is_exact():
    m = make_duffing(1.0, 0.1, 0.0)
    freq = FrequencyVector(np.array([1.3, 0.8]), 0)
    sch = HarmonicScheme([[0, 1]])
    coeffs = TorusCoefficients(np.zeros(2 * sch.u_tilde), freq)
    series = time_integrate(m, np.zeros(2), (0.0, 40.0), rtol=1e-9)
    err = compare_torus_to_timeseries(coeffs, sch, freq.omega, series, 5.0)
    assert err == 0.0


def test_compare_linear_analytic_torus():
    m = make_duffing(1.0, 0.4, 0.0, forcing=[(0.3, 1), (0.2, 2)])
    w1 = 1.7
    freq = FrequencyVector(np.array([w1, w1 / np.sqrt(2)]), 2)
    sch = HarmonicScheme([[0, 1]])
    coeffs = linear_quasiperiodic_response(
        m.mass, m.damping, m.stiffness, m.forcing_terms, freq, sch)
    x0 = torus_point(coeffs, sch, 1, 0.0)
    T1 = 2 * np.pi / w1
    series = time_integrate(m, x0, (0.0, 30 * T1), rtol=1e-11, atol=1e-13,
                            omega=freq.omega)
    err = compare_torus_to_timeseries(coeffs, sch, freq.omega, series,
                                      2 * T1)
    assert err < 1e-6


def test_compare_requires_long_enough_series():
    m = make_duffing(1.0, 0.1, 0.0)
    freq = FrequencyVector(np.array([1.0, 0.7]), 0)
    sch = HarmonicScheme([[0, 1]])
    coeffs = TorusCoefficients(np.zeros(2 * sch.u_tilde), freq)
    series = time_integrate(m, np.zeros(2), (0.0, 5.0), rtol=1e-9)
    with pytest.raises(OracleError):
        compare_torus_to_timeseries(coeffs, sch, freq.omega, series, 100.0)


def test_spectrum_single_tone():
    t = np.linspace(0.0, 200.0, 8192, endpoint=False)
    states = np.stack([np.cos(1.3 * t), -1.3 * np.sin(1.3 * t)], axis=1)
    series = TimeSeries(t, states, 1e-10, 1e-12)
    freqs, amps, peaks = spectrum(series, dof=0, n_samples=8192)
    assert len(peaks) >= 1
    top = max(peaks, key=lambda p: p[1])
    bin_width = freqs[1] - freqs[0]
    assert abs(top[0] - 1.3) <= bin_width
    assert abs(top[1] - 1.0) < 0.01


def test_spectrum_zero_signal_no_peaks():
    t = np.linspace(0.0, 100.0, 2048, endpoint=False)
    series = TimeSeries(t, np.zeros((2048, 2)), 1e-10, 1e-12)
    _, _, peaks = spectrum(series, dof=0, n_samples=2048)
    assert peaks == []


def test_peak_amplitude_lookup():
    freqs = np.linspace(0.0, 10.0, 101)
    amps = np.zeros(101)
    amps[13] = 0.7
    assert peak_amplitude_at(freqs, amps, 1.3, 0.15) == 0.7
    assert peak_amplitude_at(freqs, amps, 9.9, 0.05) == 0.0


def test_linear_response_single_dof_textbook_amplitude():
    m = make_duffing(1.0, 0.0, 0.0, forcing=[(0.5, 1)])
    w1 = 0.5
    freq = FrequencyVector(np.array([w1]), 1)
    sch = HarmonicScheme([])
    coeffs = linear_quasiperiodic_response(
        m.mass, m.damping, m.stiffness, m.forcing_terms, freq, sch)
    # below resonance with no damping: q = f/(k - w^2 m) cos(w t)
    assert coeffs.Z0[0] == pytest.approx(0.5 / (1.0 - 0.25))
    assert coeffs.Z0[1] == pytest.approx(0.0, abs=1e-14)


def test_linear_response_superposition():
    m1 = make_duffing(1.0, 0.3, 0.0, forcing=[(0.4, 1)])
    m2 = make_duffing(1.0, 0.3, 0.0, forcing=[(0.0, 1), (0.25, 2)])
    m12 = make_duffing(1.0, 0.3, 0.0, forcing=[(0.4, 1), (0.25, 2)])
    freq = FrequencyVector(np.array([1.6, 1.1]), 2)
    sch = HarmonicScheme([[0, 1]])
    zs = [linear_quasiperiodic_response(m.mass, m.damping, m.stiffness,
                                        m.forcing_terms, freq, sch).Z0
          for m in (m1, m2, m12)]
    assert np.allclose(zs[0] + zs[1], zs[2], atol=1e-14)


def test_linear_response_resonance_reported():
    m = make_duffing(1.0, 0.0, 0.0, forcing=[(0.5, 1)])
    freq = FrequencyVector(np.array([1.0]), 1)
    sch = HarmonicScheme([])
    with pytest.raises(OracleError, match="resonance"):
        linear_quasiperiodic_response(m.mass, m.damping, m.stiffness,
                                      m.forcing_terms, freq, sch)


def test_linear_response_chain_consistent_with_shooting_path():
    m = make_cubic_chain(3, 1.0, 0.1, 0.0, forcing=[(0.3, 1), (0.2, 2)])
    w1 = 1.9
    freq = FrequencyVector(np.array([w1, w1 / np.sqrt(2)]), 2)
    sch = HarmonicScheme([[0, 1]])
    coeffs = linear_quasiperiodic_response(
        m.mass, m.damping, m.stiffness, m.forcing_terms, freq, sch)
    ev = evaluate(m, coeffs, sch, 2048, with_jacobian=False)
    assert np.linalg.norm(ev.residual) < 1e-5  # integrator truncation only


def test_classical_shooting_duffing_orbit():
    m = make_duffing(1.0, 0.1, 1.0, forcing=[(0.2, 1)])
    w1 = 1.6
    x0, Phi, info = classical_shooting(m, np.array([0.1, 0.0]), w1)
    assert info["residual"] < 1e-9
    # the converged point lies on a periodic orbit: flow once more
    series = time_integrate(m, x0, (0.0, 2 * np.pi / w1), rtol=1e-11,
                            atol=1e-13, omega=np.array([w1]))
    assert np.abs(series.states[-1] - x0).max() < 1e-8
    assert np.abs(np.linalg.eigvals(Phi)).max() < 1.0  # stable orbit
