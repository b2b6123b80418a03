"""Acceptance suite.

One test per criterion, each printing a single PASS/FAIL line (run with
``pytest tests/test_acceptance.py -v -s``). Tolerances are pinned here and
nowhere else. The parallel-speedup gate measures the host; on a single-CPU
machine it reports the measured table and fails honestly.
"""

import os
import time
from contextlib import contextmanager

import numpy as np
import pytest

from qptorus.model import (make_duffing, make_cubic_chain, make_vanderpol,
                           FrequencyVector)
from qptorus.harmonics import (HarmonicScheme, build_k_matrix,
                               rotation_matrix, rotation_derivative,
                               basis_row)
from qptorus.integrator import newmark_integrate, integrate_batch
from qptorus.shooting import (TorusCoefficients, evaluate, newton_correct,
                              jacobian_fd_check, torus_spectrum,
                              amplitude_metric)
from qptorus.continuation import (run_branch, ContinuationConfig,
                                  TorusSystem, phase_condition_rows)
from qptorus.stability import (transition_matrix_field, lyapunov_exponents,
                               TransitionField)
from qptorus.oracle import (time_integrate, compare_torus_to_timeseries,
                            spectrum, peak_amplitude_at,
                            linear_quasiperiodic_response,
                            classical_shooting, torus_point)

SQRT2_INV = 1.0 / np.sqrt(2.0)


@contextmanager
def criterion(num, desc, limit_s):
    t0 = time.perf_counter()
    try:
        yield
    except Exception:
        print("\nACCEPTANCE %02d FAIL: %s" % (num, desc))
        raise
    elapsed = time.perf_counter() - t0
    if elapsed >= limit_s:
        print("\nACCEPTANCE %02d FAIL: %s (runtime %.1fs over %ds)"
              % (num, desc, elapsed, limit_s))
        raise AssertionError("runtime budget exceeded: %.1fs" % elapsed)
    print("\nACCEPTANCE %02d PASS: %s (%.1fs)" % (num, desc, elapsed))


def test_criterion_01_transform_exactness():
    with criterion(1, "DFT round trip exact for d in {2,3}, orders <= 7", 1):
        cases = [
            [[0, 1, 2, 3, 4, 5, 6, 7]],
            [[0, 1, 3, 7]],
            [[0, 1, 2, 3, 4, 5], [0, 1, 3]],
            [[0, 1, 7], [0, 2, 5]],
        ]
        for K_list in cases:
            sch = HarmonicScheme(K_list)
            dev = np.abs(sch.gamma_inv @ sch.gamma
                         - np.eye(sch.u_tilde)).max()
            assert dev < 1e-12, "round trip off by %.2e for %s" % (dev, K_list)


def test_criterion_02_rotation_identities():
    with criterion(2, "rotation orthogonality, shift identity, FD derivative", 1):
        sch = HarmonicScheme([[0, 1, 3], [0, 1, 2]])
        rng = np.random.default_rng(12)
        for _ in range(10):
            rho = rng.uniform(0.1, 1.9, size=2)
            phi = rng.uniform(0, 2 * np.pi, size=2)
            R = rotation_matrix(rho, sch.k_matrix)
            assert np.abs(R @ R.T - np.eye(sch.u_tilde)).max() < 1e-12
            lhs = basis_row(sch.k_matrix, phi - 2 * np.pi * rho)
            rhs = basis_row(sch.k_matrix, phi) @ R
            assert np.abs(lhs - rhs).max() < 1e-12
        omega = np.array([1.3, 0.9, 0.5])
        h = 1e-6
        for i in (1, 2, 3):
            dw = np.zeros(3)
            dw[i - 1] = h
            rp = (omega + dw)[1:] / (omega + dw)[0]
            rm = (omega - dw)[1:] / (omega - dw)[0]
            fd = (rotation_matrix(rp, sch.k_matrix)
                  - rotation_matrix(rm, sch.k_matrix)) / (2 * h)
            an = rotation_derivative(omega[1:] / omega[0], omega,
                                     sch.k_matrix, i)
            rel = np.abs(fd - an).max() / max(np.abs(an).max(), 1.0)
            assert rel < 1e-6, "frequency %d derivative off by %.2e" % (i, rel)


def test_criterion_03_harmonic_index_patterns():
    with criterion(3, "harmonic-index construction matches references", 1):
        assert np.array_equal(build_k_matrix([[0, 1, 3]]),
                              np.array([[1], [3], [0]]))
        expect = np.array([[1, -1], [1, 1], [0, 1], [1, 0], [0, 0]])
        assert np.array_equal(build_k_matrix([[0, 1], [0, 1]]), expect)


def test_criterion_04_integrator_order():
    with criterion(4, "terminal-state error ratio in [3.5, 4.5] per doubling", 30):
        m = make_duffing(1.0, 0.1, 0.8, forcing=[(0.25, 1)])
        freq = FrequencyVector(np.array([1.3]), 1)
        z0 = np.array([0.3, 0.1])
        ref, _, _, _ = newmark_integrate(m, z0, freq, np.zeros(0), 2 ** 14)
        errs = []
        for S1 in (2 ** 8, 2 ** 9, 2 ** 10, 2 ** 11):
            z, _, _, _ = newmark_integrate(m, z0, freq, np.zeros(0), S1)
            errs.append(np.linalg.norm(z - ref))
        ratios = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
        for r in ratios:
            assert 3.5 < r < 4.5, "ratios: %s" % ratios


def test_criterion_05_sensitivity_exactness():
    with criterion(5, "analytic Jacobians vs central FD below 1e-5", 120):
        sch = HarmonicScheme([[0, 1]])
        rng = np.random.default_rng(0)
        # forced two-frequency configuration: coefficient and base-frequency
        # columns
        m = make_duffing(1.0, 0.1, 1.0, forcing=[(0.3, 1), (0.2, 2)])
        freq = FrequencyVector(np.array([1.9, 1.9 * SQRT2_INV]), 2)
        coeffs = TorusCoefficients(0.2 * rng.standard_normal(2 * sch.u_tilde),
                                   freq)
        err = jacobian_fd_check(m, coeffs, sch, 512, h=1e-6,
                                freq_indices=(1,))
        assert err < 1e-5, "e=2 worst column error %.2e" % err
        # released intrinsic frequency: the rotation column is the full
        # derivative only when the frequency does not drive the forcing
        m1 = make_duffing(1.0, 0.1, 1.0, forcing=[(0.3, 1)])
        freq1 = FrequencyVector(np.array([1.9, 1.343]), 1)
        coeffs1 = TorusCoefficients(
            0.2 * rng.standard_normal(2 * sch.u_tilde), freq1)
        err1 = jacobian_fd_check(m1, coeffs1, sch, 512, h=1e-6,
                                 freq_indices=(1, 2))
        assert err1 < 1e-5, "e=1 worst column error %.2e" % err1


def test_criterion_06_d1_degeneracy():
    with criterion(6, "d=1 reduces to classical shooting; amplitude matches "
                      "the explicit oracle", 60):
        m = make_duffing(1.0, 0.1, 1.0, forcing=[(0.2, 1)])
        w1 = 1.6
        freq = FrequencyVector(np.array([w1]), 1)
        sch = HarmonicScheme([])
        A = np.array([[1.0 - w1 ** 2, w1 * 0.1], [-w1 * 0.1, 1.0 - w1 ** 2]])
        ab = np.linalg.solve(A, [0.2, 0.0])
        sol, info = newton_correct(m, TorusCoefficients(ab.copy(), freq),
                                   sch, 2048, epsilon=1e-10)
        ev = info["evaluation"]
        # structural degeneracy: residual is exactly z(2pi) - z(0)
        assert sch.u_tilde == 1
        assert np.allclose(ev.residual, ev.batch.terminal - sol.Z0)
        # orbit agrees with stand-alone explicit shooting
        x_cl, _, _ = classical_shooting(m, np.array([ab[0], w1 * ab[1]]), w1)
        x_fse = np.array([sol.Z0[0], w1 * sol.Z0[1]])
        rel = np.abs(x_fse - x_cl).max() / max(np.abs(x_cl).max(), 1e-12)
        assert rel < 1e-4, "orbit point disagrees by %.2e" % rel
        # steady-state amplitude against long explicit integration
        T1 = 2 * np.pi / w1
        ev_t = evaluate(m, sol, sch, 2048, track_dof=0, with_jacobian=False)
        amp_fse = amplitude_metric(ev_t.batch)
        series = time_integrate(m, np.array([ab[0], w1 * ab[1]]),
                                (0.0, 102 * T1), rtol=1e-11, atol=1e-13,
                                omega=freq.omega)
        tt = np.linspace(100 * T1, 102 * T1, 4096)
        amp_oracle = np.abs(series.resample(tt)[:, 0]).max()
        rel = abs(amp_fse - amp_oracle) / amp_oracle
        assert rel < 1e-4, "amplitude disagrees by %.2e" % rel


def test_criterion_07_linear_quasiperiodic_sweep():
    with criterion(7, "linear solve matches closed-form coefficients over a "
                      "20-point sweep", 120):
        m = make_duffing(1.0, 0.4, 0.0, forcing=[(0.3, 1), (0.2, 2)])
        sch = HarmonicScheme([[0, 1]])
        worst = 0.0
        for w1 in np.linspace(1.5, 2.5, 20):
            freq = FrequencyVector(np.array([w1, w1 * SQRT2_INV]), 2)
            exact = linear_quasiperiodic_response(
                m.mass, m.damping, m.stiffness, m.forcing_terms, freq, sch)
            seed = TorusCoefficients(np.zeros(2 * sch.u_tilde), freq)
            sol, _ = newton_correct(m, seed, sch, 4096, epsilon=1e-10)
            worst = max(worst, np.abs(sol.Z0 - exact.Z0).max())
        assert worst < 1e-6, "worst coefficient deviation %.2e" % worst


def test_criterion_08_nonlinear_end_to_end():
    with criterion(8, "converged two-frequency response matches explicit "
                      "integration and its spectrum", 300):
        m = make_duffing(1.0, 0.1, 1.0, forcing=[(0.3, 1), (0.2, 2)])
        w1 = 1.9
        freq = FrequencyVector(np.array([w1, w1 * SQRT2_INV]), 2)
        sch = HarmonicScheme([[0, 1, 2, 3]])
        seed = TorusCoefficients(np.zeros(2 * sch.u_tilde), freq)
        sol, info = newton_correct(m, seed, sch, 1024, epsilon=1e-9)
        T1 = 2 * np.pi / w1
        x0 = torus_point(sol, sch, 1, 0.0)
        series = time_integrate(m, x0, (0.0, 300 * T1), rtol=1e-10,
                                atol=1e-12, omega=freq.omega)
        err = compare_torus_to_timeseries(sol, sch, freq.omega, series,
                                          200 * T1)
        assert err < 1e-3, "pointwise state error %.2e" % err

        lines = torus_spectrum(m, sol, sch, 1024, dof=0, floor=1e-6)
        top = [ln for ln in lines if ln[3] >= 1e-3 * lines[0][3]][:6]
        freqs, amps, _ = spectrum(series, dof=0, n_samples=1 << 15)
        binw = freqs[1] - freqs[0]
        for k1, krow, w, amp in top:
            measured = peak_amplitude_at(freqs, amps, w, 5 * binw)
            rel = abs(measured - amp) / amp
            assert rel < 0.05, ("combination frequency %.4f amplitude off "
                                "by %.1f%%" % (w, 100 * rel))


def test_criterion_09_continuation_integrity():
    with criterion(9, "circle trace exact; hardening fold; every accepted "
                      "point within tolerance", 300):
        from test_continuation import CircleSystem, circle_config
        br = run_branch(CircleSystem(), np.array([1.0]), 0.0, circle_config())
        errs = [abs(pt.x[0] ** 2 + pt.p ** 2 - 1.0) for pt in br.points]
        assert len(br.points) == 100 and max(errs) < 1e-10

        m = make_duffing(1.0, 0.05, 1.0, forcing=[(0.2, 1)])
        sch = HarmonicScheme([])
        freq = FrequencyVector(np.array([0.8]), 1)
        cfg = ContinuationConfig(parameter="omega1", p_range=(0.8, 2.4),
                                 step0=0.05, step_min=1e-5, step_max=0.1,
                                 deficit_case=1, released=(), epsilon=1e-9,
                                 max_points=80, S1=256)
        sys_ = TorusSystem(m, sch, freq, cfg)
        x0, p0 = sys_.pack(TorusCoefficients(np.zeros(2), freq), 0.8)
        br = run_branch(sys_, x0, p0, cfg)
        tps = np.array([pt.tangent_p for pt in br.points])
        assert np.any(np.diff(np.sign(tps)) != 0), "no fold crossed"
        for pt in br.points:
            assert pt.residual_norm < 1e-9 * max(1.0, np.linalg.norm(pt.x))
            assert abs(pt.tangent_p) == 1.0

        # ratio conditions hold along a forced two-frequency branch
        ml = make_duffing(1.0, 0.4, 0.0, forcing=[(0.3, 1), (0.2, 2)])
        schl = HarmonicScheme([[0, 1]])
        freql = FrequencyVector(np.array([1.6, 1.6 * SQRT2_INV]), 2)
        cfgl = ContinuationConfig(parameter="omega1", p_range=(1.6, 1.8),
                                  step0=0.05, step_max=0.1, deficit_case=1,
                                  released=(2,), epsilon=1e-9, max_points=5,
                                  S1=512)
        sysl = TorusSystem(ml, schl, freql, cfgl, rho_targets=[SQRT2_INV])
        seedl = linear_quasiperiodic_response(
            ml.mass, ml.damping, ml.stiffness, ml.forcing_terms, freql, schl)
        xl, pl = sysl.pack(seedl, 1.6)
        brl = run_branch(sysl, xl, pl, cfgl)
        for pt in brl.points:
            om = pt.extras["omega"]
            assert abs(om[1] - SQRT2_INV * om[0]) < 1e-10


def test_criterion_10_phase_condition_tracking():
    with criterion(10, "released intrinsic frequency tracked smoothly under "
                       "the phase condition", 600):
        m = make_vanderpol(1.0, 0.2, forcing=[(0.25, 1)])
        sch = HarmonicScheme([[0, 1, 2, 3]])
        w1 = 2.4
        freq = FrequencyVector(np.array([w1, 0.98]), 1)
        zmat = np.zeros((2, sch.u_tilde))
        zmat[0, 0] = -0.25 / abs(1.0 - w1 ** 2)
        zmat[0, 1] = 2.0
        zmat[1, 2] = -2.0 * 0.98 / w1
        seed = TorusCoefficients(zmat.reshape(-1), freq)
        cfg = ContinuationConfig(parameter="omega1", p_range=(2.4, 2.8),
                                 step0=0.03, step_min=1e-5, step_max=0.08,
                                 deficit_case=1, released=(2,), epsilon=1e-9,
                                 max_points=12, S1=256)
        sys_ = TorusSystem(m, sch, freq, cfg)
        x0, p0 = sys_.pack(seed, w1)
        br = run_branch(sys_, x0, p0, cfg)
        assert len(br.points) >= 8, "branch stalled at %d points" % len(br.points)
        w2 = np.array([pt.extras["omega"][1] for pt in br.points])
        w1s = np.array([pt.p for pt in br.points])
        for pt in br.points:
            assert pt.residual_norm < 1e-9 * max(1.0, np.linalg.norm(pt.x))
        # the intrinsic frequency varies smoothly: small secant slopes and
        # no jumps relative to its overall drift
        slopes = np.abs(np.diff(w2) / np.diff(w1s))
        assert np.all(np.abs(w2) > 0.9) and np.all(np.abs(w2) < 1.1)
        assert slopes.max() < 0.05, "intrinsic frequency jumped: %s" % slopes
        # the phase row is active at the solution points
        last = sys_.unpack(br.points[-1].x, br.points[-1].p)
        row = phase_condition_rows(last, sch, m, [2])[0]
        assert np.linalg.norm(row) == pytest.approx(1.0)


def test_criterion_11_lyapunov_accuracy():
    with criterion(11, "linear-oscillator exponents and the volume sum rule", 120):
        zeta, wn = 0.05, 1.0
        m = make_duffing(wn ** 2, 2 * zeta * wn, 0.0,
                         forcing=[(0.3, 1), (0.2, 2)])
        w1 = 1.7
        freq = FrequencyVector(np.array([w1, w1 * SQRT2_INV]), 2)
        sch = HarmonicScheme([[0, 1]])
        coeffs = linear_quasiperiodic_response(
            m.mass, m.damping, m.stiffness, m.forcing_terms, freq, sch)
        ev = evaluate(m, coeffs, sch, 1024, with_jacobian=False, sens=True)
        field = transition_matrix_field(ev.batch, freq, sch)
        rep = lyapunov_exponents(field, freq, 500)
        dev = np.abs(rep.exponents + zeta * wn).max()
        assert dev < 1e-2, "exponent deviation %.2e" % dev

        from scipy.linalg import expm
        A = np.array([[0.0, 1.0], [-2.0, -0.3]])
        field_c = TransitionField.constant(expm(A * (2 * np.pi / w1)))
        rep_c = lyapunov_exponents(field_c, freq, 500)
        assert abs(rep_c.exponents.sum() - np.trace(A)) < 1e-3


def _bench_chain(workers, z0, model, freq, sch, repeats=2):
    best = np.inf
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = integrate_batch(model, z0, freq, sch, 512, workers=workers)
        best = min(best, time.perf_counter() - t0)
    return best, result


@pytest.fixture(scope="module")
def chain_bench():
    model = make_cubic_chain(50, 1.0, 0.02, 0.4,
                             forcing=[(0.3, 1), (0.2, 2)])
    freq = FrequencyVector(np.array([1.1, 1.1 * SQRT2_INV]), 2)
    sch = HarmonicScheme([[0, 1, 2, 3, 4, 5, 6, 7]], [32])
    rng = np.random.default_rng(0)
    z0 = 0.05 * rng.standard_normal(2 * model.n * sch.s_tilde)
    results = {}
    times = {}
    for w in (1, 2, 4, 8):
        integrate_batch(model, z0, freq, sch, 512, workers=w)  # warm-up
        times[w], results[w] = _bench_chain(w, z0, model, freq, sch)
    return times, results


def test_criterion_12a_parallel_determinism(chain_bench):
    with criterion(12, "identical batch output for every worker count", 600):
        times, results = chain_bench
        ref = results[1]
        for w in (2, 4, 8):
            assert np.array_equal(results[w].terminal, ref.terminal)
            assert np.array_equal(results[w].psi, ref.psi)
            assert np.array_equal(results[w].domega1, ref.domega1)


def test_criterion_12b_parallel_speedup(chain_bench):
    with criterion(12, "speedup >= 2.5 at 4 workers, nondecreasing to 8", 600):
        times, _ = chain_bench
        speedups = {w: times[1] / times[w] for w in (1, 2, 4, 8)}
        print("\n  host CPUs: %s" % os.cpu_count())
        for w in (1, 2, 4, 8):
            print("  workers %d: %.2fs speedup %.2f efficiency %.2f"
                  % (w, times[w], speedups[w], speedups[w] / w))
        assert speedups[4] >= 2.5, (
            "4-worker speedup %.2f below 2.5 (host has %d CPU(s); the gate "
            "needs at least 4 physical cores)" % (speedups[4], os.cpu_count()))
        assert speedups[2] >= speedups[1] >= 0.99
        assert speedups[4] >= speedups[2]
        assert speedups[8] >= speedups[4]
