"""Self-contained invariant suite behind the `check` command.

Each item re-derives its expected values independently (round trips,
finite differences, frozen hand-computed patterns, cross-path
comparisons) and returns a pass/fail with a one-line detail. The items
call through module namespaces so fault-injection tests can patch them.
"""

import numpy as np

from . import harmonics, model, shooting, oracle
from .harmonics import HarmonicScheme
from .integrator import integrate_batch, newmark_integrate
from .model import FrequencyVector, make_duffing, make_cubic_chain
from .shooting import TorusCoefficients


def check_dft_roundtrip():
    worst = 0.0
    for K_list in ([[0, 1, 2, 3, 4, 5]], [[0, 1, 3], [0, 2]]):
        sch = HarmonicScheme(K_list)
        worst = max(worst, np.abs(sch.gamma_inv @ sch.gamma
                                  - np.eye(sch.u_tilde)).max())
        rng = np.random.default_rng(7)
        z = rng.standard_normal(sch.u_tilde)
        worst = max(worst, np.abs(sch.gamma_inv @ (sch.gamma @ z) - z).max())
    return worst < 1e-12, "max deviation %.2e" % worst


def check_rotation_identities():
    rng = np.random.default_rng(11)
    sch = HarmonicScheme([[0, 1, 3], [0, 1, 2]])
    worst = 0.0
    for _ in range(10):
        rho = rng.uniform(0.2, 1.8, size=2)
        R = harmonics.rotation_matrix(rho, sch.k_matrix)
        worst = max(worst, np.abs(R @ R.T - np.eye(sch.u_tilde)).max())
        phi = rng.uniform(0, 2 * np.pi, size=2)
        lhs = harmonics.basis_row(sch.k_matrix, phi - 2 * np.pi * rho)
        rhs = harmonics.basis_row(sch.k_matrix, phi) @ R
        worst = max(worst, np.abs(lhs - rhs).max())
    if worst >= 1e-12:
        return False, "identity deviation %.2e" % worst
    omega = np.array([1.3, 0.9, 0.5])
    fd_worst = 0.0
    h = 1e-6
    for i in (1, 2, 3):
        dw = np.zeros(3)
        dw[i - 1] = h
        rp = (omega + dw)[1:] / (omega + dw)[0]
        rm = (omega - dw)[1:] / (omega - dw)[0]
        fd = (harmonics.rotation_matrix(rp, sch.k_matrix)
              - harmonics.rotation_matrix(rm, sch.k_matrix)) / (2 * h)
        an = harmonics.rotation_derivative(omega[1:] / omega[0], omega,
                                           sch.k_matrix, i)
        fd_worst = max(fd_worst, np.abs(fd - an).max()
                       / max(np.abs(an).max(), 1.0))
    return fd_worst < 1e-6, ("identities %.2e, derivative FD %.2e"
                             % (worst, fd_worst))


def check_harmonic_index_patterns():
    k2 = harmonics.build_k_matrix([[0, 1, 3]])
    ok2 = np.array_equal(k2, np.array([[1], [3], [0]]))
    k3 = harmonics.build_k_matrix([[0, 1], [0, 1]])
    expect = np.array([[1, -1], [1, 1], [0, 1], [1, 0], [0, 0]])
    ok3 = np.array_equal(k3, expect)
    return ok2 and ok3, "two-frequency %s, three-frequency %s" % (ok2, ok3)


def check_model_jacobians():
    worst = 0.0
    for m in (make_duffing(1.0, 0.05, 1.0), make_cubic_chain(6, 1.0, 0.02, 0.5),
              model.make_vanderpol(1.0, 0.3)):
        worst = max(worst, model.validate_jacobians(m, n_points=20, scale=1.5))
    return worst < 1e-6, "max relative error %.2e" % worst


def check_d1_degeneracy():
    m = make_duffing(1.0, 0.05, 0.5, forcing=[(0.2, 1)])
    sch = HarmonicScheme([])
    freq = FrequencyVector(np.array([1.2]), 1)
    coeffs = TorusCoefficients(np.array([0.1, 0.0]), freq)
    ev = shooting.evaluate(m, coeffs, sch, 64)
    direct = ev.batch.terminal - coeffs.Z0
    structural = (sch.u_tilde == 1
                  and np.allclose(sch.rotation(freq.rho), np.eye(1))
                  and np.allclose(ev.residual, direct))
    return structural, "residual reduces to z(2pi) - z(0): %s" % structural


def check_worker_determinism():
    m = make_cubic_chain(6, 1.0, 0.02, 0.4, forcing=[(0.3, 1), (0.2, 2)])
    sch = HarmonicScheme([[0, 1]])
    freq = FrequencyVector(np.array([1.1, 1.1 / np.sqrt(2)]), 2)
    rng = np.random.default_rng(3)
    z0 = 0.1 * rng.standard_normal(2 * m.n * sch.s_tilde)
    a = integrate_batch(m, z0, freq, sch, 64, workers=1)
    b = integrate_batch(m, z0, freq, sch, 64, workers=2)
    same = (np.array_equal(a.terminal, b.terminal)
            and np.array_equal(a.psi, b.psi)
            and np.array_equal(a.domega1, b.domega1))
    return same, "bit-identical across worker counts: %s" % same


def check_linear_oracle():
    m = make_duffing(1.0, 0.4, 0.0, forcing=[(0.3, 1), (0.2, 2)])
    freq = FrequencyVector(np.array([1.7, 1.7 / np.sqrt(2)]), 2)
    sch = HarmonicScheme([[0, 1]])
    coeffs = oracle.linear_quasiperiodic_response(
        m.mass, m.damping, m.stiffness, m.forcing_terms, freq, sch)
    ev = shooting.evaluate(m, coeffs, sch, 2048, with_jacobian=False)
    rnorm = np.linalg.norm(ev.residual)
    return rnorm < 1e-4, "analytic-seed residual %.2e" % rnorm


def check_newmark_order():
    m = make_duffing(1.0, 0.1, 0.8, forcing=[(0.25, 1)])
    freq = FrequencyVector(np.array([1.3]), 1)
    z0 = np.array([0.3, 0.1])
    ref, _, _, _ = newmark_integrate(m, z0, freq, np.zeros(0), 2 ** 13)
    errs = []
    for S1 in (2 ** 7, 2 ** 8, 2 ** 9):
        z, _, _, _ = newmark_integrate(m, z0, freq, np.zeros(0), S1)
        errs.append(np.linalg.norm(z - ref))
    ratios = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
    ok = all(3.0 < r < 5.0 for r in ratios)
    return ok, "error ratios per doubling: %s" % (
        ", ".join("%.2f" % r for r in ratios))


def check_jacobian_fd():
    m = make_duffing(1.0, 0.1, 0.6, forcing=[(0.2, 1), (0.1, 2)])
    freq = FrequencyVector(np.array([1.9, 1.9 / np.sqrt(2)]), 2)
    sch = HarmonicScheme([[0, 1]])
    seed = oracle.linear_quasiperiodic_response(
        m.mass, m.damping, m.stiffness, m.forcing_terms, freq, sch)
    err = shooting.jacobian_fd_check(m, seed, sch, 256, h=1e-6,
                                     freq_indices=(1,))
    return err < 1e-4, "worst relative column error %.2e" % err


CHECKS = [
    ("dft-roundtrip", check_dft_roundtrip),
    ("rotation-identities", check_rotation_identities),
    ("harmonic-index-patterns", check_harmonic_index_patterns),
    ("model-jacobians", check_model_jacobians),
    ("d1-degeneracy", check_d1_degeneracy),
    ("worker-determinism", check_worker_determinism),
    ("linear-oracle", check_linear_oracle),
    ("newmark-order", check_newmark_order),
    ("jacobian-fd", check_jacobian_fd),
]


def run_checks(stream=None):
    """Run every item; returns the number of failures."""
    import sys
    stream = stream or sys.stdout
    failures = 0
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as err:  # a crash is a failure with its message
            ok, detail = False, "raised %s: %s" % (type(err).__name__, err)
        if not ok:
            failures += 1
        stream.write("%s %s: %s\n" % ("PASS" if ok else "FAIL", name, detail))
    return failures
