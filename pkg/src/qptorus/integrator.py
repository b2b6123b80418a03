"""Trajectory-bundle integration over one base revolution.

Each section sample spawns one trajectory of the transformed second-order
system

    w1^2 M q'' + w1 D q' + K q + Theta*(f_nl(q, w1 q') - e) = 0

integrated from phi_1 = 0 to 2*pi by the average-acceleration scheme, with
the state-transition block and the w1-sensitivity propagated step by step
through implicit differentiation of the converged step map (never finite
differences). Trajectories are independent, so the batch distributes them
over a process pool; results are assembled by sample index and are
bit-identical for any worker count.

Internal velocity coordinate is u = dq/dphi_1; physical velocity w1*u
appears only inside the nonlinear force callback and at module boundaries.
"""

import os
import atexit
import numpy as np
from dataclasses import dataclass, field
from concurrent.futures import ProcessPoolExecutor

from scipy.linalg import lu_factor, lu_solve

NEWTON_TOL = 1e-10
NEWTON_MAXITER = 25


class IntegrationError(RuntimeError):
    """Inner Newton failure or singular effective matrix."""

    def __init__(self, message, sample=None, step=None):
        super().__init__(message)
        self.sample = sample
        self.step = step


@dataclass
class TrajectoryBatchResult:
    """Terminal data of one section sweep.

    terminal : (2n*S,) state-major terminal states [q-block; u-block].
    psi : (S, 2n, 2n) per-sample transition blocks in (q, u) coordinates.
    domega1 : (2n*S,) state-major sensitivity to the base frequency.
    newton_stats : worst residual and iteration counts of the inner solves.
    dof_history : optional (S, S1+1) tracked-DOF displacement per step.
    """

    terminal: np.ndarray
    psi: np.ndarray
    domega1: np.ndarray
    newton_stats: dict
    dof_history: np.ndarray = None
    elapsed: float = 0.0


def _forcing(model, phi1, phi_tilde_s, rho, w1=1.0):
    """Excitation and its w1-derivative at hyper-time position phi1.

    Phases: phi1 for the base term, phi_i + rho_i*phi1 for i >= 2; the
    ratios rho_i = w_i/w_1 make those phases depend on w1 at fixed w_i,
    with d(rho_i)/d(w1) = -rho_i/w1.
    """
    e = np.zeros(model.n)
    dedw = np.zeros(model.n)
    for amp, idx in model.forcing_terms:
        if idx == 1:
            e += amp * np.cos(phi1)
        else:
            r = rho[idx - 2]
            ph = phi_tilde_s[idx - 2] + r * phi1
            e += amp * np.cos(ph)
            dedw += amp * np.sin(ph) * (phi1 * r / w1)
    return e, dedw


def newmark_integrate(model, z0, omega, phi_tilde_s, S1, track_dof=None,
                      sens=True):
    """Integrate one trajectory and its sensitivities over phi_1 in [0, 2*pi].

    Parameters
    ----------
    z0 : (2n,) initial state [q0; u0] with u = dq/dphi_1.
    omega : FrequencyVector (or array); omega[0] scales the dynamics.
    phi_tilde_s : (d-1,) section coordinates of this sample.
    S1 : number of equidistant steps.
    sens : propagate the transition block and frequency sensitivity;
        disable for residual-only sweeps.

    Returns
    -------
    (z_end, psi, dz_domega1, stats[, dof_history])
        psi is the (2n, 2n) transition block d z(2pi) / d z(0) and
        dz_domega1 the (2n,) derivative with respect to omega[0], both
        exact for the discrete map (None when `sens` is off).
    """
    om = np.atleast_1d(np.asarray(getattr(omega, "omega", omega), dtype=float))
    w1 = om[0]
    rho = om[1:] / w1
    n = model.n
    if S1 < 2:
        raise IntegrationError("need at least 2 steps per revolution")
    dphi = 2.0 * np.pi / S1
    A1 = 4.0 / dphi ** 2
    A2 = 4.0 / dphi
    A3 = 2.0 / dphi
    M, D, K = model.mass, model.damping, model.stiffness
    theta = model.apply_theta

    S_mat = (w1 ** 2 * A1) * M + (w1 * A3) * D + K
    linear = model.is_linear
    if linear:
        try:
            S_lu = lu_factor(S_mat, check_finite=False)
        except ValueError:
            raise IntegrationError("singular effective matrix")

    q = np.asarray(z0[:n], dtype=float).copy()
    u = np.asarray(z0[n:], dtype=float).copy()
    e0, _ = _forcing(model, 0.0, phi_tilde_s, rho)
    f0, fq0, fv0 = model.nonlinear(q, w1 * u)
    try:
        m_lu = lu_factor(w1 ** 2 * M, check_finite=False)
    except ValueError:
        raise IntegrationError("singular mass matrix")
    a = lu_solve(m_lu, theta(e0) - w1 * (D @ u) - K @ q - theta(f0),
                 check_finite=False)

    if sens:
        # sensitivity columns: [d/dq0 | d/du0 | d/dw1]
        Dq = np.hstack((np.eye(n), np.zeros((n, n + 1))))
        Du = np.hstack((np.zeros((n, n)), np.eye(n), np.zeros((n, 1))))
        rhs0 = np.hstack((-K - theta(fq0),
                          -w1 * D - w1 * theta(fv0),
                          (-2.0 * w1 * (M @ a) - D @ u
                           - theta(fv0 @ u)).reshape(n, 1)))
        Da = lu_solve(m_lu, rhs0, check_finite=False)

    hist = None
    if track_dof is not None:
        hist = np.empty(S1 + 1)
        hist[0] = q[track_dof]

    worst_resid = 0.0
    max_iters = 0

    for k in range(S1):
        phi_next = (k + 1) * dphi
        e_next, dedw_next = _forcing(model, phi_next, phi_tilde_s, rho, w1)
        b = (theta(e_next) + w1 ** 2 * (M @ (A1 * q + A2 * u + a))
             + w1 * (D @ (A3 * q + u)))
        tol = NEWTON_TOL * max(1.0, np.linalg.norm(b))
        q_new = q + dphi * u + (0.5 * dphi ** 2) * a

        if linear:
            q_new = lu_solve(S_lu, b, check_finite=False)
            J_lu = S_lu
            fv = None
        else:
            converged = False
            for it in range(1, NEWTON_MAXITER + 1):
                u_new = A3 * (q_new - q) - u
                f, fq, fv = model.nonlinear(q_new, w1 * u_new)
                G = S_mat @ q_new + theta(f) - b
                J = S_mat + theta(fq) + (w1 * A3) * theta(fv)
                try:
                    J_lu = lu_factor(J, check_finite=False)
                except ValueError:
                    raise IntegrationError("singular effective matrix",
                                           step=k)
                # the post-check update doubles as a polish step, keeping the
                # discrete map smooth enough for finite-difference audits
                q_new = q_new + lu_solve(J_lu, -G, check_finite=False)
                gnorm = np.linalg.norm(G)
                if gnorm <= tol:
                    converged = True
                    worst_resid = max(worst_resid,
                                      gnorm / max(1.0, np.linalg.norm(b)))
                    max_iters = max(max_iters, it)
                    break
            if not converged:
                raise IntegrationError(
                    "inner Newton did not converge in %d iterations "
                    "(step %d, |G| = %.3e)" % (NEWTON_MAXITER, k, gnorm),
                    step=k)

        u_new = A3 * (q_new - q) - u
        a_new = A1 * (q_new - q) - A2 * u - a

        if sens:
            rhs = (w1 ** 2 * (M @ (A1 * Dq + A2 * Du + Da))
                   + w1 * (D @ (A3 * Dq + Du)))
            if not linear:
                rhs += w1 * theta(fv @ (A3 * Dq + Du))
            extra = (theta(dedw_next)
                     + 2.0 * w1 * (M @ (A1 * q + A2 * u + a))
                     + D @ (A3 * q + u)
                     - (2.0 * w1 * A1) * (M @ q_new) - A3 * (D @ q_new))
            if not linear:
                extra -= theta(fv @ u_new)
            rhs[:, 2 * n] += extra
            Dq_new = lu_solve(J_lu, rhs, check_finite=False)
            Du_new = A3 * (Dq_new - Dq) - Du
            Da_new = A1 * (Dq_new - Dq) - A2 * Du - Da
            Dq, Du, Da = Dq_new, Du_new, Da_new

        q, u, a = q_new, u_new, a_new
        if hist is not None:
            hist[k + 1] = q[track_dof]
        if linear:
            max_iters = max(max_iters, 1)

    z_end = np.concatenate((q, u))
    if sens:
        psi = np.block([[Dq[:, :n], Dq[:, n:2 * n]],
                        [Du[:, :n], Du[:, n:2 * n]]])
        dzdw = np.concatenate((Dq[:, 2 * n], Du[:, 2 * n]))
    else:
        psi, dzdw = None, None
    stats = {"max_iterations": max_iters, "worst_residual": worst_resid}
    if track_dof is not None:
        return z_end, psi, dzdw, stats, hist
    return z_end, psi, dzdw, stats


def _run_chunk(args):
    model, om, phi_cols, z0s, S1, track_dof, sens = args
    out = []
    for s in range(z0s.shape[0]):
        out.append(newmark_integrate(model, z0s[s], om, phi_cols[:, s], S1,
                                     track_dof=track_dof, sens=sens))
    return out


_POOLS = {}


def _limit_worker_blas():
    # one BLAS thread per worker process, else workers oversubscribe cores
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(1)
    except Exception:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = "1"


def _get_pool(workers):
    pool = _POOLS.get(workers)
    if pool is None:
        import multiprocessing as mp
        method = "fork" if "fork" in mp.get_all_start_methods() else "spawn"
        pool = ProcessPoolExecutor(max_workers=workers,
                                   mp_context=mp.get_context(method),
                                   initializer=_limit_worker_blas)
        _POOLS[workers] = pool
    return pool


def shutdown_pools():
    for pool in _POOLS.values():
        pool.shutdown()
    _POOLS.clear()


atexit.register(shutdown_pools)


def integrate_batch(model, zbar0, omega, scheme, S1, workers=1,
                    track_dof=None, sens=True):
    """Integrate every section sample and assemble the batch result.

    `zbar0` is the state-major sampled section [q_1 over samples; ...;
    u_n over samples], length 2n*S. Output slots are written by sample
    index, so results do not depend on `workers`.
    """
    import time
    n = model.n
    s_tilde = scheme.s_tilde
    zmat = np.asarray(zbar0, dtype=float).reshape(2 * n, s_tilde)
    z0s = np.empty((s_tilde, 2 * n))
    z0s[:, :n] = zmat[:n].T
    z0s[:, n:] = zmat[n:].T
    grid = scheme.sample_grid

    t0 = time.perf_counter()
    results = [None] * s_tilde
    if workers <= 1 or s_tilde == 1:
        for s in range(s_tilde):
            try:
                results[s] = newmark_integrate(model, z0s[s], omega,
                                               grid[:, s], S1,
                                               track_dof=track_dof,
                                               sens=sens)
            except IntegrationError as err:
                raise IntegrationError(
                    "sample %d failed: %s" % (s, err), sample=s,
                    step=err.step)
    else:
        pool = _get_pool(workers)
        bounds = np.linspace(0, s_tilde, workers + 1).astype(int)
        futures = []
        for w in range(workers):
            lo, hi = bounds[w], bounds[w + 1]
            if lo == hi:
                continue
            args = (model, np.asarray(getattr(omega, "omega", omega),
                                      dtype=float),
                    grid[:, lo:hi], z0s[lo:hi], S1, track_dof, sens)
            futures.append((lo, hi, pool.submit(_run_chunk, args)))
        for lo, hi, fut in futures:
            try:
                chunk = fut.result()
            except IntegrationError as err:
                raise IntegrationError(
                    "sample in [%d, %d) failed: %s" % (lo, hi, err),
                    sample=err.sample, step=err.step)
            for off, res in enumerate(chunk):
                results[lo + off] = res
    elapsed = time.perf_counter() - t0

    terminal = np.empty((2 * n, s_tilde))
    psi = np.empty((s_tilde, 2 * n, 2 * n)) if sens else None
    domega1 = np.empty((2 * n, s_tilde)) if sens else None
    hist = np.empty((s_tilde, S1 + 1)) if track_dof is not None else None
    worst = 0.0
    iters = 0
    for s, res in enumerate(results):
        z_end, psi_s, dzdw, stats = res[:4]
        terminal[:n, s] = z_end[:n]
        terminal[n:, s] = z_end[n:]
        if sens:
            psi[s] = psi_s
            domega1[:n, s] = dzdw[:n]
            domega1[n:, s] = dzdw[n:]
        worst = max(worst, stats["worst_residual"])
        iters = max(iters, stats["max_iterations"])
        if hist is not None:
            hist[s] = res[4]
    return TrajectoryBatchResult(
        terminal=terminal.reshape(-1),
        psi=psi,
        domega1=(domega1.reshape(-1) if sens else None),
        newton_stats={"worst_residual": worst, "max_iterations": iters},
        dof_history=hist,
        elapsed=elapsed,
    )
