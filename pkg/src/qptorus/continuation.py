"""One-parameter predictor-corrector continuation.

The core (tangent prediction, orthogonal correction, step control) is
generic over a small system protocol so it can be exercised on algebraic
test problems; the torus adapter wires it to the shooting residual with
the three deficit configurations:

  case 1: forced system, parameter = base frequency; frequencies 2..d are
          released, pinned by ratio conditions up to e and by phase
          conditions above e.
  case 2: forced system, parameter = a model parameter; frequencies above
          e are released with phase conditions, the forced ones stay fixed.
  case 3: autonomous system (e = 0), parameter = a model parameter; all
          frequencies released with phase conditions.
"""

import csv
import json
import numpy as np
from dataclasses import dataclass, field

from . import shooting
from .model import FrequencyVector, ModelError
from .shooting import TorusCoefficients, ShootingError
from .integrator import IntegrationError, _forcing

# failures that a smaller step may cure (wild trial points can even leave
# the model's validity domain, e.g. a negative base frequency)
_RETRYABLE = (ShootingError, IntegrationError, ModelError)


class ContinuationError(RuntimeError):
    pass


class FoldSignal(ContinuationError):
    """Singular or parameter-degenerate tangent system."""


@dataclass
class ConstraintRow:
    """One bordered-system row: row_x . dx + row_p * dp = rhs."""

    row_x: np.ndarray
    row_p: float = 0.0
    rhs: float = 0.0


@dataclass
class SolutionPoint:
    x: np.ndarray
    p: float
    residual_norm: float
    tangent_x: np.ndarray
    tangent_p: float
    iterations: int
    extras: dict = field(default_factory=dict)


@dataclass
class Branch:
    points: list
    termination: str

    def parameter_values(self):
        return np.array([pt.p for pt in self.points])


def tangent_predict(jac_x, jac_p, rows, prev_tangent):
    """Solve the bordered tangent system and normalize to unit parameter step.

    `rows` are (row_x, row_p) pairs of active constraints; `prev_tangent`
    is (tx, tp) of the previous step (bootstrap: zeros with tp = 1, which
    selects the pure-parameter direction).
    """
    m, N = jac_x.shape
    tx_prev, tp_prev = prev_tangent
    size = m + len(rows) + 1
    if size != N + 1:
        raise ContinuationError(
            "tangent system is %dx%d; constraints do not fill the deficit"
            % (size, N + 1))
    A = np.zeros((size, N + 1))
    A[:m, :N] = jac_x
    A[:m, N] = jac_p
    for r, (row_x, row_p) in enumerate(rows):
        A[m + r, :N] = row_x
        A[m + r, N] = row_p
    A[-1, :N] = tx_prev
    A[-1, N] = tp_prev
    b = np.zeros(size)
    b[-1] = 1.0
    try:
        sol = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        raise FoldSignal("singular bordered tangent system")
    dx, dp = sol[:N], sol[N]
    if abs(dp) < 1e-14 * max(1.0, np.abs(dx).max()):
        raise FoldSignal("tangent parameter component vanished (fold)")
    return dx / abs(dp), np.sign(dp)


def orthogonal_correct(system, x, p, tangent, epsilon, max_iter=12,
                       max_halvings=4):
    """Newton corrections orthogonal to the predictor tangent.

    Returns (x, p, iterations, residual_norm, full_eval) on success;
    raises ContinuationError when the iteration budget is exhausted.
    """
    tx, tp = tangent
    N = x.size
    last_full = None
    for it in range(max_iter + 1):
        R, jac_x, jac_p, rows = system.full(x, p)
        last_full = (R, jac_x, jac_p, rows)
        rnorm = np.linalg.norm(R)
        cres = max((abs(r.rhs) for r in rows), default=0.0)
        if rnorm < epsilon * system.scale(x) and cres < 1e-10:
            return x, p, it, rnorm, last_full
        if it == max_iter:
            break
        m = R.size
        size = m + len(rows) + 1
        A = np.zeros((size, N + 1))
        b = np.empty(size)
        A[:m, :N] = jac_x
        A[:m, N] = jac_p
        b[:m] = -R
        for r, row in enumerate(rows):
            A[m + r, :N] = row.row_x
            A[m + r, N] = row.row_p
            b[m + r] = row.rhs
        A[-1, :N] = tx
        A[-1, N] = tp
        b[-1] = 0.0
        try:
            delta = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            raise ContinuationError("singular bordered corrector system")
        step = 1.0
        for _ in range(max_halvings + 1):
            x_try = x + step * delta[:N]
            p_try = p + step * delta[N]
            try:
                r_try = system.resid(x_try, p_try)
            except _RETRYABLE:
                step *= 0.5
                continue
            if np.linalg.norm(r_try) < rnorm or step <= 2.0 ** -max_halvings:
                break
            step *= 0.5
        x, p = x_try, p_try
    raise ContinuationError(
        "corrector did not converge (|R| = %.3e)" % rnorm)


def run_branch(system, x0, p0, config):
    """Trace a solution branch from (x0, p0).

    `system` implements full/resid/scale/rows_for_tangent/on_accept;
    `config` is a ContinuationConfig. The seed is corrected first (with a
    fixed-parameter Newton handled by the system) and seed failure is
    reported distinctly from mid-branch failure.
    """
    try:
        x, p, info = system.solve_seed(x0, p0, config.epsilon)
    except (ContinuationError,) + _RETRYABLE as err:
        raise ContinuationError("seed solve failed: %s" % err)

    lo, hi = sorted(config.p_range)
    direction = 1.0 if config.p_range[1] >= config.p_range[0] else -1.0
    s = config.step0
    prev_tangent = (np.zeros(x.size), direction)
    points = []
    termination = "max_points"

    point = system.on_accept(x, p, info.get("residual_norm", 0.0),
                             prev_tangent, info.get("iterations", 0))
    points.append(point)

    ev_full = None
    while len(points) < config.max_points:
        if ev_full is None:
            ev_full = system.full(x, p)
        R, jac_x, jac_p, rows = ev_full
        try:
            tx, tp = tangent_predict(jac_x, jac_p,
                                     [(r.row_x, r.row_p) for r in rows],
                                     prev_tangent)
        except FoldSignal:
            termination = "fold-singular tangent"
            break
        accepted = False
        for _ in range(config.max_retries):
            x_pred = x + s * tx
            p_pred = p + s * tp
            try:
                x_new, p_new, iters, rnorm, last_full = orthogonal_correct(
                    system, x_pred, p_pred, (tx, tp), config.epsilon,
                    max_iter=config.corrector_max_iter)
                accepted = True
                break
            except (ContinuationError,) + _RETRYABLE:
                s = max(0.5 * s, config.step_min)
        if not accepted:
            termination = "repeated corrector failure"
            break
        x, p = x_new, p_new
        ev_full = last_full
        prev_tangent = (tx, tp)
        points.append(system.on_accept(x, p, rnorm, (tx, tp), iters))
        if iters <= config.grow_threshold:
            s = min(s * config.grow_factor, config.step_max)
        elif iters > config.shrink_threshold:
            s = max(0.5 * s, config.step_min)
        if not (lo <= p <= hi):
            termination = "parameter range exit"
            break
    return Branch(points, termination)


@dataclass
class ContinuationConfig:
    parameter: str  # "omega1" or a model-parameter name
    p_range: tuple
    step0: float
    step_min: float = 1e-6
    step_max: float = 0.5
    grow_factor: float = 1.3
    grow_threshold: int = 3
    shrink_threshold: int = 8
    max_retries: int = 5
    corrector_max_iter: int = 12
    deficit_case: int = 1
    released: tuple = ()
    epsilon: float = 1e-8
    max_points: int = 200
    S1: int = 256
    workers: int = 1
    amplitude_dof: int = 0
    stability: bool = False
    n_ly: int = 500
    fd_step: float = 1e-6

    def validate(self, d, e):
        released = tuple(sorted(int(i) for i in self.released))
        if self.deficit_case == 1:
            if self.parameter != "omega1":
                raise ContinuationError(
                    "case 1 requires the base frequency as parameter")
            if e < 1:
                raise ContinuationError("case 1 requires forcing (e >= 1)")
            expect = tuple(range(2, d + 1))
        elif self.deficit_case == 2:
            if self.parameter == "omega1":
                raise ContinuationError(
                    "case 2 requires a model parameter, not the base frequency")
            if e < 1:
                raise ContinuationError("case 2 requires forcing (e >= 1)")
            expect = tuple(range(e + 1, d + 1))
        elif self.deficit_case == 3:
            if e != 0:
                raise ContinuationError("case 3 is for autonomous systems (e = 0)")
            if self.parameter == "omega1":
                raise ContinuationError(
                    "case 3 requires a model parameter, not the base frequency")
            expect = tuple(range(1, d + 1))
        else:
            raise ContinuationError("deficit case must be 1, 2 or 3")
        if released != expect:
            raise ContinuationError(
                "case %d with d=%d, e=%d must release frequencies %s"
                % (self.deficit_case, d, e, list(expect)))
        # a released forcing frequency without its ratio condition would hit
        # the rotation-only frequency column, which omits the forcing-phase
        # dependence; the ratio rows added in case 1 keep that configuration
        # well-posed, any other is rejected
        if self.deficit_case != 1:
            for i in released:
                if 2 <= i <= e:
                    raise ContinuationError(
                        "released forcing frequency %d needs a ratio "
                        "condition (case 1)" % i)
        return released


def phase_condition_rows(coeffs, scheme, model, indices):
    """Phase-fixing rows for released frequencies, unit-normalized.

    Direction 1 uses the coefficients of the section derivative field
    [u; a]; directions 2..d use the coefficient-space phase gradients.
    Rows constrain the continuation update and carry zero right-hand side.
    """
    n = model.n
    rows = []
    for i in indices:
        if i == 1:
            zmat = shooting.section_samples(coeffs, scheme, n)
            w1 = coeffs.freq.omega[0]
            rho = coeffs.freq.rho
            deriv = np.empty_like(zmat)
            for s in range(scheme.s_tilde):
                q = zmat[:n, s]
                u = zmat[n:, s]
                e_s, _ = _forcing(model, 0.0, scheme.sample_grid[:, s], rho)
                f, _, _ = model.nonlinear(q, w1 * u)
                rhs = (model.apply_theta(e_s) - w1 * (model.damping @ u)
                       - model.stiffness @ q - model.apply_theta(f))
                a = np.linalg.solve(w1 ** 2 * model.mass, rhs)
                deriv[:n, s] = u
                deriv[n:, s] = a
            row = (deriv @ scheme.gamma_inv.T).reshape(-1)
        else:
            zmat = coeffs.Z0.reshape(2 * n, scheme.u_tilde)
            row = (zmat @ scheme.nabla[i].T).reshape(-1)
        nrm = np.linalg.norm(row)
        if nrm < 1e-14:
            raise ContinuationError(
                "degenerate phase condition for direction %d (constant "
                "section)" % i)
        rows.append(row / nrm)
    return rows


def frequency_condition_rows(omega, rho_targets, indices):
    """Ratio-pinning rows w_i - rho_i * w_1 = 0 for forced frequencies.

    Returns (row_omega_dict, row_omega1_coef, rhs) triples; the omega_1
    coefficient lands in the parameter column when omega_1 drives the
    continuation.
    """
    rows = []
    for i in indices:
        r = rho_targets[i - 2]
        g = omega[i - 1] - r * omega[0]
        rows.append(({i: 1.0}, -r, -g))
    return rows


class TorusSystem:
    """Continuation adapter around the shooting residual.

    Unknowns x = [Z0; released frequencies (ascending)], parameter p is
    the base frequency (case 1) or a model parameter (cases 2, 3) realized
    through `model_factory(p)`.
    """

    def __init__(self, model, scheme, freq_template, config,
                 rho_targets=None, model_factory=None):
        self.scheme = scheme
        self.config = config
        self.e = freq_template.e
        self.d = freq_template.d
        self.released = config.validate(self.d, self.e)
        self.param_is_omega1 = config.parameter == "omega1"
        if not self.param_is_omega1 and model_factory is None:
            raise ContinuationError(
                "model-parameter continuation needs a model factory")
        self.model_factory = model_factory
        self._model = model
        self._fixed_omega = freq_template.omega.copy()
        self.rho_targets = rho_targets
        if self.param_is_omega1 and self.e >= 2 and rho_targets is None:
            raise ContinuationError("case 1 with e >= 2 needs forcing ratios")
        self.nz = None  # set on first pack

    # --- packing -----------------------------------------------------
    def pack(self, coeffs, p):
        z = coeffs.Z0
        self.nz = z.size
        extra = [coeffs.freq.omega[i - 1] for i in self.released]
        return np.concatenate((z, extra)), p

    def unpack(self, x, p):
        z = x[:self.nz]
        omega = self._fixed_omega.copy()
        if self.param_is_omega1:
            omega[0] = p
        for c_i, i in enumerate(self.released):
            omega[i - 1] = x[self.nz + c_i]
        freq = FrequencyVector(omega, self.e)
        return TorusCoefficients(z, freq)

    def model_at(self, p):
        if self.param_is_omega1:
            return self._model
        return self.model_factory(p)

    def scale(self, x):
        return max(1.0, np.linalg.norm(x[:self.nz]))

    # --- constraint rows ----------------------------------------------
    def _rows(self, coeffs):
        rows = []
        pc_indices = [i for i in self.released if i == 1 or i > self.e]
        pc_rows = phase_condition_rows(coeffs, self.scheme,
                                       self.model_at_cache, pc_indices)
        for row in pc_rows:
            rows.append(ConstraintRow(self._pad(row, {}), 0.0, 0.0))
        if self.param_is_omega1 and self.e >= 2:
            idx = [i for i in range(2, self.e + 1)]
            for row_om, row_p, rhs in frequency_condition_rows(
                    coeffs.freq.omega, self.rho_targets, idx):
                rows.append(ConstraintRow(self._pad(np.zeros(self.nz),
                                                    row_om), row_p, rhs))
        return rows

    def _pad(self, row_z, row_om):
        full = np.zeros(self.nz + len(self.released))
        full[:self.nz] = row_z
        for i, coef in row_om.items():
            full[self.nz + self.released.index(i)] = coef
        return full

    # --- system protocol ------------------------------------------------
    def full(self, x, p):
        coeffs = self.unpack(x, p)
        model = self.model_at(p)
        self.model_at_cache = model
        ev = shooting.evaluate(model, coeffs, self.scheme, self.config.S1,
                               workers=self.config.workers,
                               track_dof=self.config.amplitude_dof)
        self._last_eval = ev
        ncol = len(self.released)
        jac_x = np.empty((self.nz, self.nz + ncol))
        jac_x[:, :self.nz] = ev.jac_Z0
        for c_i, i in enumerate(self.released):
            jac_x[:, self.nz + c_i] = ev.jac_omega[i]
        if self.param_is_omega1:
            jac_p = ev.jac_omega[1]
        else:
            jac_p = self._param_fd(coeffs, p)
        rows = self._rows(coeffs)
        return ev.residual, jac_x, jac_p, rows

    def resid(self, x, p):
        coeffs = self.unpack(x, p)
        model = self.model_at(p)
        ev = shooting.evaluate(model, coeffs, self.scheme, self.config.S1,
                               workers=self.config.workers,
                               with_jacobian=False)
        return ev.residual

    def _param_fd(self, coeffs, p):
        h = self.config.fd_step * max(1.0, abs(p))
        rp = shooting.evaluate(self.model_at(p + h), coeffs, self.scheme,
                               self.config.S1, workers=self.config.workers,
                               with_jacobian=False).residual
        rm = shooting.evaluate(self.model_at(p - h), coeffs, self.scheme,
                               self.config.S1, workers=self.config.workers,
                               with_jacobian=False).residual
        return (rp - rm) / (2.0 * h)

    def solve_seed(self, x0, p0, epsilon):
        coeffs = self.unpack(x0, p0)
        model = self.model_at(p0)
        self.model_at_cache = model
        constraints = []
        pc_indices = [i for i in self.released if i == 1 or i > self.e]

        def make_pc(i):
            def pc(c, released):
                row = phase_condition_rows(c, self.scheme, model, [i])[0]
                return row, {}, 0.0
            return pc

        for i in pc_indices:
            constraints.append(make_pc(i))
        if self.param_is_omega1 and self.e >= 2:
            idx = list(range(2, self.e + 1))

            def make_g(i):
                def g(c, released):
                    r = self.rho_targets[i - 2]
                    val = c.freq.omega[i - 1] - r * c.freq.omega[0]
                    return np.zeros(self.nz), {i: 1.0}, -val
                return g

            for i in idx:
                constraints.append(make_g(i))
        corrected, info = shooting.newton_correct(
            model, coeffs, self.scheme, self.config.S1,
            constraints=constraints, released=self.released,
            epsilon=epsilon, workers=self.config.workers)
        self._last_eval = info["evaluation"]
        x, p = self.pack(corrected, p0)
        return x, p, info

    def on_accept(self, x, p, rnorm, tangent, iters):
        coeffs = self.unpack(x, p)
        model = self.model_at(p)
        extras = {"omega": coeffs.freq.omega.copy(), "Z0": coeffs.Z0.copy()}
        ev = getattr(self, "_last_eval", None)
        if ev is None or ev.batch.dof_history is None:
            ev = shooting.evaluate(model, coeffs, self.scheme,
                                   self.config.S1,
                                   workers=self.config.workers,
                                   with_jacobian=False,
                                   sens=self.config.stability,
                                   track_dof=self.config.amplitude_dof)
        extras["amplitude"] = shooting.amplitude_metric(ev.batch)
        if self.config.stability:
            from . import stability
            if self.scheme.d == 1:
                report = stability.floquet_exponents(
                    stability.physical_monodromy(ev.batch.psi[0],
                                                 coeffs.freq.omega[0]),
                    coeffs.freq.omega[0])
            else:
                field_ = stability.transition_matrix_field(
                    ev.batch, coeffs.freq, self.scheme)
                report = stability.lyapunov_exponents(
                    field_, coeffs.freq, self.config.n_ly)
            extras["stability_flag"] = report.flag
            extras["lyapunov"] = report.exponents[:3].tolist()
        return SolutionPoint(x.copy(), p, rnorm, tangent[0].copy(),
                             tangent[1], iters, extras)


def seed_torus_from_periodic(z0, omega1, psi_physical, scheme, e,
                             perturbation=1e-3):
    """Lift a periodic orbit to a two-frequency section seed.

    Uses the complex unit-circle-crossing pair of the physical monodromy:
    its angle sets the second-frequency estimate and its eigenvector spans
    the first-harmonic perturbation of the invariant circle.
    """
    if scheme.d != 2:
        raise ContinuationError("periodic lifting targets d = 2 schemes")
    vals, vecs = np.linalg.eig(psi_physical)
    cand = [(abs(abs(v) - 1.0), idx) for idx, v in enumerate(vals)
            if abs(v.imag) > 1e-9]
    if not cand:
        raise ContinuationError(
            "monodromy has no complex multiplier pair; no torus emerges")
    _, idx = min(cand)
    mu = vals[idx]
    theta = abs(np.angle(mu))
    omega2 = theta * omega1 / (2.0 * np.pi)
    vec = vecs[:, idx]
    n = z0.size // 2
    # physical eigenvector -> (q, u) coordinates
    vq = vec[:n]
    vu = vec[n:] / omega1
    v = np.concatenate((vq, vu))
    v = v / np.abs(v).max()
    amp = perturbation * max(np.abs(z0).max(), 1e-12)
    zmat = np.zeros((2 * n, scheme.u_tilde))
    zmat[:, 0] = z0
    zmat[:, 1] = amp * v.real
    zmat[:, 2] = amp * v.imag
    freq = FrequencyVector(np.array([omega1, omega2]), e)
    return TorusCoefficients(zmat.reshape(-1), freq)


def write_branch_csv(path, branch, d):
    """One row per accepted point: parameter, frequencies, amplitude,
    residual, corrector iterations, stability flag, leading exponents."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        head = (["p"] + ["omega_%d" % (i + 1) for i in range(d)]
                + ["amplitude", "residual_norm", "iterations",
                   "stability", "lyap_1", "lyap_2", "lyap_3"])
        wr.writerow(head)
        for pt in branch.points:
            omega = pt.extras.get("omega", np.full(d, np.nan))
            lyap = pt.extras.get("lyapunov", [])
            lyap = list(lyap) + [""] * (3 - len(lyap))
            wr.writerow([repr(float(pt.p))]
                        + [repr(float(w)) for w in omega]
                        + [repr(float(pt.extras.get("amplitude", np.nan))),
                           repr(float(pt.residual_norm)), pt.iterations,
                           pt.extras.get("stability_flag", "")]
                        + [repr(float(v)) if v != "" else "" for v in lyap])


def write_branch_sidecar(path, branch, scheme, e, config_dict=None):
    """Full restartable snapshots of every accepted point (JSON)."""
    data = {
        "scheme": scheme.to_dict(),
        "e": int(e),
        "termination": branch.termination,
        "points": [
            {
                "p": float(pt.p),
                "omega": [float(w) for w in pt.extras["omega"]],
                "Z0": [float(v) for v in pt.extras["Z0"]],
                "residual_norm": float(pt.residual_norm),
            }
            for pt in branch.points
        ],
    }
    if config_dict:
        data["config"] = config_dict
    with open(path, "w") as fh:
        json.dump(data, fh)
