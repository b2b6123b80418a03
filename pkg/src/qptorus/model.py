"""Second-order mechanical system models.

A model collects the matrices and callbacks of

    M q'' + D q' + K q + Theta * (f_nl(q, q') - e(t)) = 0

with cosine multi-frequency excitation e(t) = sum_i f_i cos(w_i t).
Velocities passed to the nonlinear force are always physical velocities.
"""

import numpy as np
from dataclasses import dataclass, field


class ModelError(ValueError):
    """Raised for inconsistent model definitions."""


@dataclass
class FrequencyVector:
    """Base frequencies of a solution.

    Parameters
    ----------
    omega : (d,) array
        Base frequencies, first entry is the trajectory frequency.
    e : int
        Number of forcing frequencies, 0 <= e <= d. The first `e`
        entries of `omega` drive the excitation; the remainder are
        intrinsic unknowns.
    """

    omega: np.ndarray
    e: int

    def __post_init__(self):
        self.omega = np.atleast_1d(np.asarray(self.omega, dtype=float)).copy()
        if self.omega.ndim != 1 or self.omega.size < 1:
            raise ModelError("omega must be a nonempty vector")
        if self.omega[0] <= 0.0:
            raise ModelError("omega_1 must be positive")
        if not (0 <= self.e <= self.d):
            raise ModelError("e must satisfy 0 <= e <= d")

    @property
    def d(self):
        return int(self.omega.size)

    @property
    def rho(self):
        """Frequency ratios omega_j / omega_1 for j = 2..d, recomputed on access."""
        return self.omega[1:] / self.omega[0]

    def replace(self, omega):
        return FrequencyVector(np.asarray(omega, dtype=float), self.e)


class _ZeroForce:
    """Trivial nonlinear force, f = 0 with zero Jacobians."""

    def __init__(self, n):
        self.n = n

    def __call__(self, q, qdot):
        z = np.zeros(self.n)
        zz = np.zeros((self.n, self.n))
        return z, zz, zz


class _CubicForce:
    """Single-DOF cubic spring f = alpha * q^3."""

    def __init__(self, alpha):
        self.alpha = alpha

    def __call__(self, q, qdot):
        a = self.alpha
        f = np.array([a * q[0] ** 3])
        dfdq = np.array([[3.0 * a * q[0] ** 2]])
        return f, dfdq, np.zeros((1, 1))


class _ChainCubicForce:
    """Cubic springs on the chain topology: ground-0-1-...-(n-1)-ground."""

    def __init__(self, n, alpha):
        self.n = n
        self.alpha = alpha

    def __call__(self, q, qdot):
        n, a = self.n, self.alpha
        # elongations of the n+1 springs, delta_j = q_j - q_{j-1} with ground = 0
        qe = np.concatenate(([0.0], q, [0.0]))
        delta = qe[1:] - qe[:-1]
        fs = a * delta ** 3
        f = fs[:-1] - fs[1:]
        ks = 3.0 * a * delta ** 2
        dfdq = np.zeros((n, n))
        idx = np.arange(n)
        dfdq[idx, idx] = ks[:-1] + ks[1:]
        dfdq[idx[:-1], idx[:-1] + 1] = -ks[1:-1]
        dfdq[idx[1:], idx[1:] - 1] = -ks[1:-1]
        return f, dfdq, np.zeros((n, n))


class _VanDerPolForce:
    """Velocity-coupled force f = -eps*(1 - q^2)*qdot (self-excited oscillator)."""

    def __init__(self, eps):
        self.eps = eps

    def __call__(self, q, qdot):
        e = self.eps
        f = np.array([-e * (1.0 - q[0] ** 2) * qdot[0]])
        dfdq = np.array([[2.0 * e * q[0] * qdot[0]]])
        dfdqd = np.array([[-e * (1.0 - q[0] ** 2)]])
        return f, dfdq, dfdqd


@dataclass
class SecondOrderModel:
    """Matrices and callbacks of an n-DOF second-order system.

    Parameters
    ----------
    mass, damping, stiffness : (n, n) arrays
        System matrices; mass must be symmetric positive definite.
    nonlinear_force : callable
        ``(q, qdot) -> (f, df_dq, df_dqdot)`` with physical velocities.
    forcing_terms : list of (amplitude_vector, index)
        Realizes e(t) = sum f_i cos(w_i t); `index` is the 1-based base
        frequency the term rides on.
    force_distribution : (n, n) array, optional
        Theta matrix applied to both f_nl and e; defaults to identity.
    """

    mass: np.ndarray
    damping: np.ndarray
    stiffness: np.ndarray
    nonlinear_force: object = None
    forcing_terms: list = field(default_factory=list)
    force_distribution: np.ndarray = None
    name: str = ""

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=float)
        self.damping = np.asarray(self.damping, dtype=float)
        self.stiffness = np.asarray(self.stiffness, dtype=float)
        n = self.mass.shape[0]
        for label, m in (("mass", self.mass), ("damping", self.damping),
                         ("stiffness", self.stiffness)):
            if m.shape != (n, n):
                raise ModelError("%s matrix must be %dx%d" % (label, n, n))
        if not np.allclose(self.mass, self.mass.T, atol=1e-12):
            raise ModelError("mass matrix must be symmetric")
        try:
            np.linalg.cholesky(self.mass)
        except np.linalg.LinAlgError:
            raise ModelError("mass matrix must be positive definite")
        if self.nonlinear_force is None:
            self.nonlinear_force = _ZeroForce(n)
        if self.force_distribution is None:
            self.force_distribution = np.eye(n)
            self._theta_identity = True
        else:
            self.force_distribution = np.asarray(self.force_distribution, dtype=float)
            if self.force_distribution.shape != (n, n):
                raise ModelError("force distribution matrix must be %dx%d" % (n, n))
            self._theta_identity = bool(
                np.array_equal(self.force_distribution, np.eye(n)))
        terms = []
        for amp, idx in self.forcing_terms:
            amp = np.asarray(amp, dtype=float).reshape(-1)
            if amp.size != n:
                raise ModelError("forcing amplitude vector must have length n")
            idx = int(idx)
            if idx < 1:
                raise ModelError("forcing harmonic index must be >= 1")
            terms.append((amp, idx))
        self.forcing_terms = terms

    @property
    def n(self):
        return self.mass.shape[0]

    @property
    def is_linear(self):
        return isinstance(self.nonlinear_force, _ZeroForce)

    def nonlinear(self, q, qdot):
        """Evaluate f_nl and its Jacobians at (q, qdot)."""
        return self.nonlinear_force(np.asarray(q, dtype=float),
                                    np.asarray(qdot, dtype=float))

    def apply_theta(self, v):
        if self._theta_identity:
            return v
        return self.force_distribution @ v

    def forcing_amplitude(self, idx):
        """Summed amplitude vector of all terms on base frequency `idx`."""
        out = np.zeros(self.n)
        for amp, i in self.forcing_terms:
            if i == idx:
                out += amp
        return out

    def excitation(self, phases):
        """e for given cosine phases, one phase per base-frequency index.

        Parameters
        ----------
        phases : dict
            Maps 1-based frequency index to the phase w_i*t (or its
            hyper-time image).
        """
        out = np.zeros(self.n)
        for amp, idx in self.forcing_terms:
            out += amp * np.cos(phases[idx])
        return out


def evaluate_rhs(model, x, t, omega=None):
    """First-order right-hand side in physical coordinates.

    x = [q; qdot], returns [qdot; qddot] from the model equation. Used by
    the explicit-integration oracle only; the shooting path stays on the
    second-order form.
    """
    n = model.n
    x = np.asarray(x, dtype=float)
    q, qd = x[:n], x[n:]
    f, _, _ = model.nonlinear(q, qd)
    rhs = -model.damping @ qd - model.stiffness @ q - model.apply_theta(f)
    if model.forcing_terms:
        if omega is None:
            raise ModelError("omega is required to evaluate forced models")
        om = np.atleast_1d(np.asarray(omega, dtype=float))
        phases = {idx: om[idx - 1] * t for _, idx in model.forcing_terms}
        rhs = rhs + model.apply_theta(model.excitation(phases))
    try:
        qdd = np.linalg.solve(model.mass, rhs)
    except np.linalg.LinAlgError:
        raise ModelError("singular mass matrix")
    return np.concatenate((qd, qdd))


def rhs_jacobian(model, x, t=0.0):
    """State Jacobian of `evaluate_rhs` (forcing does not enter)."""
    n = model.n
    x = np.asarray(x, dtype=float)
    q, qd = x[:n], x[n:]
    _, dfdq, dfdqd = model.nonlinear(q, qd)
    minv_k = np.linalg.solve(model.mass, model.stiffness + model.apply_theta(dfdq))
    minv_d = np.linalg.solve(model.mass, model.damping + model.apply_theta(dfdqd))
    top = np.hstack((np.zeros((n, n)), np.eye(n)))
    bot = np.hstack((-minv_k, -minv_d))
    return np.vstack((top, bot))


def make_duffing(k, c, alpha, forcing=()):
    """Single-DOF oscillator with cubic stiffness alpha*q^3.

    `forcing` is a list of (amplitude, index) scalars.
    """
    if k <= 0:
        raise ModelError("stiffness k must be positive")
    if c < 0:
        raise ModelError("damping c must be nonnegative")
    terms = [(np.array([float(a)]), int(i)) for a, i in forcing]
    nl = _ZeroForce(1) if alpha == 0 else _CubicForce(float(alpha))
    return SecondOrderModel(np.eye(1), np.array([[float(c)]]),
                            np.array([[float(k)]]), nl, terms, name="duffing")


def make_cubic_chain(n, k, c, alpha, forcing=()):
    """Chain of n unit masses with linear/cubic springs between neighbors
    and to ground at the ends; Rayleigh damping D = c*K.

    Forcing is applied at the middle node (n // 2) by default; `forcing`
    entries are (amplitude, index) scalars.
    """
    if n < 1:
        raise ModelError("chain needs at least one mass")
    K = np.zeros((n, n))
    idx = np.arange(n)
    K[idx, idx] = 2.0 * k
    K[idx[:-1], idx[:-1] + 1] = -k
    K[idx[1:], idx[1:] - 1] = -k
    D = c * K
    node = n // 2
    terms = []
    for a, i in forcing:
        amp = np.zeros(n)
        amp[node] = float(a)
        terms.append((amp, int(i)))
    nl = _ZeroForce(n) if alpha == 0 else _ChainCubicForce(n, float(alpha))
    return SecondOrderModel(np.eye(n), D, K, nl, terms, name="cubic_chain")


def make_vanderpol(omega0, eps, forcing=()):
    """Self-excited oscillator q'' - eps*(1-q^2)*q' + omega0^2 q = e(t)."""
    if omega0 <= 0:
        raise ModelError("omega0 must be positive")
    terms = [(np.array([float(a)]), int(i)) for a, i in forcing]
    return SecondOrderModel(np.eye(1), np.zeros((1, 1)),
                            np.array([[float(omega0) ** 2]]),
                            _VanDerPolForce(float(eps)), terms,
                            name="vanderpol")


REGISTRY = {
    "duffing": lambda p, forcing: make_duffing(
        p.get("k", 1.0), p.get("c", 0.0), p.get("alpha", 0.0), forcing),
    "cubic_chain": lambda p, forcing: make_cubic_chain(
        int(p.get("n", 1)), p.get("k", 1.0), p.get("c", 0.0),
        p.get("alpha", 0.0), forcing),
    "vanderpol": lambda p, forcing: make_vanderpol(
        p.get("omega0", 1.0), p.get("eps", 0.1), forcing),
}


def build_model(name, params=None, forcing=()):
    """Instantiate a registry model by name with a parameter dict."""
    if name not in REGISTRY:
        raise ModelError("unknown model '%s' (have: %s)"
                         % (name, ", ".join(sorted(REGISTRY))))
    return REGISTRY[name](dict(params or {}), list(forcing))


def validate_jacobians(model, n_points=20, scale=1.0, h=1e-6, rng=None):
    """Max relative error of the analytic f_nl Jacobians vs central differences.

    Spot check at `n_points` random states with entries in [-scale, scale].
    """
    rng = np.random.default_rng(0 if rng is None else rng)
    n = model.n
    worst = 0.0
    for _ in range(n_points):
        q = scale * (2.0 * rng.random(n) - 1.0)
        qd = scale * (2.0 * rng.random(n) - 1.0)
        _, dfdq, dfdqd = model.nonlinear(q, qd)
        for j in range(n):
            dq = np.zeros(n)
            dq[j] = h
            fp, _, _ = model.nonlinear(q + dq, qd)
            fm, _, _ = model.nonlinear(q - dq, qd)
            col = (fp - fm) / (2.0 * h)
            denom = max(np.abs(dfdq[:, j]).max(), 1.0)
            worst = max(worst, np.abs(col - dfdq[:, j]).max() / denom)
            fp, _, _ = model.nonlinear(q, qd + dq)
            fm, _, _ = model.nonlinear(q, qd - dq)
            col = (fp - fm) / (2.0 * h)
            denom = max(np.abs(dfdqd[:, j]).max(), 1.0)
            worst = max(worst, np.abs(col - dfdqd[:, j]).max() / denom)
    return worst
