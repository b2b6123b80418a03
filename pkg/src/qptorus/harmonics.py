"""Harmonic bookkeeping for the section torus.

Builds the signed harmonic-index matrix, the tensor sample grid, the dense
DFT/iDFT matrices, the section rotation operator and its frequency
derivatives, and the phase-gradient matrices. Everything here is immutable
after construction and safe to share across workers.

Coefficient ordering is fixed as
``[constant, cos(k_1.phi), sin(k_1.phi), ..., cos(k_L.phi), sin(k_L.phi)]``
with the rows k_l ordered exactly as produced by the index recursion; this
ordering is part of the solution-file contract (ORDERING_VERSION).
"""

import numpy as np

ORDERING_VERSION = 1


class SchemeError(ValueError):
    """Raised for invalid harmonic/sampling configurations."""


def _check_k_list(K_list):
    cleaned = []
    for j, K in enumerate(K_list, start=2):
        K = np.asarray(K)
        if K.ndim != 1 or K.size < 1:
            raise SchemeError("K_%d must be a nonempty vector" % j)
        if not np.all(K == np.round(K)):
            raise SchemeError("K_%d must hold integers" % j)
        K = K.astype(int)
        if K[0] != 0:
            raise SchemeError("K_%d must start with the constant order 0" % j)
        rest = K[1:]
        if rest.size and rest.min() <= 0:
            raise SchemeError("K_%d magnitudes after the 0 must be positive" % j)
        if np.unique(K).size != K.size:
            raise SchemeError("duplicate magnitudes in K_%d" % j)
        cleaned.append(K)
    return cleaned


def build_k_matrix(K_list):
    """Signed harmonic-index matrix for the (d-1)-torus basis.

    Parameters
    ----------
    K_list : sequence of int vectors
        One magnitude vector [0, k...] per direction j = 2..d. Empty
        sequence gives the periodic (d = 1) degenerate matrix.

    Returns
    -------
    (L+1, d-1) int array whose rows are the retained index combinations;
    the final row is all zeros (the constant term).
    """
    K_list = _check_k_list(K_list)
    if not K_list:
        return np.zeros((1, 0), dtype=int)
    # two-direction base: positive orders stacked over the zero row
    k2 = K_list[0][1:]
    ktil = np.concatenate((k2, [0]))[:, None]
    for K in K_list[1:]:
        kj = K[1:]
        nonzero = ktil[:-1]
        # mixed block: each positive order of the new direction against the
        # existing nonzero rows, with the new order negated
        g_rows = [np.column_stack((np.tile(nonzero, (kj.size, 1)),
                                   -np.repeat(kj, nonzero.shape[0])))]
        # base block: full previous matrix against [kj; 0]
        mags = np.concatenate((kj, [0]))
        b_rows = [np.column_stack((np.tile(ktil, (mags.size, 1)),
                                   np.repeat(mags, ktil.shape[0])))]
        ktil = np.vstack(g_rows + b_rows)
    return ktil.astype(int)


def default_sample_counts(K_list):
    """Smallest powers of two covering the sampling bound per direction."""
    counts = []
    for K in _check_k_list(K_list):
        H = int(np.max(K))
        s = 1
        while s < 2 * H + 2:
            s *= 2
        counts.append(s)
    return counts


def build_sample_grid(K_list, S_list):
    """Tensor grid of section sample points, one column per trajectory.

    Column ordering follows the Kronecker layout: the first direction
    cycles fastest. Each direction uses the uniform samples
    2*pi*[0..S_j-1]/S_j.
    """
    K_list = _check_k_list(K_list)
    S_list = [int(s) for s in S_list]
    if len(S_list) != len(K_list):
        raise SchemeError("need one sample count per direction")
    for j, (K, S) in enumerate(zip(K_list, S_list), start=2):
        H = int(np.max(K))
        if S < 2 * H + 1:
            raise SchemeError(
                "S_%d = %d violates the sampling bound S >= 2H+1 = %d for "
                "highest order H = %d" % (j, S, 2 * H + 1, H))
    if not S_list:
        return np.zeros((0, 1))
    s_tilde = int(np.prod(S_list))
    rows = []
    for j, S in enumerate(S_list):
        phis = 2.0 * np.pi * np.arange(S) / S
        before = int(np.prod(S_list[:j])) if j else 1
        after = int(np.prod(S_list[j + 1:])) if j + 1 < len(S_list) else 1
        rows.append(np.kron(np.ones(after), np.kron(phis, np.ones(before))))
    grid = np.vstack(rows)
    assert grid.shape == (len(S_list), s_tilde)
    return grid


def basis_row(k_matrix, phi_tilde):
    """Section basis H(phi) = [1, cos(k_1.phi), sin(k_1.phi), ...]."""
    phi_tilde = np.atleast_1d(np.asarray(phi_tilde, dtype=float))
    L = k_matrix.shape[0] - 1
    out = np.empty(2 * L + 1)
    out[0] = 1.0
    if L:
        ang = k_matrix[:L] @ phi_tilde
        out[1::2] = np.cos(ang)
        out[2::2] = np.sin(ang)
    return out


def build_dft_matrices(k_matrix, sample_grid):
    """Dense iDFT (coefficients -> samples) and DFT (samples -> coefficients).

    Returns (gamma, gamma_inv) with gamma_inv @ gamma = identity whenever
    the per-direction sampling bound holds.
    """
    L = k_matrix.shape[0] - 1
    s_tilde = sample_grid.shape[1]
    u_tilde = 2 * L + 1
    gamma = np.empty((s_tilde, u_tilde))
    gamma[:, 0] = 1.0
    if L:
        ang = k_matrix[:L] @ sample_grid  # (L, S)
        gamma[:, 1::2] = np.cos(ang).T
        gamma[:, 2::2] = np.sin(ang).T
    scale = np.full(u_tilde, 2.0)
    scale[0] = 1.0
    gamma_inv = (scale[:, None] * gamma.T) / s_tilde
    return gamma, gamma_inv


def rotation_matrix(rho, k_matrix):
    """Block-diagonal operator advancing section coefficients by the
    per-revolution phase shift 2*pi*rho."""
    L = k_matrix.shape[0] - 1
    R = np.zeros((2 * L + 1, 2 * L + 1))
    R[0, 0] = 1.0
    if L:
        theta = 2.0 * np.pi * (k_matrix[:L] @ np.atleast_1d(rho))
        c, s = np.cos(theta), np.sin(theta)
        for l in range(L):
            b = 1 + 2 * l
            R[b, b] = c[l]
            R[b, b + 1] = -s[l]
            R[b + 1, b] = s[l]
            R[b + 1, b + 1] = c[l]
    return R


def rotation_derivative(rho, omega, k_matrix, i):
    """Derivative of the rotation operator with respect to base frequency i.

    The per-block rotation angle is theta_l = 2*pi*k_l.rho with
    rho_j = omega_j/omega_1, so d(theta_l)/d(omega_1) = -2*pi*(k_l.rho)/omega_1
    and d(theta_l)/d(omega_i) = 2*pi*k_{i,l}/omega_1 for i >= 2. The result
    is (2*pi/omega_1) * blockdiag(Y_l) * R(rho) with Y_l the 2x2 generator
    scaled by -k_l.rho (i = 1) or k_{i,l} (i >= 2), and zero in the
    constant slot.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    d = k_matrix.shape[1] + 1
    if not 1 <= i <= d:
        raise SchemeError("frequency index out of range")
    L = k_matrix.shape[0] - 1
    R = rotation_matrix(np.atleast_1d(rho), k_matrix)
    out = np.zeros_like(R)
    if L == 0:
        return out
    if i == 1:
        coef = -(k_matrix[:L] @ np.atleast_1d(rho))
    else:
        coef = k_matrix[:L, i - 2].astype(float)
    pref = 2.0 * np.pi / omega[0]
    for l in range(L):
        b = 1 + 2 * l
        gen = pref * coef[l] * np.array([[0.0, -1.0], [1.0, 0.0]])
        out[b:b + 2, b:b + 2] = gen @ R[b:b + 2, b:b + 2]
    return out


def phase_gradient(k_matrix, i):
    """Coefficient-space derivative operator for direction i (2 <= i <= d).

    Maps coefficients of z to coefficients of dz/dphi_i; exactly
    skew-symmetric, zero on the constant slot.
    """
    d = k_matrix.shape[1] + 1
    if not 2 <= i <= d:
        raise SchemeError("phase gradients exist for directions 2..d")
    L = k_matrix.shape[0] - 1
    G = np.zeros((2 * L + 1, 2 * L + 1))
    for l in range(L):
        k = float(k_matrix[l, i - 2])
        b = 1 + 2 * l
        G[b, b + 1] = k
        G[b + 1, b] = -k
    return G


class HarmonicScheme:
    """Immutable bundle of everything derived from (K_list, S_list).

    Attributes
    ----------
    d : torus dimension (1 for the periodic degenerate case).
    k_matrix : (L+1, d-1) signed index rows, zero row last.
    u_tilde, s_tilde : coefficient and sample counts per state variable.
    sample_grid : (d-1, s_tilde) sample columns.
    gamma, gamma_inv : dense iDFT/DFT matrices.
    nabla : dict direction -> phase-gradient matrix.
    """

    def __init__(self, K_list=(), S_list=None):
        self.K_list = [np.asarray(K, dtype=int).copy() for K in K_list]
        _check_k_list(self.K_list)
        self.d = len(self.K_list) + 1
        if S_list is None:
            S_list = default_sample_counts(self.K_list)
        self.S_list = [int(s) for s in S_list]
        self.k_matrix = build_k_matrix(self.K_list)
        self.L_tilde = self.k_matrix.shape[0] - 1
        self.u_tilde = 2 * self.L_tilde + 1
        self.sample_grid = build_sample_grid(self.K_list, self.S_list)
        self.s_tilde = self.sample_grid.shape[1]
        self.gamma, self.gamma_inv = build_dft_matrices(self.k_matrix,
                                                        self.sample_grid)
        round_trip = self.gamma_inv @ self.gamma
        if not np.allclose(round_trip, np.eye(self.u_tilde), atol=1e-12):
            raise SchemeError("DFT round trip failed; refine sample counts")
        self.nabla = {i: phase_gradient(self.k_matrix, i)
                      for i in range(2, self.d + 1)}

    def basis_row(self, phi_tilde):
        return basis_row(self.k_matrix, phi_tilde)

    def rotation(self, rho):
        return rotation_matrix(rho, self.k_matrix)

    def rotation_derivative(self, rho, omega, i):
        return rotation_derivative(rho, omega, self.k_matrix, i)

    def to_dict(self):
        return {
            "ordering_version": ORDERING_VERSION,
            "harmonics": [K.tolist() for K in self.K_list],
            "samples": list(self.S_list),
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("ordering_version") != ORDERING_VERSION:
            raise SchemeError("unsupported scheme ordering version")
        return cls(data["harmonics"], data["samples"])
