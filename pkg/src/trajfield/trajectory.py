"""Cosine-basis point trajectories and spacetime correspondence.

A trajectory over a T-frame sequence is a per-axis combination of the
orthonormal DCT-II cosine bases with the constant (k = 0) basis removed,
so only relative displacement between two times is meaningful:

    x(t) = sqrt(2/T) * sum_{k=1..K} phi_{x,k} * cos(pi * (2t + 1) * k / (2T))

Coefficients are stored axis-major: [phi_x1..phi_xK, phi_y1..phi_yK,
phi_z1..phi_zK], matching the flat 3K-vector the field network emits.
"""

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc


def dct_basis(T, K, t):
    """Basis values b_k(t) = sqrt(2/T) cos(pi (2t+1) k / (2T)), k = 1..K.

    t may be a scalar or an array (real-valued; the cosine extends the
    integer-grid basis smoothly, which is what permits interpolating or
    extrapolating a trajectory between and beyond the observed frames).
    Returns shape t.shape + (K,).
    """
    t = np.asarray(t, dtype=np.float64)
    k = np.arange(1, K + 1, dtype=np.float64)
    return np.sqrt(2.0 / T) * np.cos(np.pi * (2.0 * t[..., None] + 1.0) * k / (2.0 * T))


def basis_matrix(T, K):
    """The K x T matrix of basis rows evaluated on the integer frame grid."""
    return dct_basis(T, K, np.arange(T, dtype=np.float64)).T


@dataclass
class TrajectoryCoeffs:
    """3 x K cosine coefficients describing one point's motion over T frames."""
    coeffs: np.ndarray  # (3, K)
    T: int

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.shape[0] != 3 or self.coeffs.ndim != 2:
            raise ValueError(f"coeffs must be (3, K), got {self.coeffs.shape}")
        if not 1 <= self.K <= self.T - 1:
            raise ValueError(f"need 1 <= K <= T-1, got K={self.K}, T={self.T}")

    @property
    def K(self):
        return self.coeffs.shape[1]

    @property
    def flat(self):
        """Axis-major 3K vector."""
        return self.coeffs.reshape(-1)


def default_num_coeffs(T):
    """K = T-1 for short sequences, 16 for longer ones."""
    return T - 1 if T <= 32 else 16


def idct_eval(c: TrajectoryCoeffs, t):
    """Trajectory position at real time t (scalar or array) -> (..., 3)."""
    b = dct_basis(c.T, c.K, t)                 # (..., K)
    return b @ c.coeffs.T                      # (..., 3)


def displacement(c: TrajectoryCoeffs, t0, t1):
    """T(t1) - T(t0); antisymmetric in its time arguments."""
    return idct_eval(c, t1) - idct_eval(c, t0)


def correspond(p, c: TrajectoryCoeffs, t0, t1):
    """Move point p from time t0 to its corresponding position at t1."""
    return np.asarray(p, dtype=np.float64) + displacement(c, t0, t1)


def displacement_matrix(T, K, t0, t1):
    """Constant (3K, 3) matrix M with phi_flat @ M = T(t1) - T(t0).

    Lets a batch of flat coefficient vectors (B, 3K) be corresponded with a
    single matmul, keeping the displacement differentiable w.r.t. phi.
    """
    db = dct_basis(T, K, float(t1)) - dct_basis(T, K, float(t0))   # (K,)
    m = np.zeros((3 * K, 3))
    for axis in range(3):
        m[axis * K:(axis + 1) * K, axis] = db
    return m


def displacement_batch(phi, T, t0, t1):
    """Displacement for a batch of flat coefficients.

    phi: Tensor or array (B, 3K); returns the same kind, shape (B, 3).
    """
    K = (phi.shape[1] if isinstance(phi, dc.Tensor) else np.asarray(phi).shape[1]) // 3
    m = displacement_matrix(T, K, t0, t1)
    if isinstance(phi, dc.Tensor):
        return dc.matmul(phi, dc.Tensor(m))
    return np.asarray(phi) @ m


def fit_dct(samples, K):
    """Least-squares coefficients for T integer-grid samples, plus offset.

    samples: (T, 3) points at t = 0..T-1. The fit minimizes
    sum_t |idct_eval(c, t) + offset - samples_t|^2 jointly over the 3K
    coefficients and a per-axis constant offset (the discarded k = 0
    term). The offset is a nuisance parameter and is not returned; tests
    recover it as the residual mean if needed.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != 3:
        raise ValueError(f"samples must be (T, 3), got {samples.shape}")
    T = samples.shape[0]
    if not 1 <= K <= T - 1:
        raise ValueError(f"need 1 <= K <= T-1, got K={K}, T={T}")
    design = np.concatenate(
        [np.ones((T, 1)), basis_matrix(T, K).T], axis=1)       # (T, 1+K)
    # Distinct cosine rows on the integer grid are orthogonal, so the
    # system is always well conditioned; guard anyway.
    if np.linalg.matrix_rank(design) < K + 1:
        raise ValueError("degenerate normal equations in trajectory fit")
    sol, *_ = np.linalg.lstsq(design, samples, rcond=None)     # (1+K, 3)
    return TrajectoryCoeffs(coeffs=sol[1:].T, T=T)
