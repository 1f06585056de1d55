"""
Linear Algebra Kernels - Products, symmetric eigensolvers, whitening, correlation
"""
import logging
from typing import Tuple

import numpy as np
import scipy.linalg

from .errors import DegenerateInputError, NumericError, ShapeError

logger = logging.getLogger(__name__)

JACOBI_MAX_SWEEPS = 100
JACOBI_TOL = 1e-12
# Above this size the LAPACK solver takes over from Jacobi in "auto" mode
JACOBI_MAX_DIM = 64
SYMMETRY_TOL = 1e-9
DEFAULT_RIDGE = 1e-4


def _as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    a = _as_matrix(a, "left operand")
    b = _as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _off_diagonal_norm(a: np.ndarray) -> float:
    # direct, not ||A||^2 - ||diag A||^2, which cancels down to sqrt(eps)*||A||
    return float(np.linalg.norm(a - np.diag(np.diag(a))))


def _jacobi_eig(a: np.ndarray, max_sweeps: int = JACOBI_MAX_SWEEPS) -> Tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi rotations; returns unsorted (eigenvalues, eigenvectors)."""
    a = a.copy()
    k = a.shape[0]
    v = np.eye(k)
    threshold = JACOBI_TOL * np.linalg.norm(a)
    if threshold == 0.0:
        return np.diag(a).copy(), v

    for sweep in range(max_sweeps):
        if _off_diagonal_norm(a) <= threshold:
            return np.diag(a).copy(), v
        for p in range(k - 1):
            for q in range(p + 1, k):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c

                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0

                vec_p = v[:, p].copy()
                vec_q = v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q

    off = _off_diagonal_norm(a)
    if off > threshold:
        raise NumericError(
            f"Jacobi eigensolver did not converge in {max_sweeps} sweeps "
            f"(off-diagonal norm {off:.3e} > {threshold:.3e})"
        )
    return np.diag(a).copy(), v


def sym_eig(a, method: str = "auto") -> Tuple[np.ndarray, np.ndarray]:
    """
    Eigendecomposition of a symmetric matrix.

    Returns (eigenvalues in descending order, orthonormal eigenvectors as columns).
    The input is symmetrized before solving. ``method`` is "jacobi", "lapack"
    or "auto" (Jacobi up to JACOBI_MAX_DIM, LAPACK above).
    """
    a = _as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"eigendecomposition needs a square matrix, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError("matrix contains NaN or Inf")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if a.size and float(np.max(np.abs(a - a.T))) > SYMMETRY_TOL * scale:
        raise ShapeError("matrix is not symmetric")
    a = 0.5 * (a + a.T)

    if method == "auto":
        method = "jacobi" if a.shape[0] <= JACOBI_MAX_DIM else "lapack"
    if method == "jacobi":
        values, vectors = _jacobi_eig(a)
    elif method == "lapack":
        values, vectors = scipy.linalg.eigh(a, driver="evd")
    else:
        raise ValueError(f"unknown eigensolver {method!r}")

    order = np.argsort(values)[::-1]
    return values[order], vectors[:, order]


def inv_sqrt_sym(a, ridge: float = DEFAULT_RIDGE, method: str = "auto") -> np.ndarray:
    """(a + ridge*I)^(-1/2) for a symmetric positive semi-definite ``a``."""
    if ridge < 0:
        raise ValueError(f"ridge must be nonnegative, got {ridge}")
    values, vectors = sym_eig(a, method=method)
    shifted = values + ridge
    smallest = float(shifted.min()) if shifted.size else 1.0
    if smallest <= 0.0:
        raise NumericError(f"cannot whiten: smallest eigenvalue after ridge is {smallest:.6e}")
    b = (vectors * (1.0 / np.sqrt(shifted))) @ vectors.T
    return 0.5 * (b + b.T)


def pearson(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ShapeError(f"vectors differ in length: {u.size} vs {v.size}")
    if u.size < 2:
        raise DegenerateInputError("correlation needs at least two samples")
    if np.ptp(u) == 0.0 or np.ptp(v) == 0.0:
        raise DegenerateInputError("correlation undefined for a zero-variance vector")
    du = u - u.mean()
    dv = v - v.mean()
    r = float(np.dot(du, dv) / np.sqrt(np.dot(du, du) * np.dot(dv, dv)))
    return min(1.0, max(-1.0, r))
