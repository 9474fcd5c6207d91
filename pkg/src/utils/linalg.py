"""
Small dense linear-algebra helpers.

All log-determinants go through a Cholesky factor of the symmetrized matrix;
nothing here uses LU determinants.
"""

import numpy as np
import scipy.linalg as la

from utils.errors import NumericalBreakdown

ASYMMETRY_RTOL = 1e-10


def symmetrize(a):
    """Return (A + A^T) / 2 for a single matrix or a stack of matrices."""
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def asymmetry(a):
    """Relative asymmetry max|A - A^T| / max(1, max|A|)."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 0.0
    scale = max(1.0, float(np.max(np.abs(a))))
    return float(np.max(np.abs(a - np.swapaxes(a, -1, -2)))) / scale


def safe_cholesky(a, error_cls=NumericalBreakdown, what="matrix"):
    """
    Lower Cholesky factor of the symmetrized matrix.

    Args:
        a: square matrix, expected SPD
        error_cls: exception raised when the factorization fails
        what: name used in the error message

    Returns:
        np.ndarray: lower-triangular L with A = L L^T
    """
    a = symmetrize(a)
    if not np.all(np.isfinite(a)):
        raise error_cls(f"{what} has non-finite entries")
    try:
        return la.cholesky(a, lower=True)
    except la.LinAlgError as e:
        raise error_cls(f"Cholesky of {what} failed: {e}") from e


def batched_cholesky(stack, error_cls=NumericalBreakdown, what="matrix stack"):
    """Lower Cholesky factors of a (n, d, d) stack of symmetrized matrices."""
    stack = symmetrize(stack)
    try:
        return np.linalg.cholesky(stack)
    except np.linalg.LinAlgError as e:
        raise error_cls(f"Cholesky of {what} failed: {e}") from e


def logdet_from_cholesky(chol):
    """log det(A) from its Cholesky factor; works on stacks too."""
    diag = np.diagonal(chol, axis1=-2, axis2=-1)
    return 2.0 * np.sum(np.log(diag), axis=-1)


def spd_inverse(a, error_cls=NumericalBreakdown, what="matrix"):
    """Inverse of an SPD matrix via its Cholesky factor, symmetrized."""
    chol = safe_cholesky(a, error_cls=error_cls, what=what)
    inv = la.cho_solve((chol, True), np.eye(chol.shape[0]))
    return symmetrize(inv)

