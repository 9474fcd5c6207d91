"""
Conjugate-Gaussian inference for the moment tensor.

Station information is carried as 6x6 precision summaries (H = G^T Sigma_eps^-1 G,
b = G^T Sigma_eps^-1 y). A network's summary is the sum of its stations'
summaries because the noise is block-diagonal across stations. Every EIG or
posterior evaluation then costs O(6^3) once those summaries exist.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from utils.errors import (
    EmptyCandidates,
    InconsistentInputs,
    NonSPDPrior,
    NumericalBreakdown,
    ShapeMismatch,
)
from utils.linalg import (
    ASYMMETRY_RTOL,
    asymmetry,
    batched_cholesky,
    logdet_from_cholesky,
    safe_cholesky,
    symmetrize,
)

logger = logging.getLogger(__name__)

MT_DIM = 6
COMPONENT_NAMES = ('m1', 'm2', 'm3', 'm4', 'm5', 'm6')

# (row, col) of each vectorized component in the 3x3 tensor
_VOIGT_INDEX = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


def _readonly(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MomentTensor:
    """
    Independent components of a symmetric moment tensor, ordered
    m1=M11, m2=M22, m3=M33, m4=M12, m5=M13, m6=M23.
    """

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float).reshape(-1)
        if m.shape != (MT_DIM,):
            raise ShapeMismatch(f"Moment tensor needs {MT_DIM} components, got {m.size}")
        if not np.all(np.isfinite(m)):
            raise ValueError("Moment tensor components must be finite")
        object.__setattr__(self, 'm', _readonly(m))

    @classmethod
    def from_matrix(cls, tensor):
        tensor = np.asarray(tensor, dtype=float)
        return cls(np.array([tensor[i, j] for i, j in _VOIGT_INDEX]))

    def to_matrix(self):
        tensor = np.zeros((3, 3))
        for q, (i, j) in enumerate(_VOIGT_INDEX):
            tensor[i, j] = tensor[j, i] = self.m[q]
        return tensor

    @staticmethod
    def basis_tensor(q):
        """Symmetric 3x3 tensor whose vectorized form is the unit vector e_q."""
        i, j = _VOIGT_INDEX[q]
        tensor = np.zeros((3, 3))
        tensor[i, j] = tensor[j, i] = 1.0
        return tensor


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """Gaussian over the moment tensor: a prior or a posterior."""

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        d = mean.size
        if cov.shape != (d, d):
            raise ShapeMismatch(f"Covariance shape {cov.shape} does not match mean length {d}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise NonSPDPrior("Belief has non-finite entries")
        if asymmetry(cov) > ASYMMETRY_RTOL:
            raise NonSPDPrior(f"Covariance is not symmetric (relative asymmetry {asymmetry(cov):.3e})")
        cov = symmetrize(cov)
        chol = safe_cholesky(cov, error_cls=NonSPDPrior, what="belief covariance")
        object.__setattr__(self, 'mean', _readonly(mean))
        object.__setattr__(self, 'cov', _readonly(cov))
        object.__setattr__(self, 'chol', _readonly(chol))

    @classmethod
    def isotropic(cls, sigma_p, dim=MT_DIM):
        """Centered prior N(0, sigma_p^2 I)."""
        if not sigma_p > 0:
            raise NonSPDPrior(f"sigma_p must be positive, got {sigma_p}")
        return cls(np.zeros(dim), sigma_p ** 2 * np.eye(dim))

    @property
    def dim(self):
        return self.mean.size

    def logdet(self):
        return float(logdet_from_cholesky(self.chol))

    def marginal_sd(self):
        return np.sqrt(np.diag(self.cov))

    def with_zero_mean(self):
        return GaussianBelief(np.zeros(self.dim), self.cov)


@dataclass(frozen=True, eq=False)
class PrecisionSummary:
    """
    Information carried by one station (or a network):
    H = G^T Sigma_eps^-1 G and optionally b = G^T Sigma_eps^-1 y.
    """

    H: np.ndarray
    b: np.ndarray | None = None

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ShapeMismatch(f"H must be square, got shape {H.shape}")
        if not np.all(np.isfinite(H)):
            raise InconsistentInputs("H has non-finite entries")
        if asymmetry(H) > ASYMMETRY_RTOL:
            raise InconsistentInputs(f"H is not symmetric (relative asymmetry {asymmetry(H):.3e})")
        H = symmetrize(H)
        lowest = float(np.linalg.eigvalsh(H)[0]) if H.size else 0.0
        if lowest < -ASYMMETRY_RTOL * max(1.0, float(np.max(np.abs(H)))):
            raise InconsistentInputs(f"H is not positive semidefinite (min eigenvalue {lowest:.3e})")
        object.__setattr__(self, 'H', _readonly(H))
        if self.b is not None:
            b = np.asarray(self.b, dtype=float).reshape(-1)
            if b.shape != (H.shape[0],):
                raise ShapeMismatch(f"b must have length {H.shape[0]}, got {b.size}")
            object.__setattr__(self, 'b', _readonly(b))

    @classmethod
    def zeros(cls, dim=MT_DIM):
        return cls(np.zeros((dim, dim)), np.zeros(dim))

    @classmethod
    def total(cls, summaries):
        """Sum of per-station summaries; b is kept only if every station has one."""
        summaries = list(summaries)
        if not summaries:
            raise EmptyCandidates("Cannot sum an empty list of precision summaries")
        H = np.sum([s.H for s in summaries], axis=0)
        if all(s.b is not None for s in summaries):
            b = np.sum([s.b for s in summaries], axis=0)
        else:
            b = None
        return cls(H, b)

    def __add__(self, other):
        return PrecisionSummary.total([self, other])


def _as_matrix(H):
    return H.H if isinstance(H, PrecisionSummary) else np.asarray(H, dtype=float)


def _as_cov(prior_cov):
    return prior_cov.cov if isinstance(prior_cov, GaussianBelief) else np.asarray(prior_cov, dtype=float)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def posterior_update(prior, summary):
    """
    Conjugate update of a Gaussian belief with one precision summary.

    The posterior covariance is formed as L (I + L^T H L)^-1 L^T with
    L the prior Cholesky factor, which avoids inverting the prior directly.

    Args:
        prior (GaussianBelief): prior belief
        summary (PrecisionSummary): data information; a missing b counts as zero

    Returns:
        GaussianBelief: posterior with cov = (H + Sigma_pr^-1)^-1 and
            mean = cov (Sigma_pr^-1 mu_pr + b)
    """
    H = summary.H
    b = summary.b if summary.b is not None else np.zeros(prior.dim)
    if H.shape != (prior.dim, prior.dim):
        raise ShapeMismatch(f"H shape {H.shape} does not match belief dimension {prior.dim}")
    if not np.any(H) and not np.any(b):
        return prior

    L = prior.chol
    inner = np.eye(prior.dim) + symmetrize(L.T @ H @ L)
    C = safe_cholesky(inner, error_cls=NumericalBreakdown, what="I + L^T H L")
    M = la.solve_triangular(C, L.T, lower=True)
    cov = symmetrize(M.T @ M)
    rhs = la.cho_solve((L, True), prior.mean) + b
    mean = cov @ rhs
    safe_cholesky(cov, error_cls=NumericalBreakdown, what="posterior covariance")
    return GaussianBelief(mean, cov)


def posterior_from_network(prior, summaries):
    return posterior_update(prior, PrecisionSummary.total(summaries))


def eig_batch(H_stack, prior_cov, prior_chol=None):
    """
    Closed-form EIG 1/2 logdet(H Sigma_pr + I) for a stack of summaries.

    Uses the symmetric form I + L^T H L (L the Cholesky factor of Sigma_pr),
    which has the same determinant.

    Args:
        H_stack: array (n, d, d) of precision matrices
        prior_cov: (d, d) prior covariance, or a GaussianBelief
        prior_chol: optional precomputed lower Cholesky factor of prior_cov

    Returns:
        np.ndarray: n EIG values, all >= 0
    """
    H_stack = np.asarray(H_stack, dtype=float)
    if H_stack.ndim == 2:
        H_stack = H_stack[None]
    if prior_chol is None:
        if isinstance(prior_cov, GaussianBelief):
            prior_chol = prior_cov.chol
        else:
            prior_chol = safe_cholesky(_as_cov(prior_cov), error_cls=NumericalBreakdown,
                                       what="prior covariance")
    d = prior_chol.shape[0]
    if H_stack.shape[1:] != (d, d):
        raise ShapeMismatch(f"H stack shape {H_stack.shape} does not match prior dimension {d}")
    inner = prior_chol.T @ H_stack @ prior_chol
    inner = symmetrize(inner) + np.eye(d)
    chol = batched_cholesky(inner, error_cls=NumericalBreakdown, what="I + L^T H L")
    return np.maximum(0.5 * logdet_from_cholesky(chol), 0.0)


def eig(H, prior_cov):
    """Expected information gain of one precision summary under a prior covariance."""
    return float(eig_batch(_as_matrix(H)[None], prior_cov)[0])


def eig_network(stations, prior_cov):
    """
    EIG of a station network: the per-station H matrices add up because the
    noise is block-diagonal across stations.
    """
    stations = list(stations)
    if not stations:
        raise EmptyCandidates("eig_network needs at least one station")
    H = np.sum([_as_matrix(s) for s in stations], axis=0)
    return eig(H, prior_cov)


def kl_gaussian(p, q):
    """
    KL(p || q) between two Gaussian beliefs.

    Returns:
        float: 1/2 [tr(Sq^-1 Sp) + (mq-mp)^T Sq^-1 (mq-mp) - d + logdet Sq - logdet Sp]
    """
    if p.dim != q.dim:
        raise ShapeMismatch(f"Dimension mismatch: {p.dim} vs {q.dim}")
    Lq = q.chol
    W = la.solve_triangular(Lq, p.chol, lower=True)
    z = la.solve_triangular(Lq, q.mean - p.mean, lower=True)
    kl = 0.5 * (np.sum(W ** 2) + z @ z - p.dim + q.logdet() - p.logdet())
    return max(float(kl), 0.0)
