"""
Posterior quality measures: nominal and misspecified Bayes risk, posterior
log-determinant, per-component CRPS, plus Monte Carlo estimators of both
risks used to check the closed forms.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
from scipy.stats import norm

from services.forward import synthesize_observation
from services.inference import (
    COMPONENT_NAMES,
    MT_DIM,
    GaussianBelief,
    MomentTensor,
    PrecisionSummary,
    posterior_update,
)
from services.scenario import derive_seed
from utils.errors import InconsistentInputs, ShapeMismatch
from utils.linalg import safe_cholesky, spd_inverse, symmetrize

logger = logging.getLogger(__name__)

POSTERIOR_IDENTITY_ATOL = 1e-8
INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


# ---------------------------------------------------------------------------
# Misspecification
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MisspecPair:
    """
    Model information H = G^T Sigma_eps^-1 G and the cross term
    H_tilde = G^T Sigma_eps^-1 G_tilde, where G_tilde generated the data.
    H_tilde is in general not symmetric.
    """

    H: np.ndarray
    H_tilde: np.ndarray

    def __post_init__(self):
        H = PrecisionSummary(self.H).H
        H_tilde = np.asarray(self.H_tilde, dtype=float)
        if H_tilde.shape != H.shape:
            raise ShapeMismatch(f"H_tilde shape {H_tilde.shape} does not match H shape {H.shape}")
        if not np.all(np.isfinite(H_tilde)):
            raise InconsistentInputs("H_tilde has non-finite entries")
        object.__setattr__(self, 'H', H)
        object.__setattr__(self, 'H_tilde', H_tilde)

    @classmethod
    def from_greens(cls, model_greens, data_greens, noises):
        """Network pair summed over stations (noise block-diagonal across stations)."""
        H = np.zeros((MT_DIM, MT_DIM))
        H_tilde = np.zeros((MT_DIM, MT_DIM))
        for g, g_tilde, noise in zip(model_greens, data_greens, noises, strict=True):
            weighted = noise.apply_precision(g.samples)
            station_H = symmetrize(weighted.T @ g.samples)
            H += station_H
            # identical operators give D = 0 exactly
            H_tilde += station_H if g_tilde is g else weighted.T @ g_tilde.samples
        return cls(H, H_tilde)

    @classmethod
    def total(cls, pairs):
        pairs = list(pairs)
        return cls(np.sum([p.H for p in pairs], axis=0), np.sum([p.H_tilde for p in pairs], axis=0))

    @property
    def mismatch(self):
        return self.H_tilde - self.H


def bayes_risk_nominal(pos):
    """Trace of the posterior covariance."""
    return float(np.trace(pos.cov))


def bayes_risk_misspec(pos_cov, prior, pair):
    """
    Expected squared error of the posterior mean when the data come from
    G_tilde while inference assumes G:

        Tr S + Tr(S D (S_pr + mu mu^T) D^T S) - Tr(S (D + D^T) S),  D = H_tilde - H

    Args:
        pos_cov: posterior covariance S = (H + S_pr^-1)^-1
        prior (GaussianBelief): prior used for inference
        pair (MisspecPair): H and H_tilde of the network

    Returns:
        float
    """
    pos_cov = np.asarray(pos_cov, dtype=float)
    prior_prec = spd_inverse(prior.cov, what="prior covariance")
    residual = np.max(np.abs(pos_cov @ (pair.H + prior_prec) - np.eye(prior.dim)))
    if residual > POSTERIOR_IDENTITY_ATOL:
        raise InconsistentInputs(
            f"Posterior covariance does not match (H + prior precision)^-1 (residual {residual:.3e})"
        )
    D = pair.mismatch
    second_moment = prior.cov + np.outer(prior.mean, prior.mean)
    SD = pos_cov @ D
    spread = np.trace(SD @ second_moment @ SD.T)
    cross = np.trace(pos_cov @ (D + D.T) @ pos_cov)
    return float(np.trace(pos_cov) + spread - cross)


# ---------------------------------------------------------------------------
# CRPS
# ---------------------------------------------------------------------------

def crps_gaussian(marginal_mean, marginal_sd, truth):
    """
    CRPS of a Gaussian forecast against a point truth:
    sd [z (2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi)], z = (truth - mean) / sd.
    Reduces to |truth - mean| for sd = 0. Works elementwise on arrays.
    """
    mean = np.asarray(marginal_mean, dtype=float)
    sd = np.asarray(marginal_sd, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if np.any(sd < 0):
        raise ValueError("marginal_sd must be >= 0")
    error = truth - mean
    safe_sd = np.where(sd > 0, sd, 1.0)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        z = error / safe_sd
        score = safe_sd * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z) - INV_SQRT_PI)
    # sd below the resolution of z: the point-forecast limit
    score = np.where((sd > 0) & np.isfinite(score), score, np.abs(error))
    score = np.maximum(score, 0.0)
    return float(score) if score.ndim == 0 else score


# ---------------------------------------------------------------------------
# Monte Carlo estimators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MonteCarloEstimate:
    value: float
    std_error: float
    n_samples: int


def misspec_risk_monte_carlo(G, G_tilde, noise_cov, prior, n_samples=100_000, seed=0, chunk=20_000):
    """
    Monte Carlo estimate of E_m E_{y|m} ||mu_pos(y) - m||^2 with
    m ~ prior, y = G_tilde m + eps, eps ~ N(0, noise_cov), and mu_pos the
    posterior mean computed under the model G.

    Args:
        G, G_tilde: (N, 6) stacked forward operators
        noise_cov: (N, N) noise covariance
        prior (GaussianBelief)
    """
    G = np.asarray(G, dtype=float)
    G_tilde = np.asarray(G_tilde, dtype=float)
    if G.shape != G_tilde.shape or G.shape[1] != prior.dim:
        raise ShapeMismatch(f"Operator shapes {G.shape} and {G_tilde.shape} are inconsistent")
    rng = np.random.default_rng(seed)
    noise_chol = safe_cholesky(noise_cov, what="noise covariance")
    weighted = la.cho_solve((noise_chol, True), G)            # Sigma_eps^-1 G
    summary = PrecisionSummary(G.T @ weighted)
    pos_cov = posterior_update(prior.with_zero_mean(), summary).cov
    prior_term = la.cho_solve((prior.chol, True), prior.mean)

    losses = []
    remaining = n_samples
    while remaining > 0:
        m_count = min(chunk, remaining)
        m = prior.mean + rng.standard_normal((m_count, prior.dim)) @ prior.chol.T
        eps = rng.standard_normal((m_count, G.shape[0])) @ noise_chol.T
        y = m @ G_tilde.T + eps
        mu_pos = (prior_term + y @ weighted) @ pos_cov
        losses.append(np.sum((mu_pos - m) ** 2, axis=1))
        remaining -= m_count
    losses = np.concatenate(losses)
    return MonteCarloEstimate(float(losses.mean()), float(losses.std(ddof=1) / math.sqrt(losses.size)),
                              int(losses.size))


def nominal_risk_monte_carlo(G, noise_cov, prior, n_samples=100_000, seed=0):
    """Well-specified special case: the data come from the model operator itself."""
    return misspec_risk_monte_carlo(G, G, noise_cov, prior, n_samples, seed)


# ---------------------------------------------------------------------------
# Network scoring
# ---------------------------------------------------------------------------

SCORE_HEADER = ['k', 'trace_risk', 'logdet_pos'] + [f"crps_{c}" for c in COMPONENT_NAMES]


@dataclass(frozen=True, eq=False)
class ScoreReport:
    """Per-prefix quality series of one network evaluated in one scenario."""

    network: str
    scenario: str
    ks: np.ndarray
    trace_risk: np.ndarray
    logdet_pos: np.ndarray
    crps: np.ndarray
    misspec_risk: np.ndarray | None = None
    config_hash: str = ''

    def __post_init__(self):
        n = len(self.ks)
        lengths = {len(self.trace_risk), len(self.logdet_pos), self.crps.shape[0]}
        if self.misspec_risk is not None:
            lengths.add(len(self.misspec_risk))
        if lengths != {n} or self.crps.shape[1:] != (MT_DIM,):
            raise ShapeMismatch(f"ScoreReport series lengths disagree: {sorted(lengths)} vs {n}")
        if np.any(self.trace_risk <= 0):
            raise InconsistentInputs("Trace risk must be positive")

    @property
    def header(self):
        return SCORE_HEADER + (['misspec_risk'] if self.misspec_risk is not None else [])

    def rows(self):
        for i, k in enumerate(self.ks):
            row = [int(k), float(self.trace_risk[i]), float(self.logdet_pos[i])]
            row += [float(v) for v in self.crps[i]]
            if self.misspec_risk is not None:
                row.append(float(self.misspec_risk[i]))
            yield row

    def summary(self):
        last = -1
        out = {
            'network': self.network,
            'scenario': self.scenario,
            'config_hash': self.config_hash,
            'k_max': int(self.ks[last]),
            'final_trace_risk': float(self.trace_risk[last]),
            'final_logdet_pos': float(self.logdet_pos[last]),
            'final_crps': {c: float(v) for c, v in zip(COMPONENT_NAMES, self.crps[last])},
            'mean_final_crps': float(np.mean(self.crps[last])),
        }
        if self.misspec_risk is not None:
            out['final_misspec_risk'] = float(self.misspec_risk[last])
        return out


def score_network(design, binding, truth, seeds, prior, root_seed=0, data_binding=None,
                  derive=None, network=None, config_hash=''):
    """
    Score every prefix k = 0..K of a network in one scenario.

    Args:
        design (DesignRecord): network; its `indices` address the binding
        binding (ScenarioBinding): inference model (Green matrices and noise)
        truth (MomentTensor): MT used to synthesize data
        seeds (iterable[int]): scoring seed labels; CRPS is averaged over them
        prior (GaussianBelief): prior used for inference
        root_seed (int): root of the per-station noise seeds
        data_binding (ScenarioBinding): data-generating scenario; when given,
            data come from its Green matrices and the misspecified risk is added
        derive (callable): seed derivation (root, purpose, *keys) -> int
        network (str): label of the network in the report

    Returns:
        ScoreReport
    """
    derive = derive or derive_seed
    truth = truth if isinstance(truth, MomentTensor) else MomentTensor(truth)
    seeds = list(seeds)
    if not seeds:
        raise ValueError("score_network needs at least one scoring seed")
    indices = list(design.indices)
    K = len(indices)
    source = data_binding if data_binding is not None else binding

    model_greens = [binding.green_for(i) for i in indices]
    data_greens = [source.green_for(i) for i in indices]
    noises = [binding.noise_for(i) for i in indices]
    H_steps = [binding.H[i] for i in indices]

    # data-independent series
    covs = [prior.cov]
    for H in H_steps:
        belief = GaussianBelief(np.zeros(prior.dim), covs[-1])
        covs.append(posterior_update(belief, PrecisionSummary(H)).cov)
    trace_risk = np.array([np.trace(c) for c in covs])
    logdet_pos = np.array([GaussianBelief(np.zeros(prior.dim), c).logdet() for c in covs])

    crps = np.zeros((K + 1, MT_DIM))
    for s in seeds:
        b_steps = []
        for pos, idx in enumerate(indices):
            station_seed = derive(root_seed, 'scoring', s, int(design.station_ids[pos]))
            y = synthesize_observation(data_greens[pos], truth, noises[pos], station_seed)
            b_steps.append(noises[pos].apply_precision(model_greens[pos].samples).T @ y)
        H_cum = np.zeros((prior.dim, prior.dim))
        b_cum = np.zeros(prior.dim)
        for k in range(K + 1):
            if k > 0:
                H_cum = H_cum + H_steps[k - 1]
                b_cum = b_cum + b_steps[k - 1]
                pos_belief = posterior_update(prior, PrecisionSummary(H_cum, b_cum))
            else:
                pos_belief = prior
            crps[k] += crps_gaussian(pos_belief.mean, pos_belief.marginal_sd(), truth.m)
    crps /= len(seeds)

    misspec = None
    if data_binding is not None:
        misspec = _misspec_series(model_greens, data_greens, noises, prior)

    label = network or design.label or design.method
    logger.debug("Scored %s in %s over %d seeds", label, binding.label, len(seeds))
    return ScoreReport(label, binding.label if data_binding is None else f"{binding.label}->{source.label}",
                       np.arange(K + 1), trace_risk, logdet_pos, crps, misspec, config_hash)


def _misspec_series(model_greens, data_greens, noises, prior):
    pairs = [MisspecPair.from_greens([g], [gt], [n]) for g, gt, n in zip(model_greens, data_greens, noises)]
    series = np.empty(len(pairs) + 1)
    series[0] = bayes_risk_nominal(prior)
    pair = None
    for k, station_pair in enumerate(pairs, start=1):
        pair = station_pair if pair is None else MisspecPair.total([pair, station_pair])
        pos_cov = posterior_update(prior, PrecisionSummary(pair.H)).cov
        series[k] = bayes_risk_misspec(pos_cov, prior, pair)
    return series


def misspec_risk_series(design, binding, data_binding, prior):
    """
    Misspecified Bayes risk of every prefix k = 0..K of a network when
    inference uses `binding` and the data come from `data_binding`.
    """
    indices = list(design.indices)
    return _misspec_series([binding.green_for(i) for i in indices],
                           [data_binding.green_for(i) for i in indices],
                           [binding.noise_for(i) for i in indices],
                           prior)
