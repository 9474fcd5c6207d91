"""
Tests for posterior quality measures.
"""

import math
import warnings

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from services.design import greedy_select
from services.evaluation import (
    SCORE_HEADER,
    MisspecPair,
    bayes_risk_misspec,
    bayes_risk_nominal,
    crps_gaussian,
    misspec_risk_monte_carlo,
    misspec_risk_series,
    nominal_risk_monte_carlo,
    score_network,
)
from services.forward import GreenMatrix, NoiseModel, TimeGrid
from services.inference import GaussianBelief, MomentTensor, PrecisionSummary, posterior_update
from utils.errors import InconsistentInputs, ShapeMismatch

PRIOR = GaussianBelief.isotropic(0.5)
TRUTH = MomentTensor([0.269, 0.700, -0.969, -0.454, -0.195, 0.0592])


def crps_by_quadrature(mean, sd, truth):
    """Integral of (F(x) - 1{x >= truth})^2, split where the integrand has kinks or a jump."""
    integrand = lambda x: (norm.cdf(x, mean, sd) - (x >= truth)) ** 2
    edges = sorted({min(mean, truth) - 20 * sd, mean, truth, max(mean, truth) + 20 * sd})
    return sum(quad(integrand, lo, hi, limit=200)[0] for lo, hi in zip(edges, edges[1:]))


_triples = np.random.default_rng(2718)
RANDOM_TRIPLES = [(float(m), float(s), float(t)) for m, s, t in zip(
    _triples.uniform(-3, 3, 100), _triples.uniform(0.05, 3.0, 100), _triples.uniform(-3, 3, 100))]


# ---------------------------------------------------------------------------
# Bayes risk
# ---------------------------------------------------------------------------

class TestNominalRisk:

    def test_trace(self):
        belief = GaussianBelief(np.zeros(6), np.diag(np.arange(1, 7) * 1e-3))
        assert bayes_risk_nominal(belief) == pytest.approx(0.021, abs=1e-15)

    def test_monte_carlo_agreement(self, rng):
        G = rng.standard_normal((12, 6))
        noise_cov = NoiseModel(0.5, 0.05, TimeGrid(4, 0.01)).dense_covariance()
        estimate = nominal_risk_monte_carlo(G, noise_cov, PRIOR, n_samples=100_000, seed=5)
        H = G.T @ np.linalg.solve(noise_cov, G)
        post = posterior_update(PRIOR, PrecisionSummary(H))
        assert abs(estimate.value - bayes_risk_nominal(post)) < 4 * estimate.std_error


class TestMisspecRisk:

    def _setup(self, rng, perturbation=0.3):
        grid = TimeGrid(4, 0.01)
        noise = NoiseModel(0.5, 0.05, grid)
        G = rng.standard_normal((12, 6))
        G_tilde = G + perturbation * rng.standard_normal((12, 6))
        pair = MisspecPair.from_greens([GreenMatrix(0, G)], [GreenMatrix(0, G_tilde)], [noise])
        return G, G_tilde, noise, pair

    def test_identical_operators_reduce_to_trace(self, rng, make_psd):
        H = make_psd(rng)
        pos_cov = posterior_update(PRIOR, PrecisionSummary(H)).cov
        assert bayes_risk_misspec(pos_cov, PRIOR, MisspecPair(H, H)) == pytest.approx(np.trace(pos_cov), rel=1e-12)

    def test_same_green_object_gives_zero_mismatch(self, rng):
        noise = NoiseModel(0.5, 0.05, TimeGrid(4, 0.01))
        g = GreenMatrix(0, rng.standard_normal((12, 6)))
        pair = MisspecPair.from_greens([g], [g], [noise])
        assert np.array_equal(pair.mismatch, np.zeros((6, 6)))

    def test_mismatched_operator_matches_monte_carlo(self, rng):
        G, G_tilde, noise, pair = self._setup(rng)
        prior = GaussianBelief(np.array([0.3, -0.2, 0.1, 0.0, 0.2, -0.1]), 0.25 * np.eye(6))
        pos_cov = posterior_update(prior, PrecisionSummary(pair.H)).cov
        closed = bayes_risk_misspec(pos_cov, prior, pair)
        estimate = misspec_risk_monte_carlo(G, G_tilde, noise.dense_covariance(), prior,
                                            n_samples=200_000, seed=11)
        assert abs(estimate.value - closed) < 4 * estimate.std_error

    @pytest.mark.parametrize('case', range(20))
    def test_random_pairs_match_monte_carlo(self, case):
        gen = np.random.default_rng(100 + case)
        noise = NoiseModel(0.5, 0.05, TimeGrid(20, 0.01))
        G = gen.standard_normal((60, 6))
        G_tilde = G + 0.3 * gen.standard_normal((60, 6))
        prior = GaussianBelief(gen.uniform(-0.3, 0.3, 6), 0.25 * np.eye(6))
        pair = MisspecPair.from_greens([GreenMatrix(0, G)], [GreenMatrix(0, G_tilde)], [noise])
        pos_cov = posterior_update(prior, PrecisionSummary(pair.H)).cov
        estimate = misspec_risk_monte_carlo(G, G_tilde, noise.dense_covariance(), prior,
                                            n_samples=100_000, seed=case)
        assert estimate.value == pytest.approx(bayes_risk_misspec(pos_cov, prior, pair), rel=0.02)

    def test_wrong_posterior_rejected(self, rng):
        _, _, _, pair = self._setup(rng)
        with pytest.raises(InconsistentInputs):
            bayes_risk_misspec(PRIOR.cov, PRIOR, pair)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            MisspecPair(np.eye(6), np.eye(5))

    def test_pairs_add(self, rng):
        _, _, _, a = self._setup(rng)
        _, _, _, b = self._setup(rng)
        total = MisspecPair.total([a, b])
        assert np.allclose(total.H, a.H + b.H)
        assert np.allclose(total.H_tilde, a.H_tilde + b.H_tilde)


# ---------------------------------------------------------------------------
# CRPS
# ---------------------------------------------------------------------------

class TestCrps:

    def test_standard_normal_at_its_mean(self):
        assert crps_gaussian(0.0, 1.0, 0.0) == pytest.approx((2 - math.sqrt(2)) / math.sqrt(2 * math.pi), abs=1e-12)
        assert crps_gaussian(0.0, 1.0, 0.0) == pytest.approx(0.23369, abs=1e-5)

    @pytest.mark.parametrize('mean,sd,truth', [(0.0, 1.0, 1.0), (0.3, 0.2, -0.4), (-1.0, 2.5, 3.0)])
    def test_matches_quadrature(self, mean, sd, truth):
        assert crps_gaussian(mean, sd, truth) == pytest.approx(crps_by_quadrature(mean, sd, truth), rel=1e-7)

    @pytest.mark.parametrize('mean,sd,truth', RANDOM_TRIPLES)
    def test_random_triples_match_quadrature(self, mean, sd, truth):
        assert abs(crps_gaussian(mean, sd, truth) - crps_by_quadrature(mean, sd, truth)) <= 1e-6

    @pytest.mark.parametrize('mean,truth', [(0.3, 0.5), (-1.0, 2.0), (0.7, 0.7)])
    def test_vanishing_sd_limit(self, mean, truth):
        assert abs(crps_gaussian(mean, 1e-8, truth) - crps_gaussian(mean, 1e-10, truth)) <= 1e-7
        assert crps_gaussian(mean, 1e-10, truth) == pytest.approx(abs(truth - mean), abs=1e-9)

    def test_subnormal_sd_is_the_point_forecast(self):
        with warnings.catch_warnings():
            warnings.simplefilter('error')
            assert crps_gaussian(0.3, 1e-320, 0.5) == pytest.approx(0.2)
            scores = crps_gaussian(np.array([0.3, 0.0]), np.array([1e-320, 1.0]), np.array([0.5, 0.0]))
        assert scores[0] == pytest.approx(0.2)
        assert scores[1] == pytest.approx(0.23369, abs=1e-5)


    def test_point_forecast_is_absolute_error(self):
        assert crps_gaussian(0.5, 0.0, -0.25) == pytest.approx(0.75)

    def test_vectorized(self):
        scores = crps_gaussian(np.zeros(6), np.ones(6), np.arange(6.0))
        assert scores.shape == (6,)
        assert np.all(np.diff(scores) > 0)

    def test_negative_sd_rejected(self):
        with pytest.raises(ValueError):
            crps_gaussian(0.0, -1.0, 0.0)


# ---------------------------------------------------------------------------
# Network scoring
# ---------------------------------------------------------------------------

class TestScoreNetwork:

    def test_prefix_zero_is_the_prior(self, make_candidates):
        cands = make_candidates(0)
        design = greedy_select(cands, 3, PRIOR)
        report = score_network(design, cands.binding, TRUTH, [0], PRIOR)
        assert list(report.ks) == [0, 1, 2, 3]
        assert report.trace_risk[0] == pytest.approx(1.5)
        assert report.logdet_pos[0] == pytest.approx(PRIOR.logdet())
        assert np.allclose(report.crps[0], crps_gaussian(np.zeros(6), np.full(6, 0.5), TRUTH.m))

    def test_risk_decreases_with_stations(self, make_candidates):
        cands = make_candidates(1)
        report = score_network(greedy_select(cands, 6, PRIOR), cands.binding, TRUTH, [0, 1], PRIOR)
        assert np.all(np.diff(report.trace_risk) < 0)
        assert np.all(np.diff(report.logdet_pos) < 0)

    def test_logdet_drop_is_twice_the_eig(self, make_candidates):
        cands = make_candidates(2)
        design = greedy_select(cands, 4, PRIOR)
        report = score_network(design, cands.binding, TRUTH, [0], PRIOR)
        drop = report.logdet_pos[0] - report.logdet_pos[1:]
        assert np.allclose(drop, 2 * design.cum_eig, rtol=1e-9)

    def test_deterministic_for_fixed_seeds(self, make_candidates):
        cands = make_candidates(3)
        design = greedy_select(cands, 3, PRIOR)
        a = score_network(design, cands.binding, TRUTH, [0, 1, 2], PRIOR, root_seed=4)
        b = score_network(design, cands.binding, TRUTH, [0, 1, 2], PRIOR, root_seed=4)
        c = score_network(design, cands.binding, TRUTH, [0, 1, 2], PRIOR, root_seed=5)
        assert np.array_equal(a.crps, b.crps)
        assert not np.array_equal(a.crps, c.crps)

    def test_self_misspecification_equals_trace(self, make_candidates):
        cands = make_candidates(4)
        design = greedy_select(cands, 4, PRIOR)
        report = score_network(design, cands.binding, TRUTH, [0], PRIOR, data_binding=cands.binding)
        assert np.allclose(report.misspec_risk, report.trace_risk, rtol=1e-9)
        assert report.header == SCORE_HEADER + ['misspec_risk']
        assert report.scenario == 'synthetic->synthetic'

    def test_misspec_series_against_other_scenario(self, make_candidates, make_binding):
        cands = make_candidates(5)
        other = make_binding(6, label='other')
        design = greedy_select(cands, 3, PRIOR)
        series = misspec_risk_series(design, cands.binding, other, PRIOR)
        assert series.shape == (4,)
        assert series[0] == pytest.approx(1.5)
        assert np.all(series > 0)

    def test_rows_and_summary(self, make_candidates):
        cands = make_candidates(7)
        report = score_network(greedy_select(cands, 2, PRIOR), cands.binding, TRUTH, [0], PRIOR,
                               network='greedy', config_hash='abc')
        rows = list(report.rows())
        assert len(rows) == 3
        assert len(rows[0]) == len(SCORE_HEADER)
        summary = report.summary()
        assert summary['network'] == 'greedy'
        assert summary['k_max'] == 2
        assert summary['config_hash'] == 'abc'

    def test_needs_a_seed(self, make_candidates):
        cands = make_candidates(0)
        with pytest.raises(ValueError):
            score_network(greedy_select(cands, 1, PRIOR), cands.binding, TRUTH, [], PRIOR)
