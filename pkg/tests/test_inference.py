"""
Tests for the conjugate-Gaussian inference core.
"""

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from services.inference import (
    GaussianBelief,
    MomentTensor,
    PrecisionSummary,
    eig,
    eig_batch,
    eig_network,
    kl_gaussian,
    posterior_from_network,
    posterior_update,
)
from utils.errors import EmptyCandidates, InconsistentInputs, NonSPDPrior, ShapeMismatch


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

class TestMomentTensor:

    def test_matrix_round_trip(self):
        mt = MomentTensor([1, 2, 3, 4, 5, 6])
        tensor = mt.to_matrix()
        assert np.allclose(tensor, tensor.T)
        assert tensor[0, 1] == 4 and tensor[0, 2] == 5 and tensor[1, 2] == 6
        assert np.array_equal(MomentTensor.from_matrix(tensor).m, mt.m)

    def test_wrong_length_rejected(self):
        with pytest.raises(ShapeMismatch):
            MomentTensor([1, 2, 3])

    @pytest.mark.parametrize('q', range(6))
    def test_basis_tensors_are_symmetric_unit_vectors(self, q):
        tensor = MomentTensor.basis_tensor(q)
        assert np.array_equal(tensor, tensor.T)
        expected = np.zeros(6)
        expected[q] = 1.0
        assert np.array_equal(MomentTensor.from_matrix(tensor).m, expected)


class TestGaussianBelief:

    def test_isotropic(self):
        prior = GaussianBelief.isotropic(0.5)
        assert np.array_equal(prior.cov, 0.25 * np.eye(6))
        assert np.allclose(prior.marginal_sd(), 0.5)

    def test_nonpositive_sigma_rejected(self):
        with pytest.raises(NonSPDPrior):
            GaussianBelief.isotropic(-1.0)

    def test_asymmetric_covariance_rejected(self):
        cov = np.eye(6)
        cov[0, 1] = 0.1
        with pytest.raises(NonSPDPrior):
            GaussianBelief(np.zeros(6), cov)

    def test_indefinite_covariance_rejected(self):
        cov = np.eye(6)
        cov[3, 3] = -1.0
        with pytest.raises(NonSPDPrior):
            GaussianBelief(np.zeros(6), cov)

    def test_arrays_are_read_only(self):
        prior = GaussianBelief.isotropic(1.0)
        with pytest.raises(ValueError):
            prior.cov[0, 0] = 2.0


class TestPrecisionSummary:

    def test_total_adds_H_and_b(self, rng, make_psd):
        a = PrecisionSummary(make_psd(rng), rng.standard_normal(6))
        b = PrecisionSummary(make_psd(rng), rng.standard_normal(6))
        total = a + b
        assert np.allclose(total.H, a.H + b.H)
        assert np.allclose(total.b, a.b + b.b)

    def test_missing_b_propagates(self, rng, make_psd):
        total = PrecisionSummary(make_psd(rng)) + PrecisionSummary(make_psd(rng), np.ones(6))
        assert total.b is None

    def test_negative_definite_rejected(self):
        with pytest.raises(InconsistentInputs):
            PrecisionSummary(-np.eye(6))

    def test_empty_total_rejected(self):
        with pytest.raises(EmptyCandidates):
            PrecisionSummary.total([])


# ---------------------------------------------------------------------------
# Posterior update
# ---------------------------------------------------------------------------

class TestPosteriorUpdate:

    def test_zero_information_returns_prior(self):
        prior = GaussianBelief.isotropic(0.5)
        assert posterior_update(prior, PrecisionSummary.zeros()) is prior

    def test_matches_normal_equations(self, rng):
        # one station, white noise, noise-free data
        sigma, sigma_p = 0.5, 0.5
        G = rng.standard_normal((60, 6))
        m_true = rng.standard_normal(6)
        y = G @ m_true
        H = G.T @ G / sigma ** 2
        b = G.T @ y / sigma ** 2
        post = posterior_update(GaussianBelief.isotropic(sigma_p), PrecisionSummary(H, b))

        A = H + np.eye(6) / sigma_p ** 2
        assert np.allclose(post.mean, np.linalg.solve(A, b), rtol=1e-10, atol=1e-12)
        assert np.allclose(post.cov, np.linalg.inv(A), rtol=1e-10, atol=1e-14)

    def test_covariance_matches_dense_inverse(self, rng, make_spd, make_psd):
        for _ in range(200):
            prior_cov = make_spd(rng)
            mean = rng.standard_normal(6)
            H = make_psd(rng, rank=int(rng.integers(1, 7)))
            b = rng.standard_normal(6)
            post = posterior_update(GaussianBelief(mean, prior_cov), PrecisionSummary(H, b))

            prec = np.linalg.inv(prior_cov)
            expected_cov = np.linalg.inv(H + prec)
            expected_mean = expected_cov @ (prec @ mean + b)
            assert np.allclose(post.cov, expected_cov, rtol=1e-8, atol=1e-10)
            assert np.allclose(post.mean, expected_mean, rtol=1e-8, atol=1e-10)

    def test_posterior_never_exceeds_prior(self, rng, make_spd, make_psd):
        for _ in range(100):
            prior = GaussianBelief(np.zeros(6), make_spd(rng))
            post = posterior_update(prior, PrecisionSummary(make_psd(rng, rank=2)))
            gap = np.linalg.eigvalsh(prior.cov - post.cov)
            assert gap.min() >= -1e-10

    def test_station_order_does_not_matter(self, rng, make_psd):
        prior = GaussianBelief.isotropic(0.5)
        stations = [PrecisionSummary(make_psd(rng, rank=3), rng.standard_normal(6)) for _ in range(5)]
        forward = posterior_from_network(prior, stations)
        backward = posterior_from_network(prior, stations[::-1])
        assert np.allclose(forward.cov, backward.cov, rtol=1e-12, atol=1e-15)
        assert np.allclose(forward.mean, backward.mean, rtol=1e-12, atol=1e-15)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ShapeMismatch):
            posterior_update(GaussianBelief.isotropic(1.0), PrecisionSummary(np.eye(3)))


# ---------------------------------------------------------------------------
# Expected information gain
# ---------------------------------------------------------------------------

class TestEig:

    def test_no_information_is_zero(self):
        assert eig(np.zeros((6, 6)), np.eye(6)) == 0.0

    def test_identity_case(self):
        assert eig(np.eye(6), np.eye(6)) == pytest.approx(3 * np.log(2), abs=1e-12)

    def test_equals_half_log_det_ratio(self, rng, make_spd, make_psd):
        for _ in range(1000):
            prior = GaussianBelief(np.zeros(6), make_spd(rng))
            H = make_psd(rng, rank=int(rng.integers(1, 7)))
            post = posterior_update(prior, PrecisionSummary(H))
            expected = 0.5 * (prior.logdet() - post.logdet())
            assert eig(H, prior) == pytest.approx(expected, abs=1e-9)

    def test_batch_matches_single(self, rng, make_psd):
        prior = GaussianBelief.isotropic(0.5)
        stack = np.stack([make_psd(rng) for _ in range(20)])
        batch = eig_batch(stack, prior)
        assert batch.shape == (20,)
        for H, value in zip(stack, batch):
            assert value == pytest.approx(eig(H, prior), rel=1e-12)

    def test_monotone_in_information(self, rng, make_psd):
        prior = GaussianBelief.isotropic(0.5)
        H = make_psd(rng)
        assert eig(H / 4, prior) < eig(H, prior) < eig(H + make_psd(rng, rank=1), prior)

    def test_telescoping_increments(self, rng, make_psd):
        prior = GaussianBelief.isotropic(0.5)
        stations = [make_psd(rng, rank=2) for _ in range(4)]
        total, running = 0.0, prior
        for H in stations:
            total += eig(H, running)
            running = posterior_update(running, PrecisionSummary(H))
        assert total == pytest.approx(eig_network(stations, prior), rel=1e-10)

    def test_network_equals_stacked_forward_operator(self, rng):
        sigma = 0.3
        G1 = rng.standard_normal((30, 6))
        G2 = rng.standard_normal((30, 6))
        prior = GaussianBelief.isotropic(0.5)
        network = eig_network([G1.T @ G1 / sigma ** 2, G2.T @ G2 / sigma ** 2], prior)
        G = np.vstack([G1, G2])
        assert network == pytest.approx(eig(G.T @ G / sigma ** 2, prior), rel=1e-10)

    def test_empty_network_rejected(self):
        with pytest.raises(EmptyCandidates):
            eig_network([], np.eye(6))


# ---------------------------------------------------------------------------
# KL divergence
# ---------------------------------------------------------------------------

class TestKlGaussian:

    def test_self_divergence_is_zero(self, rng, make_spd):
        p = GaussianBelief(rng.standard_normal(6), make_spd(rng))
        assert kl_gaussian(p, p) == pytest.approx(0.0, abs=1e-12)

    def test_isotropic_closed_form(self):
        p = GaussianBelief(np.zeros(6), np.eye(6))
        q = GaussianBelief(np.zeros(6), 2 * np.eye(6))
        assert kl_gaussian(p, q) == pytest.approx(0.5 * (-3 + 6 * np.log(2)), abs=1e-12)

    def test_monte_carlo_agreement(self, rng, make_spd):
        p = GaussianBelief(rng.standard_normal(6), make_spd(rng))
        q = GaussianBelief(rng.standard_normal(6), make_spd(rng, shift=1.0))
        x = rng.multivariate_normal(p.mean, p.cov, size=1_000_000)
        log_ratio = (multivariate_normal(p.mean, p.cov).logpdf(x)
                     - multivariate_normal(q.mean, q.cov).logpdf(x))
        estimate = log_ratio.mean()
        stderr = log_ratio.std(ddof=1) / np.sqrt(x.shape[0])
        assert abs(estimate - kl_gaussian(p, q)) < 3 * stderr

    def test_posterior_kl_averages_to_eig(self, rng):
        # E_y KL(posterior || prior) equals the EIG
        sigma = 0.4
        G = rng.standard_normal((12, 6))
        prior = GaussianBelief.isotropic(0.5)
        H = G.T @ G / sigma ** 2
        values = []
        for _ in range(4000):
            m = rng.normal(0.0, 0.5, size=6)
            y = G @ m + rng.normal(0.0, sigma, size=12)
            post = posterior_update(prior, PrecisionSummary(H, G.T @ y / sigma ** 2))
            values.append(kl_gaussian(post, prior))
        values = np.asarray(values)
        stderr = values.std(ddof=1) / np.sqrt(values.size)
        assert abs(values.mean() - eig(H, prior)) < 4 * stderr
