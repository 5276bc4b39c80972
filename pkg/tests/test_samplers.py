"""Tests for Polya-Gamma sampling, RWMH, PG-Gibbs and Laplace fits."""
import math

import numpy as np
import pytest
from scipy import integrate

from splitevidence import (
    ConfigurationError,
    Dataset,
    DomainError,
    EstimatorError,
    GaussianMoments,
    LaplacePrior,
    LinearKnownVar,
    LinearLogNormalVar,
    LogisticLikelihood,
    ModelSpec,
    NormalPrior,
    log_subposterior_unnorm,
    whole_shard,
)
from splitevidence.models import Shard
from splitevidence.samplers import (
    Chain,
    ConditionalGaussianStream,
    chain_moments,
    laplace_fit,
    pg_gibbs_logistic,
    pg_mean,
    read_stream,
    rwmh_chain,
    sample_pg,
    sample_pg_truncated,
    sample_pg_truncated_vec,
    sample_pg_vec,
    subposterior_closure,
    write_stream,
)


def pg_laplace_transform(t, c, n_terms=200_000):
    """E[exp(-t w)] for w ~ PG(1, c) from the infinite-product form."""
    k = np.arange(1, n_terms + 1)
    denom = (k - 0.5) ** 2 + c**2 / (4 * np.pi**2)
    return math.exp(-np.sum(np.log1p(t / (2 * np.pi**2 * denom))))


class TestPolyaGamma:
    def test_mean_identity_closed_form(self):
        # tanh(c/2)/(2c) against the series sum it must equal.
        for c in (0.1, 1.0, 5.0, 12.0):
            k = np.arange(1, 400_000)
            series = np.sum(1.0 / ((k - 0.5) ** 2 + c**2 / (4 * np.pi**2))) / (
                2 * np.pi**2
            )
            np.testing.assert_allclose(pg_mean(c), series, rtol=1e-5)
        np.testing.assert_allclose(pg_mean(0.0), 0.25, rtol=1e-15)

    @pytest.mark.parametrize("c", [0.0, 0.1, 1.0, 5.0])
    def test_exact_sampler_mean(self, c):
        rng = np.random.default_rng(123)
        x = sample_pg_vec(np.full(150_000, c), rng)
        se = x.std(ddof=1) / math.sqrt(x.size)
        assert abs(x.mean() - pg_mean(c)) < 5 * se

    @pytest.mark.parametrize("c", [0.0, 1.0, 5.0])
    def test_truncated_sampler_mean(self, c):
        rng = np.random.default_rng(456)
        x = sample_pg_truncated_vec(np.full(150_000, c), rng)
        se = x.std(ddof=1) / math.sqrt(x.size)
        assert abs(x.mean() - pg_mean(c)) < 5 * se

    def test_variance_at_zero(self):
        # Var PG(1, 0) = 1/24.
        rng = np.random.default_rng(7)
        x = sample_pg_vec(np.zeros(300_000), rng)
        np.testing.assert_allclose(x.var(ddof=1), 1.0 / 24.0, rtol=0.02)

    @pytest.mark.parametrize("c", [0.0, 1.0, 5.0])
    @pytest.mark.parametrize("t", [0.5, 2.0])
    def test_laplace_transform_both_samplers(self, c, t):
        rng = np.random.default_rng(1000)
        n = 120_000
        for sampler in (sample_pg_vec, sample_pg_truncated_vec):
            x = sampler(np.full(n, c), rng)
            emp = np.exp(-t * x)
            se = emp.std(ddof=1) / math.sqrt(n)
            assert abs(emp.mean() - pg_laplace_transform(t, c)) < 5 * se

    def test_sign_symmetry_in_c(self):
        rng1 = np.random.default_rng(11)
        rng2 = np.random.default_rng(11)
        a = sample_pg_vec(np.full(1000, 2.0), rng1)
        b = sample_pg_vec(np.full(1000, -2.0), rng2)
        np.testing.assert_array_equal(a, b)

    def test_deterministic_given_seed(self):
        c = np.linspace(0, 6, 500)
        a = sample_pg_vec(c, np.random.default_rng(99))
        b = sample_pg_vec(c, np.random.default_rng(99))
        np.testing.assert_array_equal(a, b)

    def test_scalar_interfaces(self):
        rng = np.random.default_rng(3)
        assert isinstance(sample_pg(1.2, rng), float)
        assert isinstance(sample_pg_truncated(1.2, rng), float)
        assert sample_pg(0.7, rng) > 0

    def test_positivity(self):
        rng = np.random.default_rng(8)
        assert np.all(sample_pg_vec(np.linspace(0, 10, 5000), rng) > 0)


class TestRwmh:
    def test_gaussian_target_moments(self):
        # Independent Gaussian target: mean (1, -1), variances (2, 0.5).
        mean = np.array([1.0, -1.0])
        var = np.array([2.0, 0.5])

        def target(t):
            return float(-0.5 * np.sum((t - mean) ** 2 / var))

        chain = rwmh_chain(target, np.zeros(2), n_iter=50_000, burn_in=5_000, seed=1)
        np.testing.assert_allclose(chain.draws.mean(axis=0), mean, atol=0.1)
        np.testing.assert_allclose(chain.draws.var(axis=0, ddof=1), var, rtol=0.15)
        assert 0.15 <= chain.acceptance_rate <= 0.45

    def test_acceptance_rate_band_badly_scaled_start(self):
        # Tight target, wide initial proposal: adaptation must recover.
        def target(t):
            return float(-0.5 * np.sum(t**2) / 1e-4)

        chain = rwmh_chain(target, np.zeros(3), n_iter=20_000, burn_in=5_000, seed=2)
        assert 0.15 <= chain.acceptance_rate <= 0.45
        np.testing.assert_allclose(chain.draws.std(axis=0, ddof=1), 1e-2, rtol=0.3)

    def test_bit_identical_given_seed(self):
        def target(t):
            return float(-0.5 * np.sum(t**2))

        a = rwmh_chain(target, np.zeros(2), n_iter=3000, burn_in=500, seed=42)
        b = rwmh_chain(target, np.zeros(2), n_iter=3000, burn_in=500, seed=42)
        np.testing.assert_array_equal(a.draws, b.draws)
        assert a.acceptance_rate == b.acceptance_rate

    def test_non_finite_start_rejected(self):
        def target(t):
            return float("-inf")

        with pytest.raises(EstimatorError):
            rwmh_chain(target, np.zeros(1), n_iter=100, burn_in=10, seed=0)

    def test_support_boundary_proposals_are_rejected(self):
        def target(t):
            if t[0] <= 0:
                return float("-inf")
            return float(-t[0])

        chain = rwmh_chain(target, np.ones(1), n_iter=5000, burn_in=1000, seed=5)
        assert np.all(chain.draws > 0)
        assert np.all(np.isfinite(chain.draws))

    def test_burn_in_bounds(self):
        def target(t):
            return 0.0

        with pytest.raises(DomainError):
            rwmh_chain(target, np.zeros(1), n_iter=100, burn_in=100, seed=0)


class TestChainMoments:
    def test_known_draws(self):
        draws = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
        chain = Chain(draws=draws, burn_in=0, acceptance_rate=None, seed=0)
        mom = chain_moments(chain)
        np.testing.assert_allclose(mom.mean, [1.0, 1.0])
        np.testing.assert_allclose(mom.cov, (4.0 / 3.0) * np.eye(2))

    def test_too_few_draws(self):
        chain = Chain(draws=np.zeros((3, 2)), burn_in=0, acceptance_rate=None, seed=0)
        with pytest.raises(EstimatorError):
            chain_moments(chain)


def logistic_shard_1d(n=60, seed=0, theta_true=1.0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 1))
    prob = 1.0 / (1.0 + np.exp(-x[:, 0] * theta_true))
    y = (rng.random(n) < prob).astype(float)
    data = Dataset(X=x, y=y)
    model = ModelSpec(
        model_id="logit1",
        likelihood=LogisticLikelihood(),
        prior=NormalPrior(mean=np.zeros(1), cov=np.eye(1)),
        dim=1,
    )
    return model, whole_shard(data)


def quad_subposterior_moments_1d(model, shard, n_splits):
    """Mean and variance of a 1-d subposterior by adaptive quadrature."""
    def unnorm(t):
        return math.exp(log_subposterior_unnorm(model, np.array([t]), shard, n_splits))

    z0, _ = integrate.quad(unnorm, -10, 10, limit=200)
    m1, _ = integrate.quad(lambda t: t * unnorm(t), -10, 10, limit=200)
    m2, _ = integrate.quad(lambda t: t * t * unnorm(t), -10, 10, limit=200)
    mean = m1 / z0
    return mean, m2 / z0 - mean**2


class TestPgGibbs:
    def test_recovers_quadrature_moments(self):
        model, shard = logistic_shard_1d(n=60, seed=1)
        n_splits = 2
        mean_q, var_q = quad_subposterior_moments_1d(model, shard, n_splits)
        chain, stream = pg_gibbs_logistic(
            model, shard, n_splits, n_iter=8000, burn_in=2000, seed=3
        )
        draws = chain.draws[:, 0]
        # Conservative MC error bound: inflate the naive s.e. for autocorrelation.
        se = draws.std(ddof=1) / math.sqrt(draws.size / 10.0)
        assert abs(draws.mean() - mean_q) < 4 * se
        np.testing.assert_allclose(draws.var(ddof=1), var_q, rtol=0.2)
        assert stream.n_records == chain.n_retained == 6000
        assert chain.acceptance_rate is None

    def test_stream_reconstructs_conditional_means(self):
        model, shard = logistic_shard_1d(n=40, seed=2)
        chain, stream = pg_gibbs_logistic(
            model, shard, 1, n_iter=500, burn_in=100, seed=4
        )
        # Every conditional mean lam^-1 eta must be finite and near the draws.
        means = np.array(
            [np.linalg.solve(stream.precisions[i], stream.eta) for i in range(50)]
        )
        assert np.all(np.isfinite(means))
        assert abs(means.mean() - chain.draws[:, 0].mean()) < 0.5

    def test_requires_logistic_and_normal_prior(self):
        model, shard = logistic_shard_1d()
        linear = ModelSpec(
            model_id="lin",
            likelihood=LinearKnownVar(noise_var=1.0),
            prior=NormalPrior(mean=np.zeros(1), cov=np.eye(1)),
            dim=1,
        )
        with pytest.raises(ConfigurationError):
            pg_gibbs_logistic(linear, shard, 1, n_iter=10, burn_in=1, seed=0)
        lap = ModelSpec(
            model_id="lap",
            likelihood=LogisticLikelihood(),
            prior=LaplacePrior(scale=1.0),
            dim=1,
        )
        with pytest.raises(ConfigurationError):
            pg_gibbs_logistic(lap, shard, 1, n_iter=10, burn_in=1, seed=0)

    def test_deterministic_given_seed(self):
        model, shard = logistic_shard_1d(n=30, seed=5)
        a, _ = pg_gibbs_logistic(model, shard, 2, n_iter=300, burn_in=50, seed=9)
        b, _ = pg_gibbs_logistic(model, shard, 2, n_iter=300, burn_in=50, seed=9)
        np.testing.assert_array_equal(a.draws, b.draws)


class TestStreamIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        precs = np.stack([np.eye(2) + 0.1 * i for i in range(5)])
        stream = ConditionalGaussianStream(eta=rng.normal(size=2), precisions=precs)
        path = tmp_path / "cond_0.ndjson"
        write_stream(stream, path)
        back = read_stream(path)
        np.testing.assert_array_equal(back.eta, stream.eta)
        np.testing.assert_array_equal(back.precisions, stream.precisions)

    def test_header_required(self, tmp_path):
        path = tmp_path / "bad.ndjson"
        path.write_text('{"type":"rec","n":1,"prec_row_major":[1.0]}\n')
        from splitevidence import DecodeError

        with pytest.raises(DecodeError):
            read_stream(path)

    def test_out_of_order_records_rejected(self, tmp_path):
        path = tmp_path / "bad.ndjson"
        path.write_text(
            '{"type":"header","eta":[0.0]}\n'
            '{"type":"rec","n":2,"prec_row_major":[1.0]}\n'
        )
        from splitevidence import DecodeError

        with pytest.raises(DecodeError):
            read_stream(path)


class TestSubposteriorClosure:
    @pytest.mark.parametrize("prior_kind", ["normal", "laplace"])
    @pytest.mark.parametrize(
        "lik",
        [
            LogisticLikelihood(),
            LinearKnownVar(noise_var=1.7),
            LinearLogNormalVar(logsigma_mean=0.1, logsigma_sd=0.8),
        ],
    )
    def test_matches_reference_density(self, prior_kind, lik):
        rng = np.random.default_rng(12)
        n, p = 25, 3
        X = rng.normal(size=(n, p))
        if isinstance(lik, LogisticLikelihood):
            y = (rng.random(n) < 0.5).astype(float)
        else:
            y = rng.normal(size=n)
        data = Dataset(X=X, y=y)
        prior = (
            NormalPrior(mean=rng.normal(size=p), cov=np.eye(p) * 1.5)
            if prior_kind == "normal"
            else LaplacePrior(scale=0.9)
        )
        model = ModelSpec(model_id="m", likelihood=lik, prior=prior, dim=p)
        shard = whole_shard(data)
        for n_splits in (1, 4):
            target = subposterior_closure(model, shard, n_splits)
            for _ in range(5):
                theta = rng.normal(size=model.theta_dim)
                np.testing.assert_allclose(
                    target(theta),
                    log_subposterior_unnorm(model, theta, shard, n_splits),
                    rtol=1e-9,
                    atol=1e-9,
                )


class TestLaplaceFit:
    def test_exact_on_conjugate_gaussian_subposterior(self):
        # For a linear-Gaussian model the subposterior is exactly Gaussian,
        # so the MAP and inverse curvature are the posterior moments.
        rng = np.random.default_rng(20)
        n, p = 40, 2
        X = rng.normal(size=(n, p))
        theta_true = np.array([1.0, -0.5])
        y = X @ theta_true + rng.normal(size=n)
        data = Dataset(X=X, y=y)
        model = ModelSpec(
            model_id="lin",
            likelihood=LinearKnownVar(noise_var=1.0),
            prior=NormalPrior(mean=np.zeros(p), cov=2.0 * np.eye(p)),
            dim=p,
        )
        shard = whole_shard(data)
        n_splits = 2
        fit = laplace_fit(model, shard, n_splits)
        prec = X.T @ X + np.linalg.inv(2.0 * np.eye(p)) / n_splits
        cov = np.linalg.inv(prec)
        mean = cov @ (X.T @ y)
        np.testing.assert_allclose(fit.mean, mean, atol=1e-6)
        np.testing.assert_allclose(fit.cov, cov, atol=1e-6)

    def test_lognormal_var_fit_is_close_to_truth(self):
        rng = np.random.default_rng(21)
        n = 400
        X = rng.normal(size=(n, 2))
        y = X @ np.array([1.0, -1.0]) + 0.5 * rng.normal(size=n)
        model = ModelSpec(
            model_id="ln",
            likelihood=LinearLogNormalVar(logsigma_mean=0.0, logsigma_sd=1.0),
            prior=NormalPrior(mean=np.zeros(2), cov=np.eye(2)),
            dim=2,
        )
        fit = laplace_fit(model, whole_shard(Dataset(X=X, y=y)), 1)
        np.testing.assert_allclose(fit.mean[:2], [1.0, -1.0], atol=0.1)
        np.testing.assert_allclose(fit.mean[2], math.log(0.5), atol=0.1)
        assert fit.cov.shape == (3, 3)
