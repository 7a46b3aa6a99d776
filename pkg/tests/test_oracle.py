import numpy as np
import pytest
from scipy.special import expit
from scipy.stats import nbinom

from tavie.bqr import BQRConfig, update_bqr
from tavie.core import Dataset, fit, make_state, update_type1, update_type2
from tavie.errors import DomainError, QuadratureError
from tavie.families import SSGFamily, Theta, typeII_coefficients
from tavie.oracle import (
    bound_rhs,
    density_moment,
    fd_gradient,
    quadrature_posterior_moments,
    renyi_laplace,
    renyi_laplace_rows,
    renyi_negbin,
    risk_gap,
)
from tavie.priors import GaussianParams, NormalGammaParams


def ng_moments(post):
    var = post.Sigma[0, 0] * post.b / (post.a - 2.0)
    return post.mu[0], var, post.a / post.b


def gaussian_moments(post):
    return post.mu[0], post.Sigma[0, 0]


class TestQuadrature:
    def test_worked_laplace(self):
        data = Dataset([[1.0]], [2.0])
        prior = NormalGammaParams([0.0], [[1.0]], 1.0, 1.0)
        # a_post = 2 has no finite variance; only the mean and E[tau2] are checked
        mean, _, mt = quadrature_posterior_moments(SSGFamily.laplace(), data, prior, 1.0, [1.0])
        assert mean == pytest.approx(1.0, abs=1e-6)
        assert mt == pytest.approx(2 / 3, abs=1e-6)

    def test_worked_logistic(self):
        data = Dataset([[1.0]], [1.0], [1.0])
        mean, var, mt = quadrature_posterior_moments(SSGFamily.binomial(), data,
                                                     GaussianParams([0.0], [[1.0]]), 1.0, [1.0])
        assert mt is None
        assert mean == pytest.approx(0.5 / (1 + 0.5 * np.tanh(0.5)), abs=1e-6)
        assert mean == pytest.approx(0.406154, abs=1e-6)

    def test_prior_only(self):
        data = Dataset([[1.0]], [2.0])
        prior = NormalGammaParams([0.5], [[2.0]], 6.0, 3.0)
        mean, var, mt = quadrature_posterior_moments(SSGFamily.student(5), data, prior, 0.0, [1.0])
        assert mean == pytest.approx(0.5, abs=1e-6)
        assert var == pytest.approx(2.0 * 3.0 / 4.0, abs=1e-6)
        assert mt == pytest.approx(2.0, abs=1e-6)

    @pytest.mark.parametrize("fam", [SSGFamily.laplace(), SSGFamily.student(5)], ids=lambda f: f.name)
    def test_type1_conjugacy(self, fam):
        rng = np.random.default_rng(42)
        for _ in range(20):
            n = int(rng.integers(1, 4))
            X = rng.uniform(0.5, 1.5, (n, 1)) * rng.choice([-1, 1], (n, 1))
            data = Dataset(X, rng.normal(size=n))
            prior = NormalGammaParams(rng.normal(size=1), [[rng.uniform(0.5, 2.0)]],
                                      rng.uniform(3.0, 6.0), rng.uniform(2.0, 6.0))
            xi = rng.uniform(0.5, 2.0, n)
            alpha = float(rng.uniform(0.2, 1.0))
            q = quadrature_posterior_moments(fam, data, prior, alpha, xi)
            c = ng_moments(update_type1(prior, data, fam, alpha, xi))
            np.testing.assert_allclose(q, c, atol=1e-6)

    @pytest.mark.parametrize("kind", ["binomial", "negbin"])
    def test_type2_conjugacy(self, kind):
        rng = np.random.default_rng(42)
        fam = SSGFamily.binomial() if kind == "binomial" else SSGFamily.negbin()
        for _ in range(20):
            n = int(rng.integers(1, 4))
            X = rng.normal(size=(n, 1))
            m = rng.integers(1, 6, n).astype(float)
            y = (rng.integers(0, m + 1) if kind == "binomial" else rng.integers(0, 8, n)).astype(float)
            data = Dataset(X, y, m)
            prior = GaussianParams(rng.normal(size=1), [[rng.uniform(0.5, 2.0)]])
            xi = rng.uniform(0.2, 3.0, n)
            alpha = float(rng.uniform(0.2, 1.0))
            mean, var, _ = quadrature_posterior_moments(fam, data, prior, alpha, xi)
            post = update_type2(prior, data, typeII_coefficients(kind, y, m), alpha, xi)
            np.testing.assert_allclose((mean, var), gaussian_moments(post), atol=1e-6)

    def test_bqr_conjugacy(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            n = int(rng.integers(1, 4))
            X = rng.normal(size=(n, 1))
            data = Dataset(X, rng.normal(size=n))
            cfg = BQRConfig(float(rng.uniform(0.1, 0.9)), float(rng.uniform(0.5, 2.0)),
                            float(rng.uniform(0.2, 1.0)))
            prior = GaussianParams(rng.normal(size=1), [[rng.uniform(0.5, 2.0)]])
            xi = rng.uniform(0.3, 2.0, n)
            mean, var, _ = quadrature_posterior_moments(cfg.family, data, prior, cfg.alpha, xi)
            post = update_bqr(prior, data, cfg, xi)
            np.testing.assert_allclose((mean, var), gaussian_moments(post), atol=1e-6)

    def test_boundary_guard(self):
        # a = 1 leaves the tau2 posterior with a heavy tail that hits the grid edge
        data = Dataset([[1.0]], [0.0])
        prior = NormalGammaParams([0.0], [[1.0]], 0.05, 0.05)
        with pytest.raises(QuadratureError):
            quadrature_posterior_moments(SSGFamily.laplace(), data, prior, 0.0, [1.0], grid_points=201)

    def test_size_limit(self):
        with pytest.raises(DomainError):
            quadrature_posterior_moments(SSGFamily.laplace(), Dataset(np.ones((4, 1)), np.ones(4)),
                                         NormalGammaParams.default(1), 1.0, np.ones(4))


class TestFiniteDifference:
    def test_zero_at_fixed_point(self):
        data = Dataset([[1.0], [0.5], [-1.2]], [2.0, 0.1, -0.4])
        rep = fit(SSGFamily.student(5), data, NormalGammaParams.default(1, 1.0, 1.0))
        assert np.max(np.abs(fd_gradient(rep.state, data))) <= 1e-6

    def test_floor(self):
        data = Dataset([[1.0]], [2.0])
        st = make_state(SSGFamily.laplace(), data, NormalGammaParams.default(1), 1.0, [5e-6])
        with pytest.raises(DomainError):
            fd_gradient(st, data)


class TestRenyiLaplace:
    def test_identical(self):
        th = Theta([0.4, -1.0], 2.0)
        X = np.random.default_rng(0).normal(size=(10, 2))
        assert renyi_laplace(th, th, X, 0.4) == pytest.approx(0.0, abs=1e-12)

    def test_scale_only(self):
        v = renyi_laplace(Theta([0.0], 1.0), Theta([0.0], 4.0), [[1.0]], 0.5)
        assert v == pytest.approx(-2 * np.log(np.sqrt(2) / 1.5), abs=1e-12)
        assert v == pytest.approx(0.117783, abs=5e-7)

    def test_removable_singularity(self):
        # alpha tau = (1 - alpha) tau0 at alpha = 0.5, tau = tau0; neighbouring values agree
        X = [[1.0]]
        th0 = Theta([0.0], 1.0)
        at = renyi_laplace(Theta([0.7], 1.0), th0, X, 0.5)
        near = renyi_laplace(Theta([0.7], 1.0 + 1e-6), th0, X, 0.5)
        assert at == pytest.approx(near, abs=1e-5)

    def test_nonnegative_and_monotone(self):
        rng = np.random.default_rng(42)
        alphas = [0.1, 0.3, 0.5, 0.7, 0.9]
        for _ in range(1000):
            X = rng.normal(size=(1, 2))
            th = Theta(rng.normal(size=2), rng.gamma(2.0, 1.0))
            th0 = Theta(rng.normal(size=2), rng.gamma(2.0, 1.0))
            vals = [renyi_laplace(th, th0, X, a) for a in alphas]
            assert min(vals) >= -1e-12
            assert np.all(np.diff(vals) >= -1e-12)

    def test_importance_sampling(self):
        rng = np.random.default_rng(42)
        for _ in range(5):
            x = rng.normal(size=2)
            th = Theta(rng.normal(size=2), rng.uniform(0.5, 3.0))
            th0 = Theta(rng.normal(size=2), rng.uniform(0.5, 3.0))
            alpha = float(rng.uniform(0.2, 0.8))
            t, t0 = np.sqrt(th.tau2), np.sqrt(th0.tau2)
            k = 200_000
            y = x @ th0.beta + rng.laplace(0.0, 1.0 / t0, k)
            logr = np.log(t / t0) - t * np.abs(y - x @ th.beta) + t0 * np.abs(y - x @ th0.beta)
            w = np.exp(alpha * logr)
            est, se = w.mean(), w.std(ddof=1) / np.sqrt(k)
            d_mc = np.log(est) / (alpha - 1)
            d_se = se / est / (1 - alpha)
            d = renyi_laplace_rows(th, th0, x[None, :], alpha)[0]
            assert abs(d - d_mc) <= 3 * d_se


class TestRenyiNegBin:
    def test_identical(self):
        X = np.random.default_rng(0).normal(size=(10, 2))
        assert renyi_negbin([0.2, 0.3], [0.2, 0.3], X, 10, 0.6) == pytest.approx(0.0, abs=1e-12)

    def test_worked_example(self):
        v = renyi_negbin([0.0], [1.0], [[1.0]], 1, 0.5)
        # exact series sum_y sqrt(p(y) q(y)) with the log(1 - p) convention of the sampler
        y = np.arange(0, 400)
        bc = np.sum(np.sqrt(nbinom.pmf(y, 1, expit(0.0)) * nbinom.pmf(y, 1, expit(1.0))))
        assert v == pytest.approx(-2 * np.log(bc), abs=1e-12)
        assert v == pytest.approx(0.0927790, abs=5e-8)

    def test_half_symmetry(self):
        rng = np.random.default_rng(42)
        X = rng.normal(size=(20, 3))
        b, b0 = rng.normal(size=3), rng.normal(size=3)
        m = rng.integers(1, 20, 20)
        assert renyi_negbin(b, b0, X, m, 0.5) == pytest.approx(renyi_negbin(b0, b, X, m, 0.5), rel=1e-12)

    def test_nonnegative_and_monotone(self):
        rng = np.random.default_rng(42)
        alphas = [0.1, 0.3, 0.5, 0.7, 0.9]
        for _ in range(1000):
            X = rng.normal(size=(1, 2))
            b, b0 = rng.normal(size=2) * 2, rng.normal(size=2) * 2
            vals = [renyi_negbin(b, b0, X, 10, a) for a in alphas]
            assert min(vals) >= -1e-12
            assert np.all(np.diff(vals) >= -1e-12)

    def test_alpha_range(self):
        with pytest.raises(DomainError):
            renyi_negbin([0.0], [0.0], [[1.0]], 1, 1.0)


class TestRiskGap:
    def test_moments(self):
        # half-Laplace has unit mean and second moment 2
        fam = SSGFamily.laplace()
        assert density_moment(fam, 1) == pytest.approx(1.0, rel=1e-8)
        assert density_moment(fam, 2) == pytest.approx(2.0, rel=1e-8)

    def test_rhs_formula(self):
        n, p, a, C = 2000, 8, 0.3, 5.0
        e2 = p * np.log(n) / n
        ref = 2 * a * e2 + p * np.log(p) / n + C * p / n * np.log(1 / np.sqrt(e2))
        assert bound_rhs(n, p, a, C) == pytest.approx(ref, rel=1e-14)

    def test_laplace_positive(self):
        r = risk_gap("laplace", 2000, 8, 0.3, seed=0, n_mc=100)
        assert r.lhs >= 0
        assert r.gap > 0

    def test_negbin_positive(self):
        r = risk_gap("negbin", 2000, 8, 0.95, seed=0, n_mc=100)
        assert r.lhs >= 0
        assert r.gap > 0

    def test_mc_consistency(self):
        mid = risk_gap("laplace", 500, 4, 0.5, seed=3, n_mc=100)
        big = risk_gap("laplace", 500, 4, 0.5, seed=3, n_mc=10_000)
        assert abs(mid.lhs - big.lhs) <= 3 * np.hypot(mid.lhs_se, big.lhs_se)
        # a single draw of a right-skewed divergence: only a loose band applies
        one = risk_gap("laplace", 500, 4, 0.5, seed=3, n_mc=1)
        sd = big.lhs_se * np.sqrt(big.n_mc)
        assert 0.0 <= one.lhs <= big.lhs + 6 * sd
        assert np.isnan(one.lhs_se)

    def test_deterministic(self):
        a = risk_gap("negbin", 300, 3, 0.5, seed=4, n_mc=20)
        b = risk_gap("negbin", 300, 3, 0.5, seed=4, n_mc=20)
        assert a.to_dict() == b.to_dict()

    def test_unknown_model(self):
        with pytest.raises(DomainError):
            risk_gap("poisson", 100, 2, 0.5, 0)
