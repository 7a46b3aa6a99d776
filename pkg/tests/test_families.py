import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tavie.errors import DomainError
from tavie.families import (
    SSGFamily,
    Theta,
    A_coef,
    ald_logpdf,
    gamma_coef,
    log_likelihood,
    log_minorizer,
    typeII_coefficients,
)

FAMILIES = [SSGFamily.laplace(), SSGFamily.student(5), SSGFamily.student(1), SSGFamily.binomial(),
            SSGFamily.negbin()]
T_GRID = np.logspace(-4, 4, 200)


class TestCoefficients:
    def test_laplace_A(self):
        assert A_coef(SSGFamily.laplace(), 1.0) == pytest.approx(-0.5, abs=1e-15)

    def test_student_A_at_zero(self):
        assert A_coef(SSGFamily.student(5), 0.0) == pytest.approx(-0.6, abs=1e-15)

    def test_type2_A_limit(self):
        fam = SSGFamily.binomial()
        assert A_coef(fam, 0.0) == pytest.approx(-0.125, abs=1e-15)
        # series and closed form agree across the switch
        assert A_coef(fam, 0.99e-4) == pytest.approx(A_coef(fam, 1.01e-4), rel=1e-8)

    def test_type2_A_at_one(self):
        # -tanh(1/2)/4; the six-decimal value is -0.115529
        assert A_coef(SSGFamily.binomial(), 1.0) == pytest.approx(-np.tanh(0.5) / 4, abs=1e-15)
        assert A_coef(SSGFamily.binomial(), 1.0) == pytest.approx(-0.115529, abs=5e-7)

    def test_gamma_values(self):
        assert gamma_coef(SSGFamily.laplace(), 2.0) == pytest.approx(-1.0, abs=1e-15)
        assert gamma_coef(SSGFamily.student(5), 0.0) == pytest.approx(0.0, abs=1e-15)
        assert gamma_coef(SSGFamily.binomial(), 0.0) == pytest.approx(-np.log(2), abs=1e-15)

    def test_negative_xi_rejected(self):
        with pytest.raises(DomainError):
            A_coef(SSGFamily.student(5), -0.1)

    def test_laplace_floor(self):
        assert A_coef(SSGFamily.laplace(), 0.0) == pytest.approx(-0.5e8)


class TestDerivatives:
    @pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.name)
    def test_h1_h2_match_central_differences(self, fam):
        t = T_GRID
        eps = 1e-5 * t
        fd1 = (fam.h(t + eps) - fam.h(t - eps)) / (2 * eps)
        fd2 = (fam.h1(t + eps) - fam.h1(t - eps)) / (2 * eps)
        np.testing.assert_allclose(fam.h1(t), fd1, rtol=1e-6)
        np.testing.assert_allclose(fam.h2(t), fd2, rtol=1e-6)

    @pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.name)
    def test_signs(self, fam):
        assert np.all(fam.h1(T_GRID) < 0)
        assert np.all(fam.h2(T_GRID) > 0)
        assert np.all(fam.A(np.sqrt(T_GRID)) < 0)

    def test_type2_h2_bounded(self):
        assert np.max(SSGFamily.binomial().h2(T_GRID)) <= 1 / 96 + 1e-15


class TestLikelihood:
    def test_laplace_mode(self):
        v = log_likelihood(SSGFamily.laplace(), [1.0], 0.0, Theta([0.0], 1.0))
        assert v == pytest.approx(np.log(0.5), abs=1e-12)

    def test_binomial_half(self):
        v = log_likelihood(SSGFamily.binomial(), [1.0], 1.0, Theta([0.0]), m=1)
        assert v == pytest.approx(np.log(0.5), abs=1e-12)

    def test_student_normalizer(self):
        # log[Gamma(3) / (sqrt(5 pi) Gamma(2.5))]; Gamma(2.5) = 3 sqrt(pi) / 4
        expected = np.log(2.0 / (np.sqrt(5 * np.pi) * 0.75 * np.sqrt(np.pi)))
        v = log_likelihood(SSGFamily.student(5), [1.0], 0.0, Theta([0.0], 1.0))
        assert v == pytest.approx(expected, abs=1e-12)
        assert v == pytest.approx(-0.968620, abs=5e-7)

    def test_student_matches_scipy(self):
        from scipy.stats import t as t_dist

        fam = SSGFamily.student(5)
        for y, tau2 in [(0.3, 2.0), (-4.0, 0.5)]:
            v = log_likelihood(fam, [1.0], y, Theta([0.0], tau2))
            ref = t_dist.logpdf(y, 5, scale=1 / np.sqrt(tau2))
            assert v == pytest.approx(ref, abs=1e-12)

    def test_negbin_matches_scipy(self):
        from scipy.special import expit
        from scipy.stats import nbinom

        v = log_likelihood(SSGFamily.negbin(), [1.0, 2.0], 3, Theta([0.2, -0.4]), m=10)
        ref = nbinom.logpmf(3, 10, expit(0.2 - 0.8))
        assert v == pytest.approx(ref, abs=1e-12)

    def test_tau2_must_be_positive(self):
        with pytest.raises(DomainError):
            Theta([0.0], 0.0)

    def test_binomial_support(self):
        with pytest.raises(DomainError):
            log_likelihood(SSGFamily.binomial(), [1.0], 2.0, Theta([0.0]), m=1)


class TestMinorizer:
    def test_laplace_tangent(self):
        th = Theta([0.0], 1.0)
        fam = SSGFamily.laplace()
        assert log_minorizer(fam, [1.0], 0.7, th, 0.7) == pytest.approx(
            log_likelihood(fam, [1.0], 0.7, th), abs=1e-14)

    def test_laplace_below(self):
        th = Theta([0.0], 1.0)
        fam = SSGFamily.laplace()
        v = log_minorizer(fam, [1.0], 0.7, th, 1.0)
        assert v == pytest.approx(-1.438147, abs=5e-7)
        assert v < log_likelihood(fam, [1.0], 0.7, th) - 0.04

    def test_binomial_tangent_at_zero(self):
        v = log_minorizer(SSGFamily.binomial(), [1.0], 1.0, Theta([0.0]), 0.0, m=1)
        assert v == pytest.approx(-np.log(2), abs=1e-14)

    @pytest.mark.parametrize("fam", FAMILIES + [SSGFamily.ald(0.3, 2.0)], ids=lambda f: f.name)
    def test_dominance_and_tangency(self, fam):
        rng = np.random.default_rng(11)
        for _ in range(200):
            p = 3
            x = rng.normal(size=p)
            beta = rng.normal(size=p)
            if fam.is_type2:
                m = int(rng.integers(1, 20))
                y = int(rng.integers(0, m + 1))
                th = Theta(beta)
                zeta = x @ beta
            else:
                m = None
                tau2 = float(rng.gamma(2.0, 1.0))
                y = float(x @ beta + rng.standard_t(3))
                th = Theta(beta, tau2 if fam.is_type1 else None)
                zeta = (np.sqrt(tau2) if fam.is_type1 else 1.0) * (y - x @ beta)
            xi = float(rng.exponential(2.0))
            ll = log_likelihood(fam, x, y, th, m)
            assert log_minorizer(fam, x, y, th, xi, m) <= ll + 1e-12
            assert abs(log_minorizer(fam, x, y, th, abs(zeta), m) - ll) <= 1e-10


class TestTypeIICoefficients:
    def test_binomial(self):
        c = typeII_coefficients("binomial", [1, 0], [1, 1])
        np.testing.assert_array_equal(c.a, [1, 0])
        np.testing.assert_array_equal(c.b, [1, 1])

    def test_negbin(self):
        c = typeII_coefficients("negbin", [3], [10])
        np.testing.assert_array_equal(c.a, [10])
        np.testing.assert_array_equal(c.b, [13])

    def test_support(self):
        with pytest.raises(DomainError):
            typeII_coefficients("binomial", [2], [1])


class TestALD:
    def test_centre(self):
        assert ald_logpdf(0.0, 1.0, 0.5) == pytest.approx(np.log(0.5), abs=1e-15)

    @given(st.floats(-50, 50))
    @settings(max_examples=50, deadline=None)
    def test_median_is_laplace(self, x):
        assert ald_logpdf(x, 1.0, 0.5) == pytest.approx(np.log(0.5) - abs(x), abs=1e-12)

    def test_asymmetry(self):
        gap = ald_logpdf(-1.0, 1.0, 0.9) - ald_logpdf(1.0, 1.0, 0.9)
        assert gap == pytest.approx(2 * 0.8, abs=1e-14)

    def test_normalized(self):
        from scipy.integrate import quad

        for u, tau0 in [(0.1, 1.0), (0.7, 3.0)]:
            tot = quad(lambda x: np.exp(ald_logpdf(x, tau0, u)), -np.inf, 0)[0] + \
                quad(lambda x: np.exp(ald_logpdf(x, tau0, u)), 0, np.inf)[0]
            assert tot == pytest.approx(1.0, abs=1e-9)
