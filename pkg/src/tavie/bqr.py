"""Bayesian quantile regression with an asymmetric-Laplace working likelihood.

The check loss ``rho_u(d) = d (u - 1{d < 0})`` splits as
``|d| / 2 + (u - 1/2) d``; only the ``|d|`` part needs a tangent bound, so
the minorizer is the Laplace one plus an exact linear term.  The ALD scale
``tau0`` is held fixed and ``tau_alpha = alpha * tau0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    Dataset,
    FitOptions,
    FitReport,
    _Engine,
    _check_alpha,
    _check_xi_len,
    _gram,
    _logdet,
    _prec_quad,
    _quad_rows,
    _run_em,
    _solve_posterior,
)
from .errors import DomainError
from .families import SSGFamily, ald_logpdf
from .priors import GaussianParams

__all__ = ["BQRConfig", "ald_logpdf", "update_bqr", "fit_bqr"]


@dataclass(frozen=True)
class BQRConfig:
    u: float
    tau0: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.u < 1.0:
            raise DomainError(f"quantile level u must lie in (0, 1), got {self.u}")
        if not (np.isfinite(self.tau0) and self.tau0 > 0):
            raise DomainError(f"tau0 must be positive, got {self.tau0}")
        _check_alpha(self.alpha)

    @property
    def u_tilde(self) -> float:
        return 2.0 * self.u - 1.0

    @property
    def tau_alpha(self) -> float:
        return self.tau0 * self.alpha

    @property
    def family(self) -> SSGFamily:
        return SSGFamily.ald(self.u, self.tau0)


class _BQREngine(_Engine):
    def __init__(self, prior, data, cfg: BQRConfig):
        if not isinstance(prior, GaussianParams):
            raise DomainError("quantile regression needs a Gaussian prior")
        super().__init__(cfg.family, prior, data, cfg.alpha)
        self.cfg = cfg

    def weights(self):
        return np.full(self.data.n, self.cfg.tau0)

    def posterior(self, xi):
        X, y = self.data.X, self.data.y
        ta = self.cfg.tau_alpha
        A = self.family.A(xi)
        w = -2.0 * ta * A
        rhs = self.P0mu + X.T @ (w * y) + ta * self.cfg.u_tilde * X.sum(axis=0)
        Sigma, mu = _solve_posterior(self.P0 + _gram(X, w), rhs)
        return GaussianParams(mu, Sigma)

    def kappa(self, post):
        X = self.data.X
        r = self.data.y - X @ post.mu
        return _quad_rows(X, post.Sigma) + r * r

    def elbo(self, post, xi):
        y = self.data.y
        ta = self.cfg.tau_alpha
        A = self.family.A(xi)
        g = self.family.gamma(xi)
        return (
            0.5 * _prec_quad(post.Sigma, post.mu)
            + 0.5 * _logdet(post.Sigma)
            + ta * float(np.sum(g))
            + ta * float(y @ (A * y))
        )

    def init_residual(self):
        return np.abs(self.data.y - self.data.X @ self.prior.mu)


def update_bqr(prior: GaussianParams, data: Dataset, cfg: BQRConfig, xi) -> GaussianParams:
    """Gaussian posterior of the minorized, tempered ALD likelihood."""
    return _BQREngine(prior, data, cfg).posterior(_check_xi_len(xi, data))


def fit_bqr(data: Dataset, prior: GaussianParams, cfg: BQRConfig, opts: Optional[FitOptions] = None,
            xi0=None) -> FitReport:
    report = _run_em(_BQREngine(prior, data, cfg), opts or FitOptions(), xi0)
    report.info["quantile"] = cfg.u
    return report
