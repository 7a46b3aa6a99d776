"""Independent checks for the variational engine.

* brute-force grid quadrature of the minorized posterior (tiny problems),
* central finite differences of the profile ELBO,
* closed-form alpha-Renyi divergences for Laplace and negative binomial
  likelihoods, and the empirical risk-bound gap experiment built on them.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import integrate
from scipy.special import expit, gammaln, log_expit
from scipy.stats import gamma as gamma_dist
from scipy.stats import norm

from .core import Dataset, FitOptions, VariationalState, _engine_for, fit
from .errors import DomainError, QuadratureError
from .families import XI_FLOOR, SSGFamily, Theta, logminorizer_eta
from .priors import GaussianParams, NormalGammaParams, sample

GRID_POINTS = 2001
GRID_HALF_WIDTH = 12.0
# fraction of the grid (per end) treated as "boundary" for the mass guard
_EDGE_FRACTION = 0.01
BOUNDARY_MASS_TOL = 1e-8


# -- quadrature ----------------------------------------------------------------


def _edge_mass(w, axis=-1):
    """Largest share of the total weight sitting in either outer grid band."""
    w = np.moveaxis(np.asarray(w), axis, -1)
    k = max(1, int(np.ceil(_EDGE_FRACTION * w.shape[-1])))
    total = w.sum()
    return max(w[..., :k].sum(), w[..., -k:].sum()) / total


def _guard(w, what, axis=-1):
    frac = _edge_mass(w, axis)
    if not frac <= BOUNDARY_MASS_TOL:
        raise QuadratureError(f"{what}: {frac:.3g} of the mass lies at the grid boundary")


def _sum_minorizer(family, data, xi, eta, tau2=None):
    """Sum over observations of the log-minorizer, broadcast over ``eta`` grids."""
    out = 0.0
    for i in range(data.n):
        m = None if data.m is None else data.m[i]
        out = out + logminorizer_eta(family, data.X[i, 0] * eta, data.y[i], xi[i], tau2=tau2, m=m)
    return out


def quadrature_posterior_moments(family: SSGFamily, data: Dataset, prior, alpha: float, xi,
                                 grid_points: int = GRID_POINTS):
    """Moments of the tempered minorized posterior by trapezoidal quadrature.

    Returns ``(mean_beta, var_beta, mean_tau2)``; ``mean_tau2`` is ``None``
    when the model has no precision parameter.  ``alpha = 0`` integrates the
    prior alone.  Only ``p = 1`` and ``n <= 3`` are supported.
    """
    if data.p != 1 or data.n > 3:
        raise DomainError("quadrature oracle supports p = 1 and n <= 3 only")
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    xi = np.asarray(xi, dtype=float)
    mu0 = float(prior.mu[0])
    s0 = float(np.sqrt(prior.Sigma[0, 0]))

    if family.is_type1:
        if not isinstance(prior, NormalGammaParams):
            raise DomainError("Type I quadrature needs a Normal-Gamma prior")
        return _quad_type1(family, data, prior, alpha, xi, mu0, s0, grid_points)

    beta = mu0 + s0 * np.linspace(-GRID_HALF_WIDTH, GRID_HALF_WIDTH, grid_points)
    logw = norm.logpdf(beta, mu0, s0)
    if alpha > 0:
        logw = logw + alpha * _sum_minorizer(family, data, xi, beta)
    w = np.exp(logw - logw.max())
    _guard(w, "beta grid")
    Z = integrate.trapezoid(w, beta)
    mean = integrate.trapezoid(w * beta, beta) / Z
    var = integrate.trapezoid(w * (beta - mean) ** 2, beta) / Z
    return float(mean), float(var), None


def _quad_type1(family, data, prior, alpha, xi, mu0, s0, grid_points):
    a, b = prior.a, prior.b
    # outer axis in log tau2 so both Gamma tails are covered
    centre = np.log(a / b)
    # clipped so exp(s) stays a normal float
    lo = max(centre - 40.0 / min(1.0, 0.5 * a), -700.0)
    s = np.linspace(lo, centre + 12.0, grid_points)
    tau2 = np.exp(s)
    unit = np.linspace(-GRID_HALF_WIDTH, GRID_HALF_WIDTH, grid_points)
    sd = s0 / np.sqrt(tau2)  # conditional prior sd of beta at each tau2 node
    beta = mu0 + sd[:, None] * unit[None, :]  # (n_tau, n_beta)

    logw = norm.logpdf(beta, mu0, sd[:, None])
    logw = logw + gamma_dist.logpdf(tau2, 0.5 * a, scale=2.0 / b)[:, None] + s[:, None]
    if alpha > 0:
        logw = logw + alpha * _sum_minorizer(family, data, xi, beta, tau2=tau2[:, None])
    w = np.exp(logw - logw.max())
    _guard(w, "beta grid", axis=1)

    inner0 = integrate.trapezoid(w, beta, axis=1)
    inner1 = integrate.trapezoid(w * beta, beta, axis=1)
    inner2 = integrate.trapezoid(w * beta * beta, beta, axis=1)
    _guard(inner0, "log tau2 grid")
    Z = integrate.trapezoid(inner0, s)
    mean = integrate.trapezoid(inner1, s) / Z
    second = integrate.trapezoid(inner2, s) / Z
    mean_tau2 = integrate.trapezoid(inner0 * tau2, s) / Z
    return float(mean), float(second - mean * mean), float(mean_tau2)


# -- finite-difference gradient --------------------------------------------------


def fd_gradient(state: VariationalState, data: Dataset, h: float = 1e-5) -> np.ndarray:
    """Central differences of the profile ELBO, refitting the posterior per probe."""
    xi = np.asarray(state.xi, dtype=float)
    floor = XI_FLOOR if state.family.singular_at_zero else 0.0
    if np.any(xi - h <= floor):
        raise DomainError("xi - h falls below the family floor")
    eng = _engine_for(state, data)

    def L(z):
        return eng.elbo(eng.posterior(z), z)

    g = np.empty(xi.size)
    for i in range(xi.size):
        up = xi.copy()
        dn = xi.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (L(up) - L(dn)) / (2.0 * h)
    return g


# -- alpha-Renyi divergences ----------------------------------------------------


def _check_open_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")


def renyi_laplace_rows(theta: Theta, theta0: Theta, X, alpha: float) -> np.ndarray:
    """Per-row alpha-Renyi divergence between two Laplace regressions."""
    _check_open_alpha(alpha)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    tau = np.sqrt(theta.tau2)
    tau0 = np.sqrt(theta0.tau2)
    d = np.abs(X @ (theta.beta - theta0.beta))
    a1 = alpha * tau
    a0 = (1.0 - alpha) * tau0
    e0 = np.exp(-a0 * d)
    e1 = np.exp(-a1 * d)
    psi1 = (e0 + e1) / (a1 + a0)
    if abs(a1 - a0) < 1e-10 * tau0:
        psi2 = d * e0
    else:
        psi2 = (e0 - e1) / (a1 - a0)
    log_c = alpha * np.log(0.5 * tau) + (1.0 - alpha) * np.log(0.5 * tau0)
    return (log_c + np.log(psi1 + psi2)) / (alpha - 1.0)


def renyi_laplace(theta: Theta, theta0: Theta, X, alpha: float) -> float:
    return float(np.mean(renyi_laplace_rows(theta, theta0, X, alpha)))


def renyi_negbin_rows(beta, beta0, X, m, alpha: float) -> np.ndarray:
    _check_open_alpha(alpha)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    eta = X @ np.asarray(beta, dtype=float)
    eta0 = X @ np.asarray(beta0, dtype=float)
    m = np.broadcast_to(np.asarray(m, dtype=float), eta.shape)
    # log sigma and log(1 - sigma) without overflow
    lp, lp0 = log_expit(eta), log_expit(eta0)
    lq, lq0 = log_expit(-eta), log_expit(-eta0)
    log_num = alpha * lp + (1.0 - alpha) * lp0
    log_den = np.log1p(-np.exp(alpha * lq + (1.0 - alpha) * lq0))
    return m * (log_num - log_den) / (alpha - 1.0)


def renyi_negbin(beta, beta0, X, m, alpha: float) -> float:
    return float(np.mean(renyi_negbin_rows(beta, beta0, X, m, alpha)))


# -- risk-bound gap ----------------------------------------------------------------

LAPLACE_MODEL = "laplace"
NEGBIN_MODEL = "negbin"
_LAPLACE_TAU2 = 8.0
_NB_SIZE = 10.0
_NB_BETA_VAR = np.sqrt(0.5)
_M_GRID = np.logspace(-4, 4, 2001)


@dataclass
class RiskGapReport:
    model: str
    lhs: float
    lhs_se: float
    rhs: float
    gap: float
    alpha: float
    n: int
    p: int
    n_mc: int
    seed: int
    C: float

    def to_dict(self) -> dict:
        return asdict(self)


def density_moment(family: SSGFamily, k: int) -> float:
    """``k``-th absolute moment of the standardized density ``exp{h(s^2)}``."""
    f = lambda s: np.exp(family.h(s * s))  # noqa: E731
    g = lambda s: s**k * np.exp(family.h(s * s))  # noqa: E731
    Z = integrate.quad(f, 0, np.inf, limit=200)[0]
    return integrate.quad(g, 0, np.inf, limit=200)[0] / Z


def lipschitz_constant(family: SSGFamily) -> float:
    if family.kind == "student":
        nu = family.nu
        return (nu + 1) / (2.0 * np.sqrt(nu))
    return 1.0


def _norm_2inf(X):
    return float(np.max(np.linalg.norm(X, axis=1)))


def type1_bound_constant(family: SSGFamily, X, prior: NormalGammaParams, beta0, tau2_0) -> float:
    """Upper-bound expression for the Type I constant ``C_1``."""
    tau0 = np.sqrt(tau2_0)
    K = lipschitz_constant(family)
    E1, E2, E4 = (density_moment(family, k) for k in (1, 2, 4))
    M = float(np.max(family.h2(_M_GRID)))  # numerical stand-in for sup h''
    Qt = 8.0 * max(1.0, K, K * E1, np.sqrt(M * E4), M ** (1 / 6), M**0.25, np.sqrt(M * E2))
    Q = _norm_2inf(X) * max(tau0**2, tau0**-4) * Qt
    lam = float(np.max(np.linalg.eigvalsh(prior.Sigma)))
    a, b = prior.a, prior.b
    log_C = (np.log(b / 2.0) - gammaln(a / 2.0) + (a / 2.0 - 1.0) * np.log(b * tau0**2 / 2.0)
             - b * tau0**2 / 2.0)
    L = np.linalg.cholesky(prior.Sigma)
    z = np.linalg.solve(L, np.asarray(beta0) - prior.mu)
    delta2 = float(z @ z)
    return float(6.0 + np.log(np.sqrt(4.0 * lam) / tau0) + log_C + (tau0**2 + 1.0 / Q) * (delta2 + Q**-2))


def type2_bound_constant(X, prior: GaussianParams, beta0, m) -> float:
    """Upper-bound expression for the Type II constant ``C_2``."""
    x_norm = _norm_2inf(X)
    b_norm = float(np.linalg.norm(beta0))
    m_star = float(np.max(m))
    Q = max(4.0 * x_norm, 8.0 * x_norm**2 * b_norm) * m_star * (1.0 + np.exp(x_norm * b_norm))
    lam = float(np.max(np.linalg.eigvalsh(prior.Sigma)))
    L = np.linalg.cholesky(prior.Sigma)
    z = np.linalg.solve(L, np.asarray(beta0) - prior.mu)
    delta2 = float(z @ z)
    return float(0.5 * (8.0 + np.log(2.0) + np.log(lam) + 2.0 * np.log(Q) + delta2 + 1.0 / (lam * Q * Q)))


def bound_rhs(n: int, p: int, alpha: float, C: float, D: float = 2.0) -> float:
    eps2 = p * np.log(n) / n
    eps = np.sqrt(eps2)
    return float(D * alpha * eps2 + p * np.log(p) / n + C * p / n * np.log(1.0 / eps))


def risk_gap(model: str, n: int, p: int, alpha: float, seed: int, n_mc: int = 100,
             opts: Optional[FitOptions] = None) -> RiskGapReport:
    """Simulate, fit, and compare the MC variational risk with its bound."""
    _check_open_alpha(alpha)
    if n_mc < 1:
        raise DomainError("n_mc must be >= 1")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    if model == LAPLACE_MODEL:
        fam = SSGFamily.laplace()
        beta0 = rng.standard_normal(p)
        y = X @ beta0 + rng.laplace(0.0, 1.0 / np.sqrt(_LAPLACE_TAU2), n)
        prior = NormalGammaParams.default(p)
        rep = fit(fam, Dataset(X, y), prior, alpha, opts)
        draws = sample(rep.posterior, n_mc, rng)
        theta0 = Theta(beta0, _LAPLACE_TAU2)
        vals = np.array([renyi_laplace(Theta(d[:p], d[p]), theta0, X, alpha) for d in draws])
        C = type1_bound_constant(fam, X, prior, beta0, _LAPLACE_TAU2)
    elif model == NEGBIN_MODEL:
        fam = SSGFamily.negbin()
        beta0 = rng.normal(0.0, np.sqrt(_NB_BETA_VAR), p)
        m = np.full(n, _NB_SIZE)
        y = rng.negative_binomial(m, expit(X @ beta0)).astype(float)
        prior = GaussianParams.default(p)
        rep = fit(fam, Dataset(X, y, m), prior, alpha, opts)
        draws = sample(rep.posterior, n_mc, rng)
        vals = np.array([renyi_negbin(d, beta0, X, m, alpha) for d in draws])
        C = type2_bound_constant(X, prior, beta0, m)
    else:
        raise DomainError(f"unknown risk model {model!r}")
    lhs = (1.0 - alpha) * float(np.mean(vals))
    se = (1.0 - alpha) * float(np.std(vals, ddof=1) / np.sqrt(n_mc)) if n_mc > 1 else float("nan")
    rhs = bound_rhs(n, p, alpha, C)
    return RiskGapReport(model=model, lhs=lhs, lhs_se=se, rhs=rhs, gap=rhs - lhs, alpha=alpha,
                         n=n, p=p, n_mc=n_mc, seed=seed, C=C)
