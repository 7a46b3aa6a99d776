"""Tangent-approximation variational EM for SSG likelihoods.

Each observation's likelihood is replaced by its quadratic tangent minorizer
at ``xi_i``.  Raised to the power ``alpha`` and combined with a conjugate
prior, the minorized likelihood gives a closed-form posterior; the EM loop
then alternates that posterior update with ``xi_i <- sqrt(kappa_i)``, where
``kappa_i`` is the posterior second moment of ``zeta_i``.

ELBO values are the log of the minorized marginal likelihood with every
``xi``-free additive constant dropped, so traces are only comparable within
a single fit.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.linalg import cho_solve

from .errors import DomainError, InvariantError, NumericalError
from .families import ALD, XI_FLOOR, SSGFamily, TypeIICoefficients, typeII_coefficients
from .priors import GaussianParams, NormalGammaParams

# ELBO drops larger than this abort the fit; smaller ones are round-off
ELBO_DROP_ABORT = 1e-8
_PARALLEL_MIN_ROWS = 200_000


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    m: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise InvariantError(f"X must be a non-empty n x p matrix, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise InvariantError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InvariantError("X and y must be finite")
        zero = np.flatnonzero(~np.any(X != 0, axis=1))
        if zero.size:
            raise InvariantError(f"row {zero[0]} of X is all zeros")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if self.m is not None:
            m = np.atleast_1d(np.asarray(self.m, dtype=float))
            if m.shape != y.shape:
                raise InvariantError(f"m has shape {m.shape}, expected {y.shape}")
            object.__setattr__(self, "m", m)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class FitOptions:
    tol: float = 1e-9
    max_iter: int = 10_000
    init: str = "ones"
    record_trace: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise DomainError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise DomainError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.init not in ("ones", "residual"):
            raise DomainError(f"init must be 'ones' or 'residual', got {self.init!r}")


Posterior = Union[NormalGammaParams, GaussianParams]


@dataclass(frozen=True)
class VariationalState:
    """Tangency points ``xi`` together with the posterior they induce.

    ``prior`` is kept so the posterior can be recomputed at perturbed ``xi``;
    ``tau2`` is set only for Type I fits with a known precision.
    """

    xi: np.ndarray
    posterior: Posterior
    alpha: float
    family: SSGFamily
    prior: Posterior
    coeffs: Optional[TypeIICoefficients] = None
    tau2: Optional[float] = None


@dataclass
class FitReport:
    state: VariationalState
    elbo_trace: np.ndarray
    iterations: int
    converged: bool
    fixed_point_residual: float
    wall_time: float
    info: dict = field(default_factory=dict)

    @property
    def posterior(self) -> Posterior:
        return self.state.posterior

    @property
    def xi(self) -> np.ndarray:
        return self.state.xi


# -- small linear-algebra helpers --------------------------------------------


def _thread_count() -> int:
    raw = os.environ.get("TAVIE_THREADS", "0").strip() or "0"
    try:
        k = int(raw)
    except ValueError:
        k = 0
    if k <= 0:
        k = os.cpu_count() or 1
    return k


def _quad_rows(X, S):
    """``x_i' S x_i`` for every row, split across threads for large n."""
    n = X.shape[0]
    k = _thread_count()
    if k <= 1 or n < _PARALLEL_MIN_ROWS:
        return np.einsum("ij,ij->i", X @ S, X)
    out = np.empty(n)
    bounds = np.linspace(0, n, k + 1).astype(int)

    def work(j):
        lo, hi = bounds[j], bounds[j + 1]
        Xj = X[lo:hi]
        out[lo:hi] = np.einsum("ij,ij->i", Xj @ S, Xj)

    with ThreadPoolExecutor(max_workers=k) as pool:
        list(pool.map(work, range(k)))
    return out


def _chol(M, what):
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"Cholesky factorization of {what} failed") from exc


def _solve_posterior(prec, rhs):
    """Return ``(Sigma, mu)`` from a precision matrix and linear term."""
    L = _chol(prec, "the posterior precision")
    Sigma = cho_solve((L, True), np.eye(prec.shape[0]))
    Sigma = 0.5 * (Sigma + Sigma.T)
    mu = cho_solve((L, True), rhs)
    return Sigma, mu


def _logdet(S):
    L = _chol(S, "the posterior covariance")
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def _prec_quad(S, mu):
    """``mu' S^{-1} mu`` via Cholesky."""
    L = _chol(S, "the posterior covariance")
    z = np.linalg.solve(L, mu)
    return float(z @ z)


def _gram(X, w):
    return X.T @ (w[:, None] * X)


def _check_alpha(alpha):
    if not (np.isfinite(alpha) and 0.0 < alpha <= 1.0):
        raise DomainError(f"alpha must lie in (0, 1], got {alpha}")
    return float(alpha)


def _check_xi_len(xi, data):
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (data.n,):
        raise DomainError(f"xi has shape {xi.shape}, expected ({data.n},)")
    return xi


# -- extended-precision pieces for the Type II ELBO ----------------------------


def _chol_ld(M):
    p = M.shape[0]
    L = np.zeros_like(M)
    for j in range(p):
        d = M[j, j] - L[j, :j] @ L[j, :j]
        if not d > 0:
            raise NumericalError("Cholesky factorization of the posterior precision failed")
        L[j, j] = np.sqrt(d)
        L[j + 1:, j] = (M[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def _forward_ld(L, r):
    z = np.zeros_like(r)
    for i in range(r.size):
        z[i] = (r[i] - L[i, :i] @ z[:i]) / L[i, i]
    return z


def _type2_A_ld(xi):
    small = xi < 1e-4
    safe = np.where(small, 1, xi)
    return np.where(small, -0.125 + xi * xi / 96, -np.tanh(safe / 2) / (4 * safe))


def _type2_gamma_ld(xi):
    # h(xi^2) - xi^2 A(xi) with h(t) = -log(2 cosh(sqrt(t) / 2))
    return -(xi / 2 + np.log1p(np.exp(-xi))) + xi * np.tanh(xi / 2) / 4


# -- engines: one per conjugate structure -------------------------------------


class _Engine:
    """Posterior update, kappa and ELBO for one (family, prior, data, alpha)."""

    def __init__(self, family, prior, data, alpha):
        if prior.p != data.p:
            raise DomainError(f"prior has dimension {prior.p}, data has p={data.p}")
        self.family = family
        self.prior = prior
        self.data = data
        self.alpha = _check_alpha(alpha)
        L = _chol(prior.Sigma, "the prior covariance")
        self.P0 = cho_solve((L, True), np.eye(prior.p))
        self.P0mu = self.P0 @ prior.mu

    coeffs = None
    tau2 = None

    def state(self, xi, post):
        return VariationalState(
            xi=xi, posterior=post, alpha=self.alpha, family=self.family,
            prior=self.prior, coeffs=self.coeffs, tau2=self.tau2,
        )

    def weights(self):
        """Per-observation multiplier ``t_i`` of ``h`` in the log-likelihood."""
        return np.ones(self.data.n)

    def gradient(self, post, xi):
        k = self.kappa(post)
        return self.alpha * self.weights() * self.family.A_prime(xi) * (k - xi**2)


class _TypeIEngine(_Engine):
    def __init__(self, family, prior, data, alpha):
        if not family.is_type1:
            raise DomainError(f"{family.name} is not a Type I family")
        if not isinstance(prior, NormalGammaParams):
            raise DomainError("Type I fits with unknown precision need a Normal-Gamma prior")
        super().__init__(family, prior, data, alpha)

    def posterior(self, xi):
        X, y = self.data.X, self.data.y
        w = -2.0 * self.alpha * self.family.A(xi)
        Sigma, mu = _solve_posterior(self.P0 + _gram(X, w), self.P0mu + X.T @ (w * y))
        a = self.prior.a + self.data.n * self.alpha
        # b - 2 alpha y'Ay + mu0'P0 mu0 - mu'P mu, rearranged as a sum of
        # nonnegative terms to avoid cancellation
        d = mu - self.prior.mu
        r = y - X @ mu
        b = self.prior.b + float(d @ self.P0 @ d) + float(w @ (r * r))
        if not (np.isfinite(b) and b > 0):
            raise InvariantError(f"posterior rate b_alpha = {b} is not positive")
        return NormalGammaParams(mu, Sigma, a, b)

    def kappa(self, post):
        X = self.data.X
        r = self.data.y - X @ post.mu
        return _quad_rows(X, post.Sigma) + (post.a / post.b) * r * r

    def elbo(self, post, xi):
        g = self.family.gamma(xi)
        return -0.5 * post.a * np.log(post.b) + 0.5 * _logdet(post.Sigma) + self.alpha * float(np.sum(g))

    def init_residual(self):
        return np.abs(self.data.y - self.data.X @ self.prior.mu)


class _TypeIIEngine(_Engine):
    def __init__(self, family, prior, data, alpha, coeffs=None):
        if not family.is_type2:
            raise DomainError(f"{family.name} is not a Type II family")
        super().__init__(family, prior, data, alpha)
        if coeffs is None:
            if data.m is None:
                raise DomainError("Type II fits need count sizes m")
            coeffs = typeII_coefficients(family.count_model, data.y, data.m)
        if np.shape(coeffs.a) != (data.n,) or np.shape(coeffs.b) != (data.n,):
            raise DomainError("Type II coefficients do not match the data length")
        self.coeffs = coeffs

    def weights(self):
        return self.coeffs.b

    def _precision(self, xi):
        X = self.data.X
        a, b = self.coeffs.a, self.coeffs.b
        w = -2.0 * self.alpha * self.family.A(xi) * b
        return self.P0 + _gram(X, w), self.P0mu + self.alpha * X.T @ (a - 0.5 * b)

    def posterior(self, xi):
        Sigma, mu = _solve_posterior(*self._precision(xi))
        return GaussianParams(mu, Sigma)

    def kappa(self, post):
        X = self.data.X
        eta = X @ post.mu
        return _quad_rows(X, post.Sigma) + eta * eta

    def elbo(self, post, xi):
        # The quadratic and gamma terms are each ~ sum(b) and cancel to a far
        # smaller total, so float64 leaves ~1e-10 of noise on large counts.
        # Both are evaluated from xi alone in extended precision instead.
        ld = np.longdouble
        xi = np.asarray(xi, dtype=ld)
        X = self.data.X.astype(ld)
        a, b = self.coeffs.a.astype(ld), self.coeffs.b.astype(ld)
        alpha = ld(self.alpha)
        w = -2 * alpha * _type2_A_ld(xi) * b
        prec = self.P0.astype(ld) + (X.T * w) @ X
        rhs = self.P0mu.astype(ld) + alpha * (X.T @ (a - b / 2))
        L = _chol_ld(prec)
        z = _forward_ld(L, rhs)
        total = z @ z / 2 - np.sum(np.log(np.diag(L))) + alpha * np.sum(b * _type2_gamma_ld(xi))
        return float(total)

    def init_residual(self):
        return np.abs(self.data.X @ self.prior.mu) + 1.0


@dataclass(frozen=True)
class LinearTerms:
    """Per-observation ``(s, t, u, v)`` with ``zeta_i = u_i x_i'beta + v_i``.

    The log-likelihood of observation ``i`` is
    ``log r_i + s_i zeta_i + t_i h(zeta_i^2)``.
    """

    s: np.ndarray
    t: np.ndarray
    u: np.ndarray
    v: np.ndarray


class _LinearEngine(_Engine):
    """Gaussian prior on ``beta`` with every other quantity known."""

    def __init__(self, family, prior, data, alpha, terms: LinearTerms):
        if not isinstance(prior, GaussianParams):
            raise DomainError("a Gaussian prior is required")
        super().__init__(family, prior, data, alpha)
        n = data.n
        self.terms = LinearTerms(*(np.broadcast_to(np.asarray(v, float), (n,)) for v in
                                   (terms.s, terms.t, terms.u, terms.v)))

    def weights(self):
        return self.terms.t

    def posterior(self, xi):
        X = self.data.X
        s, t, u, v = self.terms.s, self.terms.t, self.terms.u, self.terms.v
        tA = t * self.family.A(xi)
        w = -2.0 * self.alpha * tA * u * u
        lin = self.alpha * X.T @ (s * u + 2.0 * tA * u * v)
        Sigma, mu = _solve_posterior(self.P0 + _gram(X, w), self.P0mu + lin)
        return GaussianParams(mu, Sigma)

    def kappa(self, post):
        X = self.data.X
        u, v = self.terms.u, self.terms.v
        e = u * (X @ post.mu) + v
        return u * u * _quad_rows(X, post.Sigma) + e * e

    def elbo(self, post, xi):
        t, v = self.terms.t, self.terms.v
        A = self.family.A(xi)
        g = self.family.gamma(xi)
        return (
            0.5 * _prec_quad(post.Sigma, post.mu)
            + 0.5 * _logdet(post.Sigma)
            + self.alpha * float(np.sum(t * (A * v * v + g)))
        )


class _KnownScaleEngine(_LinearEngine):
    """Type I family with fixed precision ``tau2``: ``zeta = tau (y - x'beta)``."""

    def __init__(self, family, prior, data, alpha, tau2):
        if not family.is_type1:
            raise DomainError(f"{family.name} is not a Type I family")
        if not (np.isfinite(tau2) and tau2 > 0):
            raise DomainError(f"tau2 must be positive, got {tau2}")
        tau = np.sqrt(tau2)
        n = data.n
        terms = LinearTerms(s=np.zeros(n), t=np.ones(n), u=np.full(n, -tau), v=tau * data.y)
        super().__init__(family, prior, data, alpha, terms)
        self.tau2 = float(tau2)

    def init_residual(self):
        return np.sqrt(self.tau2) * np.abs(self.data.y - self.data.X @ self.prior.mu)


def _engine_for(state: VariationalState, data: Dataset) -> _Engine:
    fam = state.family
    if fam.kind == ALD:
        from .bqr import BQRConfig, _BQREngine

        return _BQREngine(state.prior, data, BQRConfig(fam.u, fam.tau0, state.alpha))
    if fam.is_type2:
        return _TypeIIEngine(fam, state.prior, data, state.alpha, state.coeffs)
    if state.tau2 is not None:
        return _KnownScaleEngine(fam, state.prior, data, state.alpha, state.tau2)
    return _TypeIEngine(fam, state.prior, data, state.alpha)


# -- public update / diagnostic operations ------------------------------------


def update_type1(prior: NormalGammaParams, data: Dataset, family: SSGFamily, alpha: float, xi) -> NormalGammaParams:
    """Normal-Gamma posterior of the minorized, tempered Type I likelihood."""
    eng = _TypeIEngine(family, prior, data, alpha)
    return eng.posterior(_check_xi_len(xi, data))


def update_type2(prior: GaussianParams, data: Dataset, coeffs: TypeIICoefficients, alpha: float, xi,
                 family: Optional[SSGFamily] = None) -> GaussianParams:
    """Gaussian posterior of the minorized, tempered Type II likelihood.

    ``A(xi)`` is the same for binomial and negative binomial data, so
    ``family`` only needs to be given when it matters to the caller.
    """
    family = family or SSGFamily.binomial()
    eng = _TypeIIEngine(family, prior, data, alpha, coeffs)
    return eng.posterior(_check_xi_len(xi, data))


def update_known_scale(prior: GaussianParams, data: Dataset, family: SSGFamily, tau2: float, alpha: float,
                       xi) -> GaussianParams:
    """Gaussian posterior for a Type I family whose precision ``tau2`` is known."""
    eng = _KnownScaleEngine(family, prior, data, alpha, tau2)
    return eng.posterior(_check_xi_len(xi, data))


def make_state(family: SSGFamily, data: Dataset, prior, alpha: float, xi, *, coeffs=None,
               tau2=None) -> VariationalState:
    """Build the state whose posterior is the update at ``xi``."""
    xi = _check_xi_len(xi, data)
    stub = VariationalState(xi, prior, alpha, family, prior, coeffs, tau2)
    eng = _engine_for(stub, data)
    return eng.state(xi, eng.posterior(xi))


def kappa(state: VariationalState, data: Dataset) -> np.ndarray:
    """Posterior second moment ``E[zeta_i^2]`` for each observation."""
    return _engine_for(state, data).kappa(state.posterior)


def elbo(state: VariationalState, data: Dataset) -> float:
    return float(_engine_for(state, data).elbo(state.posterior, state.xi))


def elbo_gradient(state: VariationalState, data: Dataset) -> np.ndarray:
    """Gradient of the profile ELBO in ``xi``: ``alpha t_i A'(xi_i) (kappa_i - xi_i^2)``."""
    fam = state.family
    if fam.singular_at_zero and np.any(np.asarray(state.xi) <= XI_FLOOR):
        raise DomainError("xi must lie strictly above the floor for this family")
    eng = _engine_for(state, data)
    return eng.gradient(state.posterior, np.asarray(state.xi, dtype=float))


# -- EM loop -------------------------------------------------------------------


def _initial_xi(eng: _Engine, opts: FitOptions) -> np.ndarray:
    if opts.init == "ones":
        return np.ones(eng.data.n)
    xi = eng.init_residual()
    if eng.family.singular_at_zero:
        xi = np.maximum(xi, XI_FLOOR)
    return xi


def _run_em(eng: _Engine, opts: FitOptions, xi0=None) -> FitReport:
    start = time.perf_counter()
    xi = _initial_xi(eng, opts) if xi0 is None else _check_xi_len(xi0, eng.data).copy()
    floor = XI_FLOOR if eng.family.singular_at_zero else 0.0
    trace = []
    prev = -np.inf
    converged = False
    it = 0
    while it < opts.max_iter:
        it += 1
        post = eng.posterior(xi)
        cur = eng.elbo(post, xi)
        if not np.isfinite(cur):
            raise NumericalError(f"ELBO is not finite at iteration {it}")
        if cur < prev - ELBO_DROP_ABORT * max(1.0, abs(prev)):
            raise NumericalError(f"ELBO decreased from {prev!r} to {cur!r} at iteration {it}")
        prev = cur
        if opts.record_trace:
            trace.append(cur)
        xi_new = np.maximum(np.sqrt(eng.kappa(post)), floor)
        step = float(np.linalg.norm(xi_new - xi))
        xi = xi_new
        if step <= opts.tol:
            converged = True
            break
    post = eng.posterior(xi)
    final = eng.elbo(post, xi)
    if opts.record_trace:
        trace.append(final)
    residual = float(np.max(np.abs(xi**2 - eng.kappa(post))))
    return FitReport(
        state=eng.state(xi, post),
        elbo_trace=np.asarray(trace),
        iterations=it,
        converged=converged,
        fixed_point_residual=residual,
        wall_time=time.perf_counter() - start,
    )


def fit(family: SSGFamily, data: Dataset, prior, alpha: float = 1.0, opts: Optional[FitOptions] = None, *,
        tau2: Optional[float] = None, xi0=None) -> FitReport:
    """Run the EM fixed-point iteration to convergence.

    Type I families take a Normal-Gamma prior, or a Gaussian prior together
    with a known ``tau2``.  Type II families take a Gaussian prior and need
    ``data.m``.  Asymmetric-Laplace families are routed to the quantile
    regression engine.
    """
    opts = opts or FitOptions()
    if family.kind == ALD:
        from .bqr import BQRConfig, fit_bqr

        return fit_bqr(data, prior, BQRConfig(family.u, family.tau0, alpha), opts, xi0=xi0)
    if family.is_type2:
        if not isinstance(prior, GaussianParams):
            raise DomainError("Type II fits need a Gaussian prior")
        eng = _TypeIIEngine(family, prior, data, alpha)
    elif tau2 is not None or isinstance(prior, GaussianParams):
        if tau2 is None:
            raise DomainError("a Gaussian prior on a Type I family needs a known tau2")
        eng = _KnownScaleEngine(family, prior, data, alpha, tau2)
    else:
        eng = _TypeIEngine(family, prior, data, alpha)
    return _run_em(eng, opts, xi0)
