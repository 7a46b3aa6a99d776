"""Strongly super-Gaussian likelihood families and their tangent minorizers.

Every family is described by a convex, decreasing function ``h`` on the
nonnegative reals.  A single observation has log-likelihood

    log r + s * zeta + t * h(zeta**2)

and, for any tangency point ``xi >= 0``, the quadratic-in-zeta lower bound

    log r + s * zeta + t * A(xi) * zeta**2 + t * gamma(xi)

with ``A(xi) = h'(xi**2)`` and ``gamma(xi) = h(xi**2) - xi**2 h'(xi**2)``.
The bound touches the likelihood exactly where ``|zeta| = xi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaln, log_expit

from .errors import DomainError

XI_FLOOR = 1e-8
# below this the Type II coefficient uses its Taylor series
_SERIES_CUTOFF = 1e-4

LAPLACE = "laplace"
STUDENT = "student"
TYPE2 = "type2"
ALD = "ald"
CUSTOM = "custom"

BINOMIAL = "binomial"
NEGBIN = "negbin"


def _logcosh_half(s):
    """log(2 cosh(s/2)), overflow-free."""
    s = np.abs(s)
    return 0.5 * s + np.log1p(np.exp(-s))


@dataclass(frozen=True)
class SSGFamily:
    """A likelihood family, identified by ``kind``.

    Use the constructors :meth:`laplace`, :meth:`student`, :meth:`binomial`,
    :meth:`negbin`, :meth:`ald` and :meth:`custom` rather than building
    instances by hand.
    """

    kind: str
    nu: Optional[int] = None
    count_model: Optional[str] = None
    u: Optional[float] = None
    tau0: Optional[float] = None
    custom_h: Optional[tuple] = field(default=None, compare=False, repr=False)
    custom_log_norm: float = 0.0

    # -- constructors -----------------------------------------------------

    @classmethod
    def laplace(cls):
        return cls(LAPLACE)

    @classmethod
    def student(cls, nu: int = 5):
        if int(nu) != nu or nu < 1:
            raise DomainError(f"degrees of freedom must be a positive integer, got {nu}")
        return cls(STUDENT, nu=int(nu))

    @classmethod
    def binomial(cls):
        return cls(TYPE2, count_model=BINOMIAL)

    @classmethod
    def negbin(cls):
        return cls(TYPE2, count_model=NEGBIN)

    @classmethod
    def ald(cls, u: float, tau0: float = 1.0):
        if not 0.0 < u < 1.0:
            raise DomainError(f"quantile level must lie in (0, 1), got {u}")
        if tau0 <= 0:
            raise DomainError(f"tau0 must be positive, got {tau0}")
        return cls(ALD, u=float(u), tau0=float(tau0))

    @classmethod
    def custom(cls, h: Callable, h1: Callable, h2: Callable, log_norm: float = 0.0):
        """Type I family from a user-supplied ``(h, h', h'')`` triple.

        ``log_norm`` is the log normalizer of the standardized density
        ``exp{h(s^2)}``; it only matters for absolute log-likelihood values.
        """
        return cls(CUSTOM, custom_h=(h, h1, h2), custom_log_norm=float(log_norm))

    # -- classification ---------------------------------------------------

    @property
    def is_type1(self) -> bool:
        return self.kind in (LAPLACE, STUDENT, CUSTOM)

    @property
    def is_type2(self) -> bool:
        return self.kind == TYPE2

    @property
    def singular_at_zero(self) -> bool:
        """True when A(xi) blows up as xi -> 0 (Laplace-type kernels)."""
        return self.kind in (LAPLACE, ALD)

    @property
    def name(self) -> str:
        if self.kind == STUDENT:
            return f"student(nu={self.nu})"
        if self.kind == TYPE2:
            return self.count_model
        if self.kind == ALD:
            return f"ald(u={self.u})"
        return self.kind

    # -- h and derivatives ------------------------------------------------

    def h(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind in (LAPLACE, ALD):
            return -np.sqrt(t)
        if self.kind == STUDENT:
            nu = self.nu
            return -0.5 * (nu + 1) * np.log1p(t / nu)
        if self.kind == TYPE2:
            return -_logcosh_half(np.sqrt(t))
        return self.custom_h[0](t)

    def h1(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind in (LAPLACE, ALD):
            return -0.5 / np.sqrt(t)
        if self.kind == STUDENT:
            nu = self.nu
            return -0.5 * (nu + 1) / (nu + t)
        if self.kind == TYPE2:
            return self.A(np.sqrt(t))
        return self.custom_h[1](t)

    def h2(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind in (LAPLACE, ALD):
            return 0.25 * t ** -1.5
        if self.kind == STUDENT:
            nu = self.nu
            return 0.5 * (nu + 1) / (nu + t) ** 2
        if self.kind == TYPE2:
            s = np.sqrt(t)
            small = s < _SERIES_CUTOFF
            safe = np.where(small, 1.0, s)
            x = 0.5 * safe
            exact = (np.tanh(x) - x / np.cosh(x) ** 2) / (8.0 * safe**3)
            return np.where(small, 1.0 / 96.0 - t / 480.0, exact)
        return self.custom_h[2](t)

    # -- tangent coefficients ---------------------------------------------

    def _check_xi(self, xi):
        xi = np.asarray(xi, dtype=float)
        if np.any(xi < 0) or np.any(~np.isfinite(xi)):
            raise DomainError("xi must be finite and nonnegative")
        if self.singular_at_zero:
            # round-off can push sqrt(kappa) a hair below the floor
            xi = np.maximum(xi, XI_FLOOR)
        return xi

    def A(self, xi):
        """Quadratic coefficient ``h'(xi^2)`` of the minorizer; always negative."""
        xi = self._check_xi(xi)
        if self.kind in (LAPLACE, ALD):
            return -0.5 / xi
        if self.kind == STUDENT:
            nu = self.nu
            return -0.5 * (nu + 1) / (nu + xi**2)
        if self.kind == TYPE2:
            small = xi < _SERIES_CUTOFF
            safe = np.where(small, 1.0, xi)
            return np.where(small, -0.125 + xi**2 / 96.0, -np.tanh(0.5 * safe) / (4.0 * safe))
        return self.h1(xi**2)

    def gamma(self, xi):
        """Offset ``h(xi^2) - xi^2 h'(xi^2)`` of the minorizer."""
        xi = self._check_xi(xi)
        if self.kind in (LAPLACE, ALD):
            return -0.5 * xi
        return self.h(xi**2) - xi**2 * self.A(xi)

    def A_prime(self, xi):
        """d A / d xi = 2 xi h''(xi^2)."""
        xi = self._check_xi(xi)
        return 2.0 * xi * self.h2(xi**2)

    # -- per-observation log densities ------------------------------------

    def type1_log_norm(self) -> float:
        """log of the standardized density normalizer (log r / tau)."""
        if self.kind == LAPLACE:
            return -np.log(2.0)
        if self.kind == STUDENT:
            nu = self.nu
            return gammaln(0.5 * (nu + 1)) - 0.5 * np.log(nu * np.pi) - gammaln(0.5 * nu)
        if self.kind == CUSTOM:
            return self.custom_log_norm
        raise DomainError(f"{self.name} is not a Type I family")


@dataclass(frozen=True)
class Theta:
    """Model parameters: ``beta`` and, for Type I families, the precision ``tau2``."""

    beta: np.ndarray
    tau2: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        if self.tau2 is not None and not self.tau2 > 0:
            raise DomainError(f"tau2 must be positive, got {self.tau2}")


@dataclass(frozen=True)
class TypeIICoefficients:
    a: np.ndarray
    b: np.ndarray


def typeII_coefficients(model: str, y, m) -> TypeIICoefficients:
    """Map counts to the ``(a, b)`` exponents of the Bernoulli-type likelihood.

    Binomial gives ``a = y, b = m``; negative binomial gives ``a = m, b = m + y``.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    m = np.atleast_1d(np.asarray(m, dtype=float))
    if y.shape != m.shape:
        raise DomainError(f"y and m lengths differ: {y.shape} vs {m.shape}")
    if np.any(m <= 0):
        raise DomainError("count sizes m must be positive")
    if np.any(y < 0):
        raise DomainError("counts y must be nonnegative")
    if model == BINOMIAL:
        if np.any(y > m):
            raise DomainError("binomial counts must satisfy y <= m")
        return TypeIICoefficients(a=y.copy(), b=m.copy())
    if model == NEGBIN:
        return TypeIICoefficients(a=m.copy(), b=m + y)
    raise DomainError(f"unknown count model {model!r}")


# -- vectorized kernels over linear predictors -------------------------------
#
# These take ``eta = x'beta`` (any shape) plus broadcastable tau2 / xi so the
# quadrature oracle can evaluate whole grids at once.


def _count_log_norm(family, y, m):
    if family.count_model == BINOMIAL:
        return gammaln(m + 1) - gammaln(y + 1) - gammaln(m - y + 1)
    return gammaln(y + m) - gammaln(y + 1) - gammaln(m)


def _check_count(family, y, m):
    if m is None:
        raise DomainError("count size m is required for Type II families")
    y = np.asarray(y, dtype=float)
    m = np.asarray(m, dtype=float)
    if np.any(m <= 0) or np.any(y < 0) or np.any(y != np.round(y)):
        raise DomainError("counts must be nonnegative integers with m > 0")
    if family.count_model == BINOMIAL and np.any(y > m):
        raise DomainError("binomial counts must satisfy y <= m")
    return y, m


def _count_ab(family, y, m):
    if family.count_model == BINOMIAL:
        return y, m
    return m, m + y


def loglik_eta(family: SSGFamily, eta, y, tau2=None, m=None):
    """Exact log density/mass of ``y`` given linear predictor ``eta``."""
    eta = np.asarray(eta, dtype=float)
    if family.is_type1:
        if tau2 is None or np.any(np.asarray(tau2) <= 0):
            raise DomainError("tau2 must be positive for Type I families")
        tau = np.sqrt(tau2)
        zeta = tau * (y - eta)
        return family.type1_log_norm() + np.log(tau) + family.h(zeta**2)
    if family.is_type2:
        y, m = _check_count(family, y, m)
        a, b = _count_ab(family, y, m)
        # a*eta - b*log(1 + e^eta)
        return _count_log_norm(family, y, m) + a * eta + b * log_expit(-eta)
    if family.kind == ALD:
        return ald_logpdf(y - eta, family.tau0, family.u)
    raise DomainError(f"unsupported family {family.kind!r}")


def logminorizer_eta(family: SSGFamily, eta, y, xi, tau2=None, m=None):
    """Log of the tangent minorizer with the same constants as :func:`loglik_eta`."""
    eta = np.asarray(eta, dtype=float)
    A = family.A(xi)
    g = family.gamma(xi)
    if family.is_type1:
        if tau2 is None or np.any(np.asarray(tau2) <= 0):
            raise DomainError("tau2 must be positive for Type I families")
        tau = np.sqrt(tau2)
        zeta = tau * (y - eta)
        return family.type1_log_norm() + np.log(tau) + A * zeta**2 + g
    if family.is_type2:
        y, m = _check_count(family, y, m)
        a, b = _count_ab(family, y, m)
        return _count_log_norm(family, y, m) + (a - 0.5 * b) * eta + b * A * eta**2 + b * g
    if family.kind == ALD:
        d = y - eta
        u, tau0 = family.u, family.tau0
        return np.log(2 * tau0 * u * (1 - u)) - tau0 * (2 * u - 1) * d + tau0 * (A * d**2 + g)
    raise DomainError(f"unsupported family {family.kind!r}")


def ald_logpdf(x, tau0: float, u: float):
    """Asymmetric Laplace log density ``log[2 tau0 u (1-u)] - 2 tau0 rho_u(x)``."""
    x = np.asarray(x, dtype=float)
    rho = x * (u - (x < 0))
    return np.log(2.0 * tau0 * u * (1.0 - u)) - 2.0 * tau0 * rho


def _eta(x, theta: Theta):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != theta.beta.shape:
        raise DomainError(f"x has length {x.size}, beta has length {theta.beta.size}")
    return float(x @ theta.beta)


def A_coef(family: SSGFamily, xi: float) -> float:
    """``h'(xi^2)``; raises :class:`DomainError` for negative ``xi``."""
    return float(family.A(xi))


def gamma_coef(family: SSGFamily, xi: float) -> float:
    return float(family.gamma(xi))


def log_likelihood(family: SSGFamily, x, y, theta: Theta, m=None) -> float:
    return float(loglik_eta(family, _eta(x, theta), y, theta.tau2, m))


def log_minorizer(family: SSGFamily, x, y, theta: Theta, xi: float, m=None) -> float:
    return float(logminorizer_eta(family, _eta(x, theta), y, xi, theta.tau2, m))
