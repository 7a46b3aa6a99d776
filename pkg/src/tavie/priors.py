"""Conjugate prior / variational posterior containers.

Normal-Gamma: ``beta | tau2 ~ N(mu, Sigma / tau2)`` and
``tau2 ~ Gamma(shape=a/2, rate=b/2)``.  Fields always store ``(a, b)``,
never the halved values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import InvariantError

# NG marginal quantiles are simulated with this many draws and seed
_CI_DRAWS = 400_000
_CI_SEED = 20240917


def _as_cov(Sigma, p):
    S = np.atleast_2d(np.asarray(Sigma, dtype=float))
    if S.shape != (p, p):
        raise InvariantError(f"Sigma has shape {S.shape}, expected {(p, p)}")
    if not np.allclose(S, S.T, rtol=1e-10, atol=1e-14):
        raise InvariantError("Sigma is not symmetric")
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise InvariantError("Sigma is not positive definite") from exc
    return S


@dataclass(frozen=True)
class GaussianParams:
    mu: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "Sigma", _as_cov(self.Sigma, mu.size))

    @property
    def p(self) -> int:
        return self.mu.size

    @classmethod
    def default(cls, p: int, scale: float = 1.0):
        return cls(np.zeros(p), scale * np.eye(p))

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "Sigma": self.Sigma.tolist()}


@dataclass(frozen=True)
class NormalGammaParams:
    mu: np.ndarray
    Sigma: np.ndarray
    a: float
    b: float

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "Sigma", _as_cov(self.Sigma, mu.size))
        if not (np.isfinite(self.a) and self.a > 0):
            raise InvariantError(f"a must be positive, got {self.a}")
        if not (np.isfinite(self.b) and self.b > 0):
            raise InvariantError(f"b must be positive, got {self.b}")
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))

    @property
    def p(self) -> int:
        return self.mu.size

    @classmethod
    def default(cls, p: int, a: float = 0.025, b: float = 0.025):
        return cls(np.zeros(p), np.eye(p), a, b)

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "Sigma": self.Sigma.tolist(), "a": self.a, "b": self.b}


def params_from_dict(d: dict):
    if "a" in d and d["a"] is not None:
        return NormalGammaParams(d["mu"], d["Sigma"], d["a"], d["b"])
    return GaussianParams(d["mu"], d["Sigma"])


def ng_point_estimate(params: NormalGammaParams):
    """Posterior means: ``(mu, a / b)``."""
    return params.mu.copy(), params.a / params.b


def sample(params, k: int, seed=None):
    """Draw ``k`` samples.

    Gaussian params give a ``(k, p)`` array of ``beta`` draws.  Normal-Gamma
    params give ``(k, p + 1)``: ``beta`` in the first ``p`` columns and
    ``tau2`` in the last.  ``seed`` may be an int or a ``numpy`` Generator.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    L = np.linalg.cholesky(params.Sigma)
    z = rng.standard_normal((k, params.p))
    if isinstance(params, NormalGammaParams):
        tau2 = rng.gamma(shape=0.5 * params.a, scale=2.0 / params.b, size=k)
        beta = params.mu + (z @ L.T) / np.sqrt(tau2)[:, None]
        return np.column_stack([beta, tau2])
    return params.mu + z @ L.T


def credible_interval(params, level: float, coord: int):
    """Equal-tailed interval for ``beta[coord]``."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if not 0 <= coord < params.p:
        raise IndexError(f"coord {coord} out of range for p={params.p}")
    lo_q, hi_q = 0.5 * (1 - level), 0.5 * (1 + level)
    if isinstance(params, GaussianParams):
        sd = np.sqrt(params.Sigma[coord, coord])
        m = params.mu[coord]
        return float(m + sd * norm.ppf(lo_q)), float(m + sd * norm.ppf(hi_q))
    draws = sample(params, _CI_DRAWS, _CI_SEED)[:, coord]
    lo, hi = np.quantile(draws, [lo_q, hi_q])
    return float(lo), float(hi)
