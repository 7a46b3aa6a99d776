"""Synthetic data generators and the simulation-study harness."""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy.special import expit

from .core import Dataset, FitOptions, fit
from .errors import DomainError, TavieError
from .families import ALD, BINOMIAL, LAPLACE, STUDENT, TYPE2, SSGFamily
from .priors import GaussianParams, NormalGammaParams

E1 = [(n, 8) for n in (200, 500, 1000, 2000)]
E2 = [(1000, p) for p in (3, 8, 15, 20)]
GRIDS = {"E1": E1, "E2": E2}

BENCH_HEADER = ["n", "p", "method", "mse_beta", "mse_tau2", "runtime_s", "rep"]


@dataclass(frozen=True)
class SimParams:
    """Generator settings.

    ``beta_sd`` defaults to 1 for every family except the negative binomial,
    whose coefficients have variance ``sqrt(0.5)``.  ``m`` defaults to 10 for
    negative binomial and 1 for binomial data.  Asymmetric-Laplace families
    get standard-normal noise (the quantile-regression test bed).
    """

    tau2: float = 3.0
    beta_sd: Optional[float] = None
    m: Optional[float] = None
    intercept: bool = False


@dataclass(frozen=True)
class SimTruth:
    beta0: np.ndarray
    tau2_0: Optional[float]
    family: str
    seed: int


@dataclass
class BenchRow:
    n: int
    p: int
    method: str
    mse_beta: float
    mse_tau2: Optional[float]
    runtime_s: float
    rep: int
    alpha: float = 1.0
    converged: bool = True
    error: str = field(default="", repr=False)

    @property
    def failed(self) -> bool:
        return bool(self.error)


def _default_beta_sd(family):
    if family.is_type2 and family.count_model != BINOMIAL:
        return 0.5**0.25
    return 1.0


def simulate(family: SSGFamily, n: int, p: int, seed: int, params: Optional[SimParams] = None):
    """Draw ``(Dataset, SimTruth)``; fully determined by ``seed``."""
    if n < 1 or p < 1:
        raise DomainError("n and p must be >= 1")
    params = params or SimParams()
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    if params.intercept:
        X[:, 0] = 1.0
    sd = params.beta_sd if params.beta_sd is not None else _default_beta_sd(family)
    beta0 = rng.normal(0.0, sd, p)
    eta = X @ beta0
    tau2 = None
    m = None
    if family.kind == STUDENT:
        tau2 = params.tau2
        y = eta + rng.standard_t(family.nu, n) / np.sqrt(tau2)
    elif family.kind == LAPLACE:
        tau2 = params.tau2
        y = eta + rng.laplace(0.0, 1.0 / np.sqrt(tau2), n)
    elif family.kind == ALD:
        y = eta + rng.standard_normal(n)
    elif family.kind == TYPE2:
        if family.count_model == BINOMIAL:
            m = np.full(n, params.m if params.m is not None else 1.0)
            y = rng.binomial(m.astype(int), expit(eta)).astype(float)
        else:
            m = np.full(n, params.m if params.m is not None else 10.0)
            y = rng.negative_binomial(m, expit(eta)).astype(float)
    else:
        raise DomainError(f"no generator for family {family.name}")
    return Dataset(X, y, m), SimTruth(beta0, tau2, family.name, seed)


def default_prior(family: SSGFamily, p: int):
    if family.is_type1:
        return NormalGammaParams.default(p)
    return GaussianParams.default(p)


def _one_row(family, n, p, rep, seed, alpha, params, opts, method):
    try:
        data, truth = simulate(family, n, p, seed, params)
        start = time.perf_counter()
        rep_ = fit(family, data, default_prior(family, p), alpha, opts)
        runtime = time.perf_counter() - start
        post = rep_.posterior
        mse_beta = float(np.mean((post.mu - truth.beta0) ** 2))
        mse_tau2 = None
        if truth.tau2_0 is not None and isinstance(post, NormalGammaParams):
            mse_tau2 = float((post.a / post.b - truth.tau2_0) ** 2)
        return BenchRow(n, p, method, mse_beta, mse_tau2, runtime, rep, alpha, rep_.converged)
    except TavieError as exc:
        return BenchRow(n, p, method, float("nan"), None, float("nan"), rep, alpha, False, str(exc))


def _run_rows(jobs, workers):
    if workers <= 1:
        return [_one_row(*j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda j: _one_row(*j), jobs))


def run_experiment(grid, family: SSGFamily, reps: int = 20, alpha: float = 1.0, seed_base: int = 0,
                   params: Optional[SimParams] = None, opts: Optional[FitOptions] = None,
                   workers: int = 1) -> list:
    """Fit every (n, p) cell ``reps`` times; row seed is ``seed_base + rep``.

    ``grid`` is ``"E1"``, ``"E2"`` or an iterable of ``(n, p)`` pairs.  A fit
    that raises is recorded as a failed row instead of stopping the grid.
    """
    if reps < 1:
        raise DomainError("reps must be >= 1")
    cells = GRIDS[grid] if isinstance(grid, str) else list(grid)
    opts = opts or FitOptions(record_trace=False)
    jobs = [(family, n, p, r, seed_base + r, alpha, params, opts, "tavie")
            for n, p in cells for r in range(reps)]
    return _run_rows(jobs, workers)


def alpha_sweep(family: SSGFamily, alphas: Iterable[float], n: int = 2000, p: int = 8, reps: int = 20,
                seed_base: int = 0, params: Optional[SimParams] = None,
                opts: Optional[FitOptions] = None, workers: int = 1) -> list:
    """Same seeds for every alpha, so columns differ only through alpha."""
    opts = opts or FitOptions(record_trace=False)
    jobs = []
    for a in alphas:
        if not 0.0 < a <= 1.0:
            raise DomainError(f"alpha must lie in (0, 1], got {a}")
        jobs += [(family, n, p, r, seed_base + r, float(a), params, opts, f"tavie(alpha={a:g})")
                 for r in range(reps)]
    return _run_rows(jobs, workers)


def median_mse(rows, key=("n", "p", "method")) -> dict:
    """Median ``mse_beta`` per group, ignoring failed rows."""
    groups = {}
    for r in rows:
        if r.failed:
            continue
        groups.setdefault(tuple(getattr(r, k) for k in key), []).append(r.mse_beta)
    return {k: float(np.median(v)) for k, v in groups.items()}


def write_rows(rows, fh) -> None:
    w = csv.writer(fh)
    w.writerow(BENCH_HEADER)
    for r in rows:
        d = asdict(r)
        w.writerow(["" if d[k] is None else repr(d[k]) if isinstance(d[k], float) else d[k]
                    for k in BENCH_HEADER])


__all__ = [
    "E1", "E2", "SimParams", "SimTruth", "BenchRow", "simulate", "run_experiment", "alpha_sweep",
    "median_mse", "write_rows", "default_prior",
]
