"""Clamped uniform B-spline bases and 2-D tensor-product designs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class SplineSpec:
    n_basis_x: int = 5
    n_basis_y: int = 5
    domain: tuple = (0.0, 1.0, 0.0, 1.0)
    degree: int = 3

    def __post_init__(self):
        if self.degree < 0:
            raise DomainError("degree must be nonnegative")
        for nb in (self.n_basis_x, self.n_basis_y):
            if nb < self.degree + 1:
                raise DomainError(f"need at least degree + 1 = {self.degree + 1} basis functions, got {nb}")
        xmin, xmax, ymin, ymax = map(float, self.domain)
        if not (xmin < xmax and ymin < ymax):
            raise DomainError(f"degenerate domain {self.domain}")
        object.__setattr__(self, "domain", (xmin, xmax, ymin, ymax))

    def axis(self, k: int) -> "AxisSpec":
        lo, hi = self.domain[2 * k], self.domain[2 * k + 1]
        nb = self.n_basis_x if k == 0 else self.n_basis_y
        return AxisSpec(nb, lo, hi, self.degree)

    @property
    def n_columns(self) -> int:
        return self.n_basis_x * self.n_basis_y


@dataclass(frozen=True)
class AxisSpec:
    n_basis: int
    lo: float
    hi: float
    degree: int = 3

    def knots(self) -> np.ndarray:
        """Clamped knot vector: ``degree + 1`` copies of each end, uniform interior."""
        n_inner = self.n_basis - self.degree - 1
        inner = np.linspace(self.lo, self.hi, n_inner + 2)[1:-1]
        k = self.degree + 1
        return np.concatenate([np.full(k, self.lo), inner, np.full(k, self.hi)])


def bspline_1d(axis: AxisSpec, x) -> np.ndarray:
    """Evaluate all basis functions at ``x`` by the Cox-de Boor recursion.

    Scalar ``x`` gives a vector of length ``n_basis``; an array gives one row
    per point.  Points outside ``[lo, hi]`` are clamped to the boundary.
    """
    scalar = np.ndim(x) == 0
    x = np.clip(np.atleast_1d(np.asarray(x, dtype=float)), axis.lo, axis.hi)
    t = axis.knots()
    deg = axis.degree
    n_int = t.size - 1

    # degree 0: indicator of [t_j, t_{j+1}); the right end belongs to the
    # last non-empty interval so the basis still sums to one there
    B = np.zeros((x.size, n_int))
    span = np.searchsorted(t, x, side="right") - 1
    last = np.flatnonzero(t[1:] > t[:-1])[-1]
    span = np.minimum(span, last)
    B[np.arange(x.size), span] = 1.0

    for d in range(1, deg + 1):
        nxt = np.zeros((x.size, n_int - d))
        for j in range(n_int - d):
            den_l = t[j + d] - t[j]
            den_r = t[j + d + 1] - t[j + 1]
            if den_l > 0:
                nxt[:, j] += (x - t[j]) / den_l * B[:, j]
            if den_r > 0:
                nxt[:, j] += (t[j + d + 1] - x) / den_r * B[:, j + 1]
        B = nxt
    return B[0] if scalar else B


def tensor_design(coords, spec: SplineSpec) -> np.ndarray:
    """Row-major outer product of the x- and y-axis bases for each point."""
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise DomainError(f"coords must be n x 2, got shape {coords.shape}")
    if not np.all(np.isfinite(coords)):
        raise DomainError("coords must be finite")
    Bx = bspline_1d(spec.axis(0), coords[:, 0])
    By = bspline_1d(spec.axis(1), coords[:, 1])
    return (Bx[:, :, None] * By[:, None, :]).reshape(coords.shape[0], -1)
