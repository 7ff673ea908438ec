"""Cubic B-spline bases with second-derivative roughness penalties.

Each continuous feature gets one :class:`SplineBlock`: a clamped cubic
B-spline basis on knots placed at quantiles of the feature's distinct
values, and the matrix ``S`` with ``S[i, j] = int B_i''(x) B_j''(x) dx``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

ORDER = 4
DEGREE = ORDER - 1

# 2-point Gauss-Legendre integrates B_i'' * B_j'' (quadratic per span) exactly.
_GAUSS_NODES = np.array([-1.0, 1.0]) / np.sqrt(3.0)
_GAUSS_WEIGHTS = np.array([1.0, 1.0])


@dataclass(frozen=True)
class KnotVector:
    feature_name: str
    interior: np.ndarray
    boundary: tuple[float, float]
    warning: str | None = None

    def __post_init__(self):
        lo, hi = self.boundary
        if not lo < hi:
            raise ValueError(f"boundary must satisfy min < max, got {self.boundary}")
        interior = np.asarray(self.interior, dtype=float)
        if interior.size and (np.any(np.diff(interior) <= 0) or interior[0] <= lo or interior[-1] >= hi):
            raise ValueError("interior knots must be strictly increasing and inside the boundary")
        interior.setflags(write=False)
        object.__setattr__(self, "interior", interior)

    @property
    def full(self) -> np.ndarray:
        """Clamped knot sequence: each boundary repeated ``ORDER`` times."""
        lo, hi = self.boundary
        return np.concatenate([np.full(ORDER, lo), self.interior, np.full(ORDER, hi)])

    @property
    def n_basis(self) -> int:
        return self.interior.size + ORDER


def place_knots(values, k: int, feature_name: str = "") -> KnotVector:
    """Place ``k`` interior knots at quantiles of the distinct ``values``.

    Knots must lie strictly inside the observed range, so at most
    ``n_distinct - 2`` are available; when fewer than ``k`` are available
    every interior distinct value becomes a knot and ``warning`` is set.
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("cannot place knots on an empty column")
    if k < 2:
        raise ValueError(f"knot count must be >= 2, got {k}")
    distinct = np.unique(values)
    if distinct.size < 2:
        raise ValueError(
            f"feature {feature_name!r} has fewer than 2 distinct values; a spline is not identifiable"
        )

    available = distinct.size - 2
    warning = None
    if k >= available:
        if k > available:
            warning = f"requested {k} knots but only {distinct.size} distinct values; using {available}"
        interior = distinct[1:-1]
    else:
        probs = np.arange(1, k + 1) / (k + 1)
        interior = np.quantile(distinct, probs)
    return KnotVector(feature_name, interior, (float(distinct[0]), float(distinct[-1])), warning)


def eval_basis(block_or_knots, x) -> np.ndarray:
    """Evaluate all basis functions at ``x``, clamping ``x`` to the boundary.

    Returns shape ``(n_basis,)`` for scalar ``x`` and ``(len(x), n_basis)``
    otherwise.
    """
    knots = block_or_knots.knots if isinstance(block_or_knots, SplineBlock) else block_or_knots
    scalar = np.ndim(x) == 0
    xs = np.clip(np.atleast_1d(np.asarray(x, dtype=float)), *knots.boundary)
    out = BSpline.design_matrix(xs, knots.full, DEGREE).toarray()
    return out[0] if scalar else out


def eval_basis_deriv(knots: KnotVector, x, nu: int) -> np.ndarray:
    xs = np.clip(np.atleast_1d(np.asarray(x, dtype=float)), *knots.boundary)
    spl = BSpline(knots.full, np.eye(knots.n_basis), DEGREE, extrapolate=False)
    return spl.derivative(nu)(xs)


def penalty_matrix(knots: KnotVector) -> np.ndarray:
    """Exact integrated squared second-derivative penalty."""
    edges = np.unique(knots.full)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * np.diff(edges)
    pts = (mid[:, None] + half[:, None] * _GAUSS_NODES[None, :]).ravel()
    wts = (half[:, None] * _GAUSS_WEIGHTS[None, :]).ravel()
    d2 = eval_basis_deriv(knots, pts, 2)
    S = d2.T @ (wts[:, None] * d2)
    return 0.5 * (S + S.T)


@dataclass(frozen=True)
class SplineBlock:
    knots: KnotVector
    n_basis: int = field(init=False)
    penalty: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "n_basis", self.knots.n_basis)
        S = penalty_matrix(self.knots)
        S.setflags(write=False)
        object.__setattr__(self, "penalty", S)

    @classmethod
    def from_values(cls, values, k: int, feature_name: str = "") -> "SplineBlock":
        return cls(place_knots(values, k, feature_name))

    def basis(self, x) -> np.ndarray:
        return eval_basis(self, x)

    def affine_coefficients(self, a: float, b: float) -> np.ndarray:
        """Coefficients reproducing ``a + b*x`` (Greville abscissae)."""
        t = self.knots.full
        greville = np.array([t[i + 1 : i + ORDER].mean() for i in range(self.n_basis)])
        return a + b * greville
