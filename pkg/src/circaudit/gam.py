"""Penalized-spline GAMs for Gaussian-identity and binomial-logit responses.

Every feature contributes one additive term.  Continuous features get a
cubic B-spline block whose columns are centred over the training values
(the last centred column is dropped: the centred basis sums to zero, so it
carries one redundant direction).  Binary features get a single centred
linear column.  A free intercept completes the model matrix.

Fitting is penalized iteratively reweighted least squares.  For the
Gaussian family this is one penalized least-squares solve.  Smoothing
parameters are either fixed or chosen by GCV on the working linear model
at each iteration ("performance iteration").
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import expit, xlogy

from .data import BINARY, Dataset
from .splines import SplineBlock, eval_basis

log = logging.getLogger(__name__)

GAUSSIAN = "gaussian"
BINOMIAL = "binomial"
LINKS = {GAUSSIAN: "identity", BINOMIAL: "logit"}

SPLINE = "spline"
LINEAR = "linear"

DEFAULT_KNOTS = 20
MAX_KNOTS = 320
MIN_ROWS = 10

IRLS_TOL = 1e-8
IRLS_MAX_ITER = 100
# Deviance below this fraction of the null deviance counts as an exact fit.
SEPARATION_TOL = 1e-9
# When every row is classified correctly and the deviance is below this
# fraction, the data are separable: the deviance infimum is 0 and further
# iterations only scale the coefficients up.
SEPARABLE_TOL = 1e-4
WEIGHT_FLOOR = 1e-10
MU_CLAMP = 1e-12

LOG_LAMBDA_RANGE = (-8.0, 8.0)
GCV_SWEEPS = 2
GOLDEN_TOL = 1e-3


class GamError(ValueError):
    pass


@dataclass(frozen=True)
class Term:
    name: str
    kind: str = SPLINE
    n_knots: int = DEFAULT_KNOTS

    def __post_init__(self):
        if self.kind not in (SPLINE, LINEAR):
            raise ValueError(f"unknown term kind {self.kind!r}")
        if self.kind == SPLINE and self.n_knots < 2:
            raise ValueError(f"spline term {self.name!r} needs >= 2 knots")


@dataclass(frozen=True)
class ModelSpec:
    """Terms, response family and smoothing policy of one GAM.

    ``lam`` is ``"gcv"``, a single float applied to every spline term, or a
    mapping from term name to a fixed value (missing terms use GCV).
    """

    terms: tuple[Term, ...]
    family: str = GAUSSIAN
    lam: object = "gcv"

    def __post_init__(self):
        if self.family not in LINKS:
            raise ValueError(f"family must be one of {sorted(LINKS)}, got {self.family!r}")
        object.__setattr__(self, "terms", tuple(self.terms))
        names = [t.name for t in self.terms]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate terms in {names}")

    @property
    def link(self) -> str:
        return LINKS[self.family]

    @property
    def feature_names(self) -> list[str]:
        return [t.name for t in self.terms]

    def fixed_lambda(self, name: str) -> float | None:
        if isinstance(self.lam, str):
            if self.lam != "gcv":
                raise ValueError(f"unknown smoothing policy {self.lam!r}")
            return None
        if isinstance(self.lam, dict):
            v = self.lam.get(name)
            return None if v is None else float(v)
        return float(self.lam)

    @classmethod
    def for_features(cls, data: Dataset, features, family=GAUSSIAN, lam="gcv", knots="auto") -> "ModelSpec":
        """Spline terms for continuous features, linear terms for binary ones."""
        terms = []
        for name in features:
            if data.kinds[name] == BINARY:
                terms.append(Term(name, LINEAR))
            else:
                terms.append(Term(name, SPLINE, knot_count(data[name], knots, name)))
        return cls(tuple(terms), family, lam)


def knot_count(values, knots="auto", name: str = "") -> int:
    """Resolve a knot policy for one column.

    ``"auto"`` puts a knot at every distinct value when the column is
    discretized (lab values reported at fixed precision: at most
    ``MAX_KNOTS`` interior candidates, each value seen twice on average),
    else uses ``DEFAULT_KNOTS``.  A mapping may override single features
    and carry a ``"default"`` entry.
    """
    if isinstance(knots, dict):
        knots = knots.get(name, knots.get("default", "auto"))
    if knots == "auto":
        values = np.asarray(values)
        n_distinct = np.unique(values).size
        if n_distinct - 2 <= DEFAULT_KNOTS:
            return max(2, n_distinct - 2)
        if n_distinct - 2 <= MAX_KNOTS and 2 * n_distinct <= values.size:
            return n_distinct - 2
        return DEFAULT_KNOTS
    return int(knots)


@dataclass
class TermDesign:
    """Model-matrix columns and penalty of one term on its training data."""

    term: Term
    x_train: np.ndarray
    block: SplineBlock | None
    center: np.ndarray
    X: np.ndarray
    S: np.ndarray

    @property
    def width(self) -> int:
        return self.X.shape[1]

    def columns(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.block is None:
            return (x - self.center[0])[:, None]
        return (eval_basis(self.block, x) - self.center)[:, :-1]


def build_term(term: Term, x: np.ndarray) -> TermDesign:
    if term.kind == LINEAR:
        center = np.array([x.mean()])
        X = (x - center[0])[:, None]
        return TermDesign(term, x, None, center, X, np.zeros((1, 1)))
    block = SplineBlock.from_values(x, term.n_knots, term.name)
    if block.knots.warning:
        log.warning("%s: %s", term.name, block.knots.warning)
    B = eval_basis(block, x)
    center = B.mean(axis=0)
    X = (B - center)[:, :-1]
    S = np.array(block.penalty[:-1, :-1])
    return TermDesign(term, x, block, center, X, S)


class Design:
    """Cache of term designs for one dataset, shared by many subset fits.

    For Gaussian fits the cross-product ``X'X`` of the full design is formed
    once and sliced per subset.
    """

    def __init__(self, data: Dataset, terms):
        self.data = data
        self.terms = {t.name: build_term(t, data[t.name]) for t in terms}
        offsets, p = {}, 1
        for name, td in self.terms.items():
            offsets[name] = slice(p, p + td.width)
            p += td.width
        self.offsets = offsets
        self.p = p
        self._X = None
        self._gram = None
        self._xty = {}

    @property
    def X(self) -> np.ndarray:
        if self._X is None:
            blocks = [np.ones((self.data.n_rows, 1))] + [td.X for td in self.terms.values()]
            self._X = np.hstack(blocks)
        return self._X

    def index(self, names) -> np.ndarray:
        idx = [np.arange(1)] + [np.arange(self.offsets[n].start, self.offsets[n].stop) for n in names]
        return np.concatenate(idx)

    def matrix(self, names) -> np.ndarray:
        return self.X[:, self.index(names)]

    def gram(self, names) -> np.ndarray:
        if self._gram is None:
            self._gram = self.X.T @ self.X
        idx = self.index(names)
        return self._gram[np.ix_(idx, idx)]

    def xty(self, names, y: np.ndarray, key: str) -> np.ndarray:
        if key not in self._xty:
            self._xty[key] = self.X.T @ y
        return self._xty[key][self.index(names)]


@dataclass
class FittedTerm:
    name: str
    kind: str
    design: TermDesign
    coef: np.ndarray
    lam: float
    edf: float

    def evaluate(self, x) -> np.ndarray:
        return self.design.columns(np.atleast_1d(x)) @ self.coef


@dataclass
class FittedGam:
    spec: ModelSpec
    intercept: float
    terms: dict[str, FittedTerm]
    deviance: float
    null_deviance: float
    d_squared: float
    edf: float
    converged: bool
    iterations: int
    quasi_separation: bool = False
    eta_sd: float = 0.0
    n_rows: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def family(self) -> str:
        return self.spec.family

    @property
    def coefficients(self) -> dict[str, np.ndarray]:
        return {n: t.coef for n, t in self.terms.items()}

    @property
    def lambdas(self) -> dict[str, float]:
        return {n: t.lam for n, t in self.terms.items()}

    def predict_link(self, data: Dataset) -> np.ndarray:
        eta = np.full(data.n_rows, self.intercept)
        for name, t in self.terms.items():
            eta += t.evaluate(data[name])
        return eta

    def predict(self, data: Dataset) -> np.ndarray:
        eta = self.predict_link(data)
        return expit(eta) if self.family == BINOMIAL else eta

    def summary(self) -> dict:
        return {
            "features": self.spec.feature_names,
            "d_squared": self.d_squared,
            "edf": self.edf,
            "deviance": self.deviance,
            "null_deviance": self.null_deviance,
            "converged": self.converged,
            "iterations": self.iterations,
            "quasi_separation": self.quasi_separation,
        }


@dataclass
class FeatureShape:
    feature_name: str
    grid: np.ndarray
    values: np.ndarray
    rug: np.ndarray


# ---------------------------------------------------------------- deviance


def family_deviance(y, mu, family: str) -> float:
    """Scaled deviance with unit dispersion.

    Gaussian: residual sum of squares.  Binomial: twice the log-likelihood
    gap to the saturated model, with ``0 log 0 = 0`` and fitted
    probabilities clamped away from 0 and 1.
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if family == GAUSSIAN:
        r = y - mu
        return float(r @ r)
    if family == BINOMIAL:
        mu = np.clip(mu, MU_CLAMP, 1.0 - MU_CLAMP)
        dev = xlogy(y, y / mu) + xlogy(1.0 - y, (1.0 - y) / (1.0 - mu))
        return float(2.0 * dev.sum())
    raise ValueError(f"unknown family {family!r}")


def null_deviance(y, family: str) -> float:
    return family_deviance(y, np.full_like(np.asarray(y, dtype=float), np.mean(y)), family)


def deviance(fitted: FittedGam, data: Dataset, target: str | None = None) -> float:
    y = data[target] if target else data.y
    return family_deviance(y, fitted.predict(data), fitted.family)


def d_squared(fitted_or_dev, null_dev: float | None = None) -> float:
    """Fraction of null deviance explained, clipped to [0, 1]."""
    if isinstance(fitted_or_dev, FittedGam):
        dev, null_dev = fitted_or_dev.deviance, fitted_or_dev.null_deviance
    else:
        dev = float(fitted_or_dev)
    if not null_dev > 0:
        raise GamError("target has no variance")
    return float(min(1.0, max(0.0, 1.0 - dev / null_dev)))


def effective_dof(fitted: FittedGam) -> float:
    return fitted.edf


# ---------------------------------------------------------------- solvers


def _factor(M):
    try:
        return linalg.cho_factor(M, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return None


def _solve(M, rhs):
    fac = _factor(M)
    if fac is not None:
        out = linalg.cho_solve(fac, rhs, check_finite=False)
        if np.isfinite(out).all():
            return out
    return linalg.lstsq(M, rhs, cond=1e-13, check_finite=False)[0]


@dataclass
class _Penalty:
    name: str
    idx: slice
    S: np.ndarray
    fixed: float | None


def _embed(p, pens, lams):
    St = np.zeros((p, p))
    for pen in pens:
        St[pen.idx, pen.idx] += lams[pen.name] * pen.S
    return St


def _lambda_scale(G, pen) -> float:
    trS = np.trace(pen.S)
    trG = np.trace(G[pen.idx, pen.idx])
    return trG / trS if trS > 0 and trG > 0 else 1.0


def _golden(f, lo, hi, tol=GOLDEN_TOL):
    """Golden-section minimiser that also checks both end points."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    best_x, best_f = (c, fc) if fc <= fd else (d, fd)
    for x in (lo, hi):
        fx = f(x)
        if fx < best_f:
            best_x, best_f = x, fx
    return best_x, best_f


def _gcv_profile(G, b, zz, n, A, pen):
    """GCV of the working model as a function of one smoothing parameter.

    Uses ``A + lam S = L^-T U (I + lam D) U^T L^-1`` with ``A = L L^T`` so
    each evaluation is O(p^2).
    """
    p = A.shape[0]
    Sk = np.zeros((p, p))
    Sk[pen.idx, pen.idx] = pen.S
    jitter = 0.0
    scale = max(np.trace(A) / p, 1e-300)
    while True:
        try:
            L = linalg.cholesky(A + jitter * np.eye(p), lower=True, check_finite=False)
            break
        except linalg.LinAlgError:
            jitter = scale * 1e-12 if jitter == 0 else jitter * 100
            if jitter > scale:
                raise
    Li_S = linalg.solve_triangular(L, Sk, lower=True, check_finite=False)
    C = linalg.solve_triangular(L, Li_S.T, lower=True, check_finite=False)
    d, U = linalg.eigh(0.5 * (C + C.T), check_finite=False)
    d = np.clip(d, 0.0, None)
    P = linalg.solve_triangular(L.T, U, lower=False, check_finite=False)
    c = P.T @ b
    Mm = P.T @ G @ P
    mdiag = np.diag(Mm).copy()

    def gcv(lam):
        shrink = 1.0 / (1.0 + lam * d)
        g = c * shrink
        rss = max(zz - 2.0 * (c @ g) + g @ (Mm @ g), 0.0)
        edf = float(mdiag @ shrink)
        if edf >= n:
            return np.inf
        return n * rss / (n - edf) ** 2

    return gcv


def select_lambdas(G, b, zz, n, pens, lams, grid=None, sweeps=GCV_SWEEPS):
    """Coordinate-wise GCV minimisation over free smoothing parameters.

    Each free parameter is searched on ``log10(lam / scale)`` in
    ``LOG_LAMBDA_RANGE`` where ``scale = tr(G_k) / tr(S_k)`` makes the
    range independent of feature units.  ``grid`` restricts the search to
    explicit candidate values.
    """
    lams = dict(lams)
    free = [pen for pen in pens if pen.fixed is None]
    if not free:
        return lams
    if len(free) == 1:
        sweeps = 1
    p = G.shape[0]
    for _ in range(sweeps):
        for pen in free:
            others = {k: (0.0 if k == pen.name else v) for k, v in lams.items()}
            A = G + _embed(p, pens, others)
            gcv = _gcv_profile(G, b, zz, n, A, pen)
            if grid is not None:
                scores = [gcv(float(v)) for v in grid]
                finite = [i for i, s in enumerate(scores) if np.isfinite(s)]
                if finite:
                    lams[pen.name] = float(grid[min(finite, key=lambda i: scores[i])])
                continue
            scale = _lambda_scale(G, pen)

            def f(u):
                s = gcv(scale * 10.0**u)
                return s if np.isfinite(s) else np.inf

            u, _ = _golden(f, *LOG_LAMBDA_RANGE)
            lams[pen.name] = scale * 10.0**u
    return lams


# ---------------------------------------------------------------- fitting


def _check_inputs(spec: ModelSpec, data: Dataset, target: str):
    missing = [n for n in spec.feature_names + [target] if n not in data.columns]
    if missing:
        raise KeyError(f"columns not in dataset: {missing}")
    if target in spec.feature_names:
        raise GamError("target cannot also be a feature")
    if data.n_rows < MIN_ROWS:
        raise GamError(f"need at least {MIN_ROWS} rows, got {data.n_rows}")
    y = data[target]
    if spec.family == BINOMIAL and not np.isin(y, (0.0, 1.0)).all():
        raise GamError("binomial family requires a 0/1 target")
    return y


def fit(spec: ModelSpec, data: Dataset, target: str | None = None, *, design: Design | None = None,
        lambda_grid=None) -> FittedGam:
    """Fit a GAM by penalized (iteratively reweighted) least squares."""
    target = target or data.target
    if target is None:
        raise GamError("no target column given")
    y = _check_inputs(spec, data, target)
    n = y.size
    null_dev = null_deviance(y, spec.family)
    if not null_dev > 0:
        raise GamError("target has no variance")

    if design is None or design.data is not data or any(
        n_ not in design.terms or design.terms[n_].term != t for n_, t in zip(spec.feature_names, spec.terms)
    ):
        design = Design(data, spec.terms)
    names = spec.feature_names
    tds = [design.terms[nm] for nm in names]

    pens, pos = [], 1
    for td in tds:
        sl = slice(pos, pos + td.width)
        pos += td.width
        if td.term.kind == SPLINE:
            pens.append(_Penalty(td.term.name, sl, td.S, spec.fixed_lambda(td.term.name)))
    p = pos
    lams = {pen.name: (pen.fixed if pen.fixed is not None else 0.0) for pen in pens}
    lam_init = any(pen.fixed is None for pen in pens)

    if spec.family == GAUSSIAN:
        G = design.gram(names)
        b = design.xty(names, y, target)
        zz = float(y @ y)
        if lam_init:
            for pen in pens:
                if pen.fixed is None:
                    lams[pen.name] = _lambda_scale(G, pen)
            lams = select_lambdas(G, b, zz, n, pens, lams, lambda_grid)
        M = G + _embed(p, pens, lams)
        beta = _solve(M, b)
        X = design.matrix(names)
        eta = X @ beta
        dev = family_deviance(y, eta, GAUSSIAN)
        converged, iterations, separated, complete = True, 1, False, False
    else:
        X = design.matrix(names)
        beta, eta, G, M, dev, converged, iterations, separated, complete, lams = _pirls_binomial(
            X, y, pens, lams, lam_init, null_dev, lambda_grid
        )

    edf_diag = np.diag(_solve(M, G)) if p else np.zeros(0)
    edf_total = float(edf_diag.sum())
    dsq = 1.0 if complete else d_squared(dev, null_dev)

    fterms, pos = {}, 1
    for td in tds:
        sl = slice(pos, pos + td.width)
        pos += td.width
        fterms[td.term.name] = FittedTerm(
            td.term.name, td.term.kind, td, beta[sl].copy(), float(lams.get(td.term.name, 0.0)),
            float(edf_diag[sl].sum()),
        )
    warnings_ = [f"{td.term.name}: {td.block.knots.warning}" for td in tds if td.block is not None and td.block.knots.warning]
    if complete:
        warnings_.append("separable data: every row classified correctly, D^2 reported as 1")
    elif separated:
        warnings_.append("quasi-separation: fitted probabilities reached 0 or 1")
    if not converged:
        warnings_.append(f"P-IRLS did not converge in {iterations} iterations")
    return FittedGam(
        spec=spec,
        intercept=float(beta[0]),
        terms=fterms,
        deviance=dev,
        null_deviance=null_dev,
        d_squared=dsq,
        edf=edf_total,
        converged=converged,
        iterations=iterations,
        quasi_separation=separated,
        eta_sd=float(np.std(eta)),
        n_rows=n,
        warnings=warnings_,
    )


def _pirls_binomial(X, y, pens, lams, lam_init, null_dev, lambda_grid):
    n, p = X.shape
    mu = (y + 0.5) / 2.0
    eta = np.log(mu / (1.0 - mu))
    dev_old = family_deviance(y, mu, BINOMIAL)
    converged = separated = complete = False
    it = 0
    for it in range(1, IRLS_MAX_ITER + 1):
        w = np.maximum(mu * (1.0 - mu), WEIGHT_FLOOR)
        z = eta + (y - mu) / w
        Xw = X * w[:, None]
        G = X.T @ Xw
        b = Xw.T @ z
        if lam_init:
            if it == 1:
                for pen in pens:
                    if pen.fixed is None:
                        lams[pen.name] = _lambda_scale(G, pen)
            zz = float((w * z) @ z)
            lams = select_lambdas(G, b, zz, n, pens, lams, lambda_grid)
        M = G + _embed(p, pens, lams)
        beta = _solve(M, b)
        eta = X @ beta
        mu = expit(eta)
        dev = family_deviance(y, mu, BINOMIAL)
        if dev <= SEPARATION_TOL * null_dev or (
            dev <= SEPARABLE_TOL * null_dev and np.array_equal(eta > 0, y > 0.5)
        ):
            converged = separated = complete = True
            break
        if abs(dev - dev_old) < IRLS_TOL * max(abs(dev), 1e-300):
            converged = True
            break
        dev_old = dev
    if not separated:
        separated = bool(np.any(mu <= MU_CLAMP) or np.any(mu >= 1.0 - MU_CLAMP))
    # Influence matrix at the final iterate.
    w = np.maximum(mu * (1.0 - mu), WEIGHT_FLOOR)
    G = X.T @ (X * w[:, None])
    M = G + _embed(p, pens, lams)
    return beta, eta, G, M, dev, converged, it, separated, complete, lams


# ---------------------------------------------------------------- shapes


def feature_shape(fitted: FittedGam, feature: str, grid_size: int = 512) -> FeatureShape:
    """Evaluate the centred shape of one term on an equispaced grid."""
    if feature not in fitted.terms:
        raise KeyError(f"feature {feature!r} is not in the model {list(fitted.terms)}")
    t = fitted.terms[feature]
    x = t.design.x_train
    lo, hi = float(x.min()), float(x.max())
    grid = np.linspace(lo, hi, grid_size) if hi > lo else np.full(grid_size, lo)
    return FeatureShape(feature, grid, t.evaluate(grid), x)


def sup_norm(fitted: FittedGam, feature: str, grid_size: int = 512) -> float:
    return float(np.max(np.abs(feature_shape(fitted, feature, grid_size).values)))
