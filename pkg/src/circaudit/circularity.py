"""Circularity test: exhaustive subset search plus a nullification check.

A feature set ``c*`` is reported as circular when a GAM on ``c*`` alone
explains (almost) all of the target deviance, no cheaper subset does as
well, and every other feature's shape collapses to zero once ``c*`` is in
the model.
"""

from __future__ import annotations

import itertools
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .gam import GAUSSIAN, Design, FittedGam, GamError, ModelSpec, fit, sup_norm

REPORT_VERSION = 1

DELTA_CLOSE = 0.99
EPS_NULL = 0.05
TIE_TOL = 1e-4
SEARCH_CAP = 16
GRID_SIZE = 512

CIRCULAR = "circular"
PARTIAL = "partially-circular"
NOT_CIRCULAR = "not-circular"
INCONCLUSIVE = "inconclusive"
OUTCOMES = (CIRCULAR, PARTIAL, NOT_CIRCULAR, INCONCLUSIVE)

# EDF values this close are treated as equal when breaking D^2 ties; the
# trace carries solver noise of about 1e-6 on rank-deficient designs.
EDF_DIGITS = 4

# Relative change of a shape between the complement model and the full
# model below which it is described as "unchanged".
_SHRINK_RATIO = 0.5


def _r(x: float) -> float:
    """Round to 10 significant digits so reports are stable across BLAS builds."""
    return float(f"{float(x):.10g}")


@dataclass(frozen=True)
class AuditConfig:
    """Settings of one circularity test.

    ``features`` restricts the candidates (default: every non-target
    column); ``preselect`` keeps the ``m`` features most correlated with the
    target before enumeration; ``known_rule`` names the features a label
    rule is known to use, which enables the partial-circularity verdict.
    ``seed`` is recorded for provenance only; the test itself is
    deterministic.
    """

    family: str = GAUSSIAN
    lam: object = "gcv"
    knots: object = "auto"
    delta_close: float = DELTA_CLOSE
    eps_null: float = EPS_NULL
    tie_tol: float = TIE_TOL
    cap: int = SEARCH_CAP
    preselect: int | None = None
    features: tuple[str, ...] | None = None
    exclude: tuple[str, ...] = ()
    known_rule: tuple[str, ...] | None = None
    top_k: int | None = None
    grid_size: int = GRID_SIZE
    seed: int | None = None
    threads: int | None = None

    def __post_init__(self):
        if not 0 < self.delta_close <= 1:
            raise ValueError(f"delta_close must be in (0, 1], got {self.delta_close}")
        if self.eps_null < 0:
            raise ValueError(f"eps_null must be >= 0, got {self.eps_null}")
        if self.tie_tol < 0:
            raise ValueError(f"tie_tol must be >= 0, got {self.tie_tol}")
        if self.preselect is not None and self.preselect < 1:
            raise ValueError(f"preselect must be >= 1, got {self.preselect}")
        for name in ("features", "exclude", "known_rule"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(v))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("threads")
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
            elif isinstance(v, dict):
                d[k] = {kk: _r(vv) for kk, vv in sorted(v.items())}
            elif isinstance(v, float):
                d[k] = _r(v)
        return d


@dataclass(frozen=True)
class CandidateSet:
    features: tuple[str, ...]
    d_squared: float
    edf: float
    converged: bool
    order: int = 0

    def to_dict(self) -> dict:
        return {
            "features": list(self.features),
            "d_squared": _r(self.d_squared),
            "edf": _r(self.edf),
            "converged": self.converged,
        }


@dataclass(frozen=True)
class NullificationVerdict:
    """Shape magnitude of one feature outside ``c*`` in the full model."""

    feature: str
    sup_norm: float
    scale: float
    nullified: bool
    reliable: bool = True

    @property
    def relative(self) -> float:
        return self.sup_norm / self.scale if self.scale > 0 else float("inf") if self.sup_norm > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "sup_norm": _r(self.sup_norm),
            "scale": _r(self.scale),
            "nullified": self.nullified,
            "reliable": self.reliable,
        }


@dataclass(frozen=True)
class ShapeChange:
    """How a feature's shape changes when ``c*`` joins the model.

    ``sup_without`` is measured in the model on all features except ``c*``,
    ``sup_with`` in the full model; ``status`` is ``nullified``, ``shrunk``
    or ``unchanged``.
    """

    feature: str
    sup_without: float
    sup_with: float
    status: str

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "sup_without": _r(self.sup_without),
            "sup_with": _r(self.sup_with),
            "status": self.status,
        }


@dataclass
class CircularityReport:
    target: str
    features: list[str]
    candidates: list[CandidateSet]
    selected: tuple[str, ...]
    verdicts: list[NullificationVerdict]
    outcome: str
    config: AuditConfig
    fingerprint: str
    complement: CandidateSet | None = None
    shape_changes: list[ShapeChange] = field(default_factory=list)
    preselected: list[str] | None = None
    notes: list[str] = field(default_factory=list)
    # fitted models kept for plotting; not serialized
    models: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def best(self) -> CandidateSet:
        return self.candidates[0]

    @property
    def d_squared(self) -> float:
        return self.best.d_squared

    @property
    def nullified(self) -> dict[str, bool]:
        return {v.feature: v.nullified for v in self.verdicts}

    def to_dict(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "target": self.target,
            "features": list(self.features),
            "preselected": None if self.preselected is None else list(self.preselected),
            "config": self.config.to_dict(),
            "seed": self.config.seed,
            "fingerprint": self.fingerprint,
            "ranked_models": [dict(c.to_dict(), rank=i + 1) for i, c in enumerate(self.candidates)],
            "selected": {
                "features": list(self.selected),
                "d_squared": _r(self.best.d_squared),
                "edf": _r(self.best.edf),
            },
            "complement": None if self.complement is None else self.complement.to_dict(),
            "verdicts": [v.to_dict() for v in self.verdicts],
            "shape_changes": [s.to_dict() for s in self.shape_changes],
            "outcome": self.outcome,
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "CircularityReport":
        if d.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {d.get('version')!r}")
        cfg = dict(d["config"])
        config = AuditConfig(**cfg)

        def cand(c, i=0):
            return CandidateSet(tuple(c["features"]), c["d_squared"], c["edf"], c["converged"], i)

        return cls(
            target=d["target"],
            features=list(d["features"]),
            candidates=[cand(c, i) for i, c in enumerate(d["ranked_models"])],
            selected=tuple(d["selected"]["features"]),
            verdicts=[NullificationVerdict(**v) for v in d["verdicts"]],
            outcome=d["outcome"],
            config=config,
            fingerprint=d["fingerprint"],
            complement=None if d["complement"] is None else cand(d["complement"]),
            shape_changes=[ShapeChange(**s) for s in d["shape_changes"]],
            preselected=d["preselected"],
            notes=list(d["notes"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "CircularityReport":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------- candidates


def enumerate_candidates(features, cap: int = SEARCH_CAP) -> list[tuple[str, ...]]:
    """All non-empty subsets, by size and then in column order."""
    features = list(features)
    if not features:
        raise ValueError("no features to enumerate")
    if len(set(features)) != len(features):
        raise ValueError(f"duplicate features in {features}")
    if len(features) > cap:
        raise ValueError(
            f"{len(features)} features exceed the exhaustive-search cap of {cap}; "
            f"preselect at most {cap} features (e.g. by correlation with the target)"
        )
    return [c for k in range(1, len(features) + 1) for c in itertools.combinations(features, k)]


def preselect_by_correlation(data: Dataset, target: str | None, m: int, features=None) -> list[str]:
    """The ``m`` features with the largest absolute Pearson correlation.

    Zero-variance features count as uncorrelated; ties keep column order.
    """
    target = target or data.target
    features = [f for f in (data.features if features is None else features) if f != target]
    if not 1 <= m <= len(features):
        raise ValueError(f"cannot preselect {m} of {len(features)} features")
    y = data[target] - data[target].mean()
    ny = np.sqrt(y @ y)
    scores = []
    for f in features:
        x = data[f] - data[f].mean()
        nx = np.sqrt(x @ x)
        scores.append(0.0 if nx == 0 or ny == 0 else abs(float(x @ y) / (nx * ny)))
    order = sorted(range(len(features)), key=lambda i: -scores[i])
    return [features[i] for i in order[:m]]


# ---------------------------------------------------------------- search


class _Fitter:
    """Fits subset models on one shared design, memoized by subset."""

    def __init__(self, data, target, features, config):
        self.data = data
        self.target = target
        self.config = config
        spec = ModelSpec.for_features(data, features, config.family, config.lam, config.knots)
        self.terms = {t.name: t for t in spec.terms}
        self.design = Design(data, spec.terms)
        self.cache: dict[frozenset, FittedGam] = {}

    def spec(self, subset) -> ModelSpec:
        return ModelSpec(tuple(self.terms[f] for f in subset), self.config.family, self.config.lam)

    def __call__(self, subset) -> FittedGam:
        key = frozenset(subset)
        if key not in self.cache:
            self.cache[key] = fit(self.spec(subset), self.data, self.target, design=self.design)
        return self.cache[key]

    def fit_many(self, subsets, threads=None):
        todo = [s for s in subsets if frozenset(s) not in self.cache]
        threads = _thread_count(threads)
        if todo and self.config.family == GAUSSIAN:
            self.design.gram([])  # build the shared cross-product before threads start
        if threads > 1 and len(todo) > 1:
            with ThreadPoolExecutor(threads) as pool:
                fits = list(pool.map(lambda s: fit(self.spec(s), self.data, self.target, design=self.design), todo))
            for s, g in zip(todo, fits):
                self.cache[frozenset(s)] = g
        else:
            for s in todo:
                self(s)
        return [self.cache[frozenset(s)] for s in subsets]


def _thread_count(threads):
    if threads is None:
        threads = int(os.environ.get("CIRCAUDIT_THREADS", "1") or 1)
    return max(1, int(threads))


def rank_candidates(cands: list[CandidateSet], tie_tol: float = TIE_TOL) -> list[CandidateSet]:
    """Order candidates: the D^2-tied top group by EDF, then the rest by D^2.

    The tie group holds every subset within ``tie_tol`` of the best D^2.
    EDF is compared after rounding to ``EDF_DIGITS`` decimals; equal EDF
    falls back to the smaller subset, then to enumeration order.
    """
    if not cands:
        raise ValueError("no candidates to rank")
    top = max(c.d_squared for c in cands)
    tied = [c for c in cands if c.d_squared >= top - tie_tol]
    rest = [c for c in cands if c.d_squared < top - tie_tol]
    tied.sort(key=lambda c: (round(c.edf, EDF_DIGITS), len(c.features), c.order))
    rest.sort(key=lambda c: (-c.d_squared, c.order))
    return tied + rest


def search(data: Dataset, target: str | None = None, candidates=None, config: AuditConfig = AuditConfig(),
           *, _fitter: _Fitter | None = None) -> tuple[list[CandidateSet], tuple[str, ...]]:
    """Fit one GAM per candidate subset and rank them.

    Returns the full ranking and the selected set ``c*`` (rank 1).
    """
    target = target or data.target
    if candidates is None:
        candidates = enumerate_candidates([f for f in data.features if f != target], config.cap)
    candidates = [tuple(c) for c in candidates]
    if not candidates or any(not c for c in candidates):
        raise ValueError("candidates must be non-empty subsets")
    fitter = _fitter or _Fitter(data, target, sorted(set().union(*candidates), key=data.names.index), config)
    fits = fitter.fit_many(candidates, config.threads)
    cands = [CandidateSet(c, g.d_squared, g.edf, g.converged, i) for i, (c, g) in enumerate(zip(candidates, fits))]
    ranked = rank_candidates(cands, config.tie_tol)
    return ranked, ranked[0].features


def _verdicts(full: FittedGam, selected, scale: float, eps_null: float, grid_size: int):
    out = []
    for f in full.spec.feature_names:
        if f in selected:
            continue
        s = sup_norm(full, f, grid_size)
        out.append(NullificationVerdict(f, s, scale, bool(s <= eps_null * scale), full.converged))
    return out


def nullification_check(data: Dataset, target: str | None, selected, features=None,
                        config: AuditConfig = AuditConfig(), *, _fitter: _Fitter | None = None):
    """Fit the full model and test every feature outside ``selected``.

    The scale is the standard deviation of the link-scale fitted values of
    the model on ``selected`` alone.
    """
    target = target or data.target
    selected = tuple(selected)
    if not selected:
        raise ValueError("selected set must be non-empty")
    features = list(data.features if features is None else features)
    missing = [f for f in selected if f not in features]
    if missing:
        raise ValueError(f"selected features {missing} are not among the model features")
    fitter = _fitter or _Fitter(data, target, features, config)
    full, sel = fitter.fit_many([tuple(features), selected], config.threads)
    return _verdicts(full, selected, sel.eta_sd, config.eps_null, config.grid_size)


def _shape_changes(fitter, features, selected, verdicts, grid_size):
    rest = tuple(f for f in features if f not in selected)
    if not rest:
        return None, []
    comp = fitter(rest)
    changes = []
    for v in verdicts:
        without = sup_norm(comp, v.feature, grid_size)
        if v.nullified:
            status = "nullified"
        elif v.sup_norm < _SHRINK_RATIO * without:
            status = "shrunk"
        else:
            status = "unchanged"
        changes.append(ShapeChange(v.feature, without, v.sup_norm, status))
    return comp, changes


def decide(best: CandidateSet, verdicts, config: AuditConfig) -> tuple[str, list[str]]:
    """Outcome and explanatory notes for a ranked search and its verdicts."""
    notes = []
    sel = set(best.features)
    if not best.converged:
        return INCONCLUSIVE, ["the selected model did not converge"]
    if best.d_squared < config.delta_close:
        notes.append(f"best D^2 {best.d_squared:.4f} is below delta_close {config.delta_close}")
        return NOT_CIRCULAR, notes
    active = [v.feature for v in verdicts if not v.nullified]
    if any(not v.reliable for v in verdicts):
        notes.append("the full model did not converge; nullification verdicts are unreliable")
    if config.known_rule is not None:
        rule = set(config.known_rule)
        hit = sel & rule
        if not hit:
            notes.append("selected set shares no feature with the known rule")
            return NOT_CIRCULAR, notes
        if hit != rule:
            notes.append(f"selected set uses only {sorted(hit)} of the known rule {sorted(rule)}")
            return PARTIAL, notes
        if sel != rule:
            notes.append(f"selected set needs {sorted(sel - rule)} besides the known rule")
            return PARTIAL, notes
    if active:
        notes.append(f"not nullified: {', '.join(active)}")
        return PARTIAL, notes
    return CIRCULAR, notes


def run_test(data: Dataset, target: str | None = None, config: AuditConfig = AuditConfig()) -> CircularityReport:
    """Preselect (optionally), search all subsets, check nullification."""
    target = target or data.target
    if target is None:
        raise GamError("no target column given")
    if target not in data.columns:
        raise KeyError(f"target column {target!r} not in dataset")
    if config.features is not None:
        unknown = [f for f in config.features if f not in data.columns]
        if unknown:
            raise KeyError(f"unknown features: {unknown}")
        features = [f for f in config.features if f != target]
    else:
        features = [f for f in data.names if f != target]
    unknown = [f for f in config.exclude if f not in data.columns]
    if unknown:
        raise KeyError(f"unknown features to exclude: {unknown}")
    features = [f for f in features if f not in config.exclude]
    if not features:
        raise ValueError("no candidate features left")

    preselected = None
    if config.preselect is not None and config.preselect < len(features):
        preselected = preselect_by_correlation(data, target, config.preselect, features)
        features = [f for f in features if f in preselected]

    candidates = enumerate_candidates(features, config.cap)
    fitter = _Fitter(data, target, features, config)
    ranked, selected = search(data, target, candidates, config, _fitter=fitter)
    best = ranked[0]
    full = fitter(tuple(features))
    sel_fit = fitter(selected)
    verdicts = _verdicts(full, selected, sel_fit.eta_sd, config.eps_null, config.grid_size)
    comp_fit, changes = _shape_changes(fitter, features, selected, verdicts, config.grid_size)
    outcome, notes = decide(best, verdicts, config)
    shrunk = [c.feature for c in changes if c.status == "shrunk"]
    if shrunk:
        notes.append(f"shrunk but not nullified: {', '.join(shrunk)}")

    complement = None
    if comp_fit is not None:
        rest = tuple(f for f in features if f not in selected)
        complement = CandidateSet(rest, comp_fit.d_squared, comp_fit.edf, comp_fit.converged)
    kept = ranked if config.top_k is None else ranked[: config.top_k]
    models = {"selected": sel_fit, "full": full}
    if comp_fit is not None:
        models["complement"] = comp_fit
    return CircularityReport(
        target=target,
        features=features,
        candidates=kept,
        selected=selected,
        verdicts=verdicts,
        outcome=outcome,
        config=config,
        fingerprint=data.select(features).fingerprint(),
        complement=complement,
        shape_changes=changes,
        preselected=preselected,
        notes=notes,
        models=models,
    )
