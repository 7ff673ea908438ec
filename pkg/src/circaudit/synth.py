"""Deterministic label rules and synthetic datasets that follow them.

The rule thresholds are the published ones (patent citation relevance,
liver and kidney SOFA).  Everything else about the generated tables (row
mix, marginal distributions, the surrogate similarity scores and the
correlated nuisance measurements) is made up so that the tables have the
same structure as the real corpora: defining columns that fix the label
exactly, plus correlated but non-defining columns.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .data import BINARY, CONTINUOUS, Dataset

CITATIONS = ("inventor", "examiner", "family")
PATENT_FEATURES = ("neural", "tfidf") + CITATIONS
LIVER_FEATURES = ("bili", "asat", "quinr", "alat", "hzv")
KIDNEY_FEATURES = ("crea", "urine24", "artph", "bun", "temp", "lactate")

LIVER_CUTS = (1.2, 1.9, 5.9, 11.9)
CREA_CUTS = (1.2, 1.9, 3.4, 4.9)
URINE_CUTS = (200.0, 500.0)


# ------------------------------------------------------------------ rules


def _indicators(*cols):
    arrs = [np.asarray(c, dtype=float) for c in cols]
    for a in arrs:
        if not np.isin(a, (0.0, 1.0)).all():
            raise ValueError("citation indicators must be 0 or 1")
    if np.any(sum(arrs) > 1):
        raise ValueError("at most one citation indicator may be set per row")
    return arrs


def _out(values, scalar):
    values = values.astype(int)
    return int(values) if scalar else values


def relevance_label(inventor, examiner, family):
    """Graded relevance: family 3, examiner 2, inventor 1, no citation 0."""
    scalar = np.ndim(inventor) == 0
    inv, exa, fam = _indicators(inventor, examiner, family)
    return _out(3 * fam + 2 * exa + inv, scalar)


def binary_relevance_label(inventor, examiner, family):
    scalar = np.ndim(inventor) == 0
    inv, exa, fam = _indicators(inventor, examiner, family)
    return _out(inv + exa + fam, scalar)


def _bands(x, cuts):
    # number of cuts strictly below x, i.e. band (c_{i-1}, c_i] -> i
    return np.searchsorted(np.asarray(cuts), x, side="left")


def liver_sofa(bili):
    scalar = np.ndim(bili) == 0
    bili = np.asarray(bili, dtype=float)
    if np.any(bili <= 0):
        raise ValueError("bilirubin must be positive")
    return _out(_bands(bili, LIVER_CUTS), scalar)


def creatinine_score(crea):
    crea = np.asarray(crea, dtype=float)
    if np.any(crea <= 0):
        raise ValueError("creatinine must be positive")
    return _bands(crea, CREA_CUTS)


def urine_score(urine):
    urine = np.asarray(urine, dtype=float)
    if np.any(urine < 0):
        raise ValueError("urine output cannot be negative")
    # > 500 -> 0, (200, 500] -> 3, [0, 200] -> 4 (zero output is the worst band)
    return np.select([urine > URINE_CUTS[1], urine > URINE_CUTS[0]], [0, 3], 4)


def kidney_sofa(crea, urine):
    scalar = np.ndim(crea) == 0 and np.ndim(urine) == 0
    return _out(np.maximum(creatinine_score(crea), urine_score(urine)), scalar)


@dataclass(frozen=True)
class LabelRule:
    """A published deterministic labelling rule.

    ``marginals`` maps each defining feature to its one-dimensional step
    function (used for plot overlays); the kidney rule combines its two
    marginals with ``max``.
    """

    rule_id: str
    features: tuple[str, ...]
    thresholds: dict
    label: Callable
    marginals: dict

    def apply(self, data: Dataset) -> np.ndarray:
        return np.asarray(self.label(*(data[f] for f in self.features)), dtype=float)

    def marginal(self, feature: str, x) -> np.ndarray:
        return np.asarray(self.marginals[feature](np.asarray(x, dtype=float)), dtype=float)


RULES = {
    "patent-relevance": LabelRule(
        "patent-relevance",
        ("inventor", "examiner", "family"),
        {"no citation": 0, "inventor": 1, "examiner": 2, "family": 3},
        relevance_label,
        {"inventor": lambda x: 1.0 * x, "examiner": lambda x: 2.0 * x, "family": lambda x: 3.0 * x},
    ),
    "patent-binary": LabelRule(
        "patent-binary",
        ("inventor", "examiner", "family"),
        {"no citation": 0, "any citation": 1},
        binary_relevance_label,
        {c: (lambda x: 1.0 * x) for c in CITATIONS},
    ),
    "liver-sofa": LabelRule(
        "liver-sofa", ("bili",), {"bili": LIVER_CUTS}, liver_sofa, {"bili": liver_sofa},
    ),
    "kidney-sofa": LabelRule(
        "kidney-sofa",
        ("crea", "urine24"),
        {"crea": CREA_CUTS, "urine24": URINE_CUTS},
        kidney_sofa,
        {"crea": creatinine_score, "urine24": urine_score},
    ),
}
RULE_ALIASES = {"patent": "patent-relevance", "liver": "liver-sofa", "kidney": "kidney-sofa"}


def get_rule(rule_id: str) -> LabelRule:
    key = RULE_ALIASES.get(rule_id, rule_id)
    if key not in RULES:
        raise KeyError(f"unknown rule {rule_id!r}; choose from {sorted(RULES) + sorted(RULE_ALIASES)}")
    return RULES[key]


# ------------------------------------------------------------- generators


@dataclass(frozen=True)
class GenConfig:
    """Generator settings.  All distributions are synthetic.

    ``score_noise`` scales the noise of the patent similarity surrogates
    (1.0 is the calibrated default); ``nuisance_noise`` scales the noise of
    the correlated ICU measurements (2.5 puts the best model without the
    defining columns near D^2 = 0.27).
    """

    n_rows: int = 20_000
    seed: int = 0
    noise_features: int = 0
    score_noise: float = 1.0
    nuisance_noise: float = 2.5
    # rows per patent query: (no citation, inventor, examiner, family)
    patent_mix: tuple[int, int, int, int] = (200, 150, 75, 25)
    liver_bands: tuple[float, ...] = (0.36, 0.20, 0.22, 0.12, 0.10)
    # share of oliguric rows that also have elevated creatinine
    kidney_overlap: float = 0.0

    def __post_init__(self):
        if self.n_rows < 1:
            raise ValueError("n_rows must be >= 1")
        if self.score_noise < 0 or self.nuisance_noise < 0:
            raise ValueError("noise scales must be >= 0")
        if self.noise_features < 0:
            raise ValueError("noise_features must be >= 0")
        for name in ("liver_bands",):
            p = np.asarray(getattr(self, name))
            if np.any(p < 0) or not np.isclose(p.sum(), 1.0):
                raise ValueError(f"{name} must be a probability vector")
        if not 0 <= self.kidney_overlap <= 1:
            raise ValueError("kidney_overlap must be in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


# Surrogate score slope / noise per unit of relevance (before rescaling to [0, 1]).
_TFIDF = (1.0, 0.95)
_NEURAL = (1.0, 1.14)


def _score(rng, relevance, slope, sigma):
    raw = slope * relevance + sigma * rng.standard_normal(relevance.size)
    lo, hi = -2.0 * sigma, 3.0 * slope + 2.0 * sigma
    return np.round(np.clip((raw - lo) / (hi - lo), 0.0, 1.0), 9)


def gen_patent(config: GenConfig = GenConfig(), rule: str = "patent-relevance") -> Dataset:
    """Query/document pairs with citation indicators and two similarity scores.

    Each query contributes ``patent_mix`` rows; the last query is truncated
    to reach ``n_rows``.  Rows carry the query id in ``groups``.
    """
    rule = get_rule(rule)
    if rule.rule_id not in ("patent-relevance", "patent-binary"):
        raise ValueError(f"gen_patent cannot produce labels for {rule.rule_id!r}")
    rng = np.random.default_rng(config.seed)
    per_query = np.repeat(np.arange(4), config.patent_mix)
    n_queries = -(-config.n_rows // per_query.size)
    kind = np.concatenate([rng.permutation(per_query) for _ in range(n_queries)])[: config.n_rows]
    groups = np.repeat(np.arange(n_queries), per_query.size)[: config.n_rows]
    inventor = (kind == 1).astype(float)
    examiner = (kind == 2).astype(float)
    family = (kind == 3).astype(float)
    relevance = relevance_label(inventor, examiner, family).astype(float)
    s = config.score_noise
    neural = _score(rng, relevance, _NEURAL[0], s * _NEURAL[1])
    tfidf = _score(rng, relevance, _TFIDF[0], s * _TFIDF[1])
    cols = {"neural": neural, "tfidf": tfidf, "inventor": inventor, "examiner": examiner, "family": family}
    cols.update(_noise_columns(rng, config))
    cols["relevance"] = rule.label(inventor, examiner, family).astype(float)
    kinds = {"neural": CONTINUOUS, "tfidf": CONTINUOUS}
    kinds.update({c: BINARY for c in CITATIONS})
    return Dataset(cols, "relevance", kinds, groups)


def _noise_columns(rng, config):
    return {f"noise{i + 1}": rng.standard_normal(config.n_rows) for i in range(config.noise_features)}


def _unit_uniform(rng, n):
    return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), n)


def _quantize(x, step, lo):
    return np.maximum(np.round(np.round(x / step) * step, 6), lo)


def _banded(rng, n, probs, edges, upper):
    """Uniform draws inside randomly chosen bands ``(edges[i-1], edges[i]]``."""
    lows = np.concatenate([[edges[0]], edges[1:]])
    highs = np.concatenate([edges[1:], [upper]])
    band = rng.choice(len(probs), size=n, p=np.asarray(probs) / np.sum(probs))
    return rng.uniform(lows[band], highs[band]), band


def gen_icu(config: GenConfig = GenConfig(), target: str = "liver_sofa") -> Dataset:
    """ICU-style measurements with both SOFA scores as columns.

    Bilirubin and creatinine are reported at 0.05 mg/dL, urine output at
    20 mL, so the rule thresholds fall on reporting steps.  The nuisance
    measurements are noisy monotone functions of a single defining
    measurement each, so they correlate with the scores without defining
    them.  Liver and kidney blocks are independent.
    """
    if target not in ("liver_sofa", "kidney_sofa"):
        raise ValueError(f"target must be 'liver_sofa' or 'kidney_sofa', got {target!r}")
    rng = np.random.default_rng(config.seed)
    n = config.n_rows
    nz = config.nuisance_noise

    raw, _ = _banded(rng, n, config.liver_bands, np.array((0.1,) + LIVER_CUTS), 15.0)
    bili = _quantize(raw, 0.05, 0.1)
    zb = np.log(bili)
    zb = (zb - 0.55) / 1.0
    asat = np.exp(3.3 + 0.45 * zb + nz * 0.55 * rng.standard_normal(n))
    alat = np.exp(3.1 + 0.40 * zb + nz * 0.60 * rng.standard_normal(n))
    quinr = 1.0 + 0.25 * np.exp(0.35 * zb + nz * 0.45 * rng.standard_normal(n))
    hzv = 6.0 - 0.6 * zb + nz * 1.3 * rng.standard_normal(n)

    # urine first; creatinine is drawn conditionally (oliguria <-> higher crea)
    ugrp = rng.choice(3, size=n, p=(0.72, 0.14, 0.14))
    urine = np.select(
        [ugrp == 0, ugrp == 1],
        [np.minimum(500.0 + rng.gamma(2.5, 300.0, n), 4500.0), rng.uniform(200.0, 500.0, n)],
        rng.uniform(0.0, 200.0, n),
    )
    urine = np.maximum(np.round(np.round(urine / 20.0) * 20.0, 6), 0.0)
    urine = np.where((urine <= 500.0) & (ugrp == 0), 520.0, urine)
    urine = np.where((urine > 500.0) & (ugrp == 1), 500.0, urine)
    urine = np.where((urine > 200.0) & (ugrp == 2), 200.0, urine)

    crea_normal_draw, _ = _banded(rng, n, (0.52, 0.18, 0.14, 0.09, 0.07), np.array((0.3,) + CREA_CUTS), 8.0)
    # oliguric rows: creatinine high within the normal band, rarely elevated
    oligo_crea = 0.75 + 0.45 * rng.beta(4.0, 1.5, n)
    overlap = rng.random(n) < config.kidney_overlap
    oligo_crea = np.where(overlap, rng.uniform(1.25, 8.0, n), oligo_crea)
    crea = _quantize(np.where(ugrp == 0, crea_normal_draw, oligo_crea), 0.05, 0.3)
    # normal-urine rows: output drops as creatinine rises
    urine = np.where(ugrp == 0, np.maximum(520.0, np.round((urine - 120.0 * (crea - 1.0)) / 20.0) * 20.0), urine)

    zc = (np.log(crea) - 0.2) / 0.6
    zu = (np.log1p(urine) - 6.6) / 1.0
    # bounded unit-variance noise keeps the nuisance tails populated
    bun = 20.0 + 8.0 * zc + nz * 6.0 * _unit_uniform(rng, n)
    artph = 7.38 + 0.035 * zu + nz * 0.07 * _unit_uniform(rng, n)
    temp = 37.2 + 0.25 * zc + nz * 0.8 * _unit_uniform(rng, n)
    lactate = 1.6 - 0.4 * zu + nz * 0.7 * _unit_uniform(rng, n)

    cols = {
        "bili": bili, "asat": asat, "quinr": quinr, "alat": alat, "hzv": hzv,
        "crea": crea, "urine24": urine, "artph": artph, "bun": bun, "temp": temp, "lactate": lactate,
    }
    cols.update(_noise_columns(rng, config))
    cols["liver_sofa"] = liver_sofa(bili).astype(float)
    cols["kidney_sofa"] = kidney_sofa(crea, urine).astype(float)
    return Dataset(cols, target, {k: CONTINUOUS for k in cols if k not in ("liver_sofa", "kidney_sofa")})


def icu_view(data: Dataset, rule: str) -> Dataset:
    """Restrict an ICU table to one rule's candidate features and target."""
    rule = get_rule(rule)
    if rule.rule_id == "liver-sofa":
        feats, target = LIVER_FEATURES, "liver_sofa"
    elif rule.rule_id == "kidney-sofa":
        feats, target = KIDNEY_FEATURES, "kidney_sofa"
    else:
        raise ValueError(f"{rule.rule_id!r} is not an ICU rule")
    noise = [c for c in data.names if c.startswith("noise")]
    return data.with_target(target).select(list(feats) + noise)


def ablate(data: Dataset, features) -> Dataset:
    """Copy with the listed columns set to zero; kinds and target untouched."""
    features = list(features)
    unknown = [f for f in features if f not in data.columns]
    if unknown:
        raise KeyError(f"unknown features: {unknown}")
    if data.target in features:
        raise ValueError("cannot ablate the target column")
    cols = {k: (np.zeros_like(v) if k in features else v) for k, v in data.columns.items()}
    return Dataset(cols, data.target, dict(data.kinds), data.groups)
