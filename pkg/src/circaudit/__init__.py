"""Detect circular features with penalized-spline additive models."""

__version__ = "0.1.0"

from .circularity import (
    AuditConfig, CandidateSet, CircularityReport, NullificationVerdict, enumerate_candidates,
    nullification_check, preselect_by_correlation, run_test, search,
)
from .data import Dataset, read_csv, split, write_csv
from .gam import FittedGam, ModelSpec, Term, d_squared, deviance, feature_shape, fit
from .splines import KnotVector, SplineBlock, eval_basis, penalty_matrix, place_knots
from .synth import GenConfig, LabelRule, ablate, gen_icu, gen_patent, get_rule, icu_view
from .teacher import TeacherNet, TrainConfig, distill_audit, f1, accuracy, learn_thresholds, predict, threshold, train

__all__ = [
    "AuditConfig", "CandidateSet", "CircularityReport", "Dataset", "FittedGam", "GenConfig", "KnotVector",
    "LabelRule", "ModelSpec", "NullificationVerdict", "SplineBlock", "TeacherNet", "Term", "TrainConfig",
    "ablate", "accuracy", "d_squared", "deviance", "distill_audit", "enumerate_candidates", "eval_basis",
    "f1", "feature_shape", "fit", "gen_icu", "gen_patent", "get_rule", "icu_view", "learn_thresholds",
    "nullification_check", "penalty_matrix", "place_knots", "predict", "preselect_by_correlation",
    "read_csv", "run_test", "search", "split", "threshold", "train", "write_csv",
]
