"""A small numpy feedforward network used as a black-box teacher.

The network is trained by plain mini-batch SGD; a student GAM is then fit
to its (thresholded) predictions to find out which inputs it relies on.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .circularity import AuditConfig, CircularityReport, run_test
from .data import Dataset
from .gam import BINOMIAL, GAUSSIAN

WEIGHTS_VERSION = 1
DEFAULT_HIDDEN = (16, 32, 64, 32, 16)
ACTIVATIONS = ("tanh", "relu")
LOSSES = ("logistic", "squared")
STUDENT_TARGET = "teacher_label"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 0.01
    epochs: int = 5
    dropout: float = 0.0
    loss: str = "logistic"
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")


@dataclass
class TeacherNet:
    """Weights of a fully connected net with one output unit.

    Inputs are standardized with the stored ``mean``/``scale`` before the
    first layer.  A net trained with the logistic loss predicts
    probabilities, one trained with the squared loss predicts raw scores.
    """

    feature_names: tuple[str, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"
    loss: str = "logistic"
    dropout: float = 0.0
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        self.feature_names = tuple(self.feature_names)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias vector per weight matrix and at least one layer")
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        if self.weights[0].shape[0] != len(self.feature_names):
            raise ValueError(f"input width {self.weights[0].shape[0]} != {len(self.feature_names)} features")
        if self.weights[-1].shape[1] != 1:
            raise ValueError("output width must be 1")
        for w, b, w_next in zip(self.weights, self.biases, self.weights[1:] + [None]):
            if b.shape != (w.shape[1],) or (w_next is not None and w_next.shape[0] != w.shape[1]):
                raise ValueError("inconsistent layer shapes")
        k = len(self.feature_names)
        self.mean = np.zeros(k) if self.mean is None else np.asarray(self.mean, dtype=float)
        self.scale = np.ones(k) if self.scale is None else np.asarray(self.scale, dtype=float)

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def predict(self, data) -> np.ndarray:
        return predict(self, data)

    def __call__(self, data) -> np.ndarray:
        return predict(self, data)

    def to_dict(self) -> dict:
        return {
            "version": WEIGHTS_VERSION,
            "feature_names": list(self.feature_names),
            "activation": self.activation,
            "loss": self.loss,
            "dropout": self.dropout,
            "seed": self.seed,
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TeacherNet":
        if d.get("version") != WEIGHTS_VERSION:
            raise ValueError(f"unsupported weights version {d.get('version')!r}")
        return cls(
            d["feature_names"], [np.array(w) for w in d["weights"]], [np.array(b) for b in d["biases"]],
            d["activation"], d["loss"], d["dropout"], np.array(d["mean"]), np.array(d["scale"]), d["seed"],
        )

    def save(self, path) -> None:
        # repr of a float round-trips exactly, so reloaded nets predict identically
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "TeacherNet":
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_net(feature_names, hidden=DEFAULT_HIDDEN, activation: str = "tanh", loss: str = "logistic",
             seed: int = 0, dropout: float = 0.0, mean=None, scale=None) -> TeacherNet:
    """Weights drawn from U(-a, a) with ``a = sqrt(3 / fan_in)``; zero biases."""
    rng = np.random.default_rng(seed)
    sizes = (len(feature_names),) + tuple(hidden) + (1,)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        a = np.sqrt(3.0 / fan_in)
        weights.append(rng.uniform(-a, a, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return TeacherNet(tuple(feature_names), weights, biases, activation, loss, dropout, mean, scale, seed)


def _act(name, z):
    return np.tanh(z) if name == "tanh" else np.maximum(z, 0.0)


def _act_grad(name, z, h):
    return 1.0 - h * h if name == "tanh" else (z > 0).astype(float)


def _inputs(net: TeacherNet, data) -> np.ndarray:
    if isinstance(data, Dataset):
        missing = [f for f in net.feature_names if f not in data.columns]
        if missing:
            raise KeyError(f"dataset lacks teacher features {missing}")
        X = data.matrix(net.feature_names)
    else:
        X = np.atleast_2d(np.asarray(data, dtype=float))
        if X.shape[1] != len(net.feature_names):
            raise ValueError(f"input has {X.shape[1]} columns, the net expects {len(net.feature_names)}")
    return (X - net.mean) / net.scale


def _forward(net: TeacherNet, X, rng=None, dropout: float = 0.0):
    """Return output logits and per-layer ``(input, pre-activation,
    activation, dropout mask)`` tuples for backprop."""
    h = X
    cache = []
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        if i == last:
            cache.append((h, z, None, None))
            break
        a = _act(net.activation, z)
        mask = None
        if rng is not None and dropout > 0:
            mask = (rng.random(a.shape) >= dropout) / (1.0 - dropout)
        cache.append((h, z, a, mask))
        h = a if mask is None else a * mask
    return z[:, 0], cache


def _loss(out, y, loss):
    if loss == "logistic":
        # mean binary cross-entropy on logits, stable for large |z|
        value = np.mean(np.logaddexp(0.0, out) - y * out)
        dout = (expit(out) - y) / y.size
    else:
        r = out - y
        value = 0.5 * np.mean(r * r)
        dout = r / y.size
    return float(value), dout


def loss_and_grads(net: TeacherNet, X, y, loss: str | None = None, rng=None, dropout: float = 0.0):
    """Mean loss on already-standardized inputs and its gradient.

    Returns ``(loss, dW, db)`` with one gradient array per layer.
    """
    loss = loss or net.loss
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    out, cache = _forward(net, X, rng, dropout)
    value, dout = _loss(out, y, loss)
    delta = dout[:, None]
    n_layers = len(net.weights)
    dW = [None] * n_layers
    db = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        h_in = cache[i][0]
        dW[i] = h_in.T @ delta
        db[i] = delta.sum(axis=0)
        if i:
            _, z, a, mask = cache[i - 1]
            da = delta @ net.weights[i].T
            if mask is not None:
                da = da * mask
            delta = da * _act_grad(net.activation, z, a)
    return value, dW, db


def train(data: Dataset, features, target: str | None = None, config: TrainConfig = TrainConfig(),
          hidden=DEFAULT_HIDDEN, activation: str = "tanh", standardize="auto") -> TeacherNet:
    """Mini-batch SGD on the configured loss; deterministic given the seed.

    ``standardize`` is ``True`` (z-score every input), ``False`` (raw
    inputs) or ``"auto"``: columns already inside [0, 1] pass through and
    the rest are z-scored.  Passing unit-scale columns through keeps 0/1
    indicators at their natural zero, which matters when they are later
    ablated to 0.
    """
    if standardize not in (True, False, "auto"):
        raise ValueError(f"standardize must be True, False or 'auto', got {standardize!r}")
    target = target or data.target
    features = tuple(features)
    if target in features:
        raise ValueError("target cannot be a teacher feature")
    y = data[target]
    if config.loss == "logistic" and not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("logistic loss requires a 0/1 target")
    X_raw = data.matrix(features)
    if standardize is False:
        mean = scale = None
    else:
        mean = X_raw.mean(axis=0)
        scale = X_raw.std(axis=0)
        scale[scale == 0] = 1.0
        if standardize == "auto":
            unit = (X_raw.min(axis=0) >= 0) & (X_raw.max(axis=0) <= 1)
            mean[unit], scale[unit] = 0.0, 1.0
    net = init_net(features, hidden, activation, config.loss, config.seed, config.dropout, mean, scale)
    X = (X_raw - net.mean) / net.scale
    rng = np.random.default_rng([config.seed, 1])
    n = X.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            # divergence is reported below, not as a numpy warning
            with np.errstate(over="ignore", invalid="ignore"):
                value, dW, db = loss_and_grads(net, X[idx], y[idx], config.loss, rng, config.dropout)
            if not np.isfinite(value):
                raise FloatingPointError(
                    f"non-finite training loss at epoch {epoch}, batch {b}; lower the learning rate"
                )
            for w, g in zip(net.weights, dW):
                w -= config.learning_rate * g
            for bias, g in zip(net.biases, db):
                bias -= config.learning_rate * g
    return net


def predict(net: TeacherNet, data) -> np.ndarray:
    """Forward pass without dropout: probabilities (logistic) or raw scores."""
    out, _ = _forward(net, _inputs(net, data))
    return expit(out) if net.loss == "logistic" else out


# ---------------------------------------------------------------- thresholds and metrics


@dataclass(frozen=True)
class ScoreThresholds:
    cuts: tuple[float, ...] = ()

    def __post_init__(self):
        cuts = tuple(float(c) for c in self.cuts)
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise ValueError(f"cuts must be strictly increasing, got {cuts}")
        object.__setattr__(self, "cuts", cuts)

    def __call__(self, scores) -> np.ndarray:
        return threshold(scores, self.cuts)


def threshold(scores, cuts) -> np.ndarray:
    """Class label = number of cuts strictly below the score."""
    cuts = np.asarray(cuts.cuts if isinstance(cuts, ScoreThresholds) else cuts, dtype=float)
    if np.any(np.diff(cuts) <= 0):
        raise ValueError("cuts must be strictly increasing")
    return np.searchsorted(cuts, np.asarray(scores, dtype=float), side="left")


def learn_thresholds(scores, labels, k: int) -> ScoreThresholds:
    """Choose ``k - 1`` cuts among midpoints of the sorted distinct scores.

    Boundaries are placed in ascending order; boundary ``j`` minimizes the
    training error of "label <= j" versus "label > j" among midpoints above
    the previous cut (leaving room for the remaining boundaries).  Ties go
    to the smallest midpoint.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.size == 0:
        raise ValueError("scores and labels must be non-empty and of equal length")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if np.any((labels < 0) | (labels >= k)) or np.any(labels != np.round(labels)):
        raise ValueError(f"labels must be integers in [0, {k - 1}]")
    if k == 1:
        return ScoreThresholds(())
    distinct, inv = np.unique(scores, return_inverse=True)
    if distinct.size < k:
        raise ValueError(f"need at least {k} distinct scores for {k} classes, got {distinct.size}")
    mids = 0.5 * (distinct[1:] + distinct[:-1])
    cuts = []
    lo = 0
    for j in range(k - 1):
        hi = mids.size - (k - 2 - j)  # exclusive; keeps one midpoint per later boundary
        low_side = np.bincount(inv, weights=(labels <= j), minlength=distinct.size)
        high_side = np.bincount(inv, weights=(labels > j), minlength=distinct.size)
        # cut after distinct value i: errors = high labels at or below + low labels above
        err = np.cumsum(high_side)[:-1] + (low_side.sum() - np.cumsum(low_side)[:-1])
        i = lo + int(np.argmin(err[lo:hi]))
        cuts.append(float(mids[i]))
        lo = i + 1
    return ScoreThresholds(tuple(cuts))


def _pair(pred, truth):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty input")
    return pred, truth


def accuracy(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean(pred == truth))


def f1(pred, truth) -> float:
    """Binary F1 with positive class 1; 0 when precision + recall is 0."""
    pred, truth = _pair(pred, truth)
    p, t = pred == 1, truth == 1
    tp = float(np.sum(p & t))
    fp = float(np.sum(p & ~t))
    fn = float(np.sum(~p & t))
    if tp == 0:
        return 0.0
    precision, recall = tp / (tp + fp), tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


# ---------------------------------------------------------------- prediction exchange


def write_predictions(path, scores, row_ids=None) -> None:
    scores = np.asarray(scores, dtype=float)
    row_ids = np.arange(scores.size) if row_ids is None else np.asarray(row_ids)
    with Path(path).open("w", newline="") as fh:
        fh.write("row_id,score\n")
        for i, s in zip(row_ids, scores):
            fh.write(f"{int(i)},{float(s)!r}\n")


def read_predictions(path, n_rows: int | None = None) -> np.ndarray:
    """Scores ordered by ``row_id``; ids must be exactly ``0..n-1``."""
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"row_id", "score"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns row_id,score")
        ids, scores = [], []
        for line, rec in enumerate(reader, start=1):
            try:
                ids.append(int(rec["row_id"]))
                scores.append(float(rec["score"]))
            except ValueError:
                raise ValueError(f"{path}: cannot parse row {line}: {rec}") from None
    ids = np.array(ids)
    scores = np.array(scores)
    n = ids.size if n_rows is None else n_rows
    if ids.size != n or not np.array_equal(np.sort(ids), np.arange(n)):
        raise ValueError(f"{path}: row ids must cover 0..{n - 1} exactly once")
    if not np.isfinite(scores).all():
        raise ValueError(f"{path}: non-finite score")
    out = np.empty(n)
    out[ids] = scores
    return out


# ---------------------------------------------------------------- distillation audit


@dataclass
class DistillResult:
    report: CircularityReport
    student_data: Dataset
    labels: np.ndarray = field(repr=False)


def distill_audit(teacher, data: Dataset, features=None, *, cuts=None, binary: bool | None = None,
                  config: AuditConfig | None = None, known_rule=None) -> DistillResult:
    """Fit a student circularity test to a teacher's predictions on ``data``.

    ``teacher`` is a :class:`TeacherNet`, any callable mapping a dataset to
    scores, or a precomputed score array; only its outputs are used.  Scores
    are thresholded at 0.5 for probabilistic teachers (``binary``, the
    default for logistic nets) or at ``cuts`` for ordinal ones; otherwise
    the raw scores become the student target.  Binary targets use the
    binomial family, all others the Gaussian family.
    """
    if isinstance(teacher, TeacherNet):
        scores = predict(teacher, data)
        if binary is None:
            binary = teacher.loss == "logistic" and cuts is None
    elif callable(teacher):
        scores = np.asarray(teacher(data), dtype=float)
    else:
        scores = np.asarray(teacher, dtype=float)
    if scores.shape != (data.n_rows,):
        raise ValueError(f"expected {data.n_rows} teacher scores, got shape {scores.shape}")
    if binary and cuts is not None:
        raise ValueError("give either binary=True or cuts, not both")
    if binary:
        labels = threshold(scores, [0.5])
        family = BINOMIAL
    elif cuts is not None:
        labels = threshold(scores, cuts)
        family = GAUSSIAN
    else:
        labels = scores
        family = GAUSSIAN
    features = [f for f in (data.features if features is None else features) if f != STUDENT_TARGET]
    cols = {f: data[f] for f in features}
    cols[STUDENT_TARGET] = labels.astype(float)
    student = Dataset(cols, STUDENT_TARGET, {f: data.kinds[f] for f in features})
    config = config or AuditConfig()
    overrides = {"family": family}
    if known_rule is not None:
        overrides["known_rule"] = tuple(known_rule)
    config = AuditConfig(**{**asdict(config), **overrides})
    return DistillResult(run_test(student, STUDENT_TARGET, config), student, labels)
