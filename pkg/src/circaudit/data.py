"""Tabular datasets: column storage, CSV round-trips and seeded splits."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CONTINUOUS = "continuous"
BINARY = "binary"


def infer_kind(values: np.ndarray) -> str:
    return BINARY if np.isin(values, (0.0, 1.0)).all() else CONTINUOUS


@dataclass
class Dataset:
    """Named numeric columns plus the name of one target column.

    Columns are stored as float64 arrays; every feature column is tagged
    ``"binary"`` (values in {0, 1}) or ``"continuous"``.  ``groups`` is an
    optional per-row label (e.g. a query id) used for grouped splitting;
    it is not a feature and is not written to CSV.
    """

    columns: dict[str, np.ndarray]
    target: str | None = None
    kinds: dict[str, str] = field(default_factory=dict)
    groups: np.ndarray | None = None

    def __post_init__(self):
        cols = {}
        n = None
        for name, values in self.columns.items():
            arr = np.ascontiguousarray(values, dtype=float)
            if arr.ndim != 1:
                raise ValueError(f"column {name!r} is not one-dimensional")
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise ValueError(f"column {name!r} has {arr.size} rows, expected {n}")
            if not np.isfinite(arr).all():
                bad = int(np.flatnonzero(~np.isfinite(arr))[0])
                raise ValueError(f"non-finite value in column {name!r} at row {bad}")
            cols[name] = arr
        self.columns = cols
        if self.target is not None and self.target not in cols:
            raise KeyError(f"target column {self.target!r} not in dataset")
        kinds = {name: infer_kind(arr) for name, arr in cols.items()}
        kinds.update({k: v for k, v in self.kinds.items() if k in cols})
        for name, kind in kinds.items():
            if kind == BINARY and not np.isin(cols[name], (0.0, 1.0)).all():
                raise ValueError(f"column {name!r} is tagged binary but has values outside {{0, 1}}")
        self.kinds = kinds
        if self.groups is not None:
            self.groups = np.asarray(self.groups)
            if self.groups.shape != (self.n_rows,):
                raise ValueError("groups must have one entry per row")

    @property
    def n_rows(self) -> int:
        return next(iter(self.columns.values())).size if self.columns else 0

    def __len__(self) -> int:
        return self.n_rows

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    @property
    def features(self) -> list[str]:
        return [c for c in self.columns if c != self.target]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    @property
    def y(self) -> np.ndarray:
        if self.target is None:
            raise ValueError("dataset has no target column")
        return self.columns[self.target]

    def matrix(self, names=None) -> np.ndarray:
        names = self.features if names is None else list(names)
        return np.column_stack([self.columns[n] for n in names]) if names else np.empty((self.n_rows, 0))

    def with_target(self, target: str) -> "Dataset":
        return Dataset(dict(self.columns), target, dict(self.kinds), self.groups)

    def with_column(self, name: str, values, kind: str | None = None) -> "Dataset":
        cols = dict(self.columns)
        cols[name] = values
        kinds = {k: v for k, v in self.kinds.items() if k != name}
        if kind is not None:
            kinds[name] = kind
        return Dataset(cols, self.target, kinds, self.groups)

    def select(self, names) -> "Dataset":
        """Keep the listed columns (the target is always kept)."""
        names = list(names)
        missing = [n for n in names if n not in self.columns]
        if missing:
            raise KeyError(f"unknown columns: {missing}")
        keep = [c for c in self.columns if c in names or c == self.target]
        return Dataset({c: self.columns[c] for c in keep}, self.target, dict(self.kinds), self.groups)

    def drop(self, names) -> "Dataset":
        names = set(names)
        missing = names - set(self.columns)
        if missing:
            raise KeyError(f"unknown columns: {sorted(missing)}")
        if self.target in names:
            raise ValueError("cannot drop the target column")
        return self.select([c for c in self.columns if c not in names])

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        groups = None if self.groups is None else self.groups[rows]
        return Dataset({c: v[rows] for c, v in self.columns.items()}, self.target, dict(self.kinds), groups)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, arr in self.columns.items():
            h.update(name.encode())
            h.update(b"\0")
            h.update(arr.tobytes())
        h.update(str(self.target).encode())
        return h.hexdigest()


def read_csv(path, target: str | None = None) -> Dataset:
    """Read a headed, all-numeric CSV file.

    Errors name the offending (row, column); rows are numbered from 1 for
    the first data line.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        dupes = sorted({h for h in header if header.count(h) > 1})
        if dupes:
            raise ValueError(f"{path}: duplicate column names {dupes}")
        if target is not None and target not in header:
            raise KeyError(f"{path}: target column {target!r} not found in header {header}")
        rows = []
        for i, rec in enumerate(reader, start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise ValueError(f"{path}: row {i} has {len(rec)} cells, expected {len(header)}")
            vals = []
            for j, cell in enumerate(rec):
                try:
                    v = float(cell)
                except ValueError:
                    raise ValueError(f"{path}: cannot parse {cell!r} at (row {i}, column {header[j]!r})") from None
                if not np.isfinite(v):
                    raise ValueError(f"{path}: non-finite value {cell!r} at (row {i}, column {header[j]!r})")
                vals.append(v)
            rows.append(vals)
    table = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return Dataset({h: table[:, j] for j, h in enumerate(header)}, target)


def write_csv(data: Dataset, path) -> None:
    """Write every column with 9 significant digits, header first."""
    names = data.names
    table = data.matrix(names)
    with Path(path).open("w", newline="") as fh:
        fh.write(",".join(names) + "\n")
        for row in table:
            fh.write(",".join(f"{v:.9g}" for v in row) + "\n")


def split(data: Dataset, fraction: float, seed: int, by_group: bool = False) -> tuple[Dataset, Dataset]:
    """Seeded uniform split without replacement.

    With ``by_group`` whole groups (``data.groups``) go to one side, as in
    a query-level train/test split.
    """
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    if by_group:
        if data.groups is None:
            raise ValueError("by_group split requested but dataset has no groups")
        uniq = np.unique(data.groups)
        perm = rng.permutation(uniq.size)
        n_train = int(round(fraction * uniq.size))
        train_mask = np.isin(data.groups, uniq[perm[:n_train]])
        train_rows, test_rows = np.flatnonzero(train_mask), np.flatnonzero(~train_mask)
    else:
        perm = rng.permutation(data.n_rows)
        n_train = int(round(fraction * data.n_rows))
        train_rows, test_rows = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    if train_rows.size == 0 or test_rows.size == 0:
        raise ValueError("split produced an empty partition")
    return data.take(train_rows), data.take(test_rows)
