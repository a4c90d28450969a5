"""Datasets: CSV ingestion, stratified splitting, class weights, synthetic data."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or out-of-contract dataset input."""


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with binary labels.

    ``index`` holds the row ids of the parent dataset so that splits (and
    anything built from them) can be traced back to original samples.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: Optional[tuple] = None
    source: str = ""
    index: Optional[np.ndarray] = None

    def __post_init__(self):
        x = _frozen(self.features, np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {x.shape}")
        if x.shape[1] < 1:
            raise DataError("dataset needs at least one feature column")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise DataError(
                f"labels length {y.shape} does not match {x.shape[0]} feature rows")
        if not np.all(np.isfinite(x)):
            row = int(np.argwhere(~np.isfinite(x))[0][0])
            raise DataError(f"non-finite feature value in row {row}")
        if y.size and not np.all((y == 0) | (y == 1)):
            raise DataError("label outside {0,1}")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", _frozen(y, np.int64))
        idx = np.arange(x.shape[0]) if self.index is None else self.index
        idx = _frozen(idx, np.int64)
        if idx.shape != (x.shape[0],):
            raise DataError("index length does not match row count")
        object.__setattr__(self, "index", idx)
        if self.feature_names is not None:
            names = tuple(self.feature_names)
            if len(names) != x.shape[1]:
                raise DataError("feature_names length does not match feature columns")
            object.__setattr__(self, "feature_names", names)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.features[rows], self.labels[rows],
                       self.feature_names, self.source, self.index[rows])


@dataclass(frozen=True)
class SplitPair:
    train: Dataset
    test: Dataset
    seed: int
    test_fraction: float


@dataclass(frozen=True)
class ClassWeights:
    """Per-class loss weights keyed by class id."""

    weights: dict = field(default_factory=dict)

    def __post_init__(self):
        w = {int(k): float(v) for k, v in dict(self.weights).items()}
        if not w:
            raise DataError("class weights are empty")
        if any(not (v > 0 and math.isfinite(v)) for v in w.values()):
            raise DataError(f"class weights must be positive, got {w}")
        object.__setattr__(self, "weights", w)

    def __getitem__(self, c):
        return self.weights[int(c)]

    def as_array(self, n_classes=2):
        missing = [c for c in range(n_classes) if c not in self.weights]
        if missing:
            raise DataError(f"no weight for class {missing}")
        return np.array([self.weights[c] for c in range(n_classes)])

    @classmethod
    def unit(cls, n_classes=2):
        return cls({c: 1.0 for c in range(n_classes)})


@dataclass(frozen=True)
class SyntheticSpec:
    n_samples: int
    n_features: int
    class_balance: float = 0.5
    separation: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if int(self.n_samples) < 1 or int(self.n_samples) != self.n_samples:
            raise DataError("n_samples must be a positive integer")
        if int(self.n_features) < 1 or int(self.n_features) != self.n_features:
            raise DataError("n_features must be a positive integer")
        if not 0.0 < self.class_balance < 1.0:
            raise DataError("class_balance must lie in (0, 1)")
        if not (self.separation >= 0 and math.isfinite(self.separation)):
            raise DataError("separation must be a non-negative real")
        if int(self.seed) < 0:
            raise DataError("seed must be non-negative")


def load_dataset(path, label_column="label") -> Dataset:
    """Read a headed CSV; every non-label column becomes a feature, in file order."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such dataset file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if label_column not in header:
            raise DataError(f"{path}: missing label column {label_column!r}")
        li = header.index(label_column)
        feat_cols = [i for i in range(len(header)) if i != li]
        rows, labels = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(rec)} cells, "
                                f"expected {len(header)}")
            lab = rec[li].strip()
            if lab not in ("0", "1"):
                try:
                    v = float(lab)
                except ValueError:
                    v = None
                if v not in (0.0, 1.0):
                    raise DataError(f"{path}: row {lineno}: label outside {{0,1}}: {lab!r}")
                lab = str(int(v))
            labels.append(int(lab))
            vals = []
            for i in feat_cols:
                try:
                    v = float(rec[i])
                except ValueError:
                    v = math.nan
                if not math.isfinite(v):
                    raise DataError(f"{path}: row {lineno}, column {header[i]!r}: "
                                    f"unparsable or non-finite value {rec[i]!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: empty file (no data rows)")
    return Dataset(np.array(rows), np.array(labels),
                   tuple(header[i] for i in feat_cols), str(path))


def write_dataset(ds: Dataset, path, label_column="label"):
    names = ds.feature_names or tuple(f"f{i}" for i in range(ds.n_features))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(names) + [label_column])
        for x, y in zip(ds.features.tolist(), ds.labels.tolist()):
            w.writerow([repr(v) for v in x] + [y])


def stratified_split(ds: Dataset, test_fraction: float, seed: int) -> SplitPair:
    """Split so each class contributes round(count * fraction) test rows.

    The per-class count is clamped to [1, count - 1] so both sides keep
    every class.
    """
    if not 0.0 < test_fraction < 1.0:
        raise DataError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(int(seed))
    test_rows = []
    for c in (0, 1):
        members = np.flatnonzero(ds.labels == c)
        n_c = members.size
        if n_c == 0:
            continue
        if n_c < 2:
            raise DataError(f"class {c} has {n_c} sample(s); need at least 2 to split")
        k = int(math.floor(n_c * test_fraction + 0.5))
        k = min(max(k, 1), n_c - 1)
        test_rows.append(rng.permutation(members)[:k])
    test_rows = np.sort(np.concatenate(test_rows))
    mask = np.zeros(len(ds), dtype=bool)
    mask[test_rows] = True
    return SplitPair(ds.subset(np.flatnonzero(~mask)), ds.subset(test_rows),
                     int(seed), float(test_fraction))


def class_weights(labels: Sequence[int], n_classes=2) -> ClassWeights:
    """Balanced inverse-frequency weights N / (C * N_c)."""
    y = np.asarray(labels)
    if y.size == 0:
        raise DataError("cannot compute class weights of an empty label vector")
    counts = np.bincount(y.astype(np.int64), minlength=n_classes)
    absent = [c for c in range(n_classes) if counts[c] == 0]
    if absent:
        raise DataError(f"class(es) {absent} absent from labels")
    return ClassWeights({c: y.size / (n_classes * counts[c]) for c in range(n_classes)})


def make_synthetic(spec: SyntheticSpec) -> Dataset:
    """Two unit-variance Gaussian blobs, means +-separation/2 on the first axis."""
    rng = np.random.default_rng(int(spec.seed))
    n_pos = int(math.floor(spec.n_samples * spec.class_balance + 0.5))
    n_neg = spec.n_samples - n_pos
    y = np.concatenate([np.zeros(n_neg, np.int64), np.ones(n_pos, np.int64)])
    x = rng.standard_normal((spec.n_samples, spec.n_features))
    x[:, 0] += np.where(y == 1, 0.5, -0.5) * spec.separation
    order = rng.permutation(spec.n_samples)
    return Dataset(x[order], y[order],
                   tuple(f"f{i}" for i in range(spec.n_features)),
                   f"synthetic(n={spec.n_samples},d={spec.n_features},"
                   f"sep={spec.separation},balance={spec.class_balance},seed={spec.seed})")
