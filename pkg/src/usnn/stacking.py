"""Meta-train set construction, meta-model training and the dual-output predictor."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, class_weights
from .nn import ArchSpec, Network, TrainConfig, forward, init_network, train
from .uq import BasePrediction, UqSetting, setting_samples, summarize

TRUST_THRESHOLD = 0.5


class DegenerateMetaLabels(ValueError):
    """All meta labels fall in one class at the requested threshold."""

    def __init__(self, tau, value):
        super().__init__(f"degenerate meta labels: every z = {value} at tau = {tau}")
        self.tau = tau
        self.value = value


class LayoutMismatch(ValueError):
    pass


def trust_labels(base_labels, truths, pe, tau) -> np.ndarray:
    """z = 1 iff the base prediction is correct and PE <= tau."""
    base_labels = np.asarray(base_labels)
    truths = np.asarray(truths)
    pe = np.asarray(pe, dtype=np.float64)
    return ((base_labels == truths) & (pe <= tau)).astype(np.int64)


def _check_tau(tau):
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")


@dataclass(frozen=True)
class MetaRecord:
    features: np.ndarray
    pe: float
    base_label: int
    truth: int
    z: int


@dataclass(frozen=True)
class MetaDataset:
    """Column-stored meta-train set; ``records`` gives the row view."""

    features: np.ndarray
    pe: np.ndarray
    base_label: np.ndarray
    truth: np.ndarray
    z: np.ndarray
    tau: float
    include_pe: bool = True
    mean_probs: Optional[np.ndarray] = None
    index: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.features.shape[0]
        for name in ("pe", "base_label", "truth", "z"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} length does not match {n} records")
        if self.index is None:
            object.__setattr__(self, "index", np.arange(n))
        if np.any(self.z != trust_labels(self.base_label, self.truth, self.pe, self.tau)):
            raise ValueError("z inconsistent with tau")

    def __len__(self):
        return self.z.shape[0]

    @property
    def append_probs(self):
        return self.mean_probs is not None

    @property
    def inputs(self) -> np.ndarray:
        return assemble_meta_inputs(self.features, self.pe, self.include_pe, self.mean_probs)

    @property
    def width(self):
        return self.inputs.shape[1]

    @property
    def records(self):
        return [MetaRecord(f, float(p), int(b), int(t), int(z)) for f, p, b, t, z in
                zip(self.features, self.pe, self.base_label, self.truth, self.z)]

    def to_dataset(self) -> Dataset:
        return Dataset(self.inputs, self.z, source=f"meta(tau={self.tau})", index=self.index)


@dataclass(frozen=True)
class TrustPrediction:
    trust_flag: int
    trust_prob: float


@dataclass(frozen=True)
class UsnnOutput:
    label: int
    trust: TrustPrediction
    pe: float


def assemble_meta_inputs(features, pe, include_pe=True, mean_probs=None) -> np.ndarray:
    cols = [np.asarray(features, dtype=np.float64)]
    if include_pe:
        cols.append(np.asarray(pe, dtype=np.float64)[:, None])
    if mean_probs is not None:
        cols.append(np.asarray(mean_probs, dtype=np.float64))
    return np.hstack(cols)


def meta_dataset_from_arrays(features, base_labels, pe, truths, tau, include_pe=True,
                             mean_probs=None, index=None) -> MetaDataset:
    _check_tau(tau)
    x = np.asarray(features, dtype=np.float64)
    b = np.asarray(base_labels, dtype=np.int64)
    t = np.asarray(truths, dtype=np.int64)
    e = np.asarray(pe, dtype=np.float64)
    if not (x.shape[0] == b.size == t.size == e.size):
        raise ValueError("features, base predictions and truths differ in length")
    return MetaDataset(x, e, b, t, trust_labels(b, t, e, tau), float(tau), bool(include_pe),
                       None if mean_probs is None else np.asarray(mean_probs, dtype=np.float64),
                       None if index is None else np.asarray(index))


def build_meta_dataset(features, base_preds: Sequence[BasePrediction], truths, tau: float,
                       include_pe: bool = True, append_probs: bool = False) -> MetaDataset:
    """Meta-train set with z from the correctness/threshold rule.

    Meta inputs are the features, then PE when ``include_pe``, then the mean
    class probabilities when ``append_probs``.
    """
    if len(base_preds) != len(truths) or len(base_preds) != np.asarray(features).shape[0]:
        raise ValueError("features, base predictions and truths differ in length")
    labels = [p.predicted_label for p in base_preds]
    pe = [p.pe for p in base_preds]
    probs = np.array([p.mean_probs for p in base_preds]) if append_probs else None
    return meta_dataset_from_arrays(features, labels, pe, truths, tau, include_pe, probs)


def train_meta(meta: MetaDataset, cfg: TrainConfig, arch: ArchSpec, init_seed: int = 0) -> Network:
    """Train a binary classifier of z with weights balanced on the z distribution."""
    if len(meta) == 0:
        raise ValueError("meta-train set is empty")
    if arch.input_dim != meta.width:
        raise LayoutMismatch(f"architecture expects {arch.input_dim} inputs, meta set has "
                             f"{meta.width}")
    counts = np.bincount(meta.z, minlength=2)
    if counts[0] == 0 or counts[1] == 0:
        raise DegenerateMetaLabels(meta.tau, int(meta.z[0]))
    if cfg.class_weights is None:
        cfg = replace(cfg, class_weights=class_weights(meta.z))
    return train(init_network(arch, init_seed), meta.to_dataset(), cfg)


def trust_probabilities(meta: Network, meta_inputs) -> np.ndarray:
    x = np.asarray(meta_inputs, dtype=np.float64)
    if x.shape[1] != meta.arch.input_dim:
        raise LayoutMismatch(f"meta-model expects {meta.arch.input_dim} inputs, got {x.shape[1]}")
    return forward(meta, x)[:, 1]


def usnn_predict(base_setting: UqSetting, meta: Network, inputs, include_pe: bool = True,
                 append_probs: bool = False) -> list:
    """Label, trust flag, trust probability and PE for every input row."""
    x = np.asarray(inputs, dtype=np.float64)
    samples, _ = setting_samples(base_setting, x)
    labels, mean, pe = summarize(samples)
    mi = assemble_meta_inputs(x, pe, include_pe, mean if append_probs else None)
    probs = trust_probabilities(meta, mi)
    return [UsnnOutput(int(l), TrustPrediction(int(p >= TRUST_THRESHOLD), float(p)), float(e))
            for l, p, e in zip(labels, probs, pe)]


def write_meta_csv(meta: MetaDataset, path, feature_names=None):
    d = meta.features.shape[1]
    names = list(feature_names or [f"f{i}" for i in range(d)])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ["pe", "base_label", "truth", "z"])
        for f, p, b, t, z in zip(meta.features.tolist(), meta.pe.tolist(), meta.base_label.tolist(),
                                 meta.truth.tolist(), meta.z.tolist()):
            w.writerow([repr(v) for v in f] + [repr(p), b, t, z])


def write_outputs_csv(outputs: Sequence[UsnnOutput], path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "label", "trust_flag", "trust_prob", "pe"])
        for i, o in enumerate(outputs):
            w.writerow([i, o.label, o.trust.trust_flag, repr(o.trust.trust_prob), repr(o.pe)])
