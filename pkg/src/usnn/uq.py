"""Predictive distributions from MC dropout, deep ensembles and their product.

Pass ``m`` of member ``n`` always draws its dropout masks from the stream
keyed ``(seed, n, m)``; MCD on a single network is member 0.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .nn import Network, forward


@dataclass(frozen=True)
class PredictiveDistribution:
    """Per-pass / per-member class probabilities for one input."""

    samples: np.ndarray
    mean: np.ndarray
    setting: tuple  # ("mcd", M) | ("ensemble", N) | ("emcd", N, M)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] < 1:
            raise ValueError(f"samples must be S x C, got {s.shape}")
        if np.any(s < 0) or np.any(np.abs(s.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("every sample row must be a probability vector")
        expected = math.prod(self.setting[1:])
        if s.shape[0] != expected:
            raise ValueError(f"{s.shape[0]} sample rows, setting {self.setting} implies {expected}")

    @classmethod
    def from_samples(cls, samples, setting=None):
        s = np.asarray(samples, dtype=np.float64)
        return cls(s, s.mean(axis=0), setting or ("mcd", s.shape[0]))


@dataclass(frozen=True)
class BasePrediction:
    predicted_label: int
    mean_probs: np.ndarray
    pe: float
    distribution: PredictiveDistribution


@dataclass(frozen=True)
class UqSetting:
    """Which base-tier UQ method to run and on which trained networks."""

    kind: str
    members: tuple
    passes: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("mcd", "ensemble", "emcd"):
            raise ValueError(f"unknown UQ setting {self.kind!r}")
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ValueError("UQ setting needs at least one network")
        if self.kind == "mcd" and len(self.members) != 1:
            raise ValueError("mcd runs on exactly one network")
        if self.passes < 1:
            raise ValueError("passes must be >= 1")

    @property
    def input_dim(self):
        return self.members[0].arch.input_dim


def _check_members(members, inputs):
    members = list(members)
    if not members:
        raise ValueError("ensemble is empty")
    dims = {m.arch.input_dim for m in members}
    if len(dims) != 1:
        raise ValueError(f"ensemble members disagree on input_dim: {sorted(dims)}")
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != members[0].arch.input_dim:
        raise ValueError(f"inputs shape {x.shape} does not match input_dim "
                         f"{members[0].arch.input_dim}")
    return members, x


def mcd_samples(net: Network, inputs, passes: int, seed: int, member: int = 0) -> np.ndarray:
    """Stacked dropout-enabled passes, shape (n_inputs, passes, C)."""
    if passes < 1:
        raise ValueError("passes must be >= 1")
    _, x = _check_members([net], inputs)
    return np.stack([forward(net, x, dropout=(seed, member, m)) for m in range(passes)], axis=1)


def ensemble_samples(members: Sequence[Network], inputs) -> np.ndarray:
    members, x = _check_members(members, inputs)
    return np.stack([forward(m, x) for m in members], axis=1)


def emcd_samples(members: Sequence[Network], inputs, passes: int, seed: int,
                 dropout: bool = True) -> np.ndarray:
    """Shape (n_inputs, N * M, C), member-major. ``dropout=False`` is a test hook."""
    members, x = _check_members(members, inputs)
    if passes < 1:
        raise ValueError("passes must be >= 1")
    blocks = []
    for n, net in enumerate(members):
        for m in range(passes):
            blocks.append(forward(net, x, dropout=(seed, n, m) if dropout else None))
    return np.stack(blocks, axis=1)


def setting_samples(setting: UqSetting, inputs) -> tuple[np.ndarray, tuple]:
    if setting.kind == "mcd":
        return (mcd_samples(setting.members[0], inputs, setting.passes, setting.seed),
                ("mcd", setting.passes))
    if setting.kind == "ensemble":
        return ensemble_samples(setting.members, inputs), ("ensemble", len(setting.members))
    return (emcd_samples(setting.members, inputs, setting.passes, setting.seed),
            ("emcd", len(setting.members), setting.passes))


def _distributions(samples, tag):
    return [PredictiveDistribution(s, s.mean(axis=0), tag) for s in samples]


def predict_mcd(net: Network, inputs, passes: int = 100, seed: int = 0):
    return _distributions(mcd_samples(net, inputs, passes, seed), ("mcd", passes))


def predict_ensemble(members: Sequence[Network], inputs):
    return _distributions(ensemble_samples(members, inputs), ("ensemble", len(members)))


def predict_emcd(members: Sequence[Network], inputs, passes: int = 100, seed: int = 0,
                 dropout: bool = True):
    return _distributions(emcd_samples(members, inputs, passes, seed, dropout),
                          ("emcd", len(members), passes))


def entropy_of_mean(mean) -> np.ndarray:
    """Normalised base-2 entropy of mean probability vectors (last axis = classes)."""
    m = np.asarray(mean, dtype=np.float64)
    c = m.shape[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(m > 0, m * np.log2(np.where(m > 0, m, 1.0)), 0.0)
    h = -terms.sum(axis=-1) / math.log2(c)
    return np.clip(h, 0.0, 1.0)


def prediction_entropy(dist: PredictiveDistribution) -> float:
    return float(entropy_of_mean(dist.mean))


def to_base_prediction(dist: PredictiveDistribution) -> BasePrediction:
    # np.argmax returns the first maximum, so a tie goes to class 0
    return BasePrediction(int(np.argmax(dist.mean)), dist.mean, prediction_entropy(dist), dist)


def summarize(samples: np.ndarray):
    """Vectorised (labels, mean probs, PE) for an (n, S, C) sample stack."""
    mean = samples.mean(axis=1)
    return np.argmax(mean, axis=1), mean, entropy_of_mean(mean)


def write_distributions_csv(dists: Sequence[PredictiveDistribution], path):
    """One row per (sample, member, pass) with the class probabilities."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        c = dists[0].samples.shape[1] if dists else 2
        w.writerow(["sample_id", "member_id", "pass_id"] + [f"p{k}" for k in range(c)])
        for i, d in enumerate(dists):
            tag = d.setting
            if tag[0] == "mcd":
                ids = [(0, m) for m in range(tag[1])]
            elif tag[0] == "ensemble":
                ids = [(n, 0) for n in range(tag[1])]
            else:
                ids = [(n, m) for n in range(tag[1]) for m in range(tag[2])]
            for (n, m), row in zip(ids, d.samples.tolist()):
                w.writerow([i, n, m] + [repr(v) for v in row])
