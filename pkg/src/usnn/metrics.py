"""F1, rank AUC, and the trust-informed confusion matrix with its derived rates.

Ratios whose denominator is zero are reported as ``None`` (JSON ``null``),
never as 0 or NaN.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

CORRECTNESS = ("TP", "FP", "TN", "FN")
TRUSTCATS = ("TT", "FT", "TU", "FU")
CELLS = tuple(c + t for c in CORRECTNESS for t in TRUSTCATS)
FORBIDDEN = ("FNTT", "FPTT", "FNFU", "FPFU")
RATES = ("car", "cpr", "tpr", "ftr", "rar", "mrr", "trr", "frr")


class MetricError(ValueError):
    pass


def _binary(v, name):
    a = np.asarray(v)
    if a.size and not np.all((a == 0) | (a == 1)):
        raise MetricError(f"{name} must be binary 0/1")
    return a.astype(np.int64)


def f1_score(truths, preds) -> float:
    """2TP / (2TP + FP + FN) for positive class 1; 0 when undefined."""
    t = _binary(truths, "truths")
    p = _binary(preds, "preds")
    if t.shape != p.shape or t.size == 0:
        raise MetricError(f"length mismatch or empty input: {t.shape} vs {p.shape}")
    tp = int(np.sum((t == 1) & (p == 1)))
    fp = int(np.sum((t == 0) & (p == 1)))
    fn = int(np.sum((t == 1) & (p == 0)))
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2 * tp / denom


def auc(truths, scores) -> float:
    """Mann-Whitney AUC from average ranks; tied pairs count one half."""
    t = _binary(truths, "truths")
    s = np.asarray(scores, dtype=np.float64)
    if t.shape != s.shape:
        raise MetricError(f"length mismatch: {t.shape} vs {s.shape}")
    n1 = int(t.sum())
    n0 = t.size - n1
    if n1 == 0 or n0 == 0:
        raise MetricError("AUC needs both classes present in truths")
    ranks = rankdata(s, method="average")
    u = ranks[t == 1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def ground_truth_trust(base_label, truth, pe, tau) -> int:
    return int(base_label == truth and pe <= tau)


@dataclass(frozen=True)
class EvalRecord:
    truth: int
    base_label: int
    pe: float
    trust_truth: int
    trust_pred: int


def correctness(truth, pred) -> str:
    if truth == 1:
        return "TP" if pred == 1 else "FN"
    return "FP" if pred == 1 else "TN"


def trust_category(z, z_hat) -> str:
    if z_hat == 1:
        return "TT" if z == 1 else "FT"
    return "FU" if z == 1 else "TU"


@dataclass(frozen=True)
class TrustConfusionMatrix:
    """Counts for the 16 (correctness x trust) outcomes, e.g. ``m["TPTT"]``."""

    cells: dict
    tau: Optional[float] = None

    def __post_init__(self):
        cells = {k: int(self.cells.get(k, 0)) for k in CELLS}
        extra = set(self.cells) - set(CELLS)
        if extra:
            raise MetricError(f"unknown cells {sorted(extra)}")
        if any(v < 0 for v in cells.values()):
            raise MetricError("cell counts must be non-negative")
        object.__setattr__(self, "cells", cells)

    def __getitem__(self, key):
        return self.cells[key]

    @property
    def total(self):
        return sum(self.cells.values())

    def to_dict(self):
        return {"tau": self.tau, "cells": dict(self.cells), "total": self.total}

    @classmethod
    def from_dict(cls, d):
        return cls(d["cells"], d.get("tau"))

    def table(self) -> str:
        """4x4 text table: ground truth rows, U-SNN output columns."""
        layout = [
            ("Pos / Trustworthy", ("TPTT", "TPFU", "FNTT", "FNFU")),
            ("Pos / Untrustworthy", ("TPFT", "TPTU", "FNFT", "FNTU")),
            ("Neg / Trustworthy", ("FPTT", "FPFU", "TNTT", "TNFU")),
            ("Neg / Untrustworthy", ("FPFT", "FPTU", "TNFT", "TNTU")),
        ]
        head = ["Truth \\ Output", "Pos/Trust", "Pos/Untrust", "Neg/Trust", "Neg/Untrust"]
        rows = [[label] + [f"{k} {self.cells[k]}" for k in keys] for label, keys in layout]
        widths = [max(len(r[i]) for r in [head] + rows) for i in range(5)]
        fmt = lambda r: " | ".join(c.ljust(w) for c, w in zip(r, widths))
        sep = "-+-".join("-" * w for w in widths)
        return "\n".join([fmt(head), sep] + [fmt(r) for r in rows])


def trust_confusion(records: Sequence[EvalRecord], tau=None) -> TrustConfusionMatrix:
    if len(records) == 0:
        raise MetricError("no records")
    cells = dict.fromkeys(CELLS, 0)
    for r in records:
        if r.trust_truth == 1 and r.base_label != r.truth:
            raise MetricError(f"record marked trustworthy but incorrect: {r}")
        cells[correctness(r.truth, r.base_label) + trust_category(r.trust_truth, r.trust_pred)] += 1
    return TrustConfusionMatrix(cells, tau)


def trust_confusion_arrays(truth, base_label, trust_truth, trust_pred, tau=None):
    """Vectorised equivalent of :func:`trust_confusion`."""
    truth, pred, z, zh = (np.asarray(a, dtype=np.int64)
                          for a in (truth, base_label, trust_truth, trust_pred))
    if truth.size == 0:
        raise MetricError("no records")
    if np.any((z == 1) & (pred != truth)):
        raise MetricError("record marked trustworthy but incorrect")
    corr = np.where(truth == 1, np.where(pred == 1, 0, 3), np.where(pred == 1, 1, 2))
    trust = np.where(zh == 1, np.where(z == 1, 0, 1), np.where(z == 1, 3, 2))
    counts = np.bincount(corr * 4 + trust, minlength=16)
    return TrustConfusionMatrix(dict(zip(CELLS, counts.tolist())), tau)


def _ratio(num, den):
    return None if den == 0 else num / den


@dataclass(frozen=True)
class TrustReport:
    car: Optional[float]
    cpr: Optional[float]
    tpr: Optional[float]
    ftr: Optional[float]
    rar: Optional[float]
    mrr: Optional[float]
    trr: Optional[float]
    frr: Optional[float]
    tap: int
    ttp: int
    tup: int
    total: int

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})

    def format(self) -> str:
        lines = []
        for k in RATES:
            v = getattr(self, k)
            lines.append(f"{k.upper():4s} {'absent' if v is None else f'{v:.6f}'}")
        lines.append(f"TAP {self.tap}  TTP {self.ttp}  TUP {self.tup}  total {self.total}")
        return "\n".join(lines)


def trust_report(m: TrustConfusionMatrix) -> TrustReport:
    c = m.cells
    total = m.total
    if total == 0:
        raise MetricError("empty confusion matrix")
    trusted_ok = c["TPTT"] + c["TNTT"]
    tap = sum(v for k, v in c.items() if k[:2] in ("TP", "TN"))
    ttp = sum(v for k, v in c.items() if k[2:] in ("TT", "FT"))
    tup = sum(v for k, v in c.items() if k[2:] in ("TU", "FU"))
    return TrustReport(
        car=trusted_ok / total,
        cpr=_ratio(trusted_ok, tap),
        tpr=_ratio(trusted_ok, ttp),
        ftr=(c["FPFT"] + c["FNFT"]) / total,
        rar=tup / total,
        mrr=_ratio(c["TPTU"] + c["TNTU"], tup),
        trr=_ratio(c["FNTU"] + c["FPTU"], tup),
        frr=_ratio(c["TPFU"] + c["TNFU"], tup),
        tap=tap, ttp=ttp, tup=tup, total=total,
    )


def matrix_json(m: TrustConfusionMatrix, report: Optional[TrustReport] = None) -> str:
    d = {"matrix": m.to_dict()}
    if report is not None:
        d["report"] = report.to_dict()
    return json.dumps(d, indent=2)
