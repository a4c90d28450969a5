"""Repeated-split experiments, threshold sweeps, PE ablation and report files.

Every random draw in repetition ``r`` is keyed by ``(master_seed, r, stream,
...)``; meta-tier streams are additionally keyed by the threshold, so a
sweep section equals a standalone run at that threshold and results do not
depend on ``n_jobs``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import _seeding as S
from .data import DataError, Dataset, SyntheticSpec, load_dataset, make_synthetic, stratified_split
from .metrics import (MetricError, RATES, TrustReport, auc, f1_score, trust_confusion_arrays,
                      trust_report)
from .nn import (DEFAULT_DROPOUT, ArchSpec, Network, TrainConfig, forward, init_network,
                 network_from_dict, network_to_dict, sample_architecture, train)
from .stacking import (DegenerateMetaLabels, TRUST_THRESHOLD, TrustPrediction, UsnnOutput,
                       assemble_meta_inputs, meta_dataset_from_arrays, train_meta, trust_labels,
                       trust_probabilities)
from .uq import UqSetting, setting_samples, summarize

log = logging.getLogger(__name__)

DEFAULT_TAUS = (0.05, 0.1, 0.2, 0.3, 0.4)
METRICS = ("base_f1", "base_auc", "meta_f1", "meta_auc") + RATES + (
    "mean_pe_correct", "mean_pe_incorrect")


class ConfigError(ValueError):
    pass


def _tau_key(tau):
    return int(round(tau * 1_000_000))


@dataclass(frozen=True)
class ExperimentConfig:
    data_path: Optional[str] = None
    label_column: str = "label"
    synthetic: Optional[SyntheticSpec] = None
    uq: str = "mcd"
    mcd_passes: int = 100
    ensemble_size: int = 30
    taus: tuple = DEFAULT_TAUS
    repetitions: int = 30
    test_fraction_range: tuple = (0.20, 0.40)
    include_pe: bool = True
    append_probs: bool = False
    zscore: bool = False
    master_seed: int = 0
    base_train: TrainConfig = field(default_factory=TrainConfig)
    meta_train: TrainConfig = field(default_factory=TrainConfig)
    search_budget: int = 5
    tune_epochs: int = 10
    dropout_rate: float = DEFAULT_DROPOUT
    retune_each_repetition: bool = False
    meta_holdout: bool = False
    # audit mode: score trust against a different threshold than training
    eval_tau: Optional[float] = None
    # execution only; excluded from the config echo
    n_jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "taus", tuple(float(t) for t in self.taus))
        object.__setattr__(self, "test_fraction_range",
                           tuple(float(t) for t in self.test_fraction_range))
        if (self.data_path is None) == (self.synthetic is None):
            raise ConfigError("exactly one of data_path / synthetic must be given")
        if self.uq not in ("mcd", "ensemble", "emcd"):
            raise ConfigError(f"uq must be mcd, ensemble or emcd, got {self.uq!r}")
        if self.mcd_passes < 1 or self.ensemble_size < 1 or self.repetitions < 1:
            raise ConfigError("mcd_passes, ensemble_size and repetitions must be positive")
        if self.search_budget < 1 or self.tune_epochs < 1:
            raise ConfigError("search_budget and tune_epochs must be positive")
        if not self.taus or any(not 0 < t < 1 for t in self.taus):
            raise ConfigError(f"taus must lie in (0, 1): {self.taus}")
        if any(b <= a for a, b in zip(self.taus, self.taus[1:])):
            raise ConfigError(f"taus must be strictly increasing: {self.taus}")
        lo, hi = self.test_fraction_range
        if not 0 < lo <= hi < 1:
            raise ConfigError(f"bad test_fraction_range {self.test_fraction_range}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.eval_tau is not None and not 0 < self.eval_tau < 1:
            raise ConfigError("eval_tau must lie in (0, 1)")
        if self.master_seed < 0 or self.n_jobs < 1:
            raise ConfigError("master_seed must be >= 0 and n_jobs >= 1")

    def to_dict(self):
        d = {}
        for k in self.__dataclass_fields__:
            if k == "n_jobs":
                continue
            v = getattr(self, k)
            if isinstance(v, TrainConfig):
                v = v.to_dict()
            elif isinstance(v, SyntheticSpec):
                v = {f: getattr(v, f) for f in v.__dataclass_fields__}
            elif isinstance(v, tuple):
                v = list(v)
            d[k] = v
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
        try:
            if d.get("synthetic") is not None:
                d["synthetic"] = SyntheticSpec(**d["synthetic"])
            for k in ("base_train", "meta_train"):
                if k in d:
                    d[k] = TrainConfig.from_dict(d[k])
            return cls(**d)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    def load_data(self) -> Dataset:
        if self.synthetic is not None:
            return make_synthetic(self.synthetic)
        return load_dataset(self.data_path, self.label_column)


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return ExperimentConfig.from_dict(raw)


@dataclass
class RepetitionResult:
    repetition: int
    seed: int
    test_fraction: float
    tau: float
    arm: str
    n_train: int
    n_test: int
    base_f1: float
    base_auc: Optional[float]
    meta_f1: float
    meta_auc: Optional[float]
    mean_pe_correct: Optional[float]
    mean_pe_incorrect: Optional[float]
    meta_input_width: int
    n_trust_train: int
    eval_tau: float
    cells: dict
    report: TrustReport

    def metric(self, name):
        if name in RATES:
            return getattr(self.report, name)
        return getattr(self, name)

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "report"}
        d["report"] = self.report.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["report"] = TrustReport.from_dict(d["report"])
        return cls(**d)


def _mean_std(values):
    v = [x for x in values if x is not None]
    if not v:
        return {"mean": None, "std": None, "n": 0}
    a = np.array(v, dtype=np.float64)
    std = float(a.std(ddof=1)) if a.size > 1 else None
    return {"mean": float(a.mean()), "std": std, "n": int(a.size)}


@dataclass
class ExperimentReport:
    config: dict
    results: list
    skipped: list = field(default_factory=list)

    @property
    def taus(self):
        return sorted({r.tau for r in self.results} | {s["tau"] for s in self.skipped})

    def select(self, tau=None, arm=None):
        return [r for r in self.results
                if (tau is None or r.tau == tau) and (arm is None or r.arm == arm)]

    def aggregate(self):
        """Mean and sample std per (arm, tau, metric), skipping absent values."""
        out = {}
        for arm in sorted({r.arm for r in self.results}):
            for tau in sorted({r.tau for r in self.results if r.arm == arm}):
                rs = self.select(tau, arm)
                out.setdefault(arm, {})[repr(tau)] = {
                    m: _mean_std([r.metric(m) for r in rs]) for m in METRICS}
        return out

    def mean(self, metric, tau=None, arm=None):
        return _mean_std([r.metric(metric) for r in self.select(tau, arm)])["mean"]

    def to_dict(self):
        return {"config": self.config,
                "results": [r.to_dict() for r in self.results],
                "skipped": list(self.skipped),
                "aggregate": self.aggregate()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["config"], [RepetitionResult.from_dict(r) for r in d["results"]],
                   list(d.get("skipped", [])))


def _seeded(cfg: TrainConfig, *keys) -> TrainConfig:
    return replace(cfg, shuffle_seed=S.derive_seed(*keys, S.SHUFFLE),
                   dropout_seed=S.derive_seed(*keys, S.DROPOUT))


def tune_architecture(train_ds: Dataset, budget: int, seed: int, cfg: Optional[TrainConfig] = None,
                      candidates=None, dropout_rate=DEFAULT_DROPOUT, output_dim=2) -> ArchSpec:
    """Budgeted random search: short training on a 70/30 split, best validation F1 wins.

    ``candidates`` replaces sampling with a fixed list (its length is the budget).
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if candidates is not None:
        candidates = list(candidates)
    else:
        candidates = [sample_architecture(S.derive_seed(seed, 1, i), train_ds.n_features,
                                          output_dim, dropout_rate) for i in range(budget)]
    if len(candidates) == 1:
        return candidates[0]
    try:
        split = stratified_split(train_ds, 0.3, S.derive_seed(seed, 0))
    except DataError as e:
        raise ValueError(f"degenerate dataset for architecture search: {e}") from e
    cfg = cfg or TrainConfig(epochs=10)
    best, best_f1 = None, -1.0
    for i, arch in enumerate(candidates):
        net = train(init_network(arch, S.derive_seed(seed, 2, i)), split.train,
                    _seeded(cfg, seed, 3, i))
        pred = np.argmax(forward(net, split.test.features), axis=1)
        score = f1_score(split.test.labels, pred)
        if score > best_f1:
            best, best_f1 = arch, score
    return best


def _zscore_stats(x):
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    return mu, np.where(sd > 0, sd, 1.0)


@dataclass(frozen=True)
class _Plan:
    """Architectures fixed before repetitions fan out."""

    base_arch: Optional[ArchSpec]
    ensemble_archs: tuple
    meta_archs: dict  # tau -> ArchSpec; missing entries are tuned per repetition


def _split_for(cfg, ds, r):
    lo, hi = cfg.test_fraction_range
    frac = lo + (hi - lo) * float(S.rng_for(cfg.master_seed, r, S.FRACTION).random())
    seed = S.derive_seed(cfg.master_seed, r, S.SPLIT)
    return stratified_split(ds, frac, seed)


def _base_fit_set(cfg, train_ds, r):
    if not cfg.meta_holdout:
        return train_ds, train_ds
    inner = stratified_split(train_ds, 0.2, S.derive_seed(cfg.master_seed, r, S.HOLDOUT))
    return inner.train, inner.test


def _scale(cfg, split):
    if not cfg.zscore:
        return split.train, split.test
    mu, sd = _zscore_stats(split.train.features)
    f = lambda d: Dataset((d.features - mu) / sd, d.labels, d.feature_names, d.source, d.index)
    return f(split.train), f(split.test)


def _tune_base(cfg, ds, r):
    d = ds.n_features
    keys = (cfg.master_seed, r) if cfg.retune_each_repetition else (cfg.master_seed,)
    if cfg.uq == "mcd":
        train_ds, _ = _scale(cfg, _split_for(cfg, ds, r))
        fit, _ = _base_fit_set(cfg, train_ds, r)
        arch = tune_architecture(fit, cfg.search_budget, S.derive_seed(*keys, S.TUNE, 0),
                                 replace(cfg.base_train, epochs=cfg.tune_epochs),
                                 dropout_rate=cfg.dropout_rate)
        return arch, ()
    archs = tuple(sample_architecture(S.derive_seed(*keys, S.ARCH, n), d,
                                      dropout_rate=cfg.dropout_rate)
                  for n in range(cfg.ensemble_size))
    return None, archs


def _train_base(cfg, fit_ds, r, base_arch, ensemble_archs):
    archs = (base_arch,) if cfg.uq == "mcd" else ensemble_archs
    members = []
    for n, arch in enumerate(archs):
        net = init_network(arch, S.derive_seed(cfg.master_seed, r, S.INIT, n))
        members.append(train(net, fit_ds, _seeded(cfg.base_train, cfg.master_seed, r, n)))
    return UqSetting(cfg.uq, tuple(members), cfg.mcd_passes,
                     S.derive_seed(cfg.master_seed, r, S.MCD))


def _tune_meta(cfg, meta, r, tau, per_repetition):
    keys = (cfg.master_seed, r) if per_repetition else (cfg.master_seed,)
    return tune_architecture(meta.to_dataset(), cfg.search_budget,
                             S.derive_seed(*keys, S.TUNE, 1, _tau_key(tau)),
                             replace(cfg.meta_train, epochs=cfg.tune_epochs),
                             dropout_rate=cfg.dropout_rate)


def _safe_auc(t, s):
    try:
        return auc(t, s)
    except MetricError:
        return None


def _run_repetition(cfg: ExperimentConfig, ds: Dataset, r: int, plan: _Plan, arms, trace=False):
    split = _split_for(cfg, ds, r)
    train_ds, test_ds = _scale(cfg, split)
    base_arch, ens = plan.base_arch, plan.ensemble_archs
    if cfg.retune_each_repetition and r > 0:
        base_arch, ens = _tune_base(cfg, ds, r)
    fit_ds, meta_src = _base_fit_set(cfg, train_ds, r)
    setting = _train_base(cfg, fit_ds, r, base_arch, ens)

    src_lab, src_mean, src_pe = summarize(setting_samples(setting, meta_src.features)[0])
    te_lab, te_mean, te_pe = summarize(setting_samples(setting, test_ds.features)[0])
    y_te = test_ds.labels
    correct = te_lab == y_te
    base_f1 = f1_score(y_te, te_lab)
    base_auc = _safe_auc(y_te, te_mean[:, 1])
    pe_ok = float(te_pe[correct].mean()) if correct.any() else None
    pe_bad = float(te_pe[~correct].mean()) if (~correct).any() else None

    results, skipped, tuned = [], [], {}
    for tau in cfg.taus:
        eval_tau = tau if cfg.eval_tau is None else cfg.eval_tau
        z_te = trust_labels(te_lab, y_te, te_pe, eval_tau)
        for arm, include_pe in arms:
            meta = meta_dataset_from_arrays(
                meta_src.features, src_lab, src_pe, meta_src.labels, tau, include_pe,
                src_mean if cfg.append_probs else None, meta_src.index)
            if meta.z.min() == meta.z.max():
                msg = str(DegenerateMetaLabels(tau, int(meta.z[0])))
                log.warning("repetition %d skipped: %s", r, msg)
                skipped.append({"repetition": r, "tau": tau, "arm": arm, "reason": msg})
                continue
            arch = plan.meta_archs.get((arm, tau))
            if arch is None or cfg.retune_each_repetition:
                arch = _tune_meta(cfg, meta, r, tau, per_repetition=r > 0 or
                                  cfg.retune_each_repetition)
                tuned[(arm, tau)] = arch
            arch = replace(arch, input_dim=meta.width)
            mkeys = (cfg.master_seed, r, S.META, _tau_key(tau))
            net = train_meta(meta, _seeded(cfg.meta_train, *mkeys), arch,
                             S.derive_seed(*mkeys, S.INIT))
            mi = assemble_meta_inputs(test_ds.features, te_pe, include_pe,
                                      te_mean if cfg.append_probs else None)
            prob = trust_probabilities(net, mi)
            flag = (prob >= TRUST_THRESHOLD).astype(np.int64)
            m = trust_confusion_arrays(y_te, te_lab, z_te, flag, eval_tau)
            results.append(RepetitionResult(
                repetition=r, seed=split.seed, test_fraction=split.test_fraction, tau=tau,
                arm=arm, n_train=len(train_ds), n_test=len(test_ds), base_f1=base_f1,
                base_auc=base_auc, meta_f1=f1_score(z_te, flag), meta_auc=_safe_auc(z_te, prob),
                mean_pe_correct=pe_ok, mean_pe_incorrect=pe_bad, meta_input_width=meta.width,
                n_trust_train=int(meta.z.sum()), eval_tau=eval_tau, cells=dict(m.cells),
                report=trust_report(m)))
    info = None
    if trace:
        info = {"repetition": r, "train_index": train_ds.index.copy(),
                "test_index": test_ds.index.copy(), "meta_index": meta_src.index.copy(),
                "base_fit_index": fit_ds.index.copy()}
    return results, skipped, tuned, info


def _worker(args):
    return _run_repetition(*args)


def _engine(cfg: ExperimentConfig, arms, trace=None):
    ds = cfg.load_data()
    base_arch, ens = _tune_base(cfg, ds, 0)
    plan = _Plan(base_arch, ens, {})
    want = trace is not None
    first = _run_repetition(cfg, ds, 0, plan, arms, want)
    plan = _Plan(base_arch, ens, dict(first[2]))
    jobs = [(cfg, ds, r, plan, arms, want) for r in range(1, cfg.repetitions)]
    if cfg.n_jobs > 1 and jobs:
        with ProcessPoolExecutor(max_workers=cfg.n_jobs) as pool:
            rest = list(pool.map(_worker, jobs))
    else:
        rest = [_worker(j) for j in jobs]
    results, skipped = [], []
    for res, skip, _, info in [first] + rest:
        results.extend(res)
        skipped.extend(skip)
        if want:
            trace.append(info)
    return results, skipped


def run_experiment(cfg: ExperimentConfig, trace: Optional[list] = None) -> ExperimentReport:
    """Repeated stratified splits evaluated at every threshold in ``cfg.taus``.

    Pass a list as ``trace`` to collect the row ids used by each tier.
    """
    arm = "with_pe" if cfg.include_pe else "without_pe"
    results, skipped = _engine(cfg, ((arm, cfg.include_pe),), trace)
    return ExperimentReport(cfg.to_dict(), results, skipped)


def threshold_sweep(cfg: ExperimentConfig, taus=None) -> dict:
    """One report per threshold, all sharing the same splits and base models."""
    if taus is not None:
        cfg = replace(cfg, taus=tuple(taus))
    full = run_experiment(cfg)
    out = {}
    for tau in cfg.taus:
        conf = dict(full.config, taus=[tau])
        out[tau] = ExperimentReport(conf, full.select(tau),
                                    [s for s in full.skipped if s["tau"] == tau])
    return out


def ablation_pe(cfg: ExperimentConfig) -> dict:
    """Paired runs differing only in whether PE is a meta-model input."""
    results, skipped = _engine(cfg, (("with_pe", True), ("without_pe", False)))
    out = {}
    for arm, flag in (("with_pe", True), ("without_pe", False)):
        conf = dict(cfg.to_dict(), include_pe=flag)
        out[arm] = ExperimentReport(conf, [r for r in results if r.arm == arm],
                                    [s for s in skipped if s["arm"] == arm])
    return out


CSV_COLUMNS = ("section", "arm", "repetition", "tau", "eval_tau", "seed", "test_fraction",
               "n_train", "n_test", "meta_input_width", "n_trust_train", "base_f1", "base_auc",
               "meta_f1", "meta_auc", "mean_pe_correct", "mean_pe_incorrect") + RATES + (
               "tap", "ttp", "tup", "total")


def _cell(v):
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def _sections(report):
    if isinstance(report, ExperimentReport):
        return [("", report)]
    return [(str(k), v) for k, v in report.items()]


def report_to_json(report) -> str:
    if isinstance(report, ExperimentReport):
        payload = report.to_dict()
    else:
        payload = {"sections": [{"name": k, "report": v.to_dict()} for k, v in _sections(report)]}
    return json.dumps(payload, indent=2)


def report_to_csv(report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for name, rep in _sections(report):
        for r in rep.results:
            row = dict(r.to_dict(), **r.report.to_dict(), section=name)
            w.writerow([_cell(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def emit_report(report, fmt: str, path):
    """Write a report (or a mapping of named reports) as JSON or CSV."""
    if fmt not in ("json", "csv"):
        raise ValueError(f"unknown report format {fmt!r}")
    text = report_to_json(report) if fmt == "json" else report_to_csv(report)
    Path(path).write_text(text, encoding="utf-8")


def read_report(path):
    """Inverse of the JSON side of :func:`emit_report`."""
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if "sections" in d:
        return {s["name"]: ExperimentReport.from_dict(s["report"]) for s in d["sections"]}
    return ExperimentReport.from_dict(d)


@dataclass(frozen=True)
class UsnnModel:
    """A fitted base tier plus meta-model, ready for dual-output prediction."""

    setting: UqSetting
    meta: Network
    tau: float
    include_pe: bool = True
    append_probs: bool = False
    scaler: Optional[tuple] = None  # (mean, std) applied to raw features
    config: Optional[dict] = None

    def _x(self, features):
        x = np.asarray(features, dtype=np.float64)
        if self.scaler is not None:
            x = (x - self.scaler[0]) / self.scaler[1]
        return x

    def base_outputs(self, features):
        x = self._x(features)
        labels, mean, pe = summarize(setting_samples(self.setting, x)[0])
        return x, labels, mean, pe

    def predict(self, features):
        x, labels, mean, pe = self.base_outputs(features)
        prob = trust_probabilities(self.meta, assemble_meta_inputs(
            x, pe, self.include_pe, mean if self.append_probs else None))
        return [UsnnOutput(int(l), TrustPrediction(int(p >= TRUST_THRESHOLD), float(p)), float(e))
                for l, p, e in zip(labels, prob, pe)]

    def evaluate(self, ds: Dataset, eval_tau=None):
        tau = self.tau if eval_tau is None else eval_tau
        outs = self.predict(ds.features)
        labels = np.array([o.label for o in outs])
        pe = np.array([o.pe for o in outs])
        flags = np.array([o.trust.trust_flag for o in outs])
        z = trust_labels(labels, ds.labels, pe, tau)
        m = trust_confusion_arrays(ds.labels, labels, z, flags, tau)
        return m, trust_report(m)

    def to_dict(self):
        return {"format": "usnn-model", "version": 1,
                "uq": {"kind": self.setting.kind, "passes": self.setting.passes,
                       "seed": self.setting.seed,
                       "members": [network_to_dict(n) for n in self.setting.members]},
                "meta": network_to_dict(self.meta), "tau": self.tau,
                "include_pe": self.include_pe, "append_probs": self.append_probs,
                "scaler": None if self.scaler is None else
                [[float(v).hex() for v in a] for a in self.scaler],
                "config": self.config}

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "usnn-model":
            raise ConfigError("not a usnn model document")
        u = d["uq"]
        setting = UqSetting(u["kind"], tuple(network_from_dict(n) for n in u["members"]),
                            int(u["passes"]), int(u["seed"]))
        scaler = None
        if d.get("scaler") is not None:
            scaler = tuple(np.array([float.fromhex(v) for v in a]) for a in d["scaler"])
        return cls(setting, network_from_dict(d["meta"]), float(d["tau"]),
                   bool(d["include_pe"]), bool(d["append_probs"]), scaler, d.get("config"))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError, KeyError) as e:
            raise ConfigError(f"cannot load model {path}: {e}") from e


def fit_usnn(cfg: ExperimentConfig, tau: float, ds: Optional[Dataset] = None) -> UsnnModel:
    """Tune and train both tiers on a whole dataset (no held-out split)."""
    ds = cfg.load_data() if ds is None else ds
    scaler = None
    if cfg.zscore:
        scaler = _zscore_stats(ds.features)
        ds = Dataset((ds.features - scaler[0]) / scaler[1], ds.labels, ds.feature_names,
                     ds.source, ds.index)
    fit_ds, meta_src = _base_fit_set(cfg, ds, 0)
    d = ds.n_features
    if cfg.uq == "mcd":
        base_arch = tune_architecture(fit_ds, cfg.search_budget,
                                      S.derive_seed(cfg.master_seed, S.TUNE, 0),
                                      replace(cfg.base_train, epochs=cfg.tune_epochs),
                                      dropout_rate=cfg.dropout_rate)
        ens = ()
    else:
        base_arch = None
        ens = tuple(sample_architecture(S.derive_seed(cfg.master_seed, S.ARCH, n), d,
                                        dropout_rate=cfg.dropout_rate)
                    for n in range(cfg.ensemble_size))
    setting = _train_base(cfg, fit_ds, 0, base_arch, ens)
    lab, mean, pe = summarize(setting_samples(setting, meta_src.features)[0])
    meta = meta_dataset_from_arrays(meta_src.features, lab, pe, meta_src.labels, tau,
                                    cfg.include_pe, mean if cfg.append_probs else None)
    arch = replace(_tune_meta(cfg, meta, 0, tau, False), input_dim=meta.width)
    mkeys = (cfg.master_seed, 0, S.META, _tau_key(tau))
    net = train_meta(meta, _seeded(cfg.meta_train, *mkeys), arch, S.derive_seed(*mkeys, S.INIT))
    return UsnnModel(setting, net, tau, cfg.include_pe, cfg.append_probs, scaler,
                     dict(cfg.to_dict(), tau=tau))
