import csv
import io
import json
import logging
from dataclasses import replace

import numpy as np
import pytest

from usnn.data import SyntheticSpec, make_synthetic
from usnn.harness import (METRICS, ConfigError, ExperimentConfig, ExperimentReport, UsnnModel,
                          ablation_pe, emit_report, fit_usnn, load_config, read_report,
                          report_to_csv, run_experiment, threshold_sweep, tune_architecture)
from usnn.nn import ArchSpec, TrainConfig

from conftest import xor_dataset

FAST = TrainConfig(epochs=3, batch_size=64)


def tiny(**kw):
    base = dict(synthetic=SyntheticSpec(200, 4, 0.5, 2.0, 1), mcd_passes=5, repetitions=3,
                base_train=FAST, meta_train=FAST, search_budget=1, tune_epochs=1,
                master_seed=11)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def sweep():
    return threshold_sweep(tiny())


def test_thirty_repetitions_fractions_in_range():
    rep = run_experiment(tiny(repetitions=30, taus=(0.4,), mcd_passes=3,
                              base_train=TrainConfig(epochs=1), meta_train=TrainConfig(epochs=1)))
    assert len(rep.results) + len(rep.skipped) == 30
    assert len({r.repetition for r in rep.results}) == len(rep.results)
    fr = [r.test_fraction for r in rep.results]
    assert all(0.2 <= f <= 0.4 for f in fr)
    assert len(set(fr)) == len(fr)


def test_separable_data():
    cfg = ExperimentConfig(synthetic=SyntheticSpec(1000, 2, 0.5, 8.0, 5), taus=(0.4,),
                           repetitions=3, mcd_passes=30, search_budget=2, tune_epochs=5,
                           master_seed=3)
    rep = run_experiment(cfg)
    # a repetition may be skipped when every training prediction is confidently right
    assert rep.results
    assert rep.mean("base_f1") >= 0.99
    assert rep.mean("ftr") <= 0.01


def test_deterministic():
    cfg = tiny(taus=(0.2, 0.4))
    a = run_experiment(cfg).to_dict()
    b = run_experiment(cfg).to_dict()
    assert json.dumps(a) == json.dumps(b)


def test_parallel_matches_serial():
    cfg = tiny(taus=(0.3,))
    a = json.dumps(run_experiment(cfg).to_dict())
    b = json.dumps(run_experiment(replace(cfg, n_jobs=2)).to_dict())
    assert a == b


def test_sweep_structure(sweep):
    assert list(sweep) == [0.05, 0.1, 0.2, 0.3, 0.4]
    for tau, rep in sweep.items():
        assert rep.config["taus"] == [tau]
        assert all(r.tau == tau for r in rep.results)


def test_sweep_paired_splits(sweep):
    by_rep = {}
    for rep in sweep.values():
        for r in rep.results:
            by_rep.setdefault(r.repetition, set()).add((r.seed, r.test_fraction, r.n_test))
    assert all(len(v) == 1 for v in by_rep.values())


def test_sweep_trust_labels_monotone(sweep):
    taus = list(sweep)
    for r in range(3):
        counts = [next((x.n_trust_train for x in sweep[t].results if x.repetition == r), 0)
                  for t in taus]
        assert counts == sorted(counts)


def test_sweep_section_equals_standalone_run(sweep):
    alone = run_experiment(tiny(taus=(0.2,)))
    assert json.dumps([r.to_dict() for r in alone.results]) == \
        json.dumps([r.to_dict() for r in sweep[0.2].results])


def test_ablation_arms():
    out = ablation_pe(tiny(taus=(0.3,), repetitions=2))
    assert set(out) == {"with_pe", "without_pe"}
    a, b = out["with_pe"].results, out["without_pe"].results
    assert [r.seed for r in a] == [r.seed for r in b]
    assert all(x.meta_input_width == y.meta_input_width + 1 for x, y in zip(a, b))
    assert [r.base_f1 for r in a] == [r.base_f1 for r in b]


def test_no_test_leakage():
    for holdout in (False, True):
        trace = []
        run_experiment(tiny(taus=(0.3,), meta_holdout=holdout), trace=trace)
        assert len(trace) == 3
        for t in trace:
            test = set(t["test_index"].tolist())
            assert not test & set(t["train_index"].tolist())
            assert not test & set(t["meta_index"].tolist())
            assert not test & set(t["base_fit_index"].tolist())
            if holdout:
                assert not set(t["meta_index"].tolist()) & set(t["base_fit_index"].tolist())


def test_aggregate_consistency(sweep):
    rep = sweep[0.3]
    agg = rep.aggregate()["with_pe"][repr(0.3)]
    for m in METRICS:
        vals = [r.metric(m) for r in rep.results if r.metric(m) is not None]
        if not vals:
            assert agg[m]["mean"] is None
            continue
        assert agg[m]["mean"] == pytest.approx(np.mean(vals), abs=1e-12)
        if len(vals) > 1:
            assert agg[m]["std"] == pytest.approx(np.std(vals, ddof=1), abs=1e-12)


def test_emit_json_round_trip(tmp_path, sweep):
    rep = sweep[0.1]
    emit_report(rep, "json", tmp_path / "r.json")
    back = read_report(tmp_path / "r.json")
    assert back.aggregate() == rep.aggregate()
    assert json.loads((tmp_path / "r.json").read_text())["aggregate"] == \
        json.loads(json.dumps(rep.aggregate()))
    emit_report(sweep, "json", tmp_path / "s.json")
    assert list(read_report(tmp_path / "s.json")) == [str(t) for t in sweep]


def test_emit_csv(tmp_path, sweep):
    emit_report(sweep, "csv", tmp_path / "s.csv")
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert len(rows) == sum(len(r.results) for r in sweep.values())
    first = sweep[0.05].results[0]
    assert float(rows[0]["car"]) == first.report.car
    with pytest.raises(ValueError):
        emit_report(sweep, "xml", tmp_path / "x")


def test_csv_row_count_reps_times_taus():
    cfg = tiny(taus=(0.3, 0.4), synthetic=SyntheticSpec(300, 4, 0.5, 3.0, 2))
    rep = run_experiment(cfg)
    assert not rep.skipped
    lines = report_to_csv(rep).splitlines()
    assert len(lines) == 1 + 3 * 2


def test_absent_ratios_serialise_as_null(tmp_path, sweep):
    rep = ExperimentReport.from_dict(json.loads(json.dumps(sweep[0.3].to_dict())))
    r = rep.results[0]
    r.report = replace(r.report, mrr=None, trr=None, frr=None)
    emit_report(rep, "json", tmp_path / "a.json")
    d = json.loads((tmp_path / "a.json").read_text())
    assert d["results"][0]["report"]["mrr"] is None
    row = next(csv.DictReader(io.StringIO(report_to_csv(rep))))
    assert row["mrr"] == "" and row["trr"] == ""


def test_degenerate_tau_is_skipped(caplog):
    cfg = tiny(synthetic=SyntheticSpec(200, 2, 0.5, 0.0, 0), taus=(0.01,),
               base_train=TrainConfig(epochs=1))
    with caplog.at_level(logging.WARNING):
        rep = run_experiment(cfg)
    assert len(rep.skipped) == 3 and not rep.results
    assert "degenerate meta labels" in rep.skipped[0]["reason"]
    assert "degenerate" in caplog.text
    assert rep.aggregate() == {}


@pytest.mark.parametrize("uq", ["ensemble", "emcd"])
def test_ensemble_settings_run(uq):
    rep = run_experiment(tiny(uq=uq, ensemble_size=3, repetitions=2, taus=(0.3,)))
    assert len(rep.results) + len(rep.skipped) == 2


def test_extra_options_run():
    rep = run_experiment(tiny(repetitions=2, taus=(0.3,), meta_holdout=True, zscore=True,
                              append_probs=True, retune_each_repetition=True, search_budget=2))
    assert all(r.meta_input_width == 4 + 1 + 2 for r in rep.results)


def test_eval_tau_audit_mode():
    rep = run_experiment(tiny(repetitions=1, taus=(0.2,), eval_tau=0.4))
    assert all(r.eval_tau == 0.4 and r.tau == 0.2 for r in rep.results)


def test_tune_budget_one_and_determinism():
    ds = make_synthetic(SyntheticSpec(200, 3, 0.5, 3.0, 0))
    a = tune_architecture(ds, 1, 5)
    assert a == tune_architecture(ds, 1, 5)
    assert tune_architecture(ds, 3, 5, TrainConfig(epochs=2)) == \
        tune_architecture(ds, 3, 5, TrainConfig(epochs=2))
    with pytest.raises(ValueError):
        tune_architecture(ds, 0, 5)


def test_tune_prefers_superior_candidate():
    # XOR quadrants separate cleanly but not linearly; a width-1 layer cannot carve them
    ds = xor_dataset(400, seed=2)
    good, bad = ArchSpec((64,), 2, 2, 0.0), ArchSpec((1,), 2, 2, 0.0)
    wins = sum(tune_architecture(ds, 2, s, TrainConfig(epochs=20, learning_rate=1e-2),
                                 candidates=[bad, good]) == good
               for s in range(30))
    assert wins >= 28


def test_config_json(tmp_path):
    cfg = tiny(taus=(0.1, 0.2))
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
    assert load_config(tmp_path / "c.json") == cfg
    assert "n_jobs" not in cfg.to_dict()
    with pytest.raises(ConfigError):
        tiny(taus=(0.2, 0.1))
    with pytest.raises(ConfigError):
        tiny(taus=(0.0,))
    with pytest.raises(ConfigError):
        tiny(test_fraction_range=(0.5, 0.2))
    with pytest.raises(ConfigError):
        ExperimentConfig()
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_model_save_load_predict(tmp_path):
    cfg = tiny()
    model = fit_usnn(cfg, 0.3)
    model.save(tmp_path / "m.json")
    back = UsnnModel.load(tmp_path / "m.json")
    ds = make_synthetic(SyntheticSpec(50, 4, 0.5, 2.0, 9))
    assert back.predict(ds.features) == model.predict(ds.features)
    m, rep = back.evaluate(ds)
    assert m.total == 50 and rep.total == 50
