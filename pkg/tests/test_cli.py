import csv
import json
import re

import pytest

from usnn import __version__
from usnn.cli import build_parser, main

SMALL = ["--synthetic", "200,4,2.0,0.5,1", "--mcd-passes", "5", "--repetitions", "2",
         "--epochs", "3", "--search-budget", "1", "--tune-epochs", "1", "--master-seed", "5"]
SUBCOMMANDS = ("synth", "train", "evaluate", "sweep", "ablate", "report")


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_synth(tmp_path, capsys):
    out = tmp_path / "d.csv"
    code, text, _ = run(capsys, "synth", "--n", "2000", "--d", "16", "--sep", "2.0", "--seed", "7",
                        "--out", str(out))
    assert code == 0
    assert text.splitlines()[0] == "master_seed: 7"
    rows = list(csv.reader(open(out)))
    assert len(rows) == 2001 and all(len(r) == 17 for r in rows)
    assert rows[0][-1] == "label"


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_documents_every_flag(cmd, capsys):
    assert main([cmd, "--help"]) == 0
    text = capsys.readouterr().out
    sub = build_parser()._subparsers._group_actions[0].choices[cmd]
    for action in sub._actions:
        for opt in action.option_strings:
            assert opt in text
        if action.option_strings and action.dest != "help":
            assert action.help


def test_version(capsys):
    assert main(["--version"]) == 0
    assert capsys.readouterr().out == f"usnn {__version__}\n"


def test_usage_errors(capsys):
    assert run(capsys, "frobnicate")[0] == 1
    code, _, err = run(capsys, "sweep", "--bogus", "--out", "x")
    assert code == 1 and "usage" in err
    assert run(capsys)[0] == 1
    assert run(capsys, "sweep", "--out", "x.json")[0] == 1


def test_data_errors(tmp_path, capsys):
    assert run(capsys, "evaluate", "--model", str(tmp_path / "none.json"),
               "--data", str(tmp_path / "none.csv"))[0] == 2
    (tmp_path / "bad.csv").write_text("a,label\n1,3\n")
    assert run(capsys, "sweep", "--data-path", str(tmp_path / "bad.csv"),
               "--out", str(tmp_path / "o.json"))[0] == 2
    assert run(capsys, "sweep", *SMALL, "--taus", "0.3,0.2", "--out", str(tmp_path / "o"))[0] == 2
    assert run(capsys, "report", "--in", str(tmp_path / "bad.csv"), "--out", "x")[0] == 2


def test_train_and_evaluate(tmp_path, capsys):
    model, data, js = tmp_path / "m.json", tmp_path / "t.csv", tmp_path / "e.json"
    assert run(capsys, "train", *SMALL, "--tau", "0.3", "--out", str(model))[0] == 0
    run(capsys, "synth", "--n", "80", "--d", "4", "--seed", "3", "--out", str(data))
    code, text, _ = run(capsys, "evaluate", "--model", str(model), "--data", str(data),
                        "--out", str(js))
    assert code == 0
    assert text.startswith("master_seed: 5\nconfig: ")
    counts = [int(n) for n in re.findall(r"\b[TF][PN][TF][TU] (\d+)", text)]
    assert len(counts) == 16 and sum(counts) == 80
    for cell in ("FNTT", "FPTT", "FNFU", "FPFU"):
        assert f"{cell} 0" in text
    d = json.loads(js.read_text())
    assert d["matrix"]["total"] == 80 and d["report"]["total"] == 80
    code, text, _ = run(capsys, "evaluate", "--model", str(model), "--data", str(data),
                        "--eval-tau", "0.4")
    assert code == 0 and "AUDIT MODE" in text


def test_sweep_default_taus_and_report(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "synthetic": {"n_samples": 200, "n_features": 4, "separation": 2.0, "seed": 1},
        "mcd_passes": 5, "repetitions": 2, "search_budget": 1, "tune_epochs": 1,
        "master_seed": 5, "base_train": {"epochs": 3}, "meta_train": {"epochs": 3}}))
    out, csv1, csv2 = tmp_path / "s.json", tmp_path / "s.csv", tmp_path / "r.csv"
    code, text, _ = run(capsys, "sweep", "--config", str(cfg), "--out", str(out),
                        "--csv", str(csv1))
    assert code == 0
    lines = text.splitlines()
    assert lines[0] == "master_seed: 5" and lines[1].startswith("config: {")
    d = json.loads(out.read_text())
    assert [s["name"] for s in d["sections"]] == ["tau=0.05", "tau=0.1", "tau=0.2", "tau=0.3",
                                                 "tau=0.4"]
    assert run(capsys, "report", "--in", str(out), "--out", str(csv2))[0] == 0
    assert csv1.read_bytes() == csv2.read_bytes()


def test_flags_override_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"synthetic": {"n_samples": 100, "n_features": 2},
                               "repetitions": 7, "master_seed": 1}))
    code, text, _ = run(capsys, "ablate", "--config", str(cfg), "--repetitions", "1",
                        "--taus", "0.3", "--mcd-passes", "3", "--epochs", "2",
                        "--search-budget", "1", "--out", str(tmp_path / "a.json"))
    assert code == 0
    echoed = json.loads(text.splitlines()[1][len("config: "):])
    assert echoed["repetitions"] == 1 and echoed["master_seed"] == 1
    assert echoed["base_train"]["epochs"] == 2
    names = [s["name"] for s in json.loads((tmp_path / "a.json").read_text())["sections"]]
    assert names == ["with_pe", "without_pe"]


def test_byte_identical_reruns(tmp_path, capsys):
    paths = []
    for i, jobs in enumerate(("1", "1", "2")):
        p = tmp_path / f"s{i}.json"
        assert run(capsys, "sweep", *SMALL, "--taus", "0.2,0.4", "--n-jobs", jobs,
                   "--out", str(p), "--csv", str(p.with_suffix(".csv")))[0] == 0
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes() == paths[2].read_bytes()
    assert all(p.with_suffix(".csv").read_bytes() == paths[0].with_suffix(".csv").read_bytes()
               for p in paths)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        run(capsys, "synth", "--n", "50", "--d", "3", "--seed", "4", "--out", str(p))
    assert a.read_bytes() == b.read_bytes()
