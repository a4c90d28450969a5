"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .data import DataError, SyntheticSpec, load_dataset, make_synthetic, write_dataset
from .harness import (ConfigError, ExperimentConfig, UsnnModel, ablation_pe, emit_report,
                      fit_usnn, load_config, read_report, threshold_sweep)
from .metrics import MetricError, matrix_json
from .nn import TrainingError
from .stacking import DegenerateMetaLabels, LayoutMismatch

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated reals, got {text!r}")


def _experiment_flags(p):
    g = p.add_argument_group("experiment (override fields of --config)")
    g.add_argument("--config", help="ExperimentConfig JSON document")
    g.add_argument("--data-path", help="input CSV (replaces a synthetic source)")
    g.add_argument("--label-column", help="label column name in the CSV (default: label)")
    g.add_argument("--uq", choices=("mcd", "ensemble", "emcd"), help="base-tier UQ setting")
    g.add_argument("--mcd-passes", type=int, help="stochastic passes per input (default 100)")
    g.add_argument("--ensemble-size", type=int, help="ensemble members (default 30)")
    g.add_argument("--taus", type=_float_list,
                   help="confidence thresholds, e.g. 0.05,0.1,0.2,0.3,0.4")
    g.add_argument("--repetitions", type=int, help="repeated random splits (default 30)")
    g.add_argument("--test-fraction-range", type=_float_list,
                   help="lo,hi bounds for the per-repetition test fraction (default 0.2,0.4)")
    g.add_argument("--include-pe", action=argparse.BooleanOptionalAction, default=None,
                   help="feed PE to the meta-model (default on)")
    g.add_argument("--append-probs", action=argparse.BooleanOptionalAction, default=None,
                   help="also feed the base mean probabilities to the meta-model")
    g.add_argument("--zscore", action=argparse.BooleanOptionalAction, default=None,
                   help="standardise features with training-split statistics")
    g.add_argument("--master-seed", type=int, help="seed from which all streams derive")
    g.add_argument("--search-budget", type=int, help="architectures tried by random search")
    g.add_argument("--tune-epochs", type=int, help="epochs per search candidate")
    g.add_argument("--dropout-rate", type=float, help="dropout rate of sampled architectures")
    g.add_argument("--retune-each-repetition", action=argparse.BooleanOptionalAction,
                   default=None, help="rerun architecture search in every repetition")
    g.add_argument("--meta-holdout", action=argparse.BooleanOptionalAction, default=None,
                   help="build the meta set from a 20%% holdout of the training split")
    g.add_argument("--eval-tau", type=float,
                   help="AUDIT MODE: score trust against this threshold instead")
    g.add_argument("--n-jobs", type=int, help="worker processes for repetitions")
    g.add_argument("--epochs", type=int, help="training epochs for both tiers")
    g.add_argument("--batch-size", type=int, help="mini-batch size for both tiers")
    g.add_argument("--learning-rate", type=float, help="learning rate for both tiers")
    g.add_argument("--synthetic", metavar="N,D,SEP[,BALANCE[,SEED]]", type=_float_list,
                   help="use a synthetic dataset instead of a CSV")


_FIELD_FLAGS = ("data_path", "label_column", "uq", "mcd_passes", "ensemble_size", "taus",
                "repetitions", "test_fraction_range", "include_pe", "append_probs", "zscore",
                "master_seed", "search_budget", "tune_epochs", "dropout_rate",
                "retune_each_repetition", "meta_holdout", "eval_tau", "n_jobs")


def _resolve_config(args) -> ExperimentConfig:
    raw = {}
    if args.config:
        raw = load_config(args.config).to_dict()
    for name in _FIELD_FLAGS:
        v = getattr(args, name)
        if v is not None:
            raw[name] = v
    if args.data_path is not None:
        raw["synthetic"] = None
    if args.synthetic is not None:
        s = args.synthetic
        if not 3 <= len(s) <= 5:
            raise UsageError("--synthetic takes N,D,SEP[,BALANCE[,SEED]]")
        raw["synthetic"] = {"n_samples": int(s[0]), "n_features": int(s[1]), "separation": s[2],
                            "class_balance": s[3] if len(s) > 3 else 0.5,
                            "seed": int(s[4]) if len(s) > 4 else 0}
        raw["data_path"] = None
    for tier in ("base_train", "meta_train"):
        t = dict(raw.get(tier) or {})
        for flag in ("epochs", "batch_size", "learning_rate"):
            if getattr(args, flag) is not None:
                t[flag] = getattr(args, flag)
        if t:
            raw[tier] = t
    if not raw.get("data_path") and not raw.get("synthetic"):
        raise UsageError("no dataset: give --config, --data-path or --synthetic")
    return ExperimentConfig.from_dict(raw)


def _echo(config: dict):
    print(f"master_seed: {config.get('master_seed')}")
    print("config: " + json.dumps(config, sort_keys=True))
    sys.stdout.flush()


def cmd_synth(args):
    spec = SyntheticSpec(args.n, args.d, args.balance, args.sep, args.seed)
    _echo({f: getattr(spec, f) for f in spec.__dataclass_fields__} | {"master_seed": args.seed})
    ds = make_synthetic(spec)
    write_dataset(ds, args.out, args.label_column)
    print(f"wrote {len(ds)} rows x {ds.n_features + 1} columns to {args.out}")


def cmd_train(args):
    cfg = _resolve_config(args)
    _echo(dict(cfg.to_dict(), tau=args.tau))
    model = fit_usnn(cfg, args.tau)
    model.save(args.out)
    print(f"saved {cfg.uq} base tier ({len(model.setting.members)} network(s)) "
          f"and meta-model to {args.out}")


def cmd_evaluate(args):
    model = UsnnModel.load(args.model)
    conf = dict(model.config or {})
    conf.update(model=args.model, data=args.data, tau=model.tau)
    if args.eval_tau is not None:
        conf["eval_tau"] = args.eval_tau
    _echo(conf)
    ds = load_dataset(args.data, args.label_column)
    if args.eval_tau is not None:
        print(f"AUDIT MODE: trust scored at tau={args.eval_tau}, model trained at tau={model.tau}")
    m, report = model.evaluate(ds, args.eval_tau)
    print(f"Trust-informed confusion matrix (n={m.total}, tau={m.tau})")
    print(m.table())
    print()
    print(report.format())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(matrix_json(m, report))


def _emit(report, args):
    emit_report(report, "json", args.out)
    print(f"wrote {args.out}")
    if args.csv:
        emit_report(report, "csv", args.csv)
        print(f"wrote {args.csv}")


def cmd_sweep(args):
    cfg = _resolve_config(args)
    _echo(cfg.to_dict())
    reports = threshold_sweep(cfg)
    for tau, rep in reports.items():
        print(f"tau={tau}: CAR {_fmt(rep.mean('car'))}  CPR {_fmt(rep.mean('cpr'))}  "
              f"RAR {_fmt(rep.mean('rar'))}  FTR {_fmt(rep.mean('ftr'))}  "
              f"skipped {len(rep.skipped)}")
    _emit({f"tau={tau!r}": rep for tau, rep in reports.items()}, args)


def cmd_ablate(args):
    cfg = _resolve_config(args)
    _echo(cfg.to_dict())
    reports = ablation_pe(cfg)
    for arm, rep in reports.items():
        print(f"{arm}: meta AUC {_fmt(rep.mean('meta_auc'))}  FTR {_fmt(rep.mean('ftr'))}  "
              f"CAR {_fmt(rep.mean('car'))}  skipped {len(rep.skipped)}")
    _emit(reports, args)


def cmd_report(args):
    try:
        report = read_report(args.input)
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise ConfigError(f"cannot read report {args.input}: {e}") from e
    first = report if not isinstance(report, dict) else next(iter(report.values()))
    _echo(first.config)
    emit_report(report, "csv", args.out)
    print(f"wrote {args.out}")


def _fmt(v):
    return "absent" if v is None else f"{v:.4f}"


def build_parser():
    p = _Parser(prog="usnn", description="Uncertainty-aware stacked neural networks.")
    p.add_argument("--version", action="version", version=f"usnn {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic two-Gaussian dataset CSV")
    s.add_argument("--n", type=int, required=True, help="number of samples")
    s.add_argument("--d", type=int, required=True, help="number of features")
    s.add_argument("--sep", type=float, default=2.0, help="class-mean separation (std units)")
    s.add_argument("--balance", type=float, default=0.5, help="fraction of positives")
    s.add_argument("--seed", type=int, default=0, help="generator seed")
    s.add_argument("--label-column", default="label", help="label column name")
    s.add_argument("--out", required=True, help="output CSV path")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="fit base and meta tiers on a whole dataset")
    _experiment_flags(t)
    t.add_argument("--tau", type=float, default=0.1, help="meta-label threshold (default 0.1)")
    t.add_argument("--out", required=True, help="model JSON path")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a saved model on a labelled CSV")
    e.add_argument("--model", required=True, help="model JSON from `train`")
    e.add_argument("--data", required=True, help="test CSV")
    e.add_argument("--label-column", default="label", help="label column name")
    e.add_argument("--eval-tau", type=float, help="AUDIT MODE: score trust at another threshold")
    e.add_argument("--out", help="optional JSON with matrix and rates")
    e.set_defaults(func=cmd_evaluate)

    for name, func, text in (("sweep", cmd_sweep, "repeated-split runs across thresholds"),
                             ("ablate", cmd_ablate, "paired runs with and without PE")):
        a = sub.add_parser(name, help=text)
        _experiment_flags(a)
        a.add_argument("--out", required=True, help="JSON report path")
        a.add_argument("--csv", help="optional CSV report path")
        a.set_defaults(func=func)

    r = sub.add_parser("report", help="convert a JSON report to CSV")
    r.add_argument("--in", dest="input", required=True, help="JSON report")
    r.add_argument("--out", required=True, help="CSV path")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # --help, --version, usage errors
        return e.code or 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as e:
        print(f"usnn: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ConfigError, MetricError, DegenerateMetaLabels, LayoutMismatch,
            TrainingError, ValueError, OSError) as e:
        print(f"usnn: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
