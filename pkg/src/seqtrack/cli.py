"""Command-line entry point: ``seqtrack <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

from .asymptotics import estimate_lambda, lambda_bounds_symmetric, lambda_upper_bounds
from .errors import ConfigError, NonErgodicError
from .figures import DEFAULTS, reproduce_figure
from .harness import ExperimentConfig, _setup, check_chain, format_csv, load_config, run_experiment
from .radar import calibrate_fss_threshold
from .streams import trial_rng


def _base_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        changes["num_trials"] = args.trials
    return cfg.replace(**changes) if changes else cfg


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _table(fmt: str, header: list, row: list, cfg: ExperimentConfig) -> str:
    if fmt == "json":
        return json.dumps(dict(zip(header, row)), sort_keys=True, indent=2) + "\n"
    return format_csv(header, [row], cfg.config_hash(), cfg.master_seed)


def cmd_simulate(args) -> None:
    cfg = _base_config(args)
    report = run_experiment(cfg, workers=args.workers)
    _emit(report.to_json() if args.format == "json" else report.to_csv(), args.out)


def cmd_estimate_lambda(args) -> None:
    cfg = _base_config(args)
    chain, model, _ = _setup(cfg)
    trials = args.trials if args.trials is not None else 100
    est = estimate_lambda(chain, model, args.hypothesis, args.horizon, trials,
                          trial_rng(cfg.master_seed, 0, f"LAMBDA-{args.hypothesis.upper()}"))
    header = ["hypothesis", "lambda", "std_error", "horizon_k", "num_trials"]
    _emit(_table(args.format, header, [est.hypothesis, est.value, est.std_error, est.horizon_k, est.num_trials], cfg),
          args.out)


def cmd_bounds(args) -> None:
    cfg = _base_config(args)
    chain, model, _ = _setup(cfg)
    header = ["quantity", "lower", "lower_std_error", "upper"]
    rows = []
    try:
        b1, b0 = lambda_bounds_symmetric(model, rng=trial_rng(cfg.master_seed, 0, "BOUNDS"))
    except ValueError:
        check_chain(chain, require_ergodic=True)
        b1, b0 = lambda_upper_bounds(chain, model)
    for b in (b1, b0):
        rows.append([b.which, "" if b.lower is None else b.lower, b.lower_std_error, b.upper])
    if args.format == "json":
        _emit(json.dumps([dict(zip(header, r)) for r in rows], indent=2) + "\n", args.out)
    else:
        _emit(format_csv(header, rows, cfg.config_hash(), cfg.master_seed), args.out)


def cmd_calibrate_fss(args) -> None:
    cfg = _base_config(args)
    chain, model, _ = _setup(cfg)
    k = cfg.fss_samples or 4
    target = cfg.alpha if cfg.fss_target_pfa is None else cfg.fss_target_pfa
    trials = args.trials if args.trials is not None else cfg.fss_calibration_trials
    cal = calibrate_fss_threshold(chain, model, k, target, trials, trial_rng(cfg.master_seed, 0, "FSS-CAL"),
                                  workers=args.workers)
    header = ["fss_samples", "target_pfa", "log_threshold", "std_error", "num_trials"]
    _emit(_table(args.format, header, [k, target, cal.log_threshold, cal.std_error, trials], cfg), args.out)


def _parse_override(text: str):
    key, sep, value = text.partition("=")
    if not sep:
        raise ConfigError(f"override {text!r} must look like key=value")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def cmd_reproduce(args) -> None:
    overrides = dict(_parse_override(s) for s in args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    data = reproduce_figure(args.figure, overrides, workers=args.workers)
    if args.format == "json":
        text = json.dumps({"figure": data.figure_id, "params": data.params,
                           "rows": [dict(zip(data.columns, r)) for r in data.rows]}, indent=2) + "\n"
    else:
        text = data.to_csv()
    _emit(text, args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqtrack", description="Sequential detection and tracking in HMMs.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, trials=True, config=True):
        if config:
            p.add_argument("--config", help="flat JSON file of experiment settings")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        if trials:
            p.add_argument("--trials", type=int, help="number of Monte Carlo trials")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--workers", type=int, default=1, help="worker processes; never changes output")

    p = sub.add_parser("simulate", help="run an experiment and report metrics")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate-lambda", help="Monte Carlo estimate of a rate constant")
    common(p)
    p.add_argument("--hypothesis", choices=("H0", "H1"), default="H1")
    p.add_argument("--horizon", type=int, default=10_000, help="frames per trial")
    p.set_defaults(func=cmd_estimate_lambda)

    p = sub.add_parser("bounds", help="divergence bounds on the rate constants")
    common(p, trials=False)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("calibrate-fss", help="threshold of the fixed-sample baseline")
    common(p)
    p.set_defaults(func=cmd_calibrate_fss)

    p = sub.add_parser("reproduce", help="regenerate the data of a reference figure")
    p.add_argument("figure", choices=sorted(DEFAULTS))
    common(p, config=False)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a sweep parameter (JSON value), repeatable")
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (ConfigError, NonErgodicError, ValueError) as exc:
        print(f"seqtrack: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
