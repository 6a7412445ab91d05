"""Command line interface.

Subcommands::

    drcme gen             draw a synthetic dataset to CSV
    drcme test            one permutation test on a CSV file or a DGP draw
    drcme fit-convergence embedding error against an oracle over a grid of n
    drcme power           rejection rates over a grid of effect sizes
    drcme calibrate       H0/H1 rejection rates on a counterfactual CSV

Any flag can also come from a JSON file given with ``--config``; keys are the
long flag names with dashes replaced by underscores. Command line flags win.
Exit status is 0 on success, 1 for configuration or input errors and 2 for
failures during the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import numpy as np

from drcme import experiments as ex
from drcme.datagen import DGP_A, DGP_B, DGP_EFFECT, DataError, DgpSpec, generate, write_csv
from drcme.statistics import ModelConfig

DGP_NAMES = {"a": DGP_A, "b": DGP_B, "effect": DGP_EFFECT, DGP_A: DGP_A, DGP_B: DGP_B, DGP_EFFECT: DGP_EFFECT}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _words(text):
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def _add_common(p):
    p.add_argument("--config", help="JSON file with flag values")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory (file for gen)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_dgp(p, default="effect"):
    p.add_argument("--dgp", default=default, choices=sorted(DGP_NAMES))
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--beta", type=float, default=None, help="effect size (default 3 for dgp a, 0 for effect)")
    p.add_argument("--z-mode", default="one", choices=("one", "bernoulli", "uniform"))
    p.add_argument("--sigma", type=float, default=0.2)
    p.add_argument("--dgp-alpha", type=float, default=0.3, help="variance inflation of dgp b")
    p.add_argument("--sigma-prime", type=float, default=0.2)
    p.add_argument("--treat-prob", type=float, default=0.5)
    p.add_argument("--p-offset", type=float, default=0.5, help="centre of the dgp a propensity")


def _add_csv(p):
    p.add_argument("--csv", help="counterfactual CSV file")
    p.add_argument("--treatment", default="t")
    p.add_argument("--outcome", default="y", help="comma-separated outcome columns")
    p.add_argument("--y0", default=None, help="comma-separated Y(0) columns")
    p.add_argument("--y1", default=None, help="comma-separated Y(1) columns")
    p.add_argument("--propensity", default=None, help="column holding a known propensity")
    p.add_argument("--covariates", default=None, help="comma-separated covariate columns (default: the rest)")
    p.add_argument("--exclude", default="", help="comma-separated columns to ignore")
    p.add_argument("--trim", action="store_true", help="drop rows with stated propensity outside [0.03, 0.97]")


def _add_test(p, stats="date,dr-date,dett,dr-dett"):
    p.add_argument("--stat", default=stats, help="comma-separated statistics: date, dr-date, dett, dr-dett, mean-dr")
    p.add_argument("--N", type=int, default=20, help="cached training relabellings")
    p.add_argument("--m", type=int, default=200, help="permutations drawn")
    p.add_argument("--ratio", type=float, default=0.5, help="share of matched sets used for training")
    p.add_argument("--alpha", type=float, default=0.05, help="significance level")
    p.add_argument("--clip-delta", type=float, default=0.03)
    p.add_argument("--cme-lambda", type=float, default=None)


def build_parser():
    parser = _Parser(prog="drcme", description="Doubly robust counterfactual mean embedding tests")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="emit a DGP draw as CSV")
    _add_common(p)
    _add_dgp(p, "a")

    p = sub.add_parser("test", help="run one permutation test")
    _add_common(p)
    _add_dgp(p)
    _add_csv(p)
    _add_test(p, "dr-date")

    p = sub.add_parser("fit-convergence", help="embedding convergence experiment")
    _add_common(p)
    _add_dgp(p, "a")
    p.add_argument("--grid", type=_floats, default=(100, 200, 400, 800, 1600))
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--n-oracle", type=int, default=100_000)
    p.add_argument("--clip-delta", type=float, default=0.03)
    p.add_argument("--cme-lambda", type=float, default=None)

    p = sub.add_parser("power", help="power curve experiment")
    _add_common(p)
    _add_dgp(p)
    _add_test(p)
    p.add_argument("--grid", "--betas", dest="grid", type=_floats, default=(0.0, 0.5, 1.0, 2.0, 3.0))
    p.add_argument("--z-modes", type=_words, default=("one", "bernoulli", "uniform"))
    p.add_argument("--replicates", type=int, default=50)

    p = sub.add_parser("calibrate", help="H0/H1 calibration on a counterfactual CSV")
    _add_common(p)
    _add_csv(p)
    _add_test(p)
    p.add_argument("--replicates", type=int, default=50)
    p.add_argument("--subsample", type=float, default=0.8, help="row fraction drawn per replicate")
    return parser


def _parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        if not isinstance(values, dict):
            raise UsageError("config file must hold a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {unknown}")
        for key, val in values.items():
            if key in ("grid",):
                val = _floats(",".join(map(str, val)) if isinstance(val, list) else val)
            elif key in ("z_modes",) and isinstance(val, list):
                val = tuple(val)
            elif isinstance(val, list):
                val = ",".join(map(str, val))
            sub.set_defaults(**{key: val})
        args = parser.parse_args(argv)
    return args


def _dgp_spec(args) -> DgpSpec:
    family = DGP_NAMES[args.dgp]
    beta = args.beta if args.beta is not None else (3.0 if family == DGP_A else 0.0)
    return DgpSpec(
        family,
        n=args.n,
        seed=args.seed,
        sigma=args.sigma,
        beta=beta,
        alpha=args.dgp_alpha,
        sigma_prime=args.sigma_prime,
        treat_prob=args.treat_prob,
        z_mode=args.z_mode,
        p_offset=args.p_offset,
    )


def _csv_schema(args) -> dict:
    return {
        "treatment": args.treatment,
        "outcomes": _words(args.outcome),
        "y0": _words(args.y0) if args.y0 else None,
        "y1": _words(args.y1) if args.y1 else None,
        "propensity": args.propensity,
        "covariates": _words(args.covariates) if args.covariates else None,
        "exclude": _words(args.exclude),
        "trim": args.trim,
    }


def _config(args, suite) -> ex.ExperimentConfig:
    cfg = ex.ExperimentConfig(suite=suite, seed=args.seed, output_dir=args.out)
    if hasattr(args, "dgp"):
        cfg.dgp = _dgp_spec(args)
    if getattr(args, "csv", None):
        cfg.csv_path = args.csv
        cfg.csv_schema = _csv_schema(args)
    for name in ("N", "m", "ratio", "alpha", "replicates", "grid", "z_modes", "n_oracle", "subsample"):
        if hasattr(args, name):
            setattr(cfg, name, getattr(args, name))
    if hasattr(args, "stat"):
        cfg.statistics = _words(args.stat)
    cfg.models = ModelConfig(clip_delta=args.clip_delta, cme_lambda=args.cme_lambda)
    return cfg.validate()


def _emit(summary, out):
    for s in summary:
        print(json.dumps(s))
    if out:
        print(f"wrote results to {out}", file=sys.stderr)


def _cmd_gen(args):
    data = generate(_dgp_spec(args))
    write_csv(data, args.out if args.out else sys.stdout)


def _print_results(results, cfg):
    for r in results.values():
        rec = r.summary()
        rec["reject"] = bool(r.p_value <= cfg.alpha)
        print(json.dumps({k: (v.item() if isinstance(v, np.generic) else v) for k, v in rec.items()}))


def _cmd_suite(cfg, runner, suite):
    rows = runner(cfg)
    summary = ex.write_outputs(rows, cfg.output_dir, suite) if cfg.output_dir else ex.summarize(rows)
    _emit(summary, cfg.output_dir)


def main(argv=None) -> int:
    try:
        args = _parse(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
        if args.command == "gen":
            cfg = None
        else:
            suite = {"test": "single_test", "fit-convergence": "fit_convergence", "power": "power_curve", "calibrate": "calibration"}[args.command]
            cfg = _config(args, suite)
            data = None
            if cfg.csv_path:
                # CSV problems are input errors, reported before the run starts
                data = ex.load_csv_source(cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ex.ConfigError, DataError, ValueError, OSError) as exc:
        print(f"drcme: configuration error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "gen":
            _cmd_gen(args)
        elif args.command == "test":
            _print_results(ex.run_single_test(cfg, data), cfg)
        elif args.command == "fit-convergence":
            _cmd_suite(cfg, ex.run_fit_convergence, "fit_convergence")
        elif args.command == "power":
            _cmd_suite(cfg, ex.run_power_curve, "power_curve")
        else:
            _cmd_suite(cfg, lambda c: ex.run_calibration_csv(c, data), "calibration")
    except Exception as exc:  # noqa: BLE001
        print(f"drcme: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0

