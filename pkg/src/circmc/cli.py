"""Command-line experiment runner.

Subcommands: normal1d, bimodal, mvn9, table1, logistic.  Common flags:
--seed, --n, --r, --k, --out, --config <json file>.  A config file mirrors
RunConfig field-for-field; explicit flags override it.
"""

from __future__ import annotations

import argparse
import json
import sys

from .experiments import (RunConfig, experiment_bimodal, experiment_logistic,
                          experiment_mvn9, experiment_normal1d,
                          experiment_table1, _jsonable)

_EXPERIMENTS = {
    "normal1d": experiment_normal1d,
    "bimodal": experiment_bimodal,
    "mvn9": experiment_mvn9,
    "table1": experiment_table1,
    "logistic": experiment_logistic,
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int, dest="n_steps")
    p.add_argument("--r", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--max-restarts", type=int, dest="max_restarts")
    p.add_argument("--out", dest="out_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="circmc",
        description="Circularly-coupled Markov chain experiments")
    sub = parser.add_subparsers(dest="experiment", required=True)

    p = sub.add_parser("normal1d", help="wrapped chain + diagnostics on "
                                        "the 1-D standard normal")
    _add_common(p)
    p.add_argument("--w", type=float)

    p = sub.add_parser("bimodal", help="batch classification on the "
                                       "two-mode mixture")
    _add_common(p)
    p.add_argument("--w", type=float)
    p.add_argument("--n-seeds", type=int, dest="n_seeds")

    p = sub.add_parser("mvn9", help="coupled-pair studies on the 9-D normal")
    _add_common(p)
    p.add_argument("--study", choices=["approach", "coalesce", "metropolis",
                                       "langevin", "gibbs"])
    p.add_argument("--mode", choices=["single-random", "multi"])
    p.add_argument("--w", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--record-every", type=int, dest="record_every")
    p.add_argument("--n-updates", type=int, dest="n_updates")

    p = sub.add_parser("table1", help="observed vs predicted coalescence "
                                      "times for the schedule pipeline")
    _add_common(p)
    p.add_argument("--w", type=float)
    p.add_argument("--schedule", choices=["long", "short"])
    p.add_argument("--n-replicates", type=int, dest="n_replicates")

    p = sub.add_parser("logistic", help="hierarchical logistic regression "
                                        "on the parallel engine")
    _add_common(p)
    p.add_argument("--dataset-seed", type=int, dest="dataset_seed")
    p.add_argument("--dataset-csv", dest="dataset_csv")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    base = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            base = json.load(fh)
    base["experiment"] = args.experiment
    for key, value in vars(args).items():
        if key in ("config", "experiment") or value is None:
            continue
        base[key] = value
    config = RunConfig(**base)
    # the experiments resolve their own N defaults from the sentinel 1000;
    # everything else is validated up front
    config.validate()
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = config_from_args(args)
    report = _EXPERIMENTS[config.experiment](config)
    json.dump(_jsonable(report), sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
