"""Command-line entry point: ``riskmbrl <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 oracle-suite failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, load_config
from .envs import ENV_IDS
from .risk_measures import RiskSpec

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_SUITE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; we reserve 2 for runtime failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="PATH", help="INI config file")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--env", choices=ENV_IDS, help="environment id")
    p.add_argument("--risk", metavar="SPEC", help="neutral | cvar:ALPHA | wang:ETA")
    p.add_argument("--ablate-ensemble", action="store_true", help="single-model ensemble")
    p.add_argument("--single-thread", action="store_true", help="force sequential, deterministic execution")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="riskmbrl", description="Risk-averse model-based offline RL experiments.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", help="generate an offline dataset with the behaviour policy")
    _common(p)
    p.add_argument("--overwrite", action="store_true", help="replace an existing dataset file")

    p = sub.add_parser("train", help="fit the model and train the agent")
    _common(p)
    p.add_argument("--resume", action="store_true", help="continue from the last checkpoint")

    p = sub.add_parser("evaluate", help="evaluate an agent checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--report", metavar="PATH", help="report file (default <out>/report.json)")

    p = sub.add_parser("reproduce-fig2", help="sweep neutral and CVaR values on the one-step MDP")
    _common(p)
    p.add_argument("--zero-uncertainty", action="store_true", help="remove model noise and disagreement")

    p = sub.add_parser("oracle-tests", help="run the numerical oracle suites")
    p.add_argument("--inject-fault", action="store_true", help="flip the CVaR sort order (negative control)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _resolve_config(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.env is not None:
        overrides["env.env_id"] = args.env
    if args.risk is not None:
        try:
            overrides["rollout.risk"] = str(RiskSpec.parse(args.risk))
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    if args.ablate_ensemble:
        overrides["train.ablate_ensemble"] = True
    if args.single_thread:
        overrides["single_thread"] = True
    if getattr(args, "zero_uncertainty", False):
        overrides["fig2.zero_uncertainty"] = True
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "oracle-tests":
        from .oracles import run_oracle_suites
        ok = run_oracle_suites(seed=args.seed, inject_fault=args.inject_fault)
        return EXIT_OK if ok else EXIT_SUITE

    try:
        cfg = _resolve_config(args)
    except (UsageError, ConfigError) as exc:
        print(f"riskmbrl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    from . import experiment
    try:
        if args.command == "gen-data":
            path = experiment.cmd_gen_data(cfg, overwrite=args.overwrite)
            print(path)
        elif args.command == "train":
            print(json.dumps(experiment.cmd_train(cfg, resume=args.resume), indent=2))
        elif args.command == "evaluate":
            print(experiment.cmd_evaluate(cfg, args.checkpoint, args.report))
        elif args.command == "reproduce-fig2":
            from pathlib import Path
            out = Path(cfg.out_dir) / "fig2.json"
            result = experiment.cmd_reproduce_fig2(cfg, out)
            print(json.dumps({k: result[k] for k in ("neutral_argmax", "cvar_argmax", "safe_action",
                                                      "noisy_action")}, indent=2))
            print(out)
    except (experiment.RunError, OSError, FloatingPointError, ValueError) as exc:
        print(f"riskmbrl: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
