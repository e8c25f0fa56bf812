#!/usr/bin/env python3
"""
Labor Market Matching Launcher
Command-line front end for simulation, estimation, beta confidence sets and the batch experiments.
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from config import ConfigManager, create_sample_config_file, setup_logging
from experiments import FIGURE_CASES, ExperimentRunner
from models import (
    ConfigurationError, DataFormatError, ExperimentKind, ExperimentPlan, LaborMarketError, NumericalError
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

DEFAULT_CONFIGS = {
    'figures': 'figures.yaml',
}

COMMAND_KINDS = {
    'simulate': ExperimentKind.SIMULATE,
    'estimate': ExperimentKind.ESTIMATE,
    'confint-beta': ExperimentKind.CONFINT_BETA,
    'tables': ExperimentKind.TABLE1,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Labor market matching engine with pre-match investment")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file (default: config.yaml, figures.yaml for figures)")
    common.add_argument("--seed", type=int, help="Root random seed")
    common.add_argument("--reps", type=int, help="Number of replications")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--jobs", type=int, help="Parallel workers (-1 = all cores)")
    common.add_argument("--scale", choices=['paper', 'quick'], help="Experiment scale preset")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="Simulate one observed dataset")
    estimate = sub.add_parser("estimate", parents=[common], help="Estimate theta at the configured beta")
    estimate.add_argument("--data", required=True, help="Observed-data CSV")
    confint = sub.add_parser("confint-beta", parents=[common], help="Two-stage confidence set for beta")
    confint.add_argument("--data", required=True, help="Observed-data CSV")
    confint.add_argument("--oracle-theta", action="store_true",
                         help="Treat the configured theta as known (single-stage Monte Carlo inversion)")
    figures = sub.add_parser("figures", parents=[common], help="Comparative-statics curves")
    figures.add_argument("--figure", choices=[k.value for k in FIGURE_CASES], action="append",
                         help="Restrict to one figure (repeatable)")
    sub.add_parser("tables", parents=[common], help="Bootstrap coverage and length tables")
    init = sub.add_parser("init-config", help="Write a configuration file holding every default")
    init.add_argument("--path", default="config.yaml", help="Where to write the file")
    return parser


def load_manager(args) -> ConfigManager:
    config_path = args.config or DEFAULT_CONFIGS.get(args.command, 'config.yaml')
    if args.config and not Path(args.config).exists():
        raise ConfigurationError(f"Configuration file {args.config} not found")
    manager = ConfigManager(config_path)
    if args.seed is not None:
        manager.experiment.seed = args.seed
    if args.jobs is not None:
        manager.experiment.jobs = args.jobs
    if args.out is not None:
        manager.experiment.output_dir = args.out
    manager.apply_scale(args.scale)
    if args.reps is not None:
        manager.experiment.replications = args.reps
    manager.require_valid()
    return manager


def main(argv: Optional[List[str]] = None) -> int:
    """Main launcher function"""
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "init-config":
        try:
            path = create_sample_config_file(args.path)
        except ConfigurationError as e:
            print(f"❌ {e}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"✅ Sample configuration file created: {path}")
        return EXIT_OK

    try:
        manager = load_manager(args)
        setup_logging(manager.logging)
        exp = manager.experiment
        kind = COMMAND_KINDS.get(args.command, ExperimentKind.FIGURE1)
        plan = ExperimentPlan(kind=kind, config_path=args.config, seed=exp.seed,
                              replications=exp.replications, output_dir=exp.output_dir,
                              parallelism=exp.jobs, scale=exp.scale)
        runner = ExperimentRunner(plan, manager)

        print(f"🚀 {args.command} (seed={plan.seed}, jobs={plan.parallelism}, scale={plan.scale})")
        if args.command == 'figures':
            kinds = [ExperimentKind(f) for f in args.figure] if args.figure else None
            paths = runner.run_figures(kinds)
        else:
            paths = runner.run(getattr(args, 'data', None), getattr(args, 'oracle_theta', False))
    except (ConfigurationError, DataFormatError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"❌ Numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except LaborMarketError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG

    for path in paths:
        print(f"✅ {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
