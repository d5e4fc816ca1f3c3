"""
CorrLeak - Command-line experiment driver
Correlation inference audit toolkit

Subcommands:
- grid, increasing_n, mitigation_queries, mitigation_precision
- real_data, marginal_granularity, extract_constraints, aia

Flags:
- --config <path>  JSON experiment config (keys of ExperimentConfig)
- --seed, --out, --workers, --paper-scale (alias --full-scale) override the config

Exit codes: 0 success, 2 configuration error, 3 data error
"""

import argparse
import logging
import sys
from pathlib import Path

# Add modules to path
sys.path.append(str(Path(__file__).parent))

from modules.config import EXPERIMENT_KINDS, LOG_LEVEL, ExperimentConfig
from modules.errors import ConfigError, ParseError, SchemaError
from modules.experiments import run_experiment
from modules.reporting import print_summary, write_report

logger = logging.getLogger('corrleak')

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


def build_parser():
    parser = argparse.ArgumentParser(
        prog='corrleak',
        description='Quantify how much a trained classifier leaks about the correlations of its training data',
    )
    subcommands = parser.add_subparsers(dest='experiment', required=True)
    for kind in EXPERIMENT_KINDS:
        sub = subcommands.add_parser(kind, help=f"run the {kind.replace('_', ' ')} experiment")
        sub.add_argument('--config', help='JSON experiment config')
        sub.add_argument('--seed', type=int, help='master seed')
        sub.add_argument('--out', help='output directory')
        sub.add_argument('--workers', type=int, help='worker processes (-1: all cores)')
        sub.add_argument('--paper-scale', '--full-scale', dest='full_scale', action='store_true',
                         help='published shadow and target counts instead of desk scale')
    return parser


def load_config(args):
    overrides = {
        'kind': args.experiment,
        'seed': args.seed,
        'output': args.out,
        'workers': args.workers,
        'full_scale': True if args.full_scale else None,
    }
    if args.config:
        return ExperimentConfig.from_file(args.config, **overrides)
    return ExperimentConfig.from_dict({k: v for k, v in overrides.items() if v is not None})


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.getLogger().setLevel(LOG_LEVEL)

    try:
        cfg = load_config(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except FileNotFoundError as e:
        logger.error(f"Config file not found: {e}")
        return EXIT_CONFIG

    try:
        report = run_experiment(cfg)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except (ParseError, SchemaError, FileNotFoundError) as e:
        logger.error(f"Data error: {e}")
        return EXIT_DATA

    paths = write_report(report, cfg.output_dir(), config=cfg.to_dict())
    print_summary(report)
    print(f"✅ Report written to {paths['report']}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
