"""
Config Command
Print the effective run configuration
"""

import argparse

from bloomgs.commands import add_common_options, load_config
from bloomgs.config import Settings, describe_config, dump_run_config


def register(subparsers) -> None:
    parser = subparsers.add_parser("config", help="show the effective configuration")
    add_common_options(parser)
    parser.add_argument("--dump", action="store_true", help="print the full config as INI")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace, settings: Settings) -> int:
    config = load_config(args, settings)
    if args.dump:
        print(dump_run_config(config), end="")
    else:
        for line in describe_config(config):
            print(line)
    return 0
