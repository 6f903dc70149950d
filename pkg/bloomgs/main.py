"""
BloomGS - Command Line Application
"""

import argparse
import logging
import sys
from typing import List, Optional

from bloomgs import __version__
from bloomgs.commands import compress, config_cmd, evaluate, generate, render, train
from bloomgs.config import Settings, get_settings
from bloomgs.errors import BloomError

logger = logging.getLogger("bloomgs")

LOG_FORMATS = {
    "plain": "%(asctime)s %(levelname)s %(name)s: %(message)s",
    "kv": 'time=%(asctime)s level=%(levelname)s logger=%(name)s msg="%(message)s"',
}


def configure_logging(settings: Settings) -> None:
    """Configure root logging once from process settings."""
    level = getattr(logging, settings.log_level.upper(), None)
    if not isinstance(level, int):
        level = logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMATS[settings.log_format], stream=sys.stderr, force=True)


def create_parser() -> argparse.ArgumentParser:
    """Create the argument parser with one subcommand per pipeline stage."""
    parser = argparse.ArgumentParser(
        prog="bloomgs",
        description="Text-to-3D scene generation with compact anchor Gaussians",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    generate.register(subparsers)
    train.register(subparsers)
    compress.register(subparsers)
    render.register(subparsers)
    evaluate.register(subparsers)
    config_cmd.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None, settings: Optional[Settings] = None) -> int:
    settings = settings or get_settings()
    configure_logging(settings)
    args = create_parser().parse_args(argv)

    try:
        return args.handler(args, settings)
    except BloomError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
