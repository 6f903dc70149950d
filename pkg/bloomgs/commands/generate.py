"""
Generate Command
Progressive point-cloud generation along the camera trajectory
"""

import argparse
import logging

from bloomgs.commands import add_common_options, load_config
from bloomgs.config import Settings, describe_config
from bloomgs.services.pipeline import generate
from bloomgs.services.providers import get_provider

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("generate", help="build the point cloud and training views")
    add_common_options(parser)
    parser.add_argument("--prompt", help="override [run] prompt")
    parser.add_argument("--initial-image", dest="initial_image", help="start from this PNG instead of text")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace, settings: Settings) -> int:
    config = load_config(args, settings, prompt=args.prompt, initial_image=args.initial_image)
    for line in describe_config(config):
        logger.info(line)

    provider = get_provider(config.run.provider, config.run.seed, settings)
    result = generate(config, provider, config.run.out_dir)

    summary = result.summary
    print(f"Generated {summary.num_cameras} frames, {summary.support_cameras} support views")
    print(f"Point cloud: {summary.initial_points} initial -> {summary.total_points} points")
    print(f"Outputs in {config.run.out_dir}")
    return 0
