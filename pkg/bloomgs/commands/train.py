"""
Train Command
Optimize the anchor scene on a generated run directory
"""

import argparse
import logging
from pathlib import Path

from bloomgs.commands import FINAL_STATE, add_common_options, load_config
from bloomgs.config import Settings
from bloomgs.services.anchors import save_state
from bloomgs.services.pipeline import load_generation, update_report
from bloomgs.services.trainer import train

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="train the anchor scene on generated views")
    add_common_options(parser)
    parser.add_argument("--resume", help="continue from a checkpoint .npz")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace, settings: Settings) -> int:
    config = load_config(args, settings, prefer_run_dir=True)
    out_dir = Path(config.run.out_dir)
    generation = load_generation(str(out_dir))

    result = train(config, generation.cloud, generation.training_views(),
                   checkpoint_dir=str(out_dir / "checkpoints"), resume_from=args.resume)
    save_state(out_dir / FINAL_STATE, result.state)
    update_report(str(out_dir), "training", result.summary.model_dump(mode="json"))

    summary = result.summary
    print(f"Trained {summary.iterations} iterations: {summary.anchors} anchors, {summary.gaussians} Gaussians")
    if summary.initial_loss is not None and summary.final_loss is not None:
        print(f"Loss {summary.initial_loss:.6f} -> {summary.final_loss:.6f}")
    if summary.final_holdout_psnr is not None:
        print(f"Held-out PSNR {summary.initial_holdout_psnr:.2f} -> {summary.final_holdout_psnr:.2f} dB")
    print(f"State saved to {out_dir / FINAL_STATE}")
    return 0
