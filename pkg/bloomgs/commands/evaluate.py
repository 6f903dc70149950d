"""
Eval Command
PSNR and masked PSNR on held-out (or all) views
"""

import argparse
import logging
from pathlib import Path

from bloomgs.commands import add_common_options, default_state_path, load_config, load_scene
from bloomgs.config import Settings
from bloomgs.services.evaluation import evaluate
from bloomgs.services.pipeline import load_generation, update_report
from bloomgs.services.trainer import split_holdout

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="report PSNR of the scene on held-out views")
    add_common_options(parser)
    parser.add_argument("--state", help=".blms or .npz scene (default: <out>/scene.blms, else final.npz)")
    parser.add_argument("--all", action="store_true", help="evaluate every view, not only held-out ones")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace, settings: Settings) -> int:
    config = load_config(args, settings, prefer_run_dir=True)
    out_dir = Path(config.run.out_dir)
    state = load_scene(Path(args.state) if args.state else default_state_path(str(out_dir)), config)

    views = load_generation(str(out_dir)).training_views()
    if not args.all:
        _, held = split_holdout(views, config.train.holdout_every)
        if held:
            views = held
        else:
            logger.warning("No held-out views configured; evaluating all %d views", len(views))

    report = evaluate(state.to_splats(), views, config.train.pixel_chunk)
    update_report(str(out_dir), "evaluation", report.model_dump(mode="json"))

    for view in report.views:
        print(f"view {view.view:3d} {view.kind.value:<10} psnr={view.psnr:7.3f} masked={view.masked_psnr:7.3f}")
    print(f"mean psnr={report.mean_psnr:.3f} masked={report.mean_masked_psnr:.3f}")
    return 0
