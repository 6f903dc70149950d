"""
Render Command
Render the scene from a camera yawed and pitched relative to the initial view
"""

import argparse
import logging
from pathlib import Path

from bloomgs.commands import add_common_options, default_state_path, load_config, load_scene
from bloomgs.config import Settings
from bloomgs.services.file_formats import save_pfm, save_png
from bloomgs.services.geometry import pose_offset, trajectory_yaws
from bloomgs.services.pipeline import initial_camera
from bloomgs.services.renderer import render

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("render", help="render color and depth from a camera spec")
    add_common_options(parser)
    parser.add_argument("--state", help=".blms or .npz scene (default: <out>/scene.blms, else final.npz)")
    parser.add_argument("--yaw", type=float, default=0.0, help="yaw about world y in radians")
    parser.add_argument("--pitch", type=float, default=0.0, help="pitch about the camera x axis in radians")
    parser.add_argument("--output", help="output prefix (default: <out>/renders/yaw_<yaw>_pitch_<pitch>)")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace, settings: Settings) -> int:
    config = load_config(args, settings, prefer_run_dir=True)
    out_dir = Path(config.run.out_dir)
    state = load_scene(Path(args.state) if args.state else default_state_path(str(out_dir)), config)

    yaws = trajectory_yaws(config.trajectory.num_cameras, config.trajectory.rotation_step)
    limit = max(abs(y) for y in yaws)
    if abs(args.yaw) > limit:
        logger.warning("Yaw %.3f is outside the trained trajectory (|yaw| <= %.3f); extrapolating",
                       args.yaw, limit)

    camera = pose_offset(initial_camera(config), args.yaw, args.pitch)
    output = render(state.to_splats(), camera, config.train.pixel_chunk)

    prefix = Path(args.output) if args.output else out_dir / "renders" / f"yaw_{args.yaw:+.3f}_pitch_{args.pitch:+.3f}"
    color_path = prefix.with_name(prefix.name + ".png")
    depth_path = prefix.with_name(prefix.name + ".pfm")
    save_png(color_path, output.color)
    save_pfm(depth_path, output.depth)
    print(f"Wrote {color_path} and {depth_path}")
    return 0
