"""
Compress / Decompress Commands
Entropy-code a trained scene into a bitstream and back
"""

import argparse
import logging
from pathlib import Path

from bloomgs.commands import BITSTREAM, FINAL_STATE, add_common_options, load_config, load_scene
from bloomgs.config import Settings
from bloomgs.models import SizeReport
from bloomgs.services.anchors import save_state
from bloomgs.services.entropy_codec import encode
from bloomgs.services.pipeline import update_report

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("compress", help="encode a trained state into scene.blms")
    add_common_options(parser)
    parser.add_argument("--state", help="state .npz (default: <out>/checkpoints/final.npz)")
    parser.add_argument("--output", help="bitstream path (default: <out>/scene.blms)")
    parser.set_defaults(handler=run_compress)

    parser = subparsers.add_parser("decompress", help="decode scene.blms into a state .npz")
    add_common_options(parser)
    parser.add_argument("--input", help="bitstream path (default: <out>/scene.blms)")
    parser.add_argument("--output", help="state path (default: <out>/checkpoints/decoded.npz)")
    parser.set_defaults(handler=run_decompress)


def print_size_report(report: SizeReport) -> None:
    print(f"Header:    {report.header_bytes:>10} bytes")
    print(f"Model:     {report.model_bytes:>10} bytes")
    print(f"Locations: {report.location_bytes:>10} bytes")
    print(f"Payload:   {report.payload_bytes:>10} bytes")
    print(f"Total:     {report.total_bytes:>10} bytes")
    print(f"Bits per anchor:  {report.bits_per_anchor:.2f}")
    print(f"Entropy estimate: {report.entropy_estimate_bytes:.1f} bytes")
    print(f"Anchor data vs raw float32: {report.anchor_data_ratio:.2%}")


def run_compress(args: argparse.Namespace, settings: Settings) -> int:
    config = load_config(args, settings, prefer_run_dir=True)
    out_dir = Path(config.run.out_dir)
    state = load_scene(Path(args.state) if args.state else out_dir / FINAL_STATE, config)

    encoded = encode(state)
    output = Path(args.output) if args.output else out_dir / BITSTREAM
    output.parent.mkdir(parents=True, exist_ok=True)
    output.write_bytes(encoded.data)
    update_report(str(out_dir), "compression", encoded.report.model_dump(mode="json"))

    print_size_report(encoded.report)
    print(f"Wrote {output}")
    return 0


def run_decompress(args: argparse.Namespace, settings: Settings) -> int:
    config = load_config(args, settings, prefer_run_dir=True)
    out_dir = Path(config.run.out_dir)
    source = Path(args.input) if args.input else out_dir / BITSTREAM
    state = load_scene(source, config)

    output = Path(args.output) if args.output else out_dir / "checkpoints" / "decoded.npz"
    save_state(output, state)
    print(f"Decoded {len(state.anchors)} anchors from {source} into {output}")
    return 0
