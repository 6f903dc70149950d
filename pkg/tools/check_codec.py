#!/usr/bin/env python3
"""
Bitstream Check Tool
Encodes an initialized scene, decodes it back and compares the snapped attributes
Usage: python tools/check_codec.py [config.ini]
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from bloomgs.config import load_run_config  # noqa: E402
from bloomgs.errors import BloomError  # noqa: E402
from bloomgs.services.entropy_codec import canonicalize, decode, encode  # noqa: E402
from bloomgs.services.pipeline import generate  # noqa: E402
from bloomgs.services.providers import SyntheticProvider  # noqa: E402
from bloomgs.services.trainer import build_scene  # noqa: E402

SMALL = {"run": {"width": 24, "height": 24}, "trajectory": {"num_cameras": 3, "support_count": 0},
         "train": {"max_anchors": 64}}


def check_codec(config_path):
    """Round-trip an untrained scene through the bitstream."""

    config = load_run_config(config_path, None if config_path else SMALL)
    try:
        generation = generate(config, SyntheticProvider("room", config.run.seed))
        state = build_scene(generation.cloud, config)
        encoded = encode(state)
        decoded = decode(encoded.data, tuple(config.render.background))
    except BloomError as e:
        print(f"\n❌ {type(e).__name__}: {e}")
        return False

    expected, _ = canonicalize(state)
    mismatched = [
        name for name, values in expected.params().items()
        if not np.array_equal(values, decoded.params()[name])
    ]

    report = encoded.report
    print(f"🔍 {report.anchors} anchors, {report.total_bytes} bytes "
          f"({report.bits_per_anchor:.1f} bits per anchor)")
    print(f"   Payload {report.payload_bytes} bytes vs entropy estimate "
          f"{report.entropy_estimate_bytes:.1f} bytes")

    if mismatched:
        print(f"\n❌ Decoded parameters differ: {', '.join(mismatched)}")
        return False

    print(f"\n✅ Decoded scene matches the quantized original!")
    return True


if __name__ == "__main__":
    path = sys.argv[1] if len(sys.argv) > 1 else None
    success = check_codec(path)
    sys.exit(0 if success else 1)
