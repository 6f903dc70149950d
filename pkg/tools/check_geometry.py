#!/usr/bin/env python3
"""
Progressive Generation Check Tool
Runs generation on a small synthetic room and reports per-camera alignment
Usage: python tools/check_geometry.py [config.ini]
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from bloomgs.config import load_run_config  # noqa: E402
from bloomgs.errors import BloomError  # noqa: E402
from bloomgs.services.pipeline import generate  # noqa: E402
from bloomgs.services.providers import SyntheticProvider  # noqa: E402

SMALL = {"run": {"width": 32, "height": 32}, "trajectory": {"num_cameras": 5, "support_count": 6}}


def check_generation(config_path):
    """Generate without writing outputs and check the alignment of every step."""

    config = load_run_config(config_path, None if config_path else SMALL)
    print(f"🔍 Generating {config.trajectory.num_cameras} cameras at "
          f"{config.run.width}x{config.run.height} (synthetic:room, seed {config.run.seed})")

    try:
        result = generate(config, SyntheticProvider("room", config.run.seed))
    except BloomError as e:
        print(f"\n❌ {type(e).__name__}: {e}")
        return False

    summary = result.summary
    print(f"\n✅ Generation finished!")
    print(f"   Points: {summary.initial_points} initial -> {summary.total_points}")
    print(f"   Support views: {summary.support_cameras}")

    suspicious = 0
    for step in summary.steps:
        flag = "  ⚠️  shift only" if step.shift_only else ""
        print(f"     • camera {step.camera_index}: covered={step.covered_pixels} "
              f"added={step.points_added} scale={step.scale:.4f} shift={step.shift:+.4f}{flag}")
        # synthetic depth distortion stays within [0.9, 1.1] in scale
        if not 0.85 < step.scale < 1.15:
            suspicious += 1

    if suspicious:
        print(f"\n⚠️  {suspicious} steps recovered an implausible depth scale")
        return False
    return True


if __name__ == "__main__":
    path = sys.argv[1] if len(sys.argv) > 1 else None
    success = check_generation(path)
    sys.exit(0 if success else 1)
