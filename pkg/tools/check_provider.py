#!/usr/bin/env python3
"""
Frame Provider Check Tool
Resolves the configured provider and requests one initial frame from it
Usage: python tools/check_provider.py [config.ini]
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from bloomgs.config import get_settings, load_run_config  # noqa: E402
from bloomgs.errors import BloomError  # noqa: E402
from bloomgs.services.pipeline import initial_camera  # noqa: E402
from bloomgs.services.providers import DirectoryProvider, get_provider  # noqa: E402


def check_provider(config_path):
    """Build the provider and ask for the first frame and its depth."""

    settings = get_settings()
    config = load_run_config(config_path)
    print(f"🔍 Provider: {config.run.provider}")

    try:
        provider = get_provider(config.run.provider, config.run.seed, settings)
    except BloomError as e:
        print(f"\n❌ Cannot build provider: {e}")
        return False

    if isinstance(provider, DirectoryProvider):
        print(f"   Bridge directory: {provider.root}")
        print(f"   Waiting up to {provider.timeout:.0f}s per response "
              f"(BLOOMGS_PROVIDER_TIMEOUT)")

    camera = initial_camera(config)
    try:
        image = provider.initial_image(config.run.prompt, camera=camera)
        depth = provider.estimate_depth(image, camera=camera)
    except BloomError as e:
        print(f"\n❌ {type(e).__name__}: {e}")
        return False

    valid = depth.validity
    print(f"\n✅ Provider responded!")
    print(f"   Frame: {image.shape[1]}x{image.shape[0]}, mean color "
          f"{', '.join(f'{c:.3f}' for c in image.values.reshape(-1, 3).mean(axis=0))}")
    if valid.any():
        print(f"   Depth: {int(valid.sum())} valid pixels, "
              f"range {depth.values[valid].min():.3f} to {depth.values[valid].max():.3f}")
    else:
        print("   ⚠️  Depth map has no valid pixels")
        return False
    return True


if __name__ == "__main__":
    path = sys.argv[1] if len(sys.argv) > 1 else None
    success = check_provider(path)
    sys.exit(0 if success else 1)
