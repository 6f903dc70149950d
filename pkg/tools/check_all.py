#!/usr/bin/env python3
"""
Pipeline Check Tool
Runs the provider, generation and codec checks in pipeline order, in one process
Usage: python tools/check_all.py [config.ini]
"""

import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

from check_codec import check_codec  # noqa: E402
from check_geometry import check_generation  # noqa: E402
from check_provider import check_provider  # noqa: E402

# each stage consumes what the previous one proved works
STAGES = [
    ("provider", check_provider),
    ("generation", check_generation),
    ("codec", check_codec),
]


def run_stages(config_path):
    """Run stages until one fails; returns (stage, passed, seconds) for every stage run."""

    outcomes = []
    for name, check in STAGES:
        print(f"\n── {name} " + "─" * (56 - len(name)))
        start = time.perf_counter()
        try:
            passed = bool(check(config_path))
        except Exception as e:
            print(f"\n❌ {name} crashed: {type(e).__name__}: {e}")
            passed = False
        outcomes.append((name, passed, time.perf_counter() - start))
        if not passed:
            break
    return outcomes


def main(argv):
    config_path = argv[0] if argv else None
    outcomes = run_stages(config_path)

    print("\n" + "─" * 60)
    for name, passed, seconds in outcomes:
        print(f"   {'✅' if passed else '❌'} {name:<12} {seconds:6.1f}s")
    skipped = [name for name, _ in STAGES[len(outcomes):]]
    if skipped:
        print(f"   ⏭️  skipped: {', '.join(skipped)}")

    ok = len(outcomes) == len(STAGES) and all(passed for _, passed, _ in outcomes)
    print("\n🎉 Pipeline is ready for a full run." if ok else "\n⚠️  Fix the first failing stage and rerun.")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
