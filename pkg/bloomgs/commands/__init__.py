"""
Command Helpers
Options and loading shared by every CLI command
"""

import argparse
from pathlib import Path
from typing import Optional

from bloomgs.config import RunConfig, Settings, config_overrides, load_run_config
from bloomgs.errors import StateFileError
from bloomgs.services.anchors import SceneState, load_state
from bloomgs.services.entropy_codec import decode

FINAL_STATE = Path("checkpoints") / "final.npz"
BITSTREAM = "scene.blms"


def add_common_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="run configuration file (INI)")
    parser.add_argument("--seed", type=int, help="override [run] seed")
    parser.add_argument("--out", help="override [run] out_dir")
    parser.add_argument("--provider", help="synthetic:<scene> or dir:<path>")


def load_config(args: argparse.Namespace, settings: Settings, prefer_run_dir: bool = False,
                **extra: Optional[str]) -> RunConfig:
    """Config file (or the run directory's config.ini) with CLI overrides applied."""
    out_dir = args.out
    if out_dir is None and args.config is None:
        out_dir = settings.default_out_dir
    overrides = config_overrides(seed=args.seed, out_dir=out_dir, provider=args.provider, **extra)

    path = args.config
    if path is None and prefer_run_dir:
        candidate = Path(out_dir or settings.default_out_dir) / "config.ini"
        if candidate.exists():
            path = str(candidate)
    return load_run_config(path, overrides)


def default_state_path(out_dir: str) -> Path:
    """The bitstream if one was written, else the final training state."""
    bitstream = Path(out_dir) / BITSTREAM
    return bitstream if bitstream.exists() else Path(out_dir) / FINAL_STATE


def load_scene(path: Path, config: RunConfig) -> SceneState:
    """Read a scene from a .blms bitstream or an .npz state file."""
    path = Path(path)
    if not path.exists():
        raise StateFileError(f"Scene file not found: {path}")
    if path.suffix == ".blms":
        return decode(path.read_bytes(), tuple(config.render.background))
    return load_state(path)
