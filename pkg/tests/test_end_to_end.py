"""Desk-scale runs on the synthetic room with the default configuration."""

import json

import pytest

from bloomgs.config import Settings
from bloomgs.main import main

pytestmark = pytest.mark.slow

DESK_CONFIG = """
[run]
seed = 0
provider = synthetic:room

[train]
iterations = 2000
checkpoint_every = 500
"""


def full_run(tmp_path, name, extra=None):
    config = tmp_path / f"{name}.ini"
    config.write_text(DESK_CONFIG + (extra or ""), encoding="utf-8")
    out = tmp_path / name
    settings = Settings(default_out_dir=str(out), log_level="WARNING")
    common = ["--config", str(config), "--out", str(out)]
    for command in ("generate", "train", "compress", "eval"):
        assert main([command, *common], settings) == 0, command
    return out, json.loads((out / "report.json").read_text(encoding="utf-8"))


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    return full_run(tmp_path_factory.mktemp("desk"), "full")


class TestDeskScale:

    def test_loss_decreases(self, desk_run):
        _, report = desk_run
        assert report["training"]["final_loss"] < report["training"]["initial_loss"]

    def test_holdout_psnr_improves(self, desk_run):
        _, report = desk_run
        training = report["training"]
        assert training["final_holdout_psnr"] - training["initial_holdout_psnr"] >= 8.0

    def test_bitstream_is_small(self, desk_run):
        _, report = desk_run
        assert report["compression"]["anchor_data_ratio"] <= 0.30

    def test_depth_prior_lowers_depth_error(self, desk_run, tmp_path):
        _, report = desk_run
        _, ablated = full_run(tmp_path, "no_dpr", "ablation = no_dpr\n")
        assert ablated["training"]["depth_error"] > report["training"]["depth_error"]

    def test_same_seed_same_bytes(self, desk_run, tmp_path):
        out, _ = desk_run
        again, _ = full_run(tmp_path, "again")
        assert (again / "scene.blms").read_bytes() == (out / "scene.blms").read_bytes()
        assert (again / "report.json").read_bytes() == (out / "report.json").read_bytes()
