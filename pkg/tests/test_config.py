"""Run configuration parsing, validation and process settings."""

import pytest

from bloomgs.config import (
    Settings, config_overrides, describe_config, dump_run_config, load_run_config, parse_run_config,
)
from bloomgs.errors import ConfigError

from conftest import TINY_CONFIG


class TestDefaults:

    def test_empty_text_gives_defaults(self):
        config = parse_run_config("")
        assert config.trajectory.num_cameras == 7
        assert config.trajectory.support_count == 14
        assert config.trajectory.pivot is None
        assert config.scc.etas == (0.25, 2.5e-4, 0.05)
        assert config.scc.attribute_dim == 50 + 6 + 30
        assert config.train.ablation == "none"

    def test_no_path_gives_defaults_plus_overrides(self):
        config = load_run_config(None, {"run": {"seed": 11}})
        assert config.run.seed == 11
        assert config.run.width == 64

    def test_describe_mentions_sizes(self):
        lines = describe_config(parse_run_config(""))
        assert any("N=7 M=14" in line for line in lines)


class TestParsing:

    def test_lists_and_tuples(self):
        config = parse_run_config(
            "[trajectory]\npivot = 0, 0.5, 2\n[render]\nbackground = 1, 1, 1\n[scc]\nhash_resolutions = 4,8\n"
        )
        assert config.trajectory.pivot == (0.0, 0.5, 2.0)
        assert config.render.background == (1.0, 1.0, 1.0)
        assert config.scc.hash_resolutions == (4, 8)

    def test_dump_then_parse_is_identity(self):
        config = parse_run_config(TINY_CONFIG, {"train": {"ablation": "no_dist"}})
        assert parse_run_config(dump_run_config(config)) == config

    def test_overrides_win_over_file(self):
        config = parse_run_config(TINY_CONFIG, {"run": {"seed": 42}})
        assert config.run.seed == 42
        assert config.run.width == 16

    def test_file_on_disk(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text(TINY_CONFIG, encoding="utf-8")
        assert load_run_config(path).trajectory.num_cameras == 3


class TestRejection:

    @pytest.mark.parametrize("text", [
        "[bogus]\nvalue = 1\n",
        "[run]\ncolour = red\n",
        "[trajectory]\nnum_cameras = 2\nsupport_count = 5\n",
        "[trajectory]\nrotation_step = 4\n",
        "[dpr]\nwindow = 4\n",
        "[scc]\nhash_resolutions = 8, 4\n",
        "[render]\nbackground = 0, 2, 0\n",
        "[train]\nablation = no_everything\n",
        "[run]\nseed = -1\n",
        "not an ini file",
    ])
    def test_invalid_config(self, text):
        with pytest.raises(ConfigError):
            parse_run_config(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_run_config(tmp_path / "absent.ini")

    def test_error_names_the_field(self):
        with pytest.raises(ConfigError, match="support_count"):
            parse_run_config("[trajectory]\nnum_cameras = 1\nsupport_count = 3\n")

    def test_exit_code(self):
        assert ConfigError("x").exit_code == 2


class TestOverrides:

    def test_only_given_values(self):
        assert config_overrides() == {}
        assert config_overrides(seed=9, provider="dir:/tmp/bridge") == {
            "run": {"seed": 9, "provider": "dir:/tmp/bridge"}
        }

    def test_empty_prompt_is_kept(self):
        assert config_overrides(prompt="") == {"run": {"prompt": ""}}


class TestSettings:

    def test_environment(self, monkeypatch):
        monkeypatch.setenv("BLOOMGS_PROVIDER_TIMEOUT", "5")
        monkeypatch.setenv("BLOOMGS_LOG_FORMAT", "kv")
        settings = Settings()
        assert settings.provider_timeout == 5.0
        assert settings.log_format == "kv"

    def test_field_names(self):
        settings = Settings(default_out_dir="elsewhere", provider_poll_interval=0.1)
        assert settings.default_out_dir == "elsewhere"
        assert settings.provider_poll_interval == 0.1
