"""Pipeline check runner in tools/."""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tools"))

import check_all  # noqa: E402


def stage(result, calls):
    def check(config_path):
        calls.append(config_path)
        if isinstance(result, Exception):
            raise result
        return result
    return check


class TestCheckAll:

    def test_stages_follow_pipeline_order(self):
        assert [name for name, _ in check_all.STAGES] == ["provider", "generation", "codec"]

    def test_all_stages_pass(self, monkeypatch):
        calls = []
        monkeypatch.setattr(check_all, "STAGES", [("a", stage(True, calls)), ("b", stage(True, calls))])
        assert check_all.main(["run.ini"]) == 0
        assert calls == ["run.ini", "run.ini"]

    @pytest.mark.parametrize("failure", [False, RuntimeError("provider unreachable")])
    def test_later_stages_skipped_after_failure(self, monkeypatch, capsys, failure):
        calls = []
        monkeypatch.setattr(check_all, "STAGES", [("a", stage(failure, calls)), ("b", stage(True, calls))])
        assert check_all.main([]) == 1
        assert calls == [None]
        assert "skipped: b" in capsys.readouterr().out

    def test_outcomes_record_each_stage_run(self, monkeypatch):
        calls = []
        monkeypatch.setattr(check_all, "STAGES", [("a", stage(True, calls)), ("b", stage(False, calls)),
                                                  ("c", stage(True, calls))])
        outcomes = check_all.run_stages(None)
        assert [(name, passed) for name, passed, _ in outcomes] == [("a", True), ("b", False)]
        assert all(seconds >= 0 for _, _, seconds in outcomes)
