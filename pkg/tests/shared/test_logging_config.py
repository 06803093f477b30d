import json

import pytest

from src.shared.logging_config import (
    bind_run_context,
    clear_run_context,
    configure_logging,
    get_logger,
)


@pytest.fixture
def json_logs(monkeypatch):
    monkeypatch.setenv("LOG_FORMAT", "json")
    monkeypatch.setenv("LOG_LEVEL", "INFO")
    yield
    monkeypatch.undo()
    clear_run_context()
    configure_logging()


class TestConfigureLogging:
    def test_json_records_on_stderr(self, json_logs, capsys):
        configure_logging()
        bind_run_context(subcommand="sweep", seed=3)
        get_logger("tests.logging").info("sweep_done", replicas=2)

        captured = capsys.readouterr()
        assert captured.out == ""
        record = json.loads(captured.err.strip().splitlines()[-1])
        assert record["event"] == "sweep_done"
        assert record["replicas"] == 2
        assert record["subcommand"] == "sweep"
        assert record["seed"] == 3
        assert record["level"] == "info"

    def test_level_filter(self, json_logs, monkeypatch, capsys):
        monkeypatch.setenv("LOG_LEVEL", "WARNING")
        configure_logging()
        get_logger("tests.logging").info("hidden")

        assert "hidden" not in capsys.readouterr().err
