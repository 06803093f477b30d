import json
from pathlib import Path

import numpy as np
import pytest

from src.shared.config import Settings
from src.shared.output import (
    build_provenance,
    emit,
    format_value,
    read_csv_provenance,
    render,
    resolve_output_path,
)


@pytest.fixture
def records():
    return [
        {"pi": 0.1, "c1_mean": np.float64(0.25), "n": np.int64(100)},
        {"pi": 0.2, "c1_mean": 1 / 3, "n": 100},
    ]


class TestFormatValue:
    """Canonical text of single values."""

    def test_floats_round_trip(self):
        assert format_value(1 / 3) == repr(1 / 3)
        assert float(format_value(0.1)) == 0.1

    def test_numpy_scalars(self):
        assert format_value(np.float64(0.5)) == "0.5"
        assert format_value(np.int64(7)) == "7"

    def test_special_values(self):
        assert format_value(None) == ""
        assert format_value(True) == "true"
        assert format_value(float("inf")) == "inf"
        assert format_value(float("nan")) == "nan"

    def test_nested_values_are_compact_json(self):
        assert format_value({"2": 3}) == '{"2":3}'


class TestRender:
    """CSV and JSON rendering."""

    def test_csv_columns_in_given_order(self, records):
        text = render(records, "csv", columns=["n", "pi"])
        lines = text.splitlines()
        assert lines[0] == "n,pi"
        assert lines[1] == "100,0.1"

    def test_csv_provenance_header(self, records):
        provenance = build_provenance({"m": 2, "delta": 1.0})
        text = render(records, "csv", provenance=provenance)
        first = text.splitlines()[0]
        assert first.startswith("# ")
        block = json.loads(first[2:])
        assert block["spec"] == {"m": 2, "delta": 1.0}
        assert "rng_algorithm" in block

    def test_json_payload(self, records):
        text = render(records, "json", provenance=build_provenance({}))
        payload = json.loads(text)
        assert set(payload) == {"provenance", "records"}
        assert payload["records"][1]["c1_mean"] == 1 / 3

    def test_rendering_is_stable(self, records):
        """The same records always serialize to the same bytes."""
        assert render(records, "csv") == render(list(records), "csv")

    def test_unknown_format(self, records):
        with pytest.raises(ValueError):
            render(records, "xml")


class TestEmit:
    def test_writes_and_returns_text(self, records, tmp_path):
        path = tmp_path / "nested" / "out.csv"
        text = emit(
            records, "csv", path, provenance=build_provenance({"seed": 1})
        )
        assert path.read_text() == text
        assert read_csv_provenance(path)["spec"] == {"seed": 1}

    def test_stdout_mode_writes_nothing(self, records, tmp_path):
        text = emit(records, "json", None)
        assert json.loads(text)["records"]
        assert list(tmp_path.iterdir()) == []

    def test_missing_provenance(self, records, tmp_path):
        path = tmp_path / "plain.csv"
        emit(records, "csv", path)
        assert read_csv_provenance(path) is None

    def test_relative_path_uses_output_dir(
        self, records, tmp_path, monkeypatch
    ):
        monkeypatch.setattr(Settings, "output_dir", str(tmp_path / "runs"))
        emit(records, "csv", "sweep.csv")
        assert (tmp_path / "runs" / "sweep.csv").exists()

    def test_absolute_path_is_kept(self, tmp_path, monkeypatch):
        monkeypatch.setattr(Settings, "output_dir", "elsewhere")
        path = tmp_path / "out.csv"
        assert resolve_output_path(path) == path
        assert resolve_output_path("a/b.csv") == Path("elsewhere/a/b.csv")
