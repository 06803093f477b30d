"""
Bit-stable CSV/JSON serialization of experiment records.

Floats are written as their shortest round-trip decimal (``repr``), fields
in a fixed order, and every artifact carries its provenance block.
"""

import csv
import io
import json
import math
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from src.shared.config import ARTIFACT_VERSION, Settings
from src.shared.logging_config import get_logger
from src.shared.rng import RNG_ALGORITHM

logger = get_logger(__name__)

FORMATS = ("csv", "json")


def build_provenance(spec: Mapping[str, Any]) -> dict[str, Any]:
    return {
        "artifact_version": ARTIFACT_VERSION,
        "rng_algorithm": RNG_ALGORITHM,
        "spec": to_builtin(dict(spec)),
    }


def to_builtin(value: Any) -> Any:
    """Convert numpy scalars/arrays, enums and tuples to JSON-able values."""
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return [to_builtin(v) for v in value.tolist()]
    if isinstance(value, Mapping):
        return {str(k): to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    return value


def format_value(value: Any) -> str:
    value = to_builtin(value)
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, (list, dict)):
        return json.dumps(value, separators=(",", ":"))
    return str(value)


def render(
    records: Iterable[Mapping[str, Any]],
    fmt: str,
    columns: Optional[Sequence[str]] = None,
    provenance: Optional[Mapping[str, Any]] = None,
) -> str:
    """Serialize records to a string in ``fmt`` (csv or json)."""
    records = [dict(r) for r in records]
    if columns is None:
        columns = list(records[0].keys()) if records else []

    if fmt == "json":
        payload: dict[str, Any] = {}
        if provenance is not None:
            payload["provenance"] = to_builtin(dict(provenance))
        payload["records"] = [
            {c: to_builtin(r.get(c)) for c in columns} for r in records
        ]
        return json.dumps(payload, indent=2, allow_nan=True) + "\n"

    if fmt == "csv":
        buffer = io.StringIO()
        if provenance is not None:
            buffer.write(
                "# "
                + json.dumps(
                    to_builtin(dict(provenance)),
                    separators=(",", ":"),
                    allow_nan=True,
                )
                + "\n"
            )
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(columns)
        for record in records:
            writer.writerow([format_value(record.get(c)) for c in columns])
        return buffer.getvalue()

    raise ValueError(f"Unknown output format '{fmt}', expected one of {FORMATS}")


def resolve_output_path(path: str | Path) -> Path:
    """Relative paths land under ``Settings.output_dir``."""
    path = Path(path)
    if path.is_absolute():
        return path
    return Path(Settings.output_dir) / path


def emit(
    records: Iterable[Mapping[str, Any]],
    fmt: str,
    path: Optional[str | Path],
    columns: Optional[Sequence[str]] = None,
    provenance: Optional[Mapping[str, Any]] = None,
) -> str:
    """
    Serialize records and write them to ``path``.

    Returns the serialized text; with ``path=None`` nothing is written and
    the caller decides where the text goes. I/O errors propagate.
    """
    text = render(records, fmt, columns=columns, provenance=provenance)
    if path is not None:
        path = resolve_output_path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        logger.info("artifact_written", path=str(path), format=fmt)
    return text


def read_csv_provenance(path: str | Path) -> Optional[dict[str, Any]]:
    """Return the provenance block of a CSV artifact, if present."""
    with open(path, encoding="utf-8") as f:
        first = f.readline()
    if first.startswith("# "):
        return json.loads(first[2:])
    return None
