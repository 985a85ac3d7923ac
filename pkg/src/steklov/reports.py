"""Result files: JSON reports and CSV tables, with readers for round-tripping.

CSV cells hold shortest round-trip decimals; JSON is UTF-8 with sorted keys
and a schema_version stamp.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import List, Sequence

SCHEMA_VERSION = 1


def write_json_report(report: dict, path) -> None:
    payload = dict(report)
    payload.setdefault("schema_version", SCHEMA_VERSION)
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def read_json_report(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (int,)):
        return str(value)
    if value is None:
        return ""
    return str(value)


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])


def _parse_cell(text: str):
    if text == "":
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def read_csv(path):
    """Read a table written by write_csv: (header, rows with parsed cells)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[_parse_cell(cell) for cell in row] for row in reader]
    return header, rows


def node_table(nodes, u) -> tuple:
    d = nodes.shape[1]
    header = [f"x{k + 1}" for k in range(d)] + ["u"]
    rows = [[float(c) for c in pt] + [float(v)] for pt, v in zip(nodes, u)]
    return header, rows
