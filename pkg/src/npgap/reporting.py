"""Experiment reports: CSV tables and a versioned JSON manifest."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

SCHEMA_VERSION = 1


def artifact_version() -> str:
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:
        from . import __version__

        return __version__


@dataclass
class ExperimentReport:
    command: str
    params: dict
    rows: list[dict]
    seed: int | None
    artifact_version: str = field(default_factory=artifact_version)
    wall_time_s: float = 0.0
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        for r in self.rows:
            r.setdefault("seed", self.seed)

    def manifest_entry(self, status: str = "ok", csv_path: str | None = None, error: str | None = None) -> dict:
        entry = {
            "command": self.command,
            "status": status,
            "seed": self.seed,
            "params": self.params,
            "rows": len(self.rows),
            "csv": csv_path,
            "artifact_version": self.artifact_version,
            "wall_time_s": self.wall_time_s,
        }
        if self.extras:
            entry["extras"] = self.extras
        if error:
            entry["error"] = error
        return entry


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        raise ValueError("refusing to write an empty table")
    cols: list[str] = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in cols])
    return buf.getvalue()


def write_csv(path, rows: list[dict]) -> None:
    text = rows_to_csv(rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _parse(s: str):
    if s == "":
        return None
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    return s


def read_csv(path) -> list[dict]:
    """Inverse of :func:`write_csv` for rows of ints, floats, strings and ``None``."""
    with open(path, encoding="utf-8", newline="") as fh:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_manifest(path, entries: list[dict], extra: dict | None = None) -> None:
    doc = {"schema_version": SCHEMA_VERSION, "artifact_version": artifact_version(), "commands": entries}
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
