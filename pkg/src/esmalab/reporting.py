"""CSV / JSON output and the flat key-value config format."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def fmt(value) -> str:
    """Shortest round-trip text for numbers; ``nan``/``inf`` spelled out."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(value)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return list(reader)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else fmt(v)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    seeds: list
    tables: dict = field(default_factory=dict)  # name -> (header, rows)
    summary: dict = field(default_factory=dict)

    def add_table(self, name, header, rows):
        self.tables[name] = (list(header), [list(r) for r in rows])

    def table(self, name):
        header, rows = self.tables[name]
        return [dict(zip(header, r)) for r in rows]

    def column(self, name, col):
        header, rows = self.tables[name]
        j = header.index(col)
        return np.array([r[j] for r in rows])

    def write(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = {}
        for name, (header, rows) in self.tables.items():
            fname = f"{name}.csv"
            write_csv(out_dir / fname, header, rows)
            manifest[name] = {"file": fname, "columns": header, "rows": len(rows)}
        doc = {
            "experiment": self.experiment,
            "config": self.config,
            "seeds": list(self.seeds),
            "summary": self.summary,
            "files": manifest,
        }
        path = out_dir / "report.json"
        path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
        return path


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment.  Values stay strings."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, value = line.split("=", 1)
        elif ":" in line:
            key, value = line.split(":", 1)
        else:
            raise ValueError(f"config line {lineno}: expected key = value")
        out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


def dump_config_text(config: dict) -> str:
    lines = []
    for key in sorted(config):
        value = config[key]
        if value is None:
            continue
        if isinstance(value, (list, tuple)):
            value = ",".join(fmt(v) for v in value)
        lines.append(f"{key} = {fmt(value)}")
    return "\n".join(lines) + "\n"
