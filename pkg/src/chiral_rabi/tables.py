"""
Figure-ready tables and the run manifest.

Tables are written in long format with a ``#``-prefixed provenance header,
one header row, and floats at 17 significant digits so that a round trip
through text is lossless.  The body depends only on the values, so two runs
with the same configuration produce byte-identical bodies.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

log = logging.getLogger(__name__)


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float) or hasattr(value, "dtype"):
        x = float(value)
        return format(x, ".17g")
    return str(value)


@dataclass
class SweepTable:
    """Rectangular table; ``None`` cells are written empty (a null, not NaN)."""

    columns: list
    rows: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    dropped: int = 0

    def append(self, row: Sequence) -> bool:
        """Add a row; rows with NaN or Inf are dropped, logged and counted."""
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} cells, table has {len(self.columns)} columns")
        for name, v in zip(self.columns, row):
            if isinstance(v, (float, int)) and not isinstance(v, bool) and not math.isfinite(float(v)):
                log.warning("dropping row with non-finite %s: %s", name, row)
                self.dropped += 1
                return False
        self.rows.append(list(row))
        return True

    def append_dict(self, record: dict) -> bool:
        return self.append([record.get(c) for c in self.columns])

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def body(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([format_value(v) for v in r])
        return buf.getvalue()

    def header(self) -> str:
        return "".join(f"# {k}: {self.provenance[k]}\n" for k in sorted(self.provenance))

    def write(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.header() + self.body(), encoding="utf-8")
        return path


def read_table(path: Path) -> tuple[dict, list, list]:
    """Parse a table written by :meth:`SweepTable.write`; returns (provenance, columns, rows as str)."""
    prov = {}
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    body_start = 0
    for i, line in enumerate(lines):
        if line.startswith("# "):
            key, _, val = line[2:].partition(": ")
            prov[key] = val
        else:
            body_start = i
            break
    reader = csv.reader(lines[body_start:])
    columns = next(reader)
    return prov, columns, [row for row in reader]


def table_body_bytes(path: Path) -> bytes:
    """Table content without the provenance header."""
    data = Path(path).read_bytes()
    lines = data.splitlines(keepends=True)
    return b"".join(l for l in lines if not l.startswith(b"# "))


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class Manifest:
    command: str
    config: dict
    config_hash: str
    version: str
    files: list = field(default_factory=list)
    wall_times: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def add_file(self, path: Path, kind: str = "table"):
        path = Path(path)
        self.files.append({"path": path.name, "kind": kind, "sha256": sha256_file(path), "bytes": path.stat().st_size})

    def write(self, path: Path) -> Path:
        path = Path(path)
        payload = {
            "command": self.command,
            "version": self.version,
            "config_hash": self.config_hash,
            "config": self.config,
            "files": self.files,
            "wall_times_s": self.wall_times,
            "failures": self.failures,
            "summary": self.summary,
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
        return path


def _json_default(obj):
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if hasattr(obj, "item"):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def config_hash(config: dict) -> str:
    text = json.dumps(config, sort_keys=True, default=_json_default)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_tables(tables: Iterable[tuple[str, SweepTable]], out_dir: Path, manifest: Optional[Manifest] = None) -> list:
    """Write tables one after another (single writer per file)."""
    paths = []
    for name, table in tables:
        p = table.write(Path(out_dir) / f"{name}.csv")
        if manifest is not None:
            manifest.add_file(p)
        paths.append(p)
    return paths
