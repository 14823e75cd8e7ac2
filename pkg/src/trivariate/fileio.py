"""CSV ingestion and export, atomic file writes and JSON result documents."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import DataError, Dataset

logger = logging.getLogger(__name__)


class FormatError(DataError):
    """The file is not a well-formed table."""


@dataclass
class Table:
    """Raw columns as read from disk; text columns are kept as strings."""

    names: list[str]
    numeric: dict[str, np.ndarray] = field(default_factory=dict)
    text: dict[str, list[str | None]] = field(default_factory=dict)
    n: int = 0

    def to_dataset(self, **kwargs) -> Dataset:
        if self.text:
            raise FormatError(f"text columns {sorted(self.text)} need a dummy-encode transform")
        return Dataset({k: self.numeric[k] for k in self.names}, **kwargs)


def read_table(path: str | os.PathLike, text_columns=()) -> Table:
    """Read a comma-separated UTF-8 file with a header row.

    Empty cells are missing (NaN, or None in text columns). Every column not
    listed in ``text_columns`` must parse as a number.
    """
    path = Path(path)
    text_columns = set(text_columns)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: file is empty (no header row)") from None
        except (csv.Error, UnicodeDecodeError) as exc:
            raise FormatError(f"{path}: {exc}") from None
        header = [h.strip() for h in header]
        seen = set()
        for h in header:
            if not h:
                raise FormatError(f"{path}: empty column name in header")
            if h in seen:
                raise FormatError(f"{path}: duplicate column {h!r} in header")
            seen.add(h)
        missing_text = text_columns - seen
        if missing_text:
            raise FormatError(f"{path}: columns {sorted(missing_text)} not found")
        values: list[list] = [[] for _ in header]
        try:
            for row_no, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise FormatError(f"{path}: line {row_no} has {len(row)} fields, expected {len(header)}")
                for j, cell in enumerate(row):
                    cell = cell.strip()
                    name = header[j]
                    if name in text_columns:
                        values[j].append(cell or None)
                    elif cell == "":
                        values[j].append(math.nan)
                    else:
                        try:
                            values[j].append(float(cell))
                        except ValueError:
                            raise FormatError(
                                f"{path}: line {row_no}, column {name!r}: cannot parse {cell!r} as a number"
                            ) from None
        except (csv.Error, UnicodeDecodeError) as exc:
            raise FormatError(f"{path}: {exc}") from None
    table = Table(names=header)
    table.n = len(values[0]) if header else 0
    for name, col in zip(header, values):
        if name in text_columns:
            table.text[name] = col
        else:
            table.numeric[name] = np.array(col, dtype=float)
    missing = {k: int(np.isnan(v).sum()) for k, v in table.numeric.items()}
    missing.update({k: sum(c is None for c in v) for k, v in table.text.items()})
    logger.info("read %d rows from %s; missing cells %s", table.n, path,
                {k: v for k, v in missing.items() if v} or "none")
    return table


def read_header(path) -> list[str]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return [h.strip() for h in next(csv.reader(fh), [])]
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from None
    except (csv.Error, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: {exc}") from None


def load_csv(path: str | os.PathLike, **kwargs) -> Dataset:
    """All-numeric CSV into a Dataset (``kwargs`` name the outcome columns)."""
    return read_table(path).to_dataset(**kwargs)


def format_float(x: float) -> str:
    """Shortest string that round-trips; empty for NaN."""
    x = float(x)
    if math.isnan(x):
        return ""
    return repr(x)


def csv_text(columns: dict[str, np.ndarray] | Dataset) -> str:
    cols = columns.columns if isinstance(columns, Dataset) else columns
    names = list(cols)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    n = len(next(iter(cols.values()))) if names else 0
    arrays = [np.asarray(cols[k]) for k in names]
    for i in range(n):
        w.writerow([format_float(a[i]) if a.dtype.kind == "f" else a[i] for a in arrays])
    return buf.getvalue()


def write_csv(path: str | os.PathLike, columns) -> None:
    atomic_write_text(path, csv_text(columns))


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write to a temporary sibling, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_jsonable(obj):
    """numpy-aware conversion; NaN and inf become null."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(doc) -> str:
    return json.dumps(to_jsonable(doc), indent=2, sort_keys=False, allow_nan=False) + "\n"


def write_json(path, doc) -> None:
    atomic_write_text(path, dumps(doc))


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not a JSON document ({exc})") from None


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
