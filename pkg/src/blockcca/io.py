"""Delimited-text matrix files and atomic artifact writing.

File format: first row holds column names, every later row one sample;
comma or tab delimited, auto-detected from the header line. When the first
header cell is the literal word ``feature`` the first column carries row
labels (the layout used for direction and mask files) and the numeric part
starts at column two.

All numbers are printed with 17 significant digits so that written files
round-trip bit-exactly, and every file is written atomically (temp file in
the target directory, then rename). Writers emit no timestamps: rerunning
a command with the same inputs reproduces identical bytes.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .errors import NonFinite, ParseError, RaggedRows
from .linalg import standardize as _standardize
from .model import ViewMatrix

__all__ = [
    "parse_table",
    "load_matrix",
    "format_cell",
    "atomic_write",
    "write_table",
    "write_json",
]

LABEL_HEADER = "feature"


def _detect_delimiter(header_line):
    return "\t" if "\t" in header_line else ","


def parse_table(path):
    """Parse a delimited file into (column_names, data, row_labels).

    ``row_labels`` is None unless the header starts with ``feature``.
    Errors carry 1-based row/column coordinates; the header is row 1.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e.strerror or e}")
    lines = [ln for ln in lines if ln != ""]
    if not lines:
        raise ParseError(f"{path} is empty")
    delim = _detect_delimiter(lines[0])
    header = [c.strip() for c in lines[0].split(delim)]
    labeled = header and header[0] == LABEL_HEADER
    names = header[1:] if labeled else header
    if not names:
        raise ParseError(f"{path} has no data columns", row=1)
    width = len(header)
    if len(lines) < 2:
        raise ParseError(f"{path} has a header but no data rows", row=1)
    labels = [] if labeled else None
    values = np.empty((len(lines) - 1, len(names)))
    for r, line in enumerate(lines[1:], start=2):
        cells = line.split(delim)
        if len(cells) != width:
            raise RaggedRows(
                f"{path}: row {r} has {len(cells)} cells, expected {width}",
                row=r,
            )
        if labeled:
            labels.append(cells[0].strip())
            cells = cells[1:]
        offset = 2 if labeled else 1
        for c, cell in enumerate(cells):
            try:
                x = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path}: cell {cell.strip()!r} at row {r}, column "
                    f"{c + offset} is not a number",
                    row=r, col=c + offset,
                )
            if not np.isfinite(x):
                raise NonFinite(
                    f"{path}: non-finite value {cell.strip()!r} at row {r}, "
                    f"column {c + offset}",
                    row=r, col=c + offset,
                )
            values[r - 2, c] = x
    return names, values, labels


def load_matrix(path, standardize=True):
    """Load a delimited matrix file as a ViewMatrix.

    By default columns are standardized (the estimators' expected input);
    pass standardize=False to keep the stored values, e.g. when reloading
    direction files, whose values must round-trip exactly.
    """
    names, values, _ = parse_table(path)
    if standardize:
        return _standardize(values, names)
    return ViewMatrix(values, names)


def format_cell(x):
    """17-significant-digit decimal form; round-trips float64 exactly."""
    return "%.17g" % float(x)


def atomic_write(path, text):
    """Write text to path via a temp file + rename in the same directory."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_table(path, data, col_names, row_labels=None):
    """Write a matrix as CSV; with row_labels the header gains ``feature``."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ParseError(f"cannot write array of ndim {data.ndim} as a table")
    header = list(col_names)
    if row_labels is not None:
        if len(row_labels) != data.shape[0]:
            raise ParseError(
                f"{len(row_labels)} row labels for {data.shape[0]} rows"
            )
        header = [LABEL_HEADER] + header
    if len(col_names) != data.shape[1]:
        raise ParseError(
            f"{len(col_names)} column names for {data.shape[1]} columns"
        )
    lines = [",".join(header)]
    for r in range(data.shape[0]):
        cells = [format_cell(v) for v in data[r]]
        if row_labels is not None:
            cells = [str(row_labels[r])] + cells
        lines.append(",".join(cells))
    atomic_write(path, "\n".join(lines) + "\n")


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path, payload):
    """Deterministically formatted JSON (sorted keys, no timestamps)."""
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default)
    atomic_write(path, text + "\n")
