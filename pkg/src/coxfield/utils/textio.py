"""Delimited-text helpers shared by all exporters.

Every file written by coxfield has the same shape::

    # key: value            <- metadata block, one comment line per entry
    # key: value
    col_a,col_b,...          <- column header (tables only)
    1.0,2.0,...              <- data

Matrices (influence fields, intensities) have no column header; they are
``n_y`` rows by ``n_x`` columns with row 0 at ``y_min``.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..errors import DataError


def meta_lines(meta: Mapping[str, object] | None) -> list[str]:
    lines = []
    for key, value in (meta or {}).items():
        if isinstance(value, (dict, list, tuple)):
            value = json.dumps(value, sort_keys=True, default=str)
        lines.append(f"# {key}: {value}")
    return lines


def parse_meta(lines: Iterable[str]) -> dict[str, str]:
    """Collect ``# key: value`` lines into a dict of raw strings."""
    meta: dict[str, str] = {}
    for line in lines:
        if not line.startswith("#"):
            break
        body = line[1:].strip()
        if ":" in body:
            key, value = body.split(":", 1)
            meta[key.strip()] = value.strip()
    return meta


def write_table(path: str | Path, columns: Sequence[str], rows: np.ndarray | Sequence[Sequence[object]],
                meta: Mapping[str, object] | None = None, fmt: str = "%.10g") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in meta_lines(meta):
            fh.write(line + "\n")
        fh.write(",".join(columns) + "\n")
        arr = np.asarray(rows, dtype=object) if not isinstance(rows, np.ndarray) else rows
        if arr.size:
            if arr.dtype == object:
                for row in arr:
                    fh.write(",".join(_fmt_cell(v, fmt) for v in row) + "\n")
            else:
                np.savetxt(fh, np.atleast_2d(arr), delimiter=",", fmt=fmt)
    return path


def _fmt_cell(value: object, fmt: str) -> str:
    if isinstance(value, (float, np.floating)):
        return fmt % value
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    return str(value)


def read_table(path: str | Path) -> tuple[dict[str, str], list[str], np.ndarray]:
    """Read a table written by :func:`write_table` as floats.

    Raises ``DataError`` with the 1-based line number of the first
    malformed row.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8").splitlines()
    meta = parse_meta(text)
    body_start = next((i for i, line in enumerate(text) if not line.startswith("#")), len(text))
    if body_start >= len(text):
        raise DataError("[read_table] missing column header", path=str(path))
    columns = [c.strip() for c in text[body_start].split(",")]
    rows = []
    for lineno, line in enumerate(text[body_start + 1:], start=body_start + 2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(columns):
            raise DataError(f"[read_table] expected {len(columns)} fields, got {len(cells)}",
                            path=str(path), line=lineno)
        try:
            rows.append([float(c) for c in cells])
        except ValueError as e:
            raise DataError(f"[read_table] non-numeric field: {e}", path=str(path), line=lineno) from e
    data = np.asarray(rows, dtype=float).reshape(-1, len(columns))
    return meta, columns, data


def write_matrix(path: str | Path, matrix: np.ndarray, meta: Mapping[str, object] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in meta_lines(meta):
            fh.write(line + "\n")
        np.savetxt(fh, np.atleast_2d(matrix), delimiter=",", fmt="%.17g")
    return path


def read_matrix(path: str | Path) -> tuple[dict[str, str], np.ndarray]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    meta = parse_meta(lines)
    try:
        matrix = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    except ValueError as e:
        raise DataError(f"[read_matrix] malformed matrix: {e}", path=str(path)) from e
    return meta, matrix


def read_text_table(path: str | Path) -> tuple[dict[str, str], list[str], list[list[str]]]:
    """Like :func:`read_table` but keeps every cell as a string (manifests, results)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8").splitlines()
    meta = parse_meta(text)
    body = [line for line in text if not line.startswith("#") and line.strip()]
    if not body:
        raise DataError("[read_text_table] missing column header", path=str(path))
    columns = [c.strip() for c in body[0].split(",")]
    return meta, columns, [line.split(",") for line in body[1:]]
