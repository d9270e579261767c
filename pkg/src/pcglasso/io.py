"""CSV readers and atomic file output."""
from __future__ import annotations

import csv
import os
import tempfile
from contextlib import contextmanager

import numpy as np

from .exceptions import PCGLassoError


class ParseError(PCGLassoError, ValueError):
    """Malformed input file."""


def _rows(path: str) -> list[list[str]]:
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(x.strip() for x in r)]
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from exc
    if not rows:
        raise ParseError(f"{path} is empty")
    return rows


def _to_float(rows, path, offset=0) -> np.ndarray:
    width = len(rows[0])
    out = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"{path}:{i + 1 + offset}: expected {width} fields, got {len(row)}")
        try:
            out[i] = [float(x) for x in row]
        except ValueError as exc:
            raise ParseError(f"{path}:{i + 1 + offset}: {exc}") from exc
    if not np.all(np.isfinite(out)):
        raise ParseError(f"{path}: non-finite value")
    return out


def read_matrix_csv(path: str) -> np.ndarray:
    """Square matrix, one row per line, no header."""
    m = _to_float(_rows(path), path)
    if m.shape[0] != m.shape[1]:
        raise ParseError(f"{path}: matrix is {m.shape[0]}x{m.shape[1]}, expected square")
    return m


def read_data_csv(path: str) -> tuple[np.ndarray, list[str] | None]:
    """Observations by row; a first line that does not parse as numbers is taken as a header."""
    rows = _rows(path)
    header = None
    try:
        [float(x) for x in rows[0]]
    except ValueError:
        header, rows = [x.strip() for x in rows[0]], rows[1:]
        if not rows:
            raise ParseError(f"{path}: header but no data")
    return _to_float(rows, path, offset=1 if header else 0), header


def write_matrix_csv(fh, m) -> None:
    w = csv.writer(fh)
    for row in np.asarray(m):
        w.writerow([repr(float(x)) for x in row])


@contextmanager
def atomic_open(path: str):
    """Text handle to a temporary sibling file, renamed over ``path`` only on success."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
