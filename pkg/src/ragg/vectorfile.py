"""Sample matrices on disk: a small CSV dialect and a packed binary format.

CSV: first line is "n,d", then n rows of d comma-separated decimals. Values
are rendered with Python's shortest round-trippable float representation, so
writing and re-reading is value-exact and re-runs diff cleanly.

Binary: magic "RAGG", little-endian u32 version (currently 1), u64 n, u64 d,
then n*d little-endian float64 in row-major order. Bit patterns round-trip
exactly.

Any deviation from either layout raises VectorFileError, which the CLI maps
to its malformed-input exit code.
"""

from __future__ import annotations

import struct
from typing import Optional

import numpy as np

MAGIC = b"RAGG"
VERSION = 1

FORMAT_CSV = "csv"
FORMAT_BIN = "bin"

_HEADER = struct.Struct("<4sIQQ")


class VectorFileError(ValueError):
    """The file does not conform to the vector matrix formats."""


def _validate_matrix(rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 1:
        raise VectorFileError(f"expected an n x d matrix, got shape {rows.shape}")
    if not np.isfinite(rows).all():
        raise VectorFileError("matrix values must be finite")
    return rows


def write_csv(path: str, rows: np.ndarray) -> None:
    rows = _validate_matrix(rows)
    n, d = rows.shape
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"{n},{d}\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def read_csv(path: str) -> np.ndarray:
    with open(path, "r", encoding="ascii", newline="") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise VectorFileError("empty file")
    head = lines[0].split(",")
    if len(head) != 2:
        raise VectorFileError(f"header must be 'n,d', got {lines[0]!r}")
    try:
        n, d = int(head[0]), int(head[1])
    except ValueError as exc:
        raise VectorFileError(f"non-integer header {lines[0]!r}") from exc
    if n < 1 or d < 1:
        raise VectorFileError(f"header dimensions must be positive, got {n},{d}")
    body = lines[1:]
    while body and body[-1] == "":
        body.pop()
    if len(body) != n:
        raise VectorFileError(f"expected {n} rows, found {len(body)}")
    out = np.empty((n, d))
    for i, line in enumerate(body):
        parts = line.split(",")
        if len(parts) != d:
            raise VectorFileError(f"row {i} has {len(parts)} fields, expected {d}")
        try:
            out[i] = [float(p) for p in parts]
        except ValueError as exc:
            raise VectorFileError(f"row {i} holds a non-numeric field") from exc
    if not np.isfinite(out).all():
        raise VectorFileError("matrix values must be finite")
    return out


def write_bin(path: str, rows: np.ndarray) -> None:
    rows = _validate_matrix(rows)
    n, d = rows.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, d))
        fh.write(np.ascontiguousarray(rows, dtype="<f8").tobytes())


def read_bin(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise VectorFileError("file shorter than the binary header")
    magic, version, n, d = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise VectorFileError(f"bad magic {magic!r}")
    if version != VERSION:
        raise VectorFileError(f"unsupported version {version}")
    if n < 1 or d < 1:
        raise VectorFileError(f"header dimensions must be positive, got {n},{d}")
    expected = _HEADER.size + 8 * n * d
    if len(blob) != expected:
        raise VectorFileError(
            f"payload is {len(blob) - _HEADER.size} bytes, expected {8 * n * d}"
        )
    out = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).reshape(n, d)
    out = out.astype(np.float64, copy=True)
    if not np.isfinite(out).all():
        raise VectorFileError("matrix values must be finite")
    return out


def read(path: str, fmt: Optional[str] = None) -> np.ndarray:
    """Read either format; sniffs the binary magic when fmt is None."""
    if fmt is None:
        try:
            with open(path, "rb") as fh:
                fmt = FORMAT_BIN if fh.read(4) == MAGIC else FORMAT_CSV
        except OSError as exc:
            raise VectorFileError(f"cannot read {path}: {exc}") from exc
    if fmt == FORMAT_BIN:
        return read_bin(path)
    if fmt == FORMAT_CSV:
        return read_csv(path)
    raise VectorFileError(f"unknown vector format {fmt!r}")


def write(path: str, rows: np.ndarray, fmt: str = FORMAT_CSV) -> None:
    if fmt == FORMAT_BIN:
        write_bin(path, rows)
    elif fmt == FORMAT_CSV:
        write_csv(path, rows)
    else:
        raise VectorFileError(f"unknown vector format {fmt!r}")
