"""Read and write dense real matrices.

Two on-disk formats are supported:

* CSV: a header line ``rows,cols`` followed by one line per matrix row of
  comma-separated float64 values (shortest round-trip repr).
* Binary: the magic bytes ``RIEM``, little-endian ``u32`` rows and cols, then
  the row-major little-endian ``f64`` payload.

``read_matrix`` sniffs the magic bytes, so callers never pick the reader.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import DimensionError, NumericInputError

__all__ = ["MAGIC", "read_matrix", "write_matrix", "format_csv"]

MAGIC = b"RIEM"
_HEADER = struct.Struct("<4sII")
_BINARY_SUFFIXES = {".bin", ".riem"}


def format_csv(matrix: np.ndarray) -> str:
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    lines = [f"{a.shape[0]},{a.shape[1]}"]
    for row in a:
        lines.append(",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def _parse_csv(text: str) -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DimensionError("empty matrix file")
    try:
        rows, cols = (int(tok) for tok in lines[0].split(","))
    except ValueError as exc:
        raise DimensionError(f"bad header line {lines[0]!r}; expected 'rows,cols'") from exc
    values = [float(tok) for ln in lines[1:] for tok in ln.split(",")]
    if len(values) != rows * cols:
        raise DimensionError(
            f"header declares {rows}x{cols} = {rows * cols} values, found {len(values)}"
        )
    return np.array(values, dtype=np.float64).reshape(rows, cols)


def _parse_binary(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise DimensionError("truncated binary matrix header")
    _, rows, cols = _HEADER.unpack_from(blob)
    payload = blob[_HEADER.size:]
    if len(payload) != 8 * rows * cols:
        raise DimensionError(
            f"binary payload has {len(payload)} bytes, expected {8 * rows * cols}"
        )
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(rows, cols)


def read_matrix(path: str | os.PathLike) -> np.ndarray:
    """Load a matrix from either supported format."""
    blob = Path(path).read_bytes()
    if blob[:4] == MAGIC:
        out = _parse_binary(blob)
    else:
        out = _parse_csv(blob.decode("utf-8"))
    if not np.all(np.isfinite(out)):
        raise NumericInputError(f"{path}: matrix contains non-finite entries")
    return out


def write_matrix(path: str | os.PathLike, matrix: np.ndarray, binary: bool | None = None) -> None:
    """Write ``matrix``; ``binary=None`` picks the format from the suffix."""
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    path = Path(path)
    if binary is None:
        binary = path.suffix.lower() in _BINARY_SUFFIXES
    if binary:
        head = _HEADER.pack(MAGIC, a.shape[0], a.shape[1])
        path.write_bytes(head + np.ascontiguousarray(a, dtype="<f8").tobytes())
    else:
        path.write_text(format_csv(a), encoding="utf-8")
