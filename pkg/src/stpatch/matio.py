"""Matrix files for embeddings and predictions.

Two encodings: CSV (``.csv``, numeric rows, no header) and raw binary
(any other suffix): an ASCII line ``"rows cols\\n"`` followed by
rows*cols little-endian float32 values in row-major order.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import ParseError


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        try:
            arr = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
        except ValueError as exc:
            raise ParseError(str(exc), path) from None
        return arr
    with open(path, "rb") as fh:
        header = fh.readline()
        try:
            rows, cols = (int(t) for t in header.decode("ascii").split())
        except (UnicodeDecodeError, ValueError):
            raise ParseError("expected header line 'rows cols'", path, 1) from None
        if rows < 0 or cols < 0:
            raise ParseError("negative matrix dimension", path, 1)
        raw = fh.read()
    if len(raw) != 4 * rows * cols:
        raise ParseError(f"expected {4 * rows * cols} payload bytes, found {len(raw)}", path)
    return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(rows, cols)


def write_matrix(path, arr) -> None:
    path = Path(path)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError("matrix must be 2-D")
    if path.suffix.lower() == ".csv":
        np.savetxt(path, arr, delimiter=",", fmt="%.9g")
        return
    with open(path, "wb") as fh:
        fh.write(f"{arr.shape[0]} {arr.shape[1]}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_labels(path) -> np.ndarray:
    labels = [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    if not labels:
        raise ParseError("no labels", path)
    return np.array(labels)
