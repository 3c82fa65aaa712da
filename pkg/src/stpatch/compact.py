"""Rank compaction of observed spot coordinates and rasterization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import VALUE_DTYPE, CompactGrid, DataError, GeneVocabulary, RawSlice


@dataclass(frozen=True, eq=False)
class CompactCoords:
    """0-based per-axis ranks of each spot among the sorted unique levels."""

    xs: np.ndarray  # sorted unique raw x levels, len W'
    ys: np.ndarray  # sorted unique raw y levels, len H'
    cx: np.ndarray
    cy: np.ndarray

    @property
    def width(self) -> int:
        return len(self.xs)

    @property
    def height(self) -> int:
        return len(self.ys)

    def as_dict(self) -> dict[tuple[float, float], tuple[int, int]]:
        return {
            (float(self.xs[i]), float(self.ys[j])): (int(i), int(j))
            for i, j in zip(self.cx, self.cy)
        }


def _coords_of(obj) -> np.ndarray:
    coords = obj.coords if isinstance(obj, RawSlice) else obj
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise DataError("coordinates must have shape (N, 2)")
    if coords.shape[0] == 0:
        raise DataError("no spots")
    if not np.all(np.isfinite(coords)):
        raise DataError("non-finite coordinate")
    return coords


def compact_coordinates(slc) -> CompactCoords:
    """Map raw coordinates to (rank among unique x, rank among unique y).

    Accepts a RawSlice or an (N, 2) coordinate array. Equal raw levels
    (exact float equality) share a rank.
    """
    coords = _coords_of(slc)
    xs, cx = np.unique(coords[:, 0], return_inverse=True)
    ys, cy = np.unique(coords[:, 1], return_inverse=True)
    return CompactCoords(xs, ys, cx.ravel().astype(np.int64), cy.ravel().astype(np.int64))


def normalize_coords_minmax(slc, lo: float = 0.0, hi: float = 100.0) -> np.ndarray:
    """Affinely map each axis onto [lo, hi]; constant axes go to the midpoint."""
    if not hi > lo:
        raise ValueError("hi must exceed lo")
    coords = _coords_of(slc)
    out = np.empty_like(coords)
    for axis in range(2):
        col = coords[:, axis]
        cmin, cmax = col.min(), col.max()
        if cmax == cmin:
            out[:, axis] = (lo + hi) / 2
        else:
            out[:, axis] = lo + (col - cmin) * ((hi - lo) / (cmax - cmin))
            # pin the endpoints against rounding
            out[col == cmin, axis] = lo
            out[col == cmax, axis] = hi
    return out


def rasterize(slc: RawSlice, vocab: GeneVocabulary | None = None) -> CompactGrid:
    """Scatter the slice's spots onto a dense H' x W' x K grid.

    Unobserved lattice cells stay zero and unoccupied; nothing is imputed.
    """
    if vocab is not None:
        slc = slc.conform(vocab)
    cc = compact_coordinates(slc)
    H, W, K = cc.height, cc.width, slc.K
    flat = cc.cy * W + cc.cx
    if np.unique(flat).size != flat.size:
        raise DataError(f"slice {slc.id!r}: two spots map to the same lattice cell")
    expr = np.zeros((H * W, K), dtype=VALUE_DTYPE)
    csr = slc.expr
    rows = np.repeat(flat, np.diff(csr.indptr))
    expr[rows, csr.indices] = csr.data
    occupied = np.zeros(H * W, dtype=bool)
    occupied[flat] = True
    expr = expr.reshape(H, W, K)
    occupied = occupied.reshape(H, W)
    for arr in (expr, occupied, cc.xs, cc.ys):
        arr.setflags(write=False)
    return CompactGrid(expr, occupied, cc.xs, cc.ys, slc.id)
