"""Domain types shared across the toolkit.

Expression values are float32 everywhere. Slices are stored columnar
(coordinate array plus a CSR spot x gene matrix) and expose per-spot
views on demand.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sp

VALUE_DTYPE = np.float32


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    def __init__(self, message: str, path=None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc += ": "
        elif line is not None:
            loc = f"line {line}: "
        super().__init__(loc + message)
        self.path = path
        self.line = line


class ConfigError(ValueError):
    """Invalid user-supplied configuration (CLI usage error)."""


@dataclass(frozen=True)
class GeneVocabulary:
    names: tuple[str, ...]
    index: dict[str, int] = field(repr=False, compare=False)

    @property
    def K(self) -> int:
        return len(self.names)

    def __len__(self) -> int:
        return len(self.names)

    def __getitem__(self, name: str) -> int:
        return self.index[name]

    def __contains__(self, name: object) -> bool:
        return name in self.index

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in self.names:
            h.update(name.encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()


def build_vocabulary(names: Sequence[str]) -> GeneVocabulary:
    """Deduplicate gene names in first-occurrence order."""
    names = list(names)
    if not names:
        raise DataError("empty vocabulary")
    index: dict[str, int] = {}
    ordered = []
    for name in names:
        if not isinstance(name, str):
            raise DataError(f"gene name must be a string, got {name!r}")
        if name not in index:
            index[name] = len(ordered)
            ordered.append(name)
    return GeneVocabulary(tuple(ordered), index)


@dataclass(frozen=True)
class Spot:
    coord: tuple[float, float]
    indices: np.ndarray  # int, ascending
    values: np.ndarray  # float32, same length

    def dense(self, K: int) -> np.ndarray:
        out = np.zeros(K, dtype=VALUE_DTYPE)
        out[self.indices] = self.values
        return out

    @classmethod
    def from_dense(cls, coord, vec) -> "Spot":
        vec = np.asarray(vec, dtype=VALUE_DTYPE)
        nz = np.flatnonzero(vec)
        return cls((float(coord[0]), float(coord[1])), nz, vec[nz])


class RawSlice:
    """An unprocessed slice: N spots with raw coordinates and sparse expression.

    ``coords`` is an (N, 2) float64 array of (x, y); ``expr`` is an N x K CSR
    matrix over ``vocab``. Construction validates the invariants (finite
    non-negative values, finite coordinates, distinct coordinate pairs).
    """

    def __init__(self, id: str, coords, expr, vocab: GeneVocabulary):
        coords = np.asarray(coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise DataError(f"slice {id!r}: coords must have shape (N, 2)")
        if coords.shape[0] == 0:
            raise DataError(f"slice {id!r}: no spots")
        if not np.all(np.isfinite(coords)):
            raise DataError(f"slice {id!r}: non-finite coordinate")
        expr = sp.csr_matrix(expr, dtype=VALUE_DTYPE)
        expr.sum_duplicates()
        expr.eliminate_zeros()
        expr.sort_indices()
        if expr.shape != (coords.shape[0], vocab.K):
            raise DataError(
                f"slice {id!r}: expression shape {expr.shape} does not match "
                f"{coords.shape[0]} spots x {vocab.K} genes"
            )
        if expr.nnz and (not np.all(np.isfinite(expr.data)) or expr.data.min() < 0):
            raise DataError(f"slice {id!r}: expression values must be finite and >= 0")
        dup = _first_duplicate_coord(coords)
        if dup is not None:
            i, j = dup
            raise DataError(
                f"slice {id!r}: spots {i} and {j} share coordinate "
                f"({coords[i, 0]!r}, {coords[i, 1]!r})"
            )
        coords.setflags(write=False)
        self.id = str(id)
        self.coords = coords
        self.expr = expr
        self.vocab = vocab

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def n_spots(self) -> int:
        return self.coords.shape[0]

    @property
    def K(self) -> int:
        return self.vocab.K

    def spot(self, i: int) -> Spot:
        lo, hi = self.expr.indptr[i], self.expr.indptr[i + 1]
        return Spot(
            (float(self.coords[i, 0]), float(self.coords[i, 1])),
            self.expr.indices[lo:hi].copy(),
            self.expr.data[lo:hi].copy(),
        )

    @property
    def spots(self) -> list[Spot]:
        return [self.spot(i) for i in range(self.n_spots)]

    def iter_spots(self) -> Iterator[Spot]:
        for i in range(self.n_spots):
            yield self.spot(i)

    @classmethod
    def from_spots(cls, id: str, spots: Sequence[Spot], vocab: GeneVocabulary) -> "RawSlice":
        coords = np.array([s.coord for s in spots], dtype=np.float64).reshape(-1, 2)
        indptr = np.zeros(len(spots) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(s.indices) for s in spots])
        indices = np.concatenate([np.asarray(s.indices, dtype=np.int64) for s in spots]) if spots else []
        data = np.concatenate([np.asarray(s.values, dtype=VALUE_DTYPE) for s in spots]) if spots else []
        if len(indices) and (np.max(indices) >= vocab.K or np.min(indices) < 0):
            raise DataError(f"slice {id!r}: gene index out of range for K={vocab.K}")
        expr = sp.csr_matrix((data, indices, indptr), shape=(len(spots), vocab.K))
        return cls(id, coords, expr, vocab)

    def dense(self) -> np.ndarray:
        return self.expr.toarray()

    def conform(self, vocab: GeneVocabulary) -> "RawSlice":
        """Re-index this slice's genes into a larger shared vocabulary."""
        if vocab.names == self.vocab.names:
            return self
        try:
            remap = np.array([vocab.index[n] for n in self.vocab.names], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"slice {self.id!r}: gene {exc.args[0]!r} not in vocabulary") from None
        coo = self.expr.tocoo()
        expr = sp.csr_matrix(
            (coo.data, (coo.row, remap[coo.col])), shape=(self.n_spots, vocab.K)
        )
        return RawSlice(self.id, self.coords, expr, vocab)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RawSlice):
            return NotImplemented
        return (
            self.id == other.id
            and self.vocab.names == other.vocab.names
            and np.array_equal(self.coords, other.coords)
            and self.expr.shape == other.expr.shape
            and (self.expr != other.expr).nnz == 0
        )

    def __repr__(self) -> str:
        return f"RawSlice(id={self.id!r}, n_spots={self.n_spots}, K={self.K})"


def _first_duplicate_coord(coords: np.ndarray):
    order = np.lexsort((coords[:, 1], coords[:, 0]))
    sc = coords[order]
    same = np.all(sc[1:] == sc[:-1], axis=1)
    if not same.any():
        return None
    k = int(np.argmax(same))
    i, j = sorted((int(order[k]), int(order[k + 1])))
    return i, j


@dataclass(frozen=True, eq=False)
class CompactGrid:
    """Dense H' x W' x K expression lattice after rank compaction.

    ``expr[c_y, c_x, :]`` holds the spot at compact indices (c_x, c_y);
    ``xs``/``ys`` are the sorted unique raw coordinates per axis.
    """

    expr: np.ndarray
    occupied: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    slice_id: str = ""

    @property
    def height(self) -> int:
        return self.expr.shape[0]

    @property
    def width(self) -> int:
        return self.expr.shape[1]

    @property
    def K(self) -> int:
        return self.expr.shape[2]


@dataclass(frozen=True, eq=False)
class PatchSample:
    """One h x w x m training unit.

    ``values`` is indexed [row, col, channel]; ``genes`` are the global
    gene ids of the channels, strictly ascending; ``origin`` is (o_x, o_y),
    the 0-based column and row of the window's top-left cell.
    """

    values: np.ndarray
    genes: np.ndarray
    origin: tuple[int, int]
    slice_id: str
    occupied: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=VALUE_DTYPE)
        genes = np.asarray(self.genes, dtype=np.int64)
        occupied = np.asarray(self.occupied, dtype=bool)
        if values.ndim != 3:
            raise DataError("patch values must be rank-3 (h, w, m)")
        h, w, m = values.shape
        if genes.shape != (m,):
            raise DataError(f"patch has {m} channels but {genes.shape[0]} gene ids")
        if m > 1 and not np.all(np.diff(genes) > 0):
            raise DataError("patch gene ids must be strictly ascending")
        if m and genes[0] < 0:
            raise DataError("negative gene id")
        if occupied.shape != (h, w):
            raise DataError(f"occupancy mask shape {occupied.shape} != {(h, w)}")
        if not np.all(np.isfinite(values)):
            raise DataError("patch values must be finite")
        if np.any(values[~occupied]):
            raise DataError("patch has non-zero values at unoccupied sites")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "genes", genes)
        object.__setattr__(self, "occupied", occupied)
        object.__setattr__(self, "origin", (int(self.origin[0]), int(self.origin[1])))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PatchSample):
            return NotImplemented
        return (
            self.slice_id == other.slice_id
            and self.origin == other.origin
            and np.array_equal(self.genes, other.genes)
            and np.array_equal(self.occupied, other.occupied)
            and self.values.shape == other.values.shape
            and self.values.tobytes() == other.values.tobytes()
        )


UNIFORM_RATIO = "uniform-ratio"
CONTIGUOUS_REGION = "contiguous-region"


@dataclass(frozen=True, eq=False)
class MaskSpec:
    """Masked (row, col, channel) entries of an h x w x m patch.

    ``entries`` is an (n, 3) int array in ascending flat (row-major) order.
    ``param`` is the ratio for uniform masks and the side S for region masks.
    """

    entries: np.ndarray
    shape: tuple[int, int, int]
    mode: str
    param: float

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.int64).reshape(-1, 3)
        h, w, m = self.shape
        if self.mode not in (UNIFORM_RATIO, CONTIGUOUS_REGION):
            raise ValueError(f"unknown mask mode {self.mode!r}")
        if entries.size:
            bounds = np.array([h, w, m])
            if np.any(entries < 0) or np.any(entries >= bounds):
                raise ValueError("mask entry out of bounds")
            flat = np.ravel_multi_index(entries.T, (h, w, m))
            if np.unique(flat).size != flat.size:
                raise ValueError("mask entries must be distinct")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))

    def __len__(self) -> int:
        return self.entries.shape[0]

    def dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=bool)
        if len(self):
            out[self.entries[:, 0], self.entries[:, 1], self.entries[:, 2]] = True
        return out


def expression_mass(values) -> float:
    """Exactly rounded sum of the values (order independent)."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    return math.fsum(arr.tolist())
