"""Slice readers (MatrixMarket triplet, dense CSV) and a synthetic generator."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .core import VALUE_DTYPE, ParseError, RawSlice, build_vocabulary


def read_gene_names(genes_path) -> list[str]:
    names = []
    with open(genes_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            name = line.rstrip("\r\n")
            # 10x-style files carry "id<TAB>symbol"; the first column is the key
            name = name.split("\t", 1)[0].strip()
            if not name:
                raise ParseError("blank gene name", genes_path, lineno)
            names.append(name)
    if not names:
        raise ParseError("empty vocabulary", genes_path)
    if len(set(names)) != len(names):
        raise ParseError("duplicate gene names", genes_path)
    return names


def _read_spots(spots_path):
    ids, coords, lines = [], [], []
    with open(spots_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}", spots_path, lineno)
            try:
                x, y = float(parts[1]), float(parts[2])
            except ValueError:
                raise ParseError(f"non-numeric coordinate in {line!r}", spots_path, lineno) from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ParseError("non-finite coordinate", spots_path, lineno)
            ids.append(parts[0])
            coords.append((x, y))
            lines.append(lineno)
    if not coords:
        raise ParseError("no spots", spots_path)
    return ids, np.array(coords, dtype=np.float64), lines


def _read_matrix_market(matrix_path, n_rows: int, n_cols: int):
    with open(matrix_path, encoding="utf-8") as fh:
        header = fh.readline()
        lineno = 1
        tokens = header.split()
        if (
            len(tokens) < 4
            or tokens[0].lower() != "%%matrixmarket"
            or tokens[1].lower() != "matrix"
            or tokens[2].lower() != "coordinate"
        ):
            raise ParseError("expected '%%MatrixMarket matrix coordinate ...' header", matrix_path, 1)
        field = tokens[3].lower()
        if field not in ("real", "integer", "double"):
            raise ParseError(f"unsupported field type {field!r}", matrix_path, 1)
        if len(tokens) > 4 and tokens[4].lower() != "general":
            raise ParseError(f"unsupported symmetry {tokens[4]!r}", matrix_path, 1)

        size_line = None
        for line in fh:
            lineno += 1
            if line.startswith("%") or not line.strip():
                continue
            size_line = line
            break
        if size_line is None:
            raise ParseError("missing size line", matrix_path, lineno)
        try:
            rows, cols, nnz = (int(t) for t in size_line.split())
        except ValueError:
            raise ParseError(f"bad size line {size_line.strip()!r}", matrix_path, lineno) from None
        if rows != n_rows or cols != n_cols:
            raise ParseError(
                f"matrix is {rows}x{cols} but spots/genes files give {n_rows}x{n_cols}",
                matrix_path,
                lineno,
            )

        r = np.empty(nnz, dtype=np.int64)
        c = np.empty(nnz, dtype=np.int64)
        v = np.empty(nnz, dtype=np.float64)
        seen: dict[tuple[int, int], int] = {}
        n = 0
        for line in fh:
            lineno += 1
            if not line.strip() or line.startswith("%"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(f"expected 'row col value', got {line.strip()!r}", matrix_path, lineno)
            try:
                i, j, val = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise ParseError(f"malformed entry {line.strip()!r}", matrix_path, lineno) from None
            if not (1 <= i <= rows and 1 <= j <= cols):
                raise ParseError(f"index ({i},{j}) out of range for {rows}x{cols}", matrix_path, lineno)
            if not math.isfinite(val) or val < 0:
                raise ParseError(f"negative or non-finite value {parts[2]}", matrix_path, lineno)
            key = (i, j)
            if key in seen:
                raise ParseError(f"duplicate entry ({i},{j}), first at line {seen[key]}", matrix_path, lineno)
            seen[key] = lineno
            if n >= nnz:
                raise ParseError(f"more entries than the {nnz} declared in the header", matrix_path, lineno)
            r[n], c[n], v[n] = i - 1, j - 1, val
            n += 1
        if n != nnz:
            raise ParseError(f"header declares {nnz} entries but file has {n}", matrix_path, lineno)
    return r, c, v


def read_triplet_slice(genes_path, spots_path, matrix_path, *, slice_id=None, log1p=False) -> RawSlice:
    """Read a slice from a gene list, a spot table and a MatrixMarket matrix.

    Matrix rows are spots (1-based, in spots-file order) and columns genes.
    """
    names = read_gene_names(genes_path)
    vocab = build_vocabulary(names)
    _, coords, spot_lines = _read_spots(spots_path)
    r, c, v = _read_matrix_market(matrix_path, coords.shape[0], vocab.K)
    if log1p:
        v = np.log1p(v)
    expr = sp.csr_matrix((v.astype(VALUE_DTYPE), (r, c)), shape=(coords.shape[0], vocab.K))
    if slice_id is None:
        slice_id = Path(spots_path).stem
    _check_unique_coords(coords, spots_path, spot_lines)
    return RawSlice(slice_id, coords, expr, vocab)


def _check_unique_coords(coords, path, lines):
    seen: dict[tuple[float, float], int] = {}
    for k, (x, y) in enumerate(coords.tolist()):
        if (x, y) in seen:
            raise ParseError(
                f"duplicate coordinate ({x}, {y}), first at line {lines[seen[(x, y)]]}",
                path,
                lines[k],
            )
        seen[(x, y)] = k


def read_csv_header(path) -> list[str]:
    with open(path, encoding="utf-8", newline="") as fh:
        header = next(csv.reader(fh), None)
    if header is None or len(header) < 3 or [h.strip() for h in header[:2]] != ["x", "y"]:
        raise ParseError("header must be 'x,y,<gene1>,...'", path, 1)
    return [h.strip() for h in header[2:]]


def read_dense_csv_slice(path, *, slice_id=None, log1p=False) -> RawSlice:
    """Read a slice from a dense CSV with header ``x,y,<gene1>,<gene2>,...``."""
    names = read_csv_header(path)
    if len(set(names)) != len(names):
        raise ParseError("duplicate gene names in header", path, 1)
    vocab = build_vocabulary(names)
    width = len(names) + 2
    coords, rows, lines = [], [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            lineno = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != width:
                raise ParseError(f"ragged row: expected {width} fields, got {len(row)}", path, lineno)
            try:
                vals = [float(cell) for cell in row]
            except ValueError:
                bad = next(cell for cell in row if not _is_float(cell))
                raise ParseError(f"non-numeric cell {bad!r}", path, lineno) from None
            if not all(math.isfinite(x) for x in vals[:2]):
                raise ParseError("non-finite coordinate", path, lineno)
            expr = vals[2:]
            if any(not math.isfinite(x) or x < 0 for x in expr):
                raise ParseError("negative or non-finite expression value", path, lineno)
            coords.append(vals[:2])
            rows.append(expr)
            lines.append(lineno)
    if not coords:
        raise ParseError("no spots", path)
    coords = np.array(coords, dtype=np.float64)
    dense = np.array(rows, dtype=np.float64)
    if log1p:
        dense = np.log1p(dense)
    _check_unique_coords(coords, path, lines)
    if slice_id is None:
        slice_id = Path(path).stem
    return RawSlice(slice_id, coords, sp.csr_matrix(dense.astype(VALUE_DTYPE)), vocab)


def _is_float(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def write_dense_csv_slice(slc: RawSlice, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y", *slc.vocab.names])
        dense = slc.dense()
        for (x, y), vec in zip(slc.coords.tolist(), dense):
            writer.writerow([repr(x), repr(y), *(repr(float(v)) for v in vec)])


def write_triplet_slice(slc: RawSlice, genes_path, spots_path, matrix_path) -> None:
    with open(genes_path, "w", encoding="utf-8") as fh:
        for name in slc.vocab.names:
            fh.write(name + "\n")
    with open(spots_path, "w", encoding="utf-8") as fh:
        for i, (x, y) in enumerate(slc.coords.tolist()):
            fh.write(f"spot{i}\t{x!r}\t{y!r}\n")
    coo = slc.expr.tocoo()
    with open(matrix_path, "w", encoding="utf-8") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{slc.n_spots} {slc.K} {coo.nnz}\n")
        for i, j, v in zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()):
            fh.write(f"{i + 1} {j + 1} {v!r}\n")


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters for a slice with planted rectangular spatial domains.

    Each domain owns a disjoint block of signature genes whose mean is
    ``baseline + signal`` inside the domain and ``baseline`` elsewhere.
    ``pitch`` scales grid indices into raw coordinates; ``stagger`` shifts
    odd rows by half a pitch as on hexagonal capture arrays.
    """

    H: int = 64
    W: int = 64
    K: int = 256
    n_domains: int = 4
    signal: float = 5.0
    noise_sd: float = 1.0
    hole_rate: float = 0.0
    seed: int = 0
    baseline: float = 5.0
    pitch: float = 1.0
    stagger: bool = False
    slice_id: str | None = None

    def __post_init__(self):
        if self.H < 1 or self.W < 1:
            raise ValueError("H and W must be positive")
        if self.K < 1:
            raise ValueError("K must be positive")
        if self.n_domains < 1:
            raise ValueError("n_domains must be >= 1")
        if self.n_domains > self.K:
            raise ValueError("need at least one signature gene per domain (n_domains <= K)")
        if not self.signal > 0:
            raise ValueError("signal must be positive")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if not 0 <= self.hole_rate < 1:
            raise ValueError("hole_rate must lie in [0, 1)")
        if self.baseline < 0:
            raise ValueError("baseline must be >= 0")
        if not self.pitch > 0:
            raise ValueError("pitch must be positive")

    @property
    def signature_size(self) -> int:
        return max(1, self.K // (2 * self.n_domains))

    def signature_genes(self, domain: int) -> np.ndarray:
        s = self.signature_size
        return np.arange(domain * s, (domain + 1) * s)


def domain_layout(H: int, W: int, n_domains: int) -> np.ndarray:
    """H x W array of domain ids tiling the grid with rectangles."""
    if n_domains > H * W:
        raise ValueError(f"n_domains={n_domains} exceeds the {H * W} grid cells")
    n_cols = max(-(-n_domains // H), min(math.isqrt(n_domains - 1) + 1, W))
    col_bands = np.array_split(np.arange(W), n_cols)
    per_col = [len(a) for a in np.array_split(np.arange(n_domains), n_cols)]
    layout = np.empty((H, W), dtype=np.int64)
    d = 0
    for cols, n_rows in zip(col_bands, per_col):
        for rows in np.array_split(np.arange(H), n_rows):
            layout[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1] = d
            d += 1
    return layout


def generate_synthetic_slice(cfg: SyntheticConfig) -> tuple[RawSlice, np.ndarray]:
    """Generate a slice and its per-spot domain labels. Deterministic in cfg."""
    layout = domain_layout(cfg.H, cfg.W, cfg.n_domains)
    rng = np.random.default_rng(cfg.seed)
    n_cells = cfg.H * cfg.W
    n_holes = min(int(round(cfg.hole_rate * n_cells)), n_cells - 1)
    keep = np.ones(n_cells, dtype=bool)
    if n_holes:
        keep[rng.choice(n_cells, size=n_holes, replace=False)] = False
    cells = np.flatnonzero(keep)
    rows, cols = np.divmod(cells, cfg.W)
    labels = layout[rows, cols]

    means = np.full((len(cells), cfg.K), cfg.baseline, dtype=np.float64)
    for d in range(cfg.n_domains):
        sig = cfg.signature_genes(d)
        means[np.ix_(labels == d, sig)] += cfg.signal
    if cfg.noise_sd > 0:
        means += rng.normal(0.0, cfg.noise_sd, size=means.shape)
    np.maximum(means, 0.0, out=means)

    x = cols * cfg.pitch
    if cfg.stagger:
        x = x + (rows % 2) * (cfg.pitch / 2)
    coords = np.column_stack([x, rows * cfg.pitch]).astype(np.float64)
    vocab = build_vocabulary([f"gene{g}" for g in range(cfg.K)])
    slice_id = cfg.slice_id if cfg.slice_id is not None else f"synthetic-{cfg.seed}"
    slc = RawSlice(slice_id, coords, sp.csr_matrix(means.astype(VALUE_DTYPE)), vocab)
    return slc, labels

