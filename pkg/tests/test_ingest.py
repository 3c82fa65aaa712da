import numpy as np
import pytest

from stpatch.core import ParseError
from stpatch.ingest import (
    SyntheticConfig,
    domain_layout,
    generate_synthetic_slice,
    read_dense_csv_slice,
    read_triplet_slice,
    write_dense_csv_slice,
    write_triplet_slice,
)

from conftest import random_slice


def _triplet(tmp_path, genes, spots, matrix):
    g, s, m = tmp_path / "genes.txt", tmp_path / "spots.tsv", tmp_path / "matrix.mtx"
    g.write_text(genes)
    s.write_text(spots)
    m.write_text(matrix)
    return g, s, m


MTX = "%%MatrixMarket matrix coordinate real general\n"


def test_triplet_direct_mapping(tmp_path):
    paths = _triplet(tmp_path, "G0\nG1\n", "a\t0\t0\nb\t1\t0\n", MTX + "2 2 2\n1 1 3.0\n2 2 1.5\n")
    slc = read_triplet_slice(*paths)
    s0, s1 = slc.spots
    assert s0.indices.tolist() == [0] and s0.values.tolist() == [3.0]
    assert s1.indices.tolist() == [1] and s1.values.tolist() == [1.5]


@pytest.mark.parametrize("matrix, message", [
    (MTX + "2 2 3\n1 1 3.0\n2 2 1.5\n", "declares 3 entries"),
    (MTX + "2 2 1\n1 1 3.0\n2 2 1.5\n", "more entries"),
    (MTX + "2 2 2\n1 1 3.0\n3 2 1.5\n", "out of range"),
    (MTX + "2 2 2\n1 1 3.0\n2 2 -1.5\n", "negative"),
    (MTX + "2 2 2\n1 1 3.0\n1 1 1.5\n", "duplicate entry"),
    (MTX + "3 2 0\n", "spots/genes"),
    ("not a header\n2 2 0\n", "MatrixMarket"),
])
def test_triplet_malformed_matrix(tmp_path, matrix, message):
    paths = _triplet(tmp_path, "G0\nG1\n", "a\t0\t0\nb\t1\t0\n", matrix)
    with pytest.raises(ParseError, match=message) as info:
        read_triplet_slice(*paths)
    assert info.value.path is not None


def test_triplet_error_names_line(tmp_path):
    paths = _triplet(tmp_path, "G0\nG1\n", "a\t0\t0\nb\t1\t0\n", MTX + "% comment\n2 2 2\n1 1 3.0\n2 9 1.5\n")
    with pytest.raises(ParseError) as info:
        read_triplet_slice(*paths)
    assert info.value.line == 5


def test_triplet_duplicate_coordinate(tmp_path):
    paths = _triplet(tmp_path, "G0\n", "a\t0\t0\nb\t0\t0\n", MTX + "2 1 0\n")
    with pytest.raises(ParseError, match="duplicate coordinate") as info:
        read_triplet_slice(*paths)
    assert info.value.line == 2


def test_triplet_lna_scale(tmp_path):
    n = 3484
    spots = "".join(f"s{i}\t{i % 70}\t{i // 70}\n" for i in range(n))
    entries = "".join(f"{i + 1} {i % 31 + 1} 1\n" for i in range(n))
    paths = _triplet(tmp_path, "".join(f"P{j}\n" for j in range(31)), spots, MTX + f"{n} 31 {n}\n" + entries)
    assert read_triplet_slice(*paths).n_spots == 3484


def test_dense_csv_single_row(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("x,y,A,B\n0,0,1.0,0.0\n")
    slc = read_dense_csv_slice(p)
    (spot,) = slc.spots
    assert spot.coord == (0.0, 0.0)
    assert spot.indices.tolist() == [0] and spot.values.tolist() == [1.0]


@pytest.mark.parametrize("body, message", [
    ("", "no spots"),
    ("0,0,1.0\n", "ragged"),
    ("0,0,1.0,abc\n", "non-numeric"),
    ("0,0,1.0,-2\n", "negative"),
])
def test_dense_csv_errors(tmp_path, body, message):
    p = tmp_path / "s.csv"
    p.write_text("x,y,A,B\n" + body)
    with pytest.raises(ParseError, match=message):
        read_dense_csv_slice(p)


def test_log1p_switch(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("x,y,A\n0,0,3.0\n")
    assert read_dense_csv_slice(p, log1p=True).dense()[0, 0] == np.float32(np.log1p(3.0))


def test_csv_and_triplet_readers_agree(tmp_path):
    rng = np.random.default_rng(7)
    for trial in range(10):
        slc = random_slice(rng, slice_id="x")
        d = tmp_path / f"t{trial}"
        d.mkdir()
        write_triplet_slice(slc, d / "g.txt", d / "s.tsv", d / "m.mtx")
        via_triplet = read_triplet_slice(d / "g.txt", d / "s.tsv", d / "m.mtx", slice_id="x")
        write_dense_csv_slice(via_triplet, d / "s.csv")
        via_csv = read_dense_csv_slice(d / "s.csv", slice_id="x")
        assert via_triplet == slc
        assert via_csv == via_triplet


def test_synthetic_noise_free_single_domain_is_constant():
    cfg = SyntheticConfig(H=6, W=5, K=10, n_domains=1, noise_sd=0.0, hole_rate=0.0, seed=3)
    slc, labels = generate_synthetic_slice(cfg)
    dense = slc.dense()
    sig = cfg.signature_genes(0)
    assert np.all(dense[:, sig] == dense[0, sig])
    assert np.all(labels == 0)


def test_synthetic_is_deterministic():
    cfg = SyntheticConfig(H=10, W=12, K=20, n_domains=3, hole_rate=0.3, seed=99)
    a, la = generate_synthetic_slice(cfg)
    b, lb = generate_synthetic_slice(cfg)
    assert a == b
    assert np.array_equal(la, lb)
    assert a.expr.data.tobytes() == b.expr.data.tobytes()


def test_synthetic_domain_means():
    cfg = SyntheticConfig(H=40, W=40, K=64, n_domains=4, signal=5.0, noise_sd=1.0, hole_rate=0.1, seed=5)
    slc, labels = generate_synthetic_slice(cfg)
    dense = slc.dense().astype(np.float64)
    assert len(labels) == slc.n_spots
    for d in range(4):
        block = dense[np.ix_(labels == d, cfg.signature_genes(d))]
        tol = 3 * cfg.noise_sd / np.sqrt(block.size)
        assert abs(block.mean() - (cfg.baseline + cfg.signal)) < tol
        other = dense[np.ix_(labels != d, cfg.signature_genes(d))]
        assert abs(other.mean() - cfg.baseline) < 3 * cfg.noise_sd / np.sqrt(other.size) + 1e-3


def test_synthetic_hole_count():
    cfg = SyntheticConfig(H=10, W=10, K=4, n_domains=2, hole_rate=0.3, seed=1)
    slc, labels = generate_synthetic_slice(cfg)
    assert slc.n_spots == 70 == len(labels)


def test_synthetic_too_many_domains():
    with pytest.raises(ValueError):
        generate_synthetic_slice(SyntheticConfig(H=2, W=2, K=10, n_domains=5))


@pytest.mark.parametrize("H, W, n", [(64, 64, 4), (5, 7, 5), (1, 9, 9), (9, 1, 4), (3, 3, 9), (10, 10, 7)])
def test_domain_layout_tiles_rectangles(H, W, n):
    layout = domain_layout(H, W, n)
    assert set(np.unique(layout)) == set(range(n))
    for d in range(n):
        rows, cols = np.nonzero(layout == d)
        box = layout[rows.min():rows.max() + 1, cols.min():cols.max() + 1]
        assert np.all(box == d)


def test_staggered_layout_doubles_x_levels():
    slc, _ = generate_synthetic_slice(SyntheticConfig(H=4, W=4, K=2, n_domains=1, stagger=True, pitch=2.0))
    assert len(np.unique(slc.coords[:, 0])) == 8
