import numpy as np
import pytest
from scipy.stats import chisquare

from stpatch.compact import rasterize
from stpatch.core import CompactGrid
from stpatch.crop import WindowTooLarge, extract_patch, sample_window_origin

from conftest import random_slice


def _grid(H, W, K=3, seed=0, hole_rate=0.3):
    rng = np.random.default_rng(seed)
    expr = rng.random((H, W, K)).astype(np.float32)
    occ = rng.random((H, W)) >= hole_rate
    expr[~occ] = 0
    return CompactGrid(expr, occ, np.arange(W, dtype=float), np.arange(H, dtype=float), "g")


def test_single_valid_corner():
    grid = _grid(4, 5)
    for seed in range(20):
        assert sample_window_origin(grid, 4, 5, seed) == (0, 0)


def test_window_larger_than_grid():
    with pytest.raises(WindowTooLarge, match="slice smaller than window"):
        sample_window_origin(_grid(12, 20), 16, 16, 0)


def test_origins_are_uniform():
    grid = _grid(10, 10)
    rng = np.random.default_rng(2024)
    counts = np.zeros((3, 3), dtype=int)
    for _ in range(10_000):
        ox, oy = sample_window_origin(grid, 8, 8, rng)
        counts[oy, ox] += 1
    assert chisquare(counts.ravel()).pvalue > 0.01


def test_origin_sequence_reproducible():
    grid = _grid(20, 30)
    a = [sample_window_origin(grid, 4, 6, r) for r in [np.random.default_rng(5)] * 50]
    b = [sample_window_origin(grid, 4, 6, r) for r in [np.random.default_rng(5)] * 50]
    assert a == b
    assert all(0 <= ox <= 24 and 0 <= oy <= 16 for ox, oy in a)


def test_extract_single_cell():
    grid = _grid(5, 5, hole_rate=0.0)
    vals, occ = extract_patch(grid, (2, 3), 1, 1)
    assert np.array_equal(vals[0, 0], grid.expr[3, 2])
    assert occ.tolist() == [[True]]


def test_extract_over_holes():
    grid = _grid(6, 6)
    expr = np.array(grid.expr)
    occ = np.array(grid.occupied)
    occ[:3, :3] = False
    expr[:3, :3] = 0
    grid = CompactGrid(expr, occ, grid.xs, grid.ys, "g")
    vals, m = extract_patch(grid, (0, 0), 3, 3)
    assert not vals.any() and not m.any()


def test_extract_matches_loop_copy():
    rng = np.random.default_rng(1)
    for _ in range(30):
        grid = rasterize(random_slice(rng))
        h = int(rng.integers(1, grid.height + 1))
        w = int(rng.integers(1, grid.width + 1))
        ox, oy = sample_window_origin(grid, h, w, rng)
        vals, occ = extract_patch(grid, (ox, oy), h, w)
        for r in range(h):
            for c in range(w):
                assert occ[r, c] == grid.occupied[oy + r, ox + c]
                for k in range(grid.K):
                    assert vals[r, c, k] == grid.expr[oy + r, ox + c, k]
        vals[...] = -1  # a copy, not a view
        assert not (grid.expr == -1).any()


def test_extract_out_of_bounds():
    with pytest.raises(ValueError):
        extract_patch(_grid(5, 5), (3, 0), 2, 3)
