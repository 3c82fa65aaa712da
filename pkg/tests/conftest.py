import numpy as np
import pytest
import scipy.sparse as sp

from stpatch.core import RawSlice, build_vocabulary


def random_slice(rng, *, n_levels_x=None, n_levels_y=None, hole_rate=None, K=None, real=None, slice_id="s"):
    """A random slice on a (possibly real-valued, jittered-level) lattice with holes."""
    nx = n_levels_x or int(rng.integers(1, 12))
    ny = n_levels_y or int(rng.integers(1, 12))
    K = K or int(rng.integers(1, 9))
    hole_rate = rng.uniform(0, 0.5) if hole_rate is None else hole_rate
    real = bool(rng.integers(0, 2)) if real is None else real
    if real:
        xs = np.sort(rng.choice(np.linspace(-50, 50, 400), size=nx, replace=False)) + rng.uniform(-0.1, 0.1)
        ys = np.sort(rng.choice(np.linspace(-50, 50, 400), size=ny, replace=False)) * 1.37
    else:
        xs = np.sort(rng.choice(200, size=nx, replace=False)).astype(float)
        ys = np.sort(rng.choice(200, size=ny, replace=False)).astype(float)
    cells = [(x, y) for x in xs for y in ys]
    keep = rng.random(len(cells)) >= hole_rate
    if not keep.any():
        keep[rng.integers(len(cells))] = True
    coords = np.array([c for c, k in zip(cells, keep) if k])
    coords = coords[rng.permutation(len(coords))]
    dense = rng.random((len(coords), K)).astype(np.float32) * 10
    dense[rng.random(dense.shape) < 0.4] = 0
    vocab = build_vocabulary([f"g{i}" for i in range(K)])
    return RawSlice(slice_id, coords, sp.csr_matrix(dense), vocab)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
