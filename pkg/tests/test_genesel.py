import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from stpatch.core import DataError
from stpatch.genesel import (
    SelectionMode,
    hvg_topk,
    per_gene_variance,
    random_gene_sample,
    weighted_draw_order,
    weighted_gene_sample,
)


def variance_oracle(patch, occ):
    h, w, n = patch.shape
    out = []
    for g in range(n):
        vals = [float(patch[r, c, g]) for r in range(h) for c in range(w) if occ[r, c]]
        mean = sum(vals) / len(vals)
        out.append(sum((v - mean) ** 2 for v in vals) / len(vals))
    return np.array(out)


def test_constant_channel_has_zero_variance():
    patch = np.full((3, 3, 1), 7.0, np.float32)
    assert per_gene_variance(patch, np.ones((3, 3), bool)).tolist() == [0.0]


def test_two_site_population_variance():
    patch = np.array([[[0.0], [2.0]]], np.float32)
    assert per_gene_variance(patch, np.ones((1, 2), bool)).tolist() == [1.0]


def test_holes_are_excluded():
    patch = np.array([[[0.0], [2.0], [0.0]]], np.float32)
    occ = np.array([[True, True, False]])
    assert per_gene_variance(patch, occ).tolist() == [1.0]
    assert per_gene_variance(patch, occ, occupied_only=False)[0] == pytest.approx(8 / 9)


def test_no_occupied_sites():
    with pytest.raises(DataError):
        per_gene_variance(np.zeros((2, 2, 3)), np.zeros((2, 2), bool))


def test_variance_matches_two_pass_oracle():
    rng = np.random.default_rng(0)
    for _ in range(5):
        patch = (rng.random((8, 8, 32)) * 10).astype(np.float32)
        occ = rng.random((8, 8)) < 0.7
        np.testing.assert_allclose(per_gene_variance(patch, occ), variance_oracle(patch, occ), rtol=1e-6)


def test_weighted_full_draw():
    out = weighted_gene_sample([0.0, 1.0, 2.0, 0.5], 4, 1e-8, 3)
    assert sorted(out.tolist()) == [0, 1, 2, 3]


def test_weighted_prefers_the_only_variable_gene():
    rng = np.random.default_rng(11)
    hits = sum(weighted_gene_sample([0.0, 0.0, 1.0], 1, 1e-8, rng)[0] == 2 for _ in range(10_000))
    assert hits / 10_000 >= 0.999


def test_weighted_two_gene_frequency():
    rng = np.random.default_rng(12)
    n = 40_000
    zeros = sum(weighted_gene_sample([1.0, 3.0], 1, 1e-12, rng)[0] == 0 for _ in range(n))
    assert abs(zeros / n - 0.25) <= 0.01


def test_weighted_rejects_m_above_l():
    with pytest.raises(ValueError):
        weighted_gene_sample([1.0, 2.0], 3, 1e-8, 0)


def test_weighted_deterministic_per_seed():
    var = np.random.default_rng(0).random(50)
    assert np.array_equal(weighted_gene_sample(var, 10, 1e-8, 77), weighted_gene_sample(var, 10, 1e-8, 77))


def test_second_draw_matches_sequential_pps():
    # P(order = (a, b)) = w_a / W * w_b / (W - w_a) for sequential draws
    var = np.array([1.0, 2.0, 3.0])
    eps = 1e-12
    w = var + eps
    expected = {}
    for a, b in itertools.permutations(range(3), 2):
        expected[(a, b)] = w[a] / w.sum() * w[b] / (w.sum() - w[a])
    rng = np.random.default_rng(99)
    n = 30_000
    counts = dict.fromkeys(expected, 0)
    for _ in range(n):
        order = weighted_draw_order(var, eps, rng)
        counts[(int(order[0]), int(order[1]))] += 1
    keys = sorted(expected)
    assert chisquare([counts[k] for k in keys], [n * expected[k] for k in keys]).pvalue > 0.01


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=20), st.data())
def test_weighted_outputs_distinct_sorted(var, data):
    m = data.draw(st.integers(0, len(var)))
    out = weighted_gene_sample(var, m, 1e-8, data.draw(st.integers(0, 2**32)))
    assert len(out) == m and len(set(out.tolist())) == m
    assert np.all(np.diff(out) > 0)


def test_scaling_invariance_of_first_draw():
    # identical uniforms + proportional weights => identical draw order
    var = np.array([0.5, 2.0, 0.0, 7.0])
    a = weighted_draw_order(var, 1e-3, 5)
    b = weighted_draw_order(var * 4.0, 4e-3, 5)
    assert np.array_equal(a, b)


def test_hvg_examples():
    assert sorted(hvg_topk([5, 1, 3], 2).tolist()) == [0, 2]
    assert sorted(hvg_topk([2, 2, 2, 2], 2).tolist()) == [0, 1]
    with pytest.raises(ValueError):
        hvg_topk([1.0], 2)


@given(st.lists(st.integers(0, 5), min_size=1, max_size=30), st.data())
def test_hvg_matches_sort_oracle(var, data):
    m = data.draw(st.integers(0, len(var)))
    oracle = sorted(range(len(var)), key=lambda i: (-var[i], i))[:m]
    got = hvg_topk(var, m).tolist()
    assert got == oracle
    excluded = set(range(len(var))) - set(got)
    assert all(var[i] >= var[j] for i in got for j in excluded)


def test_random_subsets_uniform():
    rng = np.random.default_rng(8)
    subsets = list(itertools.combinations(range(4), 2))
    counts = dict.fromkeys(subsets, 0)
    for _ in range(12_000):
        counts[tuple(random_gene_sample(4, 2, rng).tolist())] += 1
    assert chisquare(list(counts.values())).pvalue > 0.01


def test_random_full_and_deterministic():
    assert random_gene_sample(5, 5, 0).tolist() == [0, 1, 2, 3, 4]
    assert np.array_equal(random_gene_sample(100, 7, 42), random_gene_sample(100, 7, 42))
    with pytest.raises(ValueError):
        random_gene_sample(3, 4, 0)


def test_selection_mode_dispatch():
    var = np.array([0.0, 9.0, 1.0, 4.0])
    assert SelectionMode("hvg").select(var, 2).tolist() == [1, 3]
    assert len(SelectionMode("random").select(var, 3, 1)) == 3
    assert SelectionMode("weighted", 1e-8).select(var, 4, 1).tolist() == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        SelectionMode("weighted", 0.0)
    with pytest.raises(ValueError):
        SelectionMode("magic")
