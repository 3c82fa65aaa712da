"""Channel (gene) selection within a window.

Three modes are supported: variance-weighted sampling without
replacement (the default), deterministic top-m by variance, and uniform
random subsets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DataError
from .seeding import as_generator

WEIGHTED = "weighted"
HVG = "hvg"
RANDOM = "random"
MODES = (WEIGHTED, HVG, RANDOM)

DEFAULT_EPSILON = 1e-8


@dataclass(frozen=True)
class SelectionMode:
    kind: str = WEIGHTED
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.kind not in MODES:
            raise ValueError(f"unknown selection mode {self.kind!r}; expected one of {MODES}")
        if self.kind == WEIGHTED and not self.epsilon > 0:
            raise ValueError("epsilon must be positive for weighted selection")

    def select(self, variances, m: int, rng=None) -> np.ndarray:
        if self.kind == WEIGHTED:
            return weighted_gene_sample(variances, m, self.epsilon, rng)
        if self.kind == HVG:
            return np.sort(hvg_topk(variances, m))
        return random_gene_sample(len(variances), m, rng)


def per_gene_variance(patch, occupied=None, *, occupied_only: bool = True) -> np.ndarray:
    """Population variance of each channel over the window's sites.

    With ``occupied_only`` (default) the zero-filled holes are ignored.
    """
    patch = np.asarray(patch)
    if patch.ndim != 3:
        raise ValueError("patch must have shape (h, w, channels)")
    sites = patch.reshape(-1, patch.shape[2])
    if occupied_only and occupied is not None:
        occ = np.asarray(occupied, dtype=bool).reshape(-1)
        if occ.size != sites.shape[0]:
            raise ValueError("occupancy mask does not match the patch")
        sites = sites[occ]
    if sites.shape[0] == 0:
        raise DataError("no occupied sites in window")
    sites = sites.astype(np.float64)
    mean = sites.mean(axis=0)
    return np.square(sites - mean).mean(axis=0)


def _check_m(m: int, n: int) -> None:
    if m < 0:
        raise ValueError("m must be non-negative")
    if m > n:
        raise ValueError(f"cannot select m={m} genes from {n}")


def weighted_draw_order(variances, epsilon: float = DEFAULT_EPSILON, rng=None) -> np.ndarray:
    """All indices in the order a sequential weight-proportional draw picks them.

    Uses exponential keys: item g gets key u_g ** (1 / (var_g + eps)),
    compared in log space. Sorting keys descending reproduces successive
    draws without replacement with probability proportional to weight.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    var = np.asarray(variances, dtype=np.float64)
    if np.any(var < 0) or not np.all(np.isfinite(var)):
        raise ValueError("variances must be finite and non-negative")
    weights = var + epsilon
    rng = as_generator(rng)
    u = rng.random(var.shape[0])
    # u == 0 has probability ~2**-53; treat as the smallest key
    with np.errstate(divide="ignore"):
        keys = np.log(u) / weights
    return np.argsort(-keys, kind="stable")


def weighted_gene_sample(variances, m: int, epsilon: float = DEFAULT_EPSILON, rng=None) -> np.ndarray:
    """m distinct indices drawn without replacement, weights var + eps. Sorted."""
    n = len(variances)
    _check_m(m, n)
    order = weighted_draw_order(variances, epsilon, rng)
    return np.sort(order[:m])


def hvg_topk(variances, m: int) -> np.ndarray:
    """Indices of the m largest variances, lower index first among ties."""
    var = np.asarray(variances, dtype=np.float64)
    _check_m(m, var.shape[0])
    return np.argsort(-var, kind="stable")[:m]


def random_gene_sample(n: int, m: int, rng=None) -> np.ndarray:
    _check_m(m, n)
    rng = as_generator(rng)
    return np.sort(rng.choice(n, size=m, replace=False))
