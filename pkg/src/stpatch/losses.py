"""Reference values for the masked-reconstruction objectives.

All losses are mean squared errors over masked entries, normalized by the
total number of masked entries that participate. Predictions for gene g
at a location with embedding z are ``gene_embeddings[g] @ z``.
Accumulation is in float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import MaskSpec, PatchSample

DEFAULT_KNN = 16


@dataclass(frozen=True, eq=False)
class NeighborGraph:
    neighbors: tuple[np.ndarray, ...]
    weights: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.neighbors) != len(self.weights):
            raise ValueError("neighbors and weights must have one entry per spot")
        for i, (nb, wt) in enumerate(zip(self.neighbors, self.weights)):
            if len(nb) != len(wt):
                raise ValueError(f"spot {i}: neighbor and weight lists differ in length")
            if np.any(np.asarray(nb) == i):
                raise ValueError(f"spot {i}: self-loops are not allowed")
            if len(wt) and (np.any(np.asarray(wt) < 0) or not np.isclose(np.sum(wt), 1.0)):
                raise ValueError(f"spot {i}: weights must be non-negative and sum to 1")

    def __len__(self) -> int:
        return len(self.neighbors)


@dataclass(frozen=True, eq=False)
class MacroPartition:
    labels: np.ndarray
    k: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise ValueError("partition labels must be 1-D")
        if np.any(labels < 0) or np.any(labels >= self.k):
            raise ValueError(f"domain ids must lie in [0, {self.k})")
        if np.unique(labels).size != self.k:
            raise ValueError("empty domain")
        object.__setattr__(self, "labels", labels)


def _mask_of(targets: np.ndarray, mask) -> np.ndarray:
    if mask is None:
        return np.ones(targets.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != targets.shape:
        raise ValueError(f"mask shape {mask.shape} does not match targets {targets.shape}")
    return mask


def _masked_mse(targets, predictions, mask) -> float:
    n = int(mask.sum())
    if n == 0:
        raise ValueError("empty mask")
    diff = targets[mask] - predictions[mask]
    return float(np.dot(diff, diff) / n)


def _project(embeddings: np.ndarray, gene_embeddings: np.ndarray) -> np.ndarray:
    return embeddings @ gene_embeddings.T


def _as2d(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix")
    return a


def loss_spot(targets, predictions, mask=None) -> float:
    """Masked MSE between per-spot targets and predictions (N x genes).

    ``mask`` marks the masked entries; default is every entry.
    """
    targets = _as2d(targets, "targets")
    predictions = _as2d(predictions, "predictions")
    if targets.shape != predictions.shape:
        raise ValueError(f"shape mismatch: targets {targets.shape} vs predictions {predictions.shape}")
    return _masked_mse(targets, predictions, _mask_of(targets, mask))


def build_knn_graph(coords, k: int = DEFAULT_KNN) -> NeighborGraph:
    """Exact Euclidean k-nearest-neighbor graph, uniform weights 1/k.

    Distance ties go to the lower index; a spot is never its own neighbor.
    """
    coords = _as2d(coords, "coords")
    n = coords.shape[0]
    if k < 1:
        raise ValueError("k must be positive")
    if n <= k:
        raise ValueError(f"need more than k={k} spots, got {n}")
    neighbors, weights = [], []
    wt = np.full(k, 1.0 / k)
    for i in range(n):
        d = np.square(coords - coords[i]).sum(axis=1)
        d[i] = np.inf
        nb = np.argsort(d, kind="stable")[:k]
        neighbors.append(nb)
        weights.append(wt.copy())
    return NeighborGraph(tuple(neighbors), tuple(weights))


def neighbor_embeddings(spot_embeddings, graph: NeighborGraph, *, allow_isolated: bool = False) -> np.ndarray:
    """Weighted neighbor averages; isolated spots fall back to their own row if allowed."""
    emb = _as2d(spot_embeddings, "spot_embeddings")
    if len(graph) != emb.shape[0]:
        raise ValueError("graph size does not match the number of spots")
    out = np.empty_like(emb)
    for i, (nb, wt) in enumerate(zip(graph.neighbors, graph.weights)):
        if len(nb) == 0:
            if not allow_isolated:
                raise ValueError(f"spot {i} has no neighbors")
            out[i] = emb[i]
        else:
            out[i] = np.asarray(wt, dtype=np.float64) @ emb[np.asarray(nb)]
    return out


def loss_mspot(targets, gene_embeddings, spot_embeddings, graph: NeighborGraph, mask=None, *,
               allow_isolated: bool = False) -> float:
    targets = _as2d(targets, "targets")
    genes = _as2d(gene_embeddings, "gene_embeddings")
    emb = _as2d(spot_embeddings, "spot_embeddings")
    _check_dims(targets, genes, emb)
    ctx = neighbor_embeddings(emb, graph, allow_isolated=allow_isolated)
    return _masked_mse(targets, _project(ctx, genes), _mask_of(targets, mask))


def grid_macro_partition(coords, k: int) -> MacroPartition:
    """Cut spots into k bands of near-equal size along the longer axis.

    Spots are ordered by (long-axis coordinate, short-axis coordinate,
    index) and split into k contiguous runs whose sizes differ by at most 1.
    """
    coords = _as2d(coords, "coords")
    n = coords.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the {n} spots")
    span = coords.max(axis=0) - coords.min(axis=0)
    long_axis = 1 if span[1] > span[0] else 0
    order = np.lexsort((np.arange(n), coords[:, 1 - long_axis], coords[:, long_axis]))
    labels = np.empty(n, dtype=np.int64)
    for d, chunk in enumerate(np.array_split(order, k)):
        labels[chunk] = d
    return MacroPartition(labels, k)


def mean_fusion(spot_emb: np.ndarray, domain_emb: np.ndarray) -> np.ndarray:
    return (spot_emb + domain_emb) / 2


def spot_only_fusion(spot_emb: np.ndarray, domain_emb: np.ndarray) -> np.ndarray:
    return spot_emb


def domain_embeddings(spot_embeddings, partition: MacroPartition) -> np.ndarray:
    emb = _as2d(spot_embeddings, "spot_embeddings")
    if partition.labels.shape[0] != emb.shape[0]:
        raise ValueError("partition size does not match the number of spots")
    out = np.zeros((partition.k, emb.shape[1]))
    for d in range(partition.k):
        members = emb[partition.labels == d]
        if members.shape[0] == 0:
            raise ValueError(f"empty domain {d}")
        out[d] = members.mean(axis=0)
    return out


def loss_slice(targets, gene_embeddings, spot_embeddings, partition: MacroPartition, mask=None,
               fuse: Callable[[np.ndarray, np.ndarray], np.ndarray] = mean_fusion) -> float:
    """Masked MSE with each spot's embedding fused with its macro-domain mean.

    ``fuse(spot_rows, domain_rows)`` operates on aligned (N, d) arrays.
    """
    targets = _as2d(targets, "targets")
    genes = _as2d(gene_embeddings, "gene_embeddings")
    emb = _as2d(spot_embeddings, "spot_embeddings")
    _check_dims(targets, genes, emb)
    dom = domain_embeddings(emb, partition)
    fused = np.asarray(fuse(emb, dom[partition.labels]), dtype=np.float64)
    if fused.shape != emb.shape:
        raise ValueError("fusion must return one embedding per spot")
    return _masked_mse(targets, _project(fused, genes), _mask_of(targets, mask))


def _check_dims(targets, genes, emb):
    if emb.shape[0] != targets.shape[0]:
        raise ValueError(f"{emb.shape[0]} spot embeddings for {targets.shape[0]} spots")
    if genes.shape[0] != targets.shape[1]:
        raise ValueError(f"{genes.shape[0]} gene embeddings for {targets.shape[1]} genes")
    if genes.shape[1] != emb.shape[1]:
        raise ValueError("gene and spot embedding widths differ")


def loss_patch(sample: PatchSample, spec: MaskSpec, gene_embeddings, site_features, *,
               loss_on_holes: bool = False) -> float:
    """Masked-entry MSE for one patch.

    ``gene_embeddings`` is indexed by global gene id (K x d);
    ``site_features`` is the encoder output, (h, w, d). Masked entries at
    unoccupied sites are skipped unless ``loss_on_holes``.
    """
    h, w, m = sample.shape
    if spec.shape != (h, w, m):
        raise ValueError(f"mask shape {spec.shape} does not match sample {(h, w, m)}")
    if len(spec) == 0:
        raise ValueError("empty mask")
    genes = _as2d(gene_embeddings, "gene_embeddings")
    feats = np.asarray(site_features, dtype=np.float64)
    if feats.ndim != 3 or feats.shape[:2] != (h, w):
        raise ValueError(f"site_features must have shape ({h}, {w}, d)")
    if feats.shape[2] != genes.shape[1]:
        raise ValueError("gene embedding and site feature widths differ")
    if sample.genes.size and sample.genes.max() >= genes.shape[0]:
        raise ValueError("sample gene id exceeds the gene embedding table")
    mask = spec.dense()
    if not loss_on_holes:
        mask &= sample.occupied[:, :, None]
    if not mask.any():
        raise ValueError("empty mask after excluding unoccupied sites")
    pred = feats @ genes[sample.genes].T  # (h, w, m)
    return _masked_mse(sample.values.astype(np.float64), pred, mask)
