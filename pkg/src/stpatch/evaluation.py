"""Downstream evaluation: kNN domain classification, ARI, splits, reconstruction error."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from typing import Callable, Sequence

import numpy as np

from .core import MaskSpec, PatchSample
from .mask import apply_mask, sample_region_mask
from .seeding import as_generator

log = logging.getLogger(__name__)

DEFAULT_K = 10
DEFAULT_TRAIN_FRAC = 0.2
DEFAULT_N_SPLITS = 10
DEFAULT_REPLICATES = 20
MIN_STRATUM = 5


def knn_classify(train_X, train_y, test_X, k: int = DEFAULT_K, *, chunk: int = 256) -> np.ndarray:
    """Exact Euclidean kNN with majority vote.

    Neighbors are ordered by (distance, training index). A vote tie goes to
    the tied class whose first member appears earliest in that order.

    Candidates are found with the fast ||a||^2 + ||b||^2 - 2ab expansion and
    every candidate within its rounding bound of the k-th distance is
    re-ranked by directly computed distances, so the result equals a full
    direct-distance sort.
    """
    train_X = np.asarray(train_X, dtype=np.float64)
    test_X = np.asarray(test_X, dtype=np.float64)
    train_y = np.asarray(train_y)
    if train_X.ndim != 2 or test_X.ndim != 2:
        raise ValueError("feature matrices must be 2-D")
    if train_X.shape[1] != test_X.shape[1]:
        raise ValueError("train and test feature widths differ")
    n = train_X.shape[0]
    if train_y.shape[0] != n:
        raise ValueError("train_X and train_y lengths differ")
    if k < 1:
        raise ValueError("k must be positive")
    if n < k:
        raise ValueError(f"need at least k={k} training points, got {n}")

    tr_sq = np.einsum("ij,ij->i", train_X, train_X)
    out = np.empty(test_X.shape[0], dtype=train_y.dtype)
    for lo in range(0, test_X.shape[0], chunk):
        q = test_X[lo:lo + chunk]
        q_sq = np.einsum("ij,ij->i", q, q)
        approx = q_sq[:, None] + tr_sq[None, :] - 2.0 * (q @ train_X.T)
        kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
        scale = q_sq[:, None] + tr_sq[None, :]
        # generous bound on the expansion's rounding error
        tol = 1e-9 * (scale.max(axis=1) + 1.0)
        for r in range(q.shape[0]):
            cand = np.flatnonzero(approx[r] <= kth[r] + 2 * tol[r])
            d = np.square(train_X[cand] - q[r]).sum(axis=1)
            order = cand[np.lexsort((cand, d))][:k]
            out[lo + r] = _vote(train_y[order])
    return out


def _vote(labels: np.ndarray):
    counts = Counter(labels.tolist())
    best = max(counts.values())
    for lab in labels.tolist():
        if counts[lab] == best:
            return lab


def accuracy(pred, truth) -> float:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("length mismatch")
    if pred.size == 0:
        raise ValueError("empty label arrays")
    return float(np.mean(pred == truth))


def _contingency(a, b):
    _, ai = np.unique(np.asarray(a), return_inverse=True)
    _, bi = np.unique(np.asarray(b), return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai.ravel(), bi.ravel()), 1)
    return table


def adjusted_rand_index(a, b) -> float:
    """Adjusted Rand index, computed with exact rational arithmetic.

    When both partitions are trivial in the same way (all singletons, or a
    single cluster) the formula is 0/0 and 1.0 is returned.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("length mismatch")
    n = a.shape[0]
    if n < 2:
        raise ValueError("need at least two items")
    table = _contingency(a, b)
    pairs = sum(comb(int(x), 2) for x in table.ravel() if x > 1)
    sa = sum(comb(int(x), 2) for x in table.sum(axis=1))
    sb = sum(comb(int(x), 2) for x in table.sum(axis=0))
    expected = Fraction(sa * sb, comb(n, 2))
    max_index = Fraction(sa + sb, 2)
    denom = max_index - expected
    if denom == 0:
        return 1.0
    return float((pairs - expected) / denom)


def make_splits(n: int, train_frac: float = DEFAULT_TRAIN_FRAC, n_splits: int = DEFAULT_N_SPLITS,
                seed: int = 0, labels=None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Random train/test index splits with exactly round(train_frac * n) training items.

    When ``labels`` are given and every class has at least 5 members the
    training set is stratified (largest-remainder allocation per class).
    """
    if not 0 < train_frac < 1:
        raise ValueError("train_frac must lie in (0, 1)")
    if n_splits < 1:
        raise ValueError("n_splits must be >= 1")
    n_train = int(round(train_frac * n))
    if n_train in (0, n):
        raise ValueError(f"train_frac={train_frac} leaves an empty side for n={n}")
    strata = None
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape[0] != n:
            raise ValueError("labels length does not match n")
        classes, inv = np.unique(labels, return_inverse=True)
        sizes = np.bincount(inv.ravel())
        if sizes.min() >= MIN_STRATUM:
            strata = [np.flatnonzero(inv.ravel() == c) for c in range(len(classes))]
            quota = _allocate(sizes, n_train)
        else:
            log.warning("a class has fewer than %d members; using unstratified splits", MIN_STRATUM)

    rng = as_generator(seed)
    splits = []
    all_idx = np.arange(n)
    for _ in range(n_splits):
        if strata is None:
            train = np.sort(rng.permutation(n)[:n_train])
        else:
            parts = [members[rng.permutation(len(members))[:q]] for members, q in zip(strata, quota)]
            train = np.sort(np.concatenate(parts))
        test = np.setdiff1d(all_idx, train, assume_unique=True)
        splits.append((train, test))
    return splits


def _allocate(sizes: np.ndarray, total: int) -> np.ndarray:
    exact = [Fraction(int(s) * total, int(sizes.sum())) for s in sizes]
    quota = np.array([int(e) for e in exact], dtype=np.int64)
    remainders = [e - int(e) for e in exact]
    order = sorted(range(len(sizes)), key=lambda i: (-remainders[i], i))
    for i in order[: total - int(quota.sum())]:
        quota[i] += 1
    return quota


def reconstruction_score(truth, pred) -> tuple[float, float]:
    """(MSE, MAE) over the given region entries."""
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.shape != pred.shape:
        raise ValueError(f"shape mismatch: {truth.shape} vs {pred.shape}")
    if truth.size == 0:
        raise ValueError("empty region")
    diff = (truth - pred).ravel()
    return float(np.dot(diff, diff) / diff.size), float(np.abs(diff).sum() / diff.size)


@dataclass
class DomainReport:
    accuracy: list[float] = field(default_factory=list)
    ari: list[float] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracy))

    @property
    def mean_ari(self) -> float:
        return float(np.mean(self.ari))

    def to_tsv(self) -> str:
        lines = ["split\tacc\tari"]
        for i, (acc, ari) in enumerate(zip(self.accuracy, self.ari)):
            lines.append(f"{i}\t{acc:.6f}\t{ari:.6f}")
        lines.append(f"mean\t{self.mean_accuracy:.6f}\t{self.mean_ari:.6f}")
        return "\n".join(lines) + "\n"


def domain_detection_report(embeddings, labels, *, k: int = DEFAULT_K, train_frac: float = DEFAULT_TRAIN_FRAC,
                            n_splits: int = DEFAULT_N_SPLITS, seed: int = 0) -> DomainReport:
    """kNN domain classification over repeated random splits.

    ARI is computed between predicted and true labels of the test spots.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("embeddings must be (n, d) with one label per row")
    if np.unique(y).size < 2:
        raise ValueError("labels must cover at least two classes")
    report = DomainReport(params={"k": k, "train_frac": train_frac, "n_splits": n_splits, "seed": seed})
    for train, test in make_splits(len(y), train_frac, n_splits, seed, labels=y):
        pred = knn_classify(X[train], y[train], X[test], k)
        report.accuracy.append(accuracy(pred, y[test]))
        report.ari.append(adjusted_rand_index(pred, y[test]))
    return report


Predictor = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def context_mean_predictor(masked: np.ndarray, mask: np.ndarray, occupied: np.ndarray) -> np.ndarray:
    """Baseline: fill each masked entry with its channel's mean over visible occupied sites."""
    visible = occupied[:, :, None] & ~mask
    counts = visible.sum(axis=(0, 1))
    sums = np.where(visible, masked, 0.0).sum(axis=(0, 1), dtype=np.float64)
    means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return np.broadcast_to(means, masked.shape).astype(np.float64)


@dataclass
class ReconstructionReport:
    mse: list[float] = field(default_factory=list)
    mae: list[float] = field(default_factory=list)
    S: int = 0

    @property
    def mean_mse(self) -> float:
        return float(np.mean(self.mse))

    @property
    def mean_mae(self) -> float:
        return float(np.mean(self.mae))


def region_reconstruction_eval(samples: Sequence[PatchSample], S: int, predictor: Predictor = context_mean_predictor,
                               *, n_replicates: int = DEFAULT_REPLICATES, seed: int = 0,
                               occupied_only: bool = True) -> ReconstructionReport:
    """Mask an S x S block per sample, predict it, score MSE/MAE; repeat and average.

    ``predictor(masked_values, mask, occupied)`` returns a full (h, w, m)
    prediction. Only masked entries (at occupied sites by default) are scored.
    """
    if not samples:
        raise ValueError("no samples to evaluate")
    rng = as_generator(seed)
    report = ReconstructionReport(S=S)
    for _ in range(n_replicates):
        truth_parts, pred_parts = [], []
        for sample in samples:
            h, w, m = sample.shape
            spec: MaskSpec = sample_region_mask(h, w, m, S, rng)
            masked, mask = apply_mask(sample, spec)
            pred = np.asarray(predictor(masked, mask, sample.occupied))
            scored = mask & sample.occupied[:, :, None] if occupied_only else mask
            truth_parts.append(sample.values[scored])
            pred_parts.append(pred[scored])
        truth = np.concatenate(truth_parts)
        if truth.size == 0:
            continue
        mse, mae = reconstruction_score(truth, np.concatenate(pred_parts))
        report.mse.append(mse)
        report.mae.append(mae)
    if not report.mse:
        raise ValueError("every masked region fell on unoccupied sites")
    return report
