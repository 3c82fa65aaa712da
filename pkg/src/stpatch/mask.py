"""Mask generation (uniform ratio, contiguous region) and application."""

from __future__ import annotations

import numpy as np

from .core import CONTIGUOUS_REGION, UNIFORM_RATIO, MaskSpec, PatchSample
from .seeding import as_generator

DEFAULT_RATIO = 0.3


def uniform_mask_size(h: int, w: int, m: int, ratio: float) -> int:
    # round-half-to-even, so 0.5 entries rounds to 0
    return int(round(ratio * h * w * m))


def sample_uniform_mask(h: int, w: int, m: int, ratio: float = DEFAULT_RATIO, rng=None) -> MaskSpec:
    """Mask exactly round(ratio * h * w * m) entries chosen uniformly without replacement."""
    if not 0 < ratio < 1:
        raise ValueError("mask ratio must lie in (0, 1)")
    if min(h, w, m) < 1:
        raise ValueError("patch dimensions must be positive")
    n = uniform_mask_size(h, w, m, ratio)
    if n == 0:
        raise ValueError("empty mask")
    rng = as_generator(rng)
    flat = np.sort(rng.choice(h * w * m, size=n, replace=False))
    entries = np.column_stack(np.unravel_index(flat, (h, w, m)))
    return MaskSpec(entries, (h, w, m), UNIFORM_RATIO, float(ratio))


def sample_region_mask(h: int, w: int, m: int, S: int, rng=None) -> MaskSpec:
    """Mask a uniformly placed S x S spatial block across all m channels."""
    if S < 1:
        raise ValueError("region side must be positive")
    if S > min(h, w):
        raise ValueError(f"region side {S} exceeds patch {h}x{w}")
    if m < 1:
        raise ValueError("patch dimensions must be positive")
    rng = as_generator(rng)
    r0 = int(rng.integers(0, h - S + 1))
    c0 = int(rng.integers(0, w - S + 1))
    rr, cc, kk = np.meshgrid(
        np.arange(r0, r0 + S), np.arange(c0, c0 + S), np.arange(m), indexing="ij"
    )
    entries = np.column_stack([rr.ravel(), cc.ravel(), kk.ravel()])
    return MaskSpec(entries, (h, w, m), CONTIGUOUS_REGION, float(S))


def region_corner(spec: MaskSpec) -> tuple[int, int]:
    """(row, col) of the masked block's top-left cell."""
    if spec.mode != CONTIGUOUS_REGION:
        raise ValueError("not a region mask")
    return int(spec.entries[0, 0]), int(spec.entries[0, 1])


def apply_mask(sample, spec: MaskSpec, fill: float = 0.0):
    """Return (masked copy of the values, boolean mask tensor).

    ``sample`` may be a PatchSample or a bare (h, w, m) array; it is not
    modified.
    """
    values = sample.values if isinstance(sample, PatchSample) else np.asarray(sample)
    if values.shape != spec.shape:
        raise ValueError(f"mask shape {spec.shape} does not match sample {values.shape}")
    mask = spec.dense()
    out = values.copy()
    out[mask] = fill
    return out, mask
