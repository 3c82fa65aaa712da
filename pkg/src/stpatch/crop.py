"""Uniform random window placement and extraction on a compact grid."""

from __future__ import annotations

import numpy as np

from .core import CompactGrid, DataError
from .seeding import as_generator


class WindowTooLarge(DataError):
    pass


def sample_window_origin(grid: CompactGrid, h: int, w: int, rng=None) -> tuple[int, int]:
    """Draw (o_x, o_y) uniformly over all in-bounds top-left corners (0-based)."""
    if h < 1 or w < 1:
        raise ValueError("window sides must be positive")
    if h > grid.height or w > grid.width:
        raise WindowTooLarge(
            f"slice smaller than window: grid {grid.height}x{grid.width}, window {h}x{w}"
        )
    rng = as_generator(rng)
    o_x = int(rng.integers(0, grid.width - w + 1))
    o_y = int(rng.integers(0, grid.height - h + 1))
    return o_x, o_y


def extract_patch(grid: CompactGrid, origin: tuple[int, int], h: int, w: int):
    """Copy out the h x w x K window at ``origin`` and its occupancy mask."""
    o_x, o_y = origin
    if o_x < 0 or o_y < 0 or o_y + h > grid.height or o_x + w > grid.width or h < 1 or w < 1:
        raise ValueError(
            f"window at origin {origin} of size {h}x{w} exceeds grid {grid.height}x{grid.width}"
        )
    values = np.array(grid.expr[o_y:o_y + h, o_x:o_x + w, :])
    occupied = np.array(grid.occupied[o_y:o_y + h, o_x:o_x + w])
    return values, occupied
