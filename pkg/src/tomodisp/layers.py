"""Dioptric layer grids and nearest-layer quantization."""

from __future__ import annotations

from decimal import Decimal
from fractions import Fraction

import numpy as np


def _exact(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    return Fraction(Decimal(str(x)))


def layer_spacing(count: int, min_diopters, max_diopters) -> Fraction:
    """Exact spacing of ``count`` layers partitioning [min, max] diopters."""
    if count < 1:
        raise ValueError("layer count must be positive")
    lo, hi = _exact(min_diopters), _exact(max_diopters)
    if hi <= lo:
        raise ValueError("max_diopters must exceed min_diopters")
    return (hi - lo) / count


def layer_grid(count: int, min_diopters=0.0, max_diopters=5.5) -> np.ndarray:
    """Layer depths ``min + k * spacing`` for k = 1..count, ascending.

    The nearest layer sits exactly at ``max_diopters``; 80 layers over
    0-5.5 D gives 0.06875 D steps ending at 5.5 D.
    """
    step = layer_spacing(count, min_diopters, max_diopters)
    lo = _exact(min_diopters)
    return np.array([float(lo + k * step) for k in range(1, count + 1)])


def accommodation_grid(count: int, min_diopters=0.0, max_diopters=5.5) -> np.ndarray:
    """``count`` evenly spaced accommodation planes including both ends."""
    if count < 1:
        raise ValueError("plane count must be positive")
    if count == 1:
        return np.array([float(_exact(min_diopters) + _exact(max_diopters)) / 2.0])
    lo, hi = _exact(min_diopters), _exact(max_diopters)
    step = (hi - lo) / (count - 1)
    return np.array([float(lo + k * step) for k in range(count)])


def nearest_layer(depths, layer_depths):
    """Nearest-layer index for each depth, with midpoint ties going to the lower index.

    Returns ``(index, clamped)`` where ``clamped`` flags depths outside the
    layer range.
    """
    layers = np.asarray(layer_depths, dtype=float)
    d = np.asarray(depths, dtype=float)
    if not np.all(np.isfinite(d)):
        raise ValueError("depths must be finite")
    clamped = (d < layers[0]) | (d > layers[-1])
    upper = np.clip(np.searchsorted(layers, d, side="left"), 1, len(layers) - 1) if len(layers) > 1 else None
    if upper is None:
        return np.zeros(d.shape, dtype=np.intp), clamped
    lower = upper - 1
    mid = (layers[lower] + layers[upper]) / 2.0
    idx = np.where(d > mid, upper, lower)
    return idx.astype(np.intp), clamped
