"""Contrast sensitivity weighting and CSF-weighted spectral distances."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq


@dataclass(frozen=True)
class CsfModel:
    """Band-pass CSF: low-frequency attenuation times exponential high-frequency decay.

    ``V(f) = (1 - a * exp(-f / f_low)) * exp(-f / f_high)``, where ``a`` is
    ``low_frequency_attenuation`` and ``f_high`` is ``high_frequency_decay``.
    ``f_low`` is solved so the maximum falls at ``peak_frequency``.
    ``weights`` normalizes over ``grid_max`` cpd so the largest grid weight is
    ``peak_sensitivity``.
    """

    peak_frequency: float = 6.0
    peak_sensitivity: float = 1.0
    low_frequency_attenuation: float = 0.9
    high_frequency_decay: float = 15.0
    low_frequency_scale: float = field(init=False)

    def __post_init__(self):
        a, fh, fp = self.low_frequency_attenuation, self.high_frequency_decay, self.peak_frequency
        if not 0.0 < a < 1.0:
            raise ValueError("low_frequency_attenuation must lie in (0, 1)")
        if fh <= 0 or fp <= 0 or self.peak_sensitivity <= 0:
            raise ValueError("CSF frequencies and sensitivity must be positive")

        # stationary point: f_p = f_low * ln(a * (1 + f_high / f_low))
        def peak_of(fl):
            return fl * math.log(a * (1.0 + fh / fl)) - fp

        grid = np.geomspace(1e-4, 1e3, 2000)
        vals = np.array([peak_of(g) for g in grid])
        sign = np.nonzero(np.diff(np.sign(vals)) > 0)[0]
        if sign.size == 0:
            raise ValueError(
                f"no CSF with peak at {fp} cpd for attenuation {a} and decay {fh} cpd"
            )
        k = sign[0]
        fl = brentq(peak_of, grid[k], grid[k + 1], xtol=1e-14)
        object.__setattr__(self, "low_frequency_scale", fl)

    def raw(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        return (1.0 - self.low_frequency_attenuation * np.exp(-f / self.low_frequency_scale)) * np.exp(
            -f / self.high_frequency_decay
        )


def csf_weight(f, model: CsfModel = CsfModel(), grid=None) -> np.ndarray:
    """Non-negative CSF weight, scaled so its maximum over ``grid`` is ``peak_sensitivity``.

    ``grid`` defaults to the 64-sample 0-10 cpd band.
    """
    f = np.asarray(f, dtype=float)
    if np.any(f < 0) or not np.all(np.isfinite(f)):
        raise ValueError("CSF frequency must be finite and non-negative")
    grid = np.linspace(0.0, 10.0, 64) if grid is None else np.asarray(grid, dtype=float)
    scale = model.peak_sensitivity / float(np.max(model.raw(grid)))
    return model.raw(f) * scale


def weighted_spectral_distance(target, reconstructed, weights, mode: str = "complex") -> float:
    """Sum over frequency of ``weights * |target - reconstructed|^2``.

    ``mode="magnitude"`` compares moduli instead of complex spectra. Arrays
    may carry leading axes (e.g. accommodation planes); everything is summed.
    """
    target = np.asarray(target)
    reconstructed = np.asarray(reconstructed)
    weights = np.asarray(weights, dtype=float)
    if target.shape != reconstructed.shape:
        raise ValueError(f"spectrum shapes differ: {target.shape} vs {reconstructed.shape}")
    if weights.shape[-1] != target.shape[-1]:
        raise ValueError(f"weights length {weights.shape[-1]} does not match grid {target.shape[-1]}")
    if mode == "complex":
        diff = target - reconstructed
    elif mode == "magnitude":
        diff = np.abs(target) - np.abs(reconstructed)
    else:
        raise ValueError(f"unknown distance mode {mode!r}")
    return float(np.sum(weights * (diff.real**2 + diff.imag**2)))
