"""Orthonormal Zernike polynomials with ANSI/OSA single indexing."""

from __future__ import annotations

from math import factorial, isqrt
from pathlib import Path

import numpy as np

MAX_RADIAL_ORDER = 10
MAX_ANSI_INDEX = (MAX_RADIAL_ORDER * (MAX_RADIAL_ORDER + 2) + MAX_RADIAL_ORDER) // 2


class UnsupportedZernikeTerm(ValueError):
    pass


def ansi_to_nm(j: int) -> tuple[int, int]:
    """Convert an ANSI/OSA index ``j`` to the (n, m) pair.

    Raises UnsupportedZernikeTerm for negative, non-integer, or
    orders above ``MAX_RADIAL_ORDER``.
    """
    if isinstance(j, bool) or not isinstance(j, (int, np.integer)):
        raise UnsupportedZernikeTerm(f"Zernike index must be an integer, got {j!r}")
    j = int(j)
    if j < 0 or j > MAX_ANSI_INDEX:
        raise UnsupportedZernikeTerm(
            f"Zernike index {j} unsupported (valid ANSI range 0..{MAX_ANSI_INDEX})"
        )
    n = (isqrt(8 * j + 1) - 1) // 2
    m = 2 * j - n * (n + 2)
    return n, m


def radial(n: int, m: int, rho: np.ndarray) -> np.ndarray:
    m = abs(m)
    out = np.zeros_like(rho, dtype=float)
    for k in range((n - m) // 2 + 1):
        coef = (-1) ** k * factorial(n - k) / (
            factorial(k) * factorial((n + m) // 2 - k) * factorial((n - m) // 2 - k)
        )
        out = out + coef * rho ** (n - 2 * k)
    return out


def zernike(j: int, rho: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Unit-RMS Zernike term ``j`` evaluated at polar pupil coordinates."""
    n, m = ansi_to_nm(j)
    norm = np.sqrt(2.0 * (n + 1) / (1.0 + (m == 0)))
    r = radial(n, m, rho)
    if m > 0:
        return norm * r * np.cos(m * theta)
    if m < 0:
        return norm * r * np.sin(-m * theta)
    return norm * r


def wavefront_waves(coeffs, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sum of Zernike terms (coefficients in waves) at normalized pupil points."""
    rho = np.hypot(x, y)
    theta = np.arctan2(y, x)
    w = np.zeros(np.broadcast(x, y).shape)
    for j, value in coeffs:
        if value != 0.0:
            w = w + value * zernike(j, rho, theta)
    return w


def is_rotationally_symmetric(coeffs) -> bool:
    return all(value == 0.0 or ansi_to_nm(j)[1] == 0 for j, value in coeffs)


def load_preset(path) -> tuple[tuple[int, float], ...]:
    """Read a plain-text table of ``index waves`` pairs.

    Blank lines and ``#`` comments are skipped; commas are accepted as
    separators.
    """
    pairs = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].replace(",", " ").strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'index waves', got {raw!r}")
        j = int(parts[0])
        value = float(parts[1])
        ansi_to_nm(j)
        if not np.isfinite(value):
            raise ValueError(f"{path}:{lineno}: non-finite coefficient")
        pairs.append((j, value))
    return tuple(pairs)
