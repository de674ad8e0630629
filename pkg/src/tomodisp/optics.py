"""Pupil functions and incoherent optical transfer functions for defocus and aberrations.

The OTF is the DC-normalized autocorrelation of the generalized pupil. It is
evaluated by Gauss-Legendre quadrature over the lens-shaped overlap of the
two shifted pupil disks, so every frequency sample is computed directly
rather than interpolated from an FFT lattice. All depths are in diopters and
all spatial frequencies in cycles per degree of visual angle.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import zernike as zk

CYCLES_PER_RADIAN_PER_CPD = 180.0 / math.pi
_DELTA_DECIMALS = 12


class SamplingError(ValueError):
    """Raised when the pupil sampling cannot resolve the requested OTF."""


@dataclass(frozen=True)
class OpticalConfig:
    wavelength: float = 550e-9
    pupil_diameter: float = 6e-3
    pupil_grid: int = 256
    max_frequency: float = 10.0
    frequency_samples: int = 64
    channel_wavelengths: tuple[float, ...] = (610e-9, 550e-9, 470e-9)

    def __post_init__(self):
        if not self.wavelength > 0:
            raise ValueError("wavelength must be positive")
        if not self.pupil_diameter > 0:
            raise ValueError("pupil_diameter must be positive")
        if self.pupil_grid < 64 or self.pupil_grid % 2:
            raise ValueError("pupil_grid must be an even integer >= 64")
        if not self.max_frequency > 0:
            raise ValueError("max_frequency must be positive")
        if self.frequency_samples < 2:
            raise SamplingError("frequency_samples must be at least 2 to resolve the band")
        object.__setattr__(self, "channel_wavelengths", tuple(float(w) for w in self.channel_wavelengths))

    @property
    def pupil_radius(self) -> float:
        return self.pupil_diameter / 2.0

    @property
    def frequencies(self) -> np.ndarray:
        """Fixed radial frequency grid in cpd, 0 to ``max_frequency`` inclusive."""
        return np.linspace(0.0, self.max_frequency, self.frequency_samples)

    @property
    def cutoff_frequency(self) -> float:
        """Incoherent cutoff d/lambda, converted to cpd."""
        return self.pupil_diameter / self.wavelength / CYCLES_PER_RADIAN_PER_CPD


@dataclass(frozen=True)
class AberrationSpec:
    zernike_coefficients: tuple[tuple[int, float], ...] = ()
    seidel_field_curvature: float = 0.0

    def __post_init__(self):
        pairs = []
        for j, value in self.zernike_coefficients:
            zk.ansi_to_nm(j)
            value = float(value)
            if not math.isfinite(value):
                raise ValueError(f"Zernike coefficient {j} is not finite")
            pairs.append((int(j), value))
        object.__setattr__(self, "zernike_coefficients", tuple(pairs))
        curvature = float(self.seidel_field_curvature)
        if not math.isfinite(curvature):
            raise ValueError("seidel_field_curvature must be finite")
        object.__setattr__(self, "seidel_field_curvature", curvature)

    @property
    def is_quadratic(self) -> bool:
        """True when the pupil phase is pure piston plus defocus."""
        return all(v == 0.0 or j in (0, 4) for j, v in self.zernike_coefficients)

    def coefficient(self, j: int) -> float:
        return sum(v for k, v in self.zernike_coefficients if k == j)


NO_ABERRATION = AberrationSpec()


@dataclass(frozen=True, eq=False)
class Otf:
    frequencies: np.ndarray
    values: np.ndarray
    source_depth: float
    image_depth: float

    @property
    def mtf(self) -> np.ndarray:
        return np.abs(self.values)

    @property
    def defocus(self) -> float:
        return self.source_depth - self.image_depth


def defocus_wavefront(delta, config: OpticalConfig):
    """Pupil-edge defocus OPD in meters for a dioptric defocus ``delta``."""
    return np.asarray(delta) * config.pupil_radius**2 / 2.0


def zernike_equivalent_defocus(aberr: AberrationSpec, config: OpticalConfig, wavelength=None) -> float:
    # sqrt(3)(2 rho^2 - 1): the rho^2 part is a W20 of 2*sqrt(3)*a waves
    wavelength = config.wavelength if wavelength is None else wavelength
    w20 = 2.0 * math.sqrt(3.0) * aberr.coefficient(4) * wavelength
    return 2.0 * w20 / config.pupil_radius**2


def required_pupil_grid(delta: float, config: OpticalConfig, aberr: AberrationSpec = NO_ABERRATION) -> int:
    """Smallest pupil grid that samples the autocorrelation integrand at the band edge.

    At frequency f the defocus part of the integrand is a tilt with
    ``|delta| * d * f`` cycles across the pupil; four samples per cycle are
    required. Non-defocus Zernike terms are not included in the estimate.
    """
    total = abs(delta + zernike_equivalent_defocus(aberr, config))
    cycles = total * config.pupil_diameter * config.max_frequency * CYCLES_PER_RADIAN_PER_CPD
    need = max(64, int(math.ceil(4.0 * cycles)))
    return need + (need % 2)


def _check_sampling(delta, config, aberr):
    need = required_pupil_grid(delta, config, aberr)
    if config.pupil_grid < need:
        raise SamplingError(
            f"defocus of {delta:+.4f} D aliases on a {config.pupil_grid}-sample pupil grid "
            f"up to {config.max_frequency} cpd; pupil_grid >= {need} required"
        )


@lru_cache(maxsize=None)
def _gauss_legendre_unit(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def _half_lens_u(shift: float, radius: float, order: int):
    """Nodes on 0 <= u <= R - s/2 with the sqrt endpoint removed by u = x0 (1 - t^2)."""
    x, w = _gauss_legendre_unit(order)
    t = 0.5 * (x + 1.0)
    wt = 0.5 * w
    x0 = radius - shift / 2.0
    u = x0 * (1.0 - t * t)
    du = 2.0 * x0 * t * wt
    half_height = np.sqrt(np.maximum(radius**2 - (u + shift / 2.0) ** 2, 0.0))
    return u, du, half_height


def _quadratic_profile(delta: float, freqs_rad: np.ndarray, wavelength: float, radius: float, order: int) -> np.ndarray:
    """Real OTF of a circular pupil with pure defocus (1-D reduced integral)."""
    freqs_rad = np.asarray(freqs_rad, dtype=float)
    _, du0, hh0 = _half_lens_u(0.0, radius, order)
    norm = 4.0 * np.sum(hh0 * du0)
    f = freqs_rad.ravel()
    inside = wavelength * f < 2.0 * radius
    fi = f[inside][:, None]
    shift = wavelength * fi
    x, w = _gauss_legendre_unit(order)
    t = 0.5 * (x + 1.0)
    x0 = radius - shift / 2.0
    u = x0 * (1.0 - t * t)
    du = 2.0 * x0 * t * (0.5 * w)
    hh = np.sqrt(np.maximum(radius**2 - (u + shift / 2.0) ** 2, 0.0))
    # product phase of the two shifted pupils is a tilt of 2*pi*delta*f rad/m
    out = np.zeros(f.shape)
    out[inside] = 4.0 * np.sum(hh * du * np.cos(2.0 * math.pi * delta * fi * u), axis=1) / norm
    out[f == 0.0] = 1.0
    return out.reshape(freqs_rad.shape)


def _general_values(delta, fx_rad, fy_rad, wavelength, config: OpticalConfig, aberr: AberrationSpec) -> np.ndarray:
    """Complex OTF by 2-D quadrature over the pupil overlap for arbitrary Zernike phase."""
    radius = config.pupil_radius
    order_u = config.pupil_grid // 2
    order_v = config.pupil_grid // 2
    xv, wv = _gauss_legendre_unit(order_v)
    w20_waves = float(defocus_wavefront(delta, config)) / wavelength
    coeffs = aberr.zernike_coefficients

    def waves(px, py):
        w = w20_waves * (px * px + py * py)
        if coeffs:
            w = w + zk.wavefront_waves(coeffs, px, py)
        return w

    def lens_sum(shift, cos_t, sin_t):
        u, du, hh = _half_lens_u(shift, radius, order_u)
        u = np.concatenate([u, -u])
        du = np.concatenate([du, du])
        hh = np.concatenate([hh, hh])
        uu = u[:, None]
        vv = hh[:, None] * xv[None, :]
        wts = du[:, None] * hh[:, None] * wv[None, :]
        a = (uu + shift / 2.0) / radius
        b = (uu - shift / 2.0) / radius
        vn = vv / radius
        p_x, p_y = a * cos_t - vn * sin_t, a * sin_t + vn * cos_t
        m_x, m_y = b * cos_t - vn * sin_t, b * sin_t + vn * cos_t
        phase = 2.0 * math.pi * (waves(p_x, p_y) - waves(m_x, m_y))
        return np.sum(wts * np.exp(1j * phase))

    norm = lens_sum(0.0, 1.0, 0.0).real
    fx_rad = np.asarray(fx_rad, dtype=float)
    fy_rad = np.asarray(fy_rad, dtype=float)
    out = np.zeros(np.broadcast(fx_rad, fy_rad).shape, dtype=complex)
    for idx in np.ndindex(out.shape):
        fx, fy = fx_rad[idx] if fx_rad.ndim else fx_rad, fy_rad[idx] if fy_rad.ndim else fy_rad
        f = math.hypot(fx, fy)
        if f == 0.0:
            out[idx] = 1.0
            continue
        shift = wavelength * f
        if shift >= 2.0 * radius:
            continue
        out[idx] = lens_sum(shift, fx / f, fy / f) / norm
    return out


def _delta_key(delta: float) -> float:
    return round(float(delta), _DELTA_DECIMALS) + 0.0


@lru_cache(maxsize=4096)
def _radial_profile_cached(delta: float, config: OpticalConfig, aberr: AberrationSpec) -> np.ndarray:
    freqs_rad = config.frequencies * CYCLES_PER_RADIAN_PER_CPD
    if aberr.is_quadratic:
        eff = delta + zernike_equivalent_defocus(aberr, config)
        values = _quadratic_profile(eff, freqs_rad, config.wavelength, config.pupil_radius, config.pupil_grid // 2)
        values = values.astype(complex)
    else:
        values = _general_values(delta, freqs_rad, np.zeros_like(freqs_rad), config.wavelength, config, aberr)
    values.flags.writeable = False
    return values


def otf_profile(delta: float, config: OpticalConfig, aberr: AberrationSpec = NO_ABERRATION) -> np.ndarray:
    """OTF values on ``config.frequencies`` along the +fx axis for defocus ``delta`` (diopters)."""
    delta = _delta_key(delta)
    _check_sampling(delta, config, aberr)
    return _radial_profile_cached(delta, config, aberr)


def diffraction_limited_otf(config: OpticalConfig = OpticalConfig()) -> Otf:
    values = otf_profile(0.0, config)
    return Otf(config.frequencies, values, 0.0, 0.0)


def defocus_otf(z_s: float, z_img: float, config: OpticalConfig = OpticalConfig(),
                aberr: AberrationSpec = NO_ABERRATION) -> Otf:
    """OTF seen when accommodated at ``z_s`` for a point imaged at ``z_img`` (both diopters)."""
    if not (math.isfinite(z_s) and math.isfinite(z_img)):
        raise ValueError("depths must be finite")
    values = otf_profile(z_s - z_img, config, aberr)
    return Otf(config.frequencies, values, float(z_s), float(z_img))


def pupil_coordinates(config: OpticalConfig):
    """Pixel-center coordinates on the unit pupil for a ``pupil_grid`` square."""
    n = config.pupil_grid
    x = (np.arange(n) - (n - 1) / 2.0) / (n / 2.0)
    xx, yy = np.meshgrid(x, x)
    return xx, yy


def zernike_phase(coeffs, config: OpticalConfig = OpticalConfig()) -> np.ndarray:
    """Pupil phase in radians from ANSI-indexed coefficients in waves.

    Points outside the unit pupil are set to zero.
    """
    coeffs = AberrationSpec(tuple(coeffs)).zernike_coefficients
    xx, yy = pupil_coordinates(config)
    inside = xx**2 + yy**2 <= 1.0
    phase = 2.0 * math.pi * zk.wavefront_waves(coeffs, xx, yy)
    return np.where(inside, phase, 0.0)


def pupil_function(delta: float, config: OpticalConfig = OpticalConfig(),
                   aberr: AberrationSpec = NO_ABERRATION) -> np.ndarray:
    """Sampled generalized pupil (complex) on the ``pupil_grid`` square."""
    xx, yy = pupil_coordinates(config)
    inside = xx**2 + yy**2 <= 1.0
    w20_waves = float(defocus_wavefront(delta, config)) / config.wavelength
    phase = 2.0 * math.pi * w20_waves * (xx**2 + yy**2) + zernike_phase(aberr.zernike_coefficients, config)
    return np.where(inside, np.exp(1j * phase), 0.0)


def field_curvature_offset(field_fraction, aberr: AberrationSpec, config: OpticalConfig = OpticalConfig()):
    """Dioptric image-depth shift produced by Seidel field curvature at a field position.

    ``seidel_field_curvature`` is W220 in waves at full field. The OPD grows
    with the square of the field fraction and maps back to diopters through
    W20 = delta * (d/2)^2 / 2.
    """
    ff = np.asarray(field_fraction, dtype=float)
    opd = aberr.seidel_field_curvature * config.wavelength * ff**2
    offset = 2.0 * opd / config.pupil_radius**2
    return float(offset) if offset.ndim == 0 else offset


def _radial_samples(delta_eff: float, f_max_rad: float, radius: float) -> np.ndarray:
    # 128 samples per oscillation period 1/(|delta| R) keeps linear interpolation below ~3e-4
    period = 1.0 / max(abs(delta_eff) * radius, 1e-12)
    step = min(period / 128.0, max(f_max_rad, 1.0) / 256.0)
    count = int(math.ceil(f_max_rad / step)) + 2
    return np.linspace(0.0, step * (count - 1), count)


def otf_radial(delta: float, rad_cpd: np.ndarray, config: OpticalConfig = OpticalConfig(),
               aberr: AberrationSpec = NO_ABERRATION, wavelength: float | None = None) -> np.ndarray:
    """OTF at radial frequencies ``rad_cpd`` for a rotationally symmetric pupil.

    The profile is computed on a dense radial lattice and linearly
    interpolated. Pure-defocus pupils return a real array.
    """
    if not zk.is_rotationally_symmetric(aberr.zernike_coefficients):
        raise ValueError("otf_radial needs a rotationally symmetric pupil")
    wavelength = config.wavelength if wavelength is None else wavelength
    delta = _delta_key(delta)
    rad = np.asarray(rad_cpd, dtype=float) * CYCLES_PER_RADIAN_PER_CPD
    f_max = float(rad.max()) if rad.size else 0.0
    radius = config.pupil_radius
    if aberr.is_quadratic:
        eff = delta + zernike_equivalent_defocus(aberr, config, wavelength)
        r = _radial_samples(eff, f_max, radius)
        prof = _quadratic_profile(eff, r, wavelength, radius, config.pupil_grid // 2)
        return np.interp(rad, r, prof)
    r = _radial_samples(delta, f_max, radius)
    prof = _general_values(delta, r, np.zeros_like(r), wavelength, config, aberr)
    return np.interp(rad, r, prof.real) + 1j * np.interp(rad, r, prof.imag)


def otf_on_grid(delta: float, fx_cpd: np.ndarray, fy_cpd: np.ndarray, config: OpticalConfig = OpticalConfig(),
                aberr: AberrationSpec = NO_ABERRATION, wavelength: float | None = None) -> np.ndarray:
    """OTF sampled on an arbitrary 2-D frequency grid (cpd), e.g. FFT bins of an image.

    Rotationally symmetric pupils go through :func:`otf_radial`; other
    pupils are tabulated on a polar lattice and interpolated bilinearly in
    (|f|, angle) using the Hermitian symmetry H(-f) = conj H(f).
    """
    fx_cpd, fy_cpd = np.broadcast_arrays(np.asarray(fx_cpd, dtype=float), np.asarray(fy_cpd, dtype=float))
    rad_cpd = np.hypot(fx_cpd, fy_cpd)
    if zk.is_rotationally_symmetric(aberr.zernike_coefficients):
        return otf_radial(delta, rad_cpd, config, aberr, wavelength)
    from scipy.interpolate import RegularGridInterpolator

    wavelength = config.wavelength if wavelength is None else wavelength
    delta = _delta_key(delta)
    rad = rad_cpd * CYCLES_PER_RADIAN_PER_CPD
    r = _radial_samples(delta, float(rad.max()), config.pupil_radius)[::4]
    r = np.append(r, r[-1] + (r[1] - r[0]))
    angles = np.linspace(0.0, math.pi, 17)
    rr, aa = np.meshgrid(r, angles, indexing="ij")
    table = _general_values(delta, rr * np.cos(aa), rr * np.sin(aa), wavelength, config, aberr)
    theta = np.arctan2(fy_cpd, fx_cpd)
    flip = theta < 0
    theta = np.where(flip, theta + math.pi, theta)
    interp_re = RegularGridInterpolator((r, angles), table.real)
    interp_im = RegularGridInterpolator((r, angles), table.imag)
    pts = np.stack([np.minimum(rad, r[-1]), np.clip(theta, 0.0, math.pi)], axis=-1)
    out = interp_re(pts) + 1j * interp_im(pts)
    return np.where(flip, np.conj(out), out)


class OtfBank:
    """Immutable table of OTFs over accommodation planes x layer depths.

    ``values[i, j]`` is H(f; accommodation_depths[i], layer_depths[j]) on the
    fixed frequency grid. Entries depend only on the defocus difference, so
    each distinct difference is computed once; ``workers`` threads may share
    that work without changing the assembled table.
    """

    def __init__(self, accommodation_depths, layer_depths, config: OpticalConfig = OpticalConfig(),
                 aberrations: AberrationSpec = NO_ABERRATION, workers: int = 1):
        acc = np.array(accommodation_depths, dtype=float)
        lay = np.array(layer_depths, dtype=float)
        for name, arr in (("accommodation_depths", acc), ("layer_depths", lay)):
            if arr.ndim != 1 or arr.size == 0:
                raise ValueError(f"{name} must be a non-empty 1-D sequence")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            if np.any(np.diff(arr) <= 0):
                raise ValueError(f"{name} must be strictly increasing")
        self.config = config
        self.aberrations = aberrations
        acc.flags.writeable = False
        lay.flags.writeable = False
        self.accommodation_depths = acc
        self.layer_depths = lay

        keys = np.vectorize(_delta_key)(acc[:, None] - lay[None, :])
        unique = sorted(set(keys.ravel().tolist()))
        for d in (unique[0], unique[-1]):
            _check_sampling(d, config, aberrations)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                profiles = list(pool.map(lambda d: otf_profile(d, config, aberrations), unique))
        else:
            profiles = [otf_profile(d, config, aberrations) for d in unique]
        lookup = dict(zip(unique, profiles))
        table = np.empty(keys.shape + (config.frequency_samples,), dtype=complex)
        for idx in np.ndindex(keys.shape):
            table[idx] = lookup[keys[idx]]
        table.flags.writeable = False
        self._values = table

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def frequencies(self) -> np.ndarray:
        return self.config.frequencies

    @property
    def shape(self) -> tuple[int, int]:
        return self._values.shape[:2]

    def otf(self, i: int, j: int) -> Otf:
        return Otf(self.frequencies, self._values[i, j], float(self.accommodation_depths[i]),
                   float(self.layer_depths[j]))

    def target(self, image_depth: float) -> np.ndarray:
        """OTFs H(f; z_i^s, image_depth) for every accommodation plane, shape (m, F)."""
        return np.stack([otf_profile(z - image_depth, self.config, self.aberrations)
                         for z in self.accommodation_depths])
