"""Retinal-image and focal-stack simulation, contrast maps and contrast errors."""

from __future__ import annotations

import hashlib
import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .layers import accommodation_grid
from .optics import (NO_ABERRATION, AberrationSpec, OpticalConfig, _delta_key, field_curvature_offset, otf_on_grid,
                     otf_radial)
from .zernike import is_rotationally_symmetric
from .perception import csf_weight
from .render import BacklightSequence, field_fraction_map
from .strategy import ProblemTemplate, StrategyTable


_OTF_CACHE_SIZE = 256


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class SimulationConfig:
    accommodation_depths: tuple[float, ...] = tuple(accommodation_grid(7))
    optics: OpticalConfig = OpticalConfig()
    aberrations: AberrationSpec = NO_ABERRATION
    dc_noise: float = 0.0
    field_of_view: float = 30.0  # degrees across the image width
    normalization: str = "per_pixel"
    per_channel_wavelength: bool = False
    field_zones: int = 16
    output_dir: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "accommodation_depths", tuple(float(z) for z in self.accommodation_depths))
        if not self.accommodation_depths:
            raise ValueError("at least one accommodation depth is required")
        if self.dc_noise < 0:
            raise ValueError("dc_noise must be non-negative")
        if self.normalization not in ("per_pixel", "cycle"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.field_of_view <= 0:
            raise ValueError("field_of_view must be positive")
        if self.field_zones < 2:
            raise ValueError("field_zones must be >= 2")

    def optics_hash(self) -> str:
        blob = json.dumps({"optics": asdict(self.optics), "aberrations": asdict(self.aberrations),
                           "fov": self.field_of_view, "c": self.dc_noise, "norm": self.normalization,
                           "per_channel": self.per_channel_wavelength, "zones": self.field_zones},
                          sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class FocalStack:
    depths: np.ndarray
    images: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        d = np.asarray(self.depths, dtype=float)
        if np.any(np.diff(d) <= 0):
            raise ValueError("focal-stack depths must be strictly increasing")
        shapes = {np.shape(im) for im in self.images}
        if len(shapes) > 1:
            raise ValueError("focal-stack images must share dimensions")
        object.__setattr__(self, "depths", d)

    def __len__(self):
        return len(self.images)


def _mirror(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    return np.pad(img, ((0, h), (0, w)), mode="symmetric")


class RetinalSimulator:
    """Incoherent superposition of per-subframe layer images through defocus OTFs.

    Each subframe contributes ``(mask_k + c) * display`` imaged at its layer
    depth. With ``normalization="per_pixel"`` every source pixel is divided
    by its own illumination time A before blurring, so the output keeps the
    display's mean; ``"cycle"`` divides by the subframe count instead and
    reports time-averaged luminance. Convolution runs on the image mirrored
    to twice its size, which is exact symmetric boundary handling.
    """

    def __init__(self, seq: BacklightSequence, config: SimulationConfig):
        if seq.masks.shape[0] != seq.schedule.subframes_per_cycle:
            raise ManifestError("sequence is missing masks for scheduled subframes")
        self.seq = seq
        self.config = config
        img = np.asarray(seq.display_image, dtype=float)
        self.channels = img[:, :, None] if img.ndim == 2 else img
        self.gray = img.ndim == 2
        h, w = seq.masks.shape[1:]
        self.shape = (h, w)
        self.pitch = config.field_of_view / w
        self.fx = np.fft.rfftfreq(2 * w, d=self.pitch)[None, :]
        self.fy = np.fft.fftfreq(2 * h, d=self.pitch)[:, None]
        rad = np.hypot(self.fx, self.fy)
        self._radii, self._radius_index = np.unique(rad, return_inverse=True)
        self._radius_index = self._radius_index.reshape(rad.shape)

        c = config.dc_noise
        active = [k for k, j in enumerate(seq.schedule.layer_index) if j >= 0]
        if not active:
            raise ManifestError("schedule shows no layers")
        lit = seq.masks[active].astype(float)
        if config.normalization == "per_pixel":
            norm = lit.sum(axis=0) + c * len(active)
            if np.any(norm <= 0):
                raise ManifestError("pixel with zero illumination time and no DC noise")
        else:
            norm = np.full(self.shape, float(seq.schedule.subframes_per_cycle))
        self.norm = norm

        # one spectrum per distinct layer depth and channel; independent of accommodation
        weights: dict[int, np.ndarray] = {}
        for k in active:
            j = seq.schedule.layer_index[k]
            wk = (seq.masks[k] + c) / norm
            weights[j] = weights.get(j, 0.0) + wk
        self.layers = sorted(weights)
        self.spectra = {
            j: [np.fft.rfft2(_mirror(weights[j] * self.channels[:, :, ch])) for ch in range(self.channels.shape[2])]
            for j in self.layers
        }
        self._otf_cache: OrderedDict = OrderedDict()

        aberr = config.aberrations
        if aberr.seidel_field_curvature != 0.0:
            offsets = field_curvature_offset(field_fraction_map(self.shape), aberr, config.optics)
            lo, hi = float(offsets.min()), float(offsets.max())
            self.zone_offsets = np.linspace(lo, hi, config.field_zones)
            self.pixel_offsets = offsets
        else:
            self.zone_offsets = np.array([0.0])
            self.pixel_offsets = None
        self._pupil_aberr = AberrationSpec(aberr.zernike_coefficients)

    def _wavelength(self, ch: int) -> float:
        opt = self.config.optics
        if self.config.per_channel_wavelength and self.channels.shape[2] == len(opt.channel_wavelengths):
            return opt.channel_wavelengths[ch]
        return opt.wavelength

    def _otf(self, delta: float, wavelength: float) -> np.ndarray:
        key = (_delta_key(delta), wavelength)
        if key in self._otf_cache:
            self._otf_cache.move_to_end(key)
        else:
            optics, aberr = self.config.optics, self._pupil_aberr
            if is_rotationally_symmetric(aberr.zernike_coefficients):
                prof = otf_radial(delta, self._radii, optics, aberr, wavelength)
                otf = prof[self._radius_index]
            else:
                otf = otf_on_grid(delta, self.fx, self.fy, optics, aberr, wavelength=wavelength)
            self._otf_cache[key] = otf
            if len(self._otf_cache) > _OTF_CACHE_SIZE:
                self._otf_cache.popitem(last=False)
        return self._otf_cache[key]

    def _image_for_offset(self, z_s: float, offset: float) -> np.ndarray:
        h, w = self.shape
        out = np.empty(self.shape + (self.channels.shape[2],))
        depths = self.seq.schedule.layer_depths
        for ch in range(self.channels.shape[2]):
            lam = self._wavelength(ch)
            acc = np.zeros((2 * h, w + 1), dtype=complex)
            for j in self.layers:
                acc += self.spectra[j][ch] * self._otf(z_s - (depths[j] + offset), lam)
            out[:, :, ch] = np.fft.irfft2(acc, s=(2 * h, 2 * w))[:h, :w]
        return out

    def image(self, z_s: float) -> np.ndarray:
        if self.pixel_offsets is None:
            out = self._image_for_offset(z_s, 0.0)
        else:
            zones = self.zone_offsets
            pos = np.interp(self.pixel_offsets, zones, np.arange(len(zones)))
            lower = np.minimum(np.floor(pos).astype(int), len(zones) - 2)
            t = (pos - lower)[:, :, None]
            out = np.zeros(self.shape + (self.channels.shape[2],))
            for z in range(len(zones)):
                wz = np.where(lower == z, 1.0 - t[:, :, 0], 0.0) + np.where(lower + 1 == z, t[:, :, 0], 0.0)
                if np.any(wz):
                    out += wz[:, :, None] * self._image_for_offset(z_s, float(zones[z]))
        return out[:, :, 0] if self.gray else out


def simulate_retinal_image(seq: BacklightSequence, z_s: float, config: SimulationConfig) -> np.ndarray:
    """Retinal image when accommodated at ``z_s`` diopters; unclipped."""
    return RetinalSimulator(seq, config).image(z_s)


def simulate_focal_stack(seq: BacklightSequence, depths: Sequence[float], config: SimulationConfig,
                         manifest_id: str = "") -> FocalStack:
    depths = [float(z) for z in depths]
    if not depths:
        raise ValueError("focal stack needs at least one accommodation depth")
    sim = RetinalSimulator(seq, config)
    images = [sim.image(z) for z in depths]
    meta = {"manifest_id": manifest_id or seq.table_id, "optics_hash": config.optics_hash()}
    return FocalStack(np.array(depths), images, meta)


def band_limited_contrast(image: np.ndarray, pitch_deg: float, center_cpd: float, window_sigma: float = None) -> np.ndarray:
    """Local band-limited contrast: one-octave band-pass over the local low-pass mean.

    The band is a raised-cosine in log frequency centered at ``center_cpd``;
    the magnitude is RMS-pooled with a Gaussian window (``window_sigma``
    pixels, default one period of the band center).
    """
    from scipy.ndimage import gaussian_filter

    img = np.asarray(image, dtype=float)
    if img.ndim == 3:
        img = img.mean(axis=2)
    h, w = img.shape
    ext = _mirror(img)
    fx = np.fft.fftfreq(2 * w, d=pitch_deg)[None, :]
    fy = np.fft.fftfreq(2 * h, d=pitch_deg)[:, None]
    f = np.hypot(fx, fy)
    with np.errstate(divide="ignore"):
        octaves = np.log2(np.where(f > 0, f, 1e-12) / center_cpd)
    band = np.where(np.abs(octaves) < 1.0, 0.5 * (1.0 + np.cos(np.pi * octaves)), 0.0)
    # everything below the band: the lower neighbour's raised-cosine tail plus a flat floor
    low = np.where(octaves <= -1.0, 1.0,
                   np.where(octaves < 0.0, 0.5 * (1.0 + np.cos(np.pi * (octaves + 1.0))), 0.0))
    spec = np.fft.fft2(ext)
    bp = np.fft.ifft2(spec * band).real[:h, :w]
    lp = np.fft.ifft2(spec * low).real[:h, :w]
    contrast = bp / np.maximum(np.abs(lp), 1e-9)
    sigma = window_sigma if window_sigma is not None else 1.0 / (center_cpd * pitch_deg)
    return np.sqrt(gaussian_filter(contrast**2, sigma, mode="reflect"))


@dataclass(frozen=True, eq=False)
class ContrastMap:
    target_depths: np.ndarray
    accommodation_depths: np.ndarray
    values: np.ndarray  # (targets, accommodation planes)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.target_depths), len(self.accommodation_depths)):
            raise ValueError("contrast-map values must match the depth grids")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "target_depths", np.asarray(self.target_depths, dtype=float))
        object.__setattr__(self, "accommodation_depths", np.asarray(self.accommodation_depths, dtype=float))


def _reduce(mtf: np.ndarray, weights: np.ndarray, freqs: np.ndarray, reduction) -> np.ndarray:
    if reduction == "mean":
        return mtf @ weights / weights.sum()
    if reduction == "max":
        return (mtf * weights).max(axis=-1) / weights.max()
    if isinstance(reduction, (int, float)):
        k = int(np.argmin(np.abs(freqs - float(reduction))))
        return mtf[..., k]
    raise ValueError(f"unknown contrast reduction {reduction!r}")


def _normalized(values: np.ndarray) -> np.ndarray:
    peak = values.max()
    return values / peak if peak > 0 else values


def contrast_map(table: StrategyTable, template: ProblemTemplate, reduction="mean") -> ContrastMap:
    """CSF-weighted contrast of each table entry at every accommodation plane, max-normalized.

    ``reduction`` is ``"mean"`` (CSF-weighted mean of |P|), ``"max"``, or a
    frequency in cpd for a single-frequency slice.
    """
    bank = template.bank
    if not np.allclose(table.layer_depths, bank.layer_depths, rtol=0, atol=1e-12):
        raise ValueError("table and problem template use different layer grids")
    V = csf_weight(bank.frequencies, template.csf)
    b = table.bits.astype(float)
    w = (b + template.dc_noise) / (b.sum(axis=1, keepdims=True) + template.dc_noise * b.shape[1])
    P = np.einsum("tj,ijf->tif", w, bank.values)
    values = _reduce(np.abs(P), V, bank.frequencies, reduction)
    return ContrastMap(table.target_depths, bank.accommodation_depths, _normalized(values))


def ideal_contrast_map(template: ProblemTemplate, target_depths, reduction="mean") -> ContrastMap:
    """Contrast of a true point at each target depth, |H(z_s, z_d)|, max-normalized."""
    bank = template.bank
    V = csf_weight(bank.frequencies, template.csf)
    H = np.stack([bank.target(z) for z in target_depths])
    values = _reduce(np.abs(H), V, bank.frequencies, reduction)
    return ContrastMap(np.asarray(target_depths, dtype=float), bank.accommodation_depths, _normalized(values))


def contrast_error(cmap: ContrastMap, target: ContrastMap) -> np.ndarray:
    """Signed per-cell difference ``target - reconstructed``."""
    if (cmap.values.shape != target.values.shape
            or not np.allclose(cmap.target_depths, target.target_depths)
            or not np.allclose(cmap.accommodation_depths, target.accommodation_depths)):
        raise ValueError("contrast maps are on different grids")
    return target.values - cmap.values
