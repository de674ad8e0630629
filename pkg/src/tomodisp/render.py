"""Compile RGB-D scenes into per-subframe binary backlight masks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .layers import nearest_layer
from .optics import AberrationSpec, OpticalConfig, field_curvature_offset
from .strategy import ProblemTemplate, StrategyTable, batch_cost


class ConfigurationError(ValueError):
    pass


class InfeasibleScheduleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RgbdScene:
    color: np.ndarray
    depth: np.ndarray

    def __post_init__(self):
        color = np.asarray(self.color, dtype=float)
        depth = np.asarray(self.depth, dtype=float)
        if depth.ndim != 2:
            raise ValueError("depth map must be 2-D")
        if color.shape[:2] != depth.shape or color.ndim not in (2, 3):
            raise ValueError(f"color {color.shape} and depth {depth.shape} dimensions differ")
        if not np.all(np.isfinite(depth)):
            raise ValueError("depth values must be finite")
        if np.any(color < 0) or np.any(color > 1):
            raise ValueError("color intensities must lie in [0, 1]")
        object.__setattr__(self, "color", color)
        object.__setattr__(self, "depth", depth)

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


@dataclass(frozen=True)
class SubframeSchedule:
    """Layer shown in each subframe of one cycle; -1 marks a blank subframe."""

    layer_index: tuple[int, ...]
    layer_depths: tuple[float, ...]
    waveform: str = "ramp"
    cycle_rate: float = 60.0

    @property
    def subframes_per_cycle(self) -> int:
        return len(self.layer_index)

    @property
    def subframe_rate(self) -> float:
        return self.cycle_rate * self.subframes_per_cycle

    @property
    def schedule_id(self) -> str:
        return f"{self.waveform}-{len(self.layer_depths)}x{self.subframes_per_cycle}@{self.cycle_rate:g}Hz"

    def depth_of(self, k: int) -> Optional[float]:
        j = self.layer_index[k]
        return None if j < 0 else self.layer_depths[j]

    def to_dict(self) -> dict:
        return {
            "waveform": self.waveform,
            "cycle_rate": self.cycle_rate,
            "subframes_per_cycle": self.subframes_per_cycle,
            "subframe_rate": self.subframe_rate,
            "layer_index": list(self.layer_index),
            "layer_depths": list(self.layer_depths),
            "schedule_id": self.schedule_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubframeSchedule":
        return cls(tuple(int(i) for i in d["layer_index"]), tuple(float(z) for z in d["layer_depths"]),
                   d.get("waveform", "ramp"), float(d.get("cycle_rate", 60.0)))


def build_subframe_schedule(waveform: str, cycle_rate: float, layer_depths,
                            subframes_per_cycle: Optional[int] = None) -> SubframeSchedule:
    """Map subframes of one cycle to layers.

    ``ramp`` shows layer k in subframe k. ``triangle`` shows the odd layers
    (1st, 3rd, ...) on the ascending half-sweep and the even layers on the
    descending one, so each layer appears once per cycle. Surplus subframes
    are left blank at the end of each sweep.
    """
    depths = tuple(float(z) for z in layer_depths)
    n = len(depths)
    s = n if subframes_per_cycle is None else int(subframes_per_cycle)
    if s < n:
        raise InfeasibleScheduleError(f"{s} subframes per cycle cannot show {n} layers")
    if cycle_rate <= 0:
        raise ValueError("cycle_rate must be positive")
    if waveform == "ramp":
        index = list(range(n)) + [-1] * (s - n)
    elif waveform == "triangle":
        up = list(range(0, n, 2))
        down = list(range(1, n, 2))[::-1]
        half = (s + 1) // 2
        if len(up) > half or len(down) > s - half:
            raise InfeasibleScheduleError(f"{s} subframes cannot split {n} layers over two half-sweeps")
        index = up + [-1] * (half - len(up)) + down + [-1] * (s - half - len(down))
    else:
        raise ValueError(f"unknown waveform {waveform!r}; expected 'ramp' or 'triangle'")
    return SubframeSchedule(tuple(index), depths, waveform, float(cycle_rate))


@dataclass(frozen=True, eq=False)
class BacklightSequence:
    masks: np.ndarray  # (subframes, H, W) bool
    display_image: np.ndarray
    schedule: SubframeSchedule
    table_id: str = ""

    def __post_init__(self):
        masks = np.asarray(self.masks, dtype=bool)
        if masks.ndim != 3 or masks.shape[1:] != np.asarray(self.display_image).shape[:2]:
            raise ValueError("mask dimensions must equal display dimensions")
        if masks.shape[0] != self.schedule.subframes_per_cycle:
            raise ValueError("one mask per scheduled subframe is required")
        object.__setattr__(self, "masks", masks)

    @property
    def layer_depths(self) -> tuple[float, ...]:
        return self.schedule.layer_depths

    def lit_counts(self) -> np.ndarray:
        return self.masks.sum(axis=0)


@dataclass(frozen=True)
class DepthQuantization:
    index: np.ndarray
    clamp_count: int


def quantize_depth(scene: RgbdScene, layer_depths) -> DepthQuantization:
    """Nearest-layer index per pixel; out-of-range depths clamp and are counted."""
    idx, clamped = nearest_layer(scene.depth, layer_depths)
    return DepthQuantization(idx, int(np.count_nonzero(clamped)))


def _check_table(table: StrategyTable, schedule: SubframeSchedule):
    n = len(schedule.layer_depths)
    if table.bits.shape[1] != n or not np.allclose(table.layer_depths, schedule.layer_depths, rtol=0, atol=1e-12):
        raise ConfigurationError("strategy table and schedule use different layer grids")
    if len(table) != n or not np.allclose(table.target_depths, table.layer_depths, rtol=0, atol=1e-12):
        raise ConfigurationError("strategy table must hold one entry per layer depth")


def _masks_from_rows(row_bits: np.ndarray, schedule: SubframeSchedule) -> np.ndarray:
    # row_bits: (H, W, n) per-pixel strategy bits
    h, w = row_bits.shape[:2]
    masks = np.zeros((schedule.subframes_per_cycle, h, w), dtype=bool)
    for k, j in enumerate(schedule.layer_index):
        if j >= 0:
            masks[k] = row_bits[:, :, j].astype(bool)
    return masks


def render_backlight_sequence(scene: RgbdScene, table: StrategyTable, schedule: SubframeSchedule) -> BacklightSequence:
    _check_table(table, schedule)
    q = quantize_depth(scene, table.layer_depths)
    masks = _masks_from_rows(table.bits[q.index], schedule)
    return BacklightSequence(masks, scene.color, schedule, table.table_id)


@dataclass(frozen=True, eq=False)
class HdrOptions:
    """Per-pixel luminance ratio; ``mode="linear"`` maps a [0, 1] map onto [0.5, 1.5]."""

    intensity_map: np.ndarray
    mode: str = "ratio"

    def ratio(self) -> np.ndarray:
        m = np.asarray(self.intensity_map, dtype=float)
        if self.mode == "linear":
            m = 0.5 + np.clip(m, 0.0, 1.0)
        elif self.mode != "ratio":
            raise ValueError(f"unknown HDR scaling mode {self.mode!r}")
        return np.clip(m, 0.5, 1.5)


def hdr_count_bounds(a_opt, n: int):
    a = np.asarray(a_opt)
    lo = np.maximum(np.ceil(0.5 * a), 1).astype(int)
    hi = np.maximum(np.minimum(np.floor(1.5 * a), n), lo).astype(int)
    return lo, hi


def hdr_counts(ratio: np.ndarray, a_opt: np.ndarray, n: int) -> np.ndarray:
    lo, hi = hdr_count_bounds(a_opt, n)
    k = np.floor(ratio * a_opt + 0.5).astype(int)
    return np.clip(k, lo, hi)


def greedy_chain(bits: np.ndarray, problem, lo: int, hi: int) -> dict[int, np.ndarray]:
    """Bitstrings for lit counts lo..hi grown or pruned one subframe at a time.

    Each step flips the single bit whose flip gives the lowest cost,
    lowest layer index on ties.
    """
    base = np.asarray(bits, dtype=np.uint8)
    chain = {int(base.sum()): base}
    cur = base
    while cur.sum() < hi:
        off = np.nonzero(cur == 0)[0]
        cands = np.repeat(cur[None], len(off), axis=0)
        cands[np.arange(len(off)), off] = 1
        cur = cands[int(np.argmin(batch_cost(cands, problem)))]
        chain[int(cur.sum())] = cur
    cur = base
    while cur.sum() > lo:
        on = np.nonzero(cur == 1)[0]
        cands = np.repeat(cur[None], len(on), axis=0)
        cands[np.arange(len(on)), on] = 0
        cur = cands[int(np.argmin(batch_cost(cands, problem)))]
        chain[int(cur.sum())] = cur
    return chain


def render_hdr_sequence(scene: RgbdScene, table: StrategyTable, schedule: SubframeSchedule, hdr: HdrOptions,
                        template: ProblemTemplate) -> BacklightSequence:
    """Scale each pixel's lit-subframe count by its desired luminance ratio.

    Counts are ``round(ratio * A_opt)`` clamped to [ceil(A/2), floor(3A/2)]
    (and at least 1). Subframes are added or dropped greedily by cost.
    """
    _check_table(table, schedule)
    ratio = hdr.ratio()
    if ratio.shape != scene.shape:
        raise ValueError("intensity map must match scene dimensions")
    n = len(schedule.layer_depths)
    q = quantize_depth(scene, table.layer_depths)
    a_opt = table.illumination_times[q.index]
    counts = hdr_counts(ratio, a_opt, n)
    row_bits = np.empty(scene.shape + (n,), dtype=np.uint8)
    for t in np.unique(q.index):
        sel = q.index == t
        need = np.unique(counts[sel])
        base = table.bits[t]
        if np.array_equal(need, [int(base.sum())]):
            row_bits[sel] = base
            continue
        chain = greedy_chain(base, template.at(table.target_depths[t]), int(need.min()), int(need.max()))
        for k in need:
            row_bits[sel & (counts == k)] = chain[int(k)]
    return BacklightSequence(_masks_from_rows(row_bits, schedule), scene.color, schedule, table.table_id)


def field_fraction_map(shape) -> np.ndarray:
    """Radial distance of pixel centers from the image center over the half-diagonal."""
    h, w = shape
    y = np.arange(h) - (h - 1) / 2.0
    x = np.arange(w) - (w - 1) / 2.0
    half_diag = math.hypot((w - 1) / 2.0, (h - 1) / 2.0)
    if half_diag == 0:
        return np.zeros(shape)
    return np.hypot(x[None, :], y[:, None]) / half_diag


@dataclass(frozen=True, eq=False)
class Precompensation:
    scene: RgbdScene
    offsets: np.ndarray
    clamp_count: int


def precompensate_depth_map(scene: RgbdScene, aberr: AberrationSpec, config: OpticalConfig = OpticalConfig(),
                            layer_depths=None) -> Precompensation:
    """Subtract the field-curvature depth shift so lit pixels land at their intended depth."""
    offsets = field_curvature_offset(field_fraction_map(scene.shape), aberr, config)
    depth = scene.depth - offsets
    clamp = 0
    if layer_depths is not None:
        lo, hi = float(np.min(layer_depths)), float(np.max(layer_depths))
        out = (depth < lo) | (depth > hi)
        clamp = int(np.count_nonzero(out))
        depth = np.clip(depth, lo, hi)
    return Precompensation(RgbdScene(scene.color, depth), np.asarray(offsets), clamp)


def depth_to_diopters(depth: np.ndarray, units: str = "diopters", display_range=(0.0, 5.5)) -> np.ndarray:
    """Convert a decoded depth map to diopters.

    ``meters`` inverts distances; ``affine`` stretches the map's own range
    onto ``display_range`` with the nearest content at the high-diopter end.
    """
    d = np.asarray(depth, dtype=float)
    if units == "diopters":
        return d
    if units == "meters":
        if np.any(d <= 0):
            raise ValueError("metric depth must be positive")
        return 1.0 / d
    if units == "affine":
        lo, hi = float(d.min()), float(d.max())
        a, b = display_range
        if hi == lo:
            return np.full_like(d, (a + b) / 2.0)
        return b - (d - lo) / (hi - lo) * (b - a)
    raise ValueError(f"unknown depth units {units!r}")
