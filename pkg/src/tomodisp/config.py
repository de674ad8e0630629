"""TOML configuration shared by all CLI commands.

Sections: ``[optics] [layers] [noise] [brightness] [ga] [csf] [simulate]
[render] [contrast]``. Every key is optional; unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .ga import GaParams
from .layers import accommodation_grid, layer_grid
from .optics import AberrationSpec, OpticalConfig, OtfBank
from .perception import CsfModel
from .simulate import SimulationConfig
from .strategy import ProblemTemplate, a_low_from_fraction
from .zernike import load_preset


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "optics": {"wavelength", "pupil_diameter", "pupil_grid", "max_frequency", "frequency_samples",
               "channel_wavelengths", "zernike", "zernike_preset", "seidel_field_curvature"},
    "layers": {"count", "min_diopters", "max_diopters", "accommodation_planes"},
    "noise": {"c"},
    "brightness": {"a_low_fraction", "a_low", "gamma_mode", "gamma"},
    "ga": {"population_size", "max_generations", "mutation_rate", "crossover_probability", "elitism",
           "tournament_size", "stall_generations"},
    "csf": {"peak_frequency", "peak_sensitivity", "low_frequency_attenuation", "high_frequency_decay",
            "distance_mode"},
    "simulate": {"accommodation_depths", "planes", "field_of_view", "normalization", "per_channel_wavelength",
                 "field_zones"},
    "render": {"waveform", "cycle_rate", "subframes_per_cycle", "depth_units", "display_range"},
    "contrast": {"accommodation_planes", "reduction"},
}

_CSF_KEYS = ("peak_frequency", "peak_sensitivity", "low_frequency_attenuation", "high_frequency_decay")
_GA_KEYS = ("population_size", "max_generations", "mutation_rate", "crossover_probability", "elitism",
            "tournament_size", "stall_generations")


@dataclass(frozen=True)
class ToolkitConfig:
    sections: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    def __post_init__(self):
        for name, body in self.sections.items():
            if name not in _SCHEMA:
                raise ConfigError(f"unknown config section [{name}]")
            if not isinstance(body, dict):
                raise ConfigError(f"[{name}] must be a table")
            extra = set(body) - _SCHEMA[name]
            if extra:
                raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(extra))}")
        try:
            # validate eagerly so bad values fail before any work starts
            self.optics, self.aberrations, self.csf, self.ga_params(0), self.layer_depths
            self.accommodation_depths, self.simulation()
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    @property
    def optics(self) -> OpticalConfig:
        s = dict(self.sections.get("optics", {}))
        kw = {k: s[k] for k in ("wavelength", "pupil_diameter", "pupil_grid", "max_frequency",
                                "frequency_samples") if k in s}
        if "channel_wavelengths" in s:
            kw["channel_wavelengths"] = tuple(float(w) for w in s["channel_wavelengths"])
        return OpticalConfig(**kw)

    @property
    def aberrations(self) -> AberrationSpec:
        coeffs = []
        preset = self.get("optics", "zernike_preset")
        if preset is not None:
            path = Path(preset)
            coeffs.extend(load_preset(path if path.is_absolute() else self.base_dir / path))
        for pair in self.get("optics", "zernike", []):
            if len(pair) != 2:
                raise ConfigError("[optics] zernike entries must be [index, waves] pairs")
            coeffs.append((pair[0], float(pair[1])))
        return AberrationSpec(tuple(coeffs), float(self.get("optics", "seidel_field_curvature", 0.0)))

    @property
    def layer_depths(self):
        return layer_grid(int(self.get("layers", "count", 80)), self.get("layers", "min_diopters", 0.0),
                          self.get("layers", "max_diopters", 5.5))

    @property
    def accommodation_depths(self):
        n = int(self.get("layers", "count", 80))
        return accommodation_grid(int(self.get("layers", "accommodation_planes", n + 1)),
                                  self.get("layers", "min_diopters", 0.0), self.get("layers", "max_diopters", 5.5))

    @property
    def csf(self) -> CsfModel:
        return CsfModel(**{k: float(v) for k, v in self.sections.get("csf", {}).items() if k in _CSF_KEYS})

    @property
    def dc_noise(self) -> float:
        c = float(self.get("noise", "c", 0.0))
        if c < 0:
            raise ConfigError("[noise] c must be non-negative")
        return c

    @property
    def a_low(self) -> int:
        n = len(self.layer_depths)
        if self.get("brightness", "a_low") is not None:
            return int(self.get("brightness", "a_low"))
        return a_low_from_fraction(float(self.get("brightness", "a_low_fraction", 0.0)), n)

    def ga_params(self, seed: int) -> GaParams:
        kw = {k: v for k, v in self.sections.get("ga", {}).items() if k in _GA_KEYS}
        return GaParams(rng_seed=int(seed), **kw)

    def bank(self, accommodation_depths=None, workers: int = 1) -> OtfBank:
        acc = self.accommodation_depths if accommodation_depths is None else accommodation_depths
        return OtfBank(acc, self.layer_depths, self.optics, self.aberrations, workers=workers)

    def template(self, bank: OtfBank = None, workers: int = 1) -> ProblemTemplate:
        gamma = self.get("brightness", "gamma")
        return ProblemTemplate(
            bank if bank is not None else self.bank(workers=workers),
            dc_noise=self.dc_noise,
            a_low=self.a_low,
            gamma=None if gamma is None else float(gamma),
            gamma_mode=self.get("brightness", "gamma_mode", "hard"),
            csf=self.csf,
            distance_mode=self.get("csf", "distance_mode", "complex"),
        )

    def simulation(self) -> SimulationConfig:
        s = self.sections.get("simulate", {})
        lo, hi = self.get("layers", "min_diopters", 0.0), self.get("layers", "max_diopters", 5.5)
        depths = s.get("accommodation_depths")
        if depths is None:
            depths = accommodation_grid(int(s.get("planes", 7)), lo, hi)
        kw = {k: s[k] for k in ("field_of_view", "normalization", "per_channel_wavelength", "field_zones") if k in s}
        return SimulationConfig(tuple(depths), self.optics, self.aberrations, self.dc_noise, **kw)


def load_config(path=None) -> ToolkitConfig:
    """Parse a TOML file; ``None`` gives all defaults."""
    if path is None:
        return ToolkitConfig()
    path = Path(path)
    with open(path, "rb") as fh:
        try:
            data = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return ToolkitConfig(data, path.parent)
