"""Simulation and optimization toolkit for tomographic displays."""

from .ga import GaParams, GaResult, optimize_ga
from .layers import accommodation_grid, layer_grid, layer_spacing, nearest_layer
from .optics import (NO_ABERRATION, AberrationSpec, OpticalConfig, Otf, OtfBank, SamplingError, defocus_otf,
                     diffraction_limited_otf, field_curvature_offset, zernike_phase)
from .perception import CsfModel, csf_weight, weighted_spectral_distance
from .render import (BacklightSequence, ConfigurationError, HdrOptions, InfeasibleScheduleError, RgbdScene,
                     SubframeSchedule, build_subframe_schedule, precompensate_depth_map, quantize_depth,
                     render_backlight_sequence, render_hdr_sequence)
from .simulate import (ContrastMap, FocalStack, ManifestError, SimulationConfig, contrast_error, contrast_map,
                       ideal_contrast_map, simulate_focal_stack, simulate_retinal_image)
from .strategy import (CostBreakdown, DegenerateStrategyError, IlluminationStrategy, ProblemTemplate, StrategyProblem,
                       StrategyTable, a_low_from_fraction, brute_force_optimum, build_strategy_table, cost,
                       primitive_strategy, reconstructed_profile)
from .zernike import UnsupportedZernikeTerm

__version__ = "0.1.0"
