"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` (lines are printed in the
terminal summary) or ``python tests/test_acceptance.py``.
"""

from __future__ import annotations

import filecmp
import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from tomodisp import fileio
from tomodisp.cli import main as cli_main
from tomodisp.ga import GaParams, optimize_ga
from tomodisp.layers import accommodation_grid, layer_grid, layer_spacing, nearest_layer
from tomodisp.optics import (CYCLES_PER_RADIAN_PER_CPD, AberrationSpec, OpticalConfig, OtfBank,
                             diffraction_limited_otf, otf_radial)
from tomodisp.perception import csf_weight
from tomodisp.render import (BacklightSequence, HdrOptions, RgbdScene, build_subframe_schedule, field_fraction_map,
                             precompensate_depth_map, quantize_depth, render_backlight_sequence, render_hdr_sequence)
from tomodisp.simulate import SimulationConfig, band_limited_contrast, simulate_focal_stack, simulate_retinal_image
from tomodisp.strategy import (ProblemTemplate, StrategyTable, a_low_from_fraction, brute_force_optimum,
                               build_strategy_table, primitive_strategy, reconstructed_profile)

RESULTS: list[str] = []


def record(number: int, name: str, passed: bool, detail: str) -> bool:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {name}: {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    return passed


def identity_table(layers):
    n = len(layers)
    z = np.zeros(n)
    return StrategyTable(layers, np.eye(n, dtype=np.uint8), z, z, z, layers)


@pytest.fixture(scope="module")
def bank80():
    return OtfBank(accommodation_grid(81), layer_grid(80))


# ---------------------------------------------------------------- 1

def test_c01_naive_condition_equivalence(bank80):
    start = time.perf_counter()
    tpl = ProblemTemplate(bank80, dc_noise=0.0, a_low=0)
    layers = bank80.layer_depths
    picks = [0, 20, 39, 60, 79]
    same = []
    for k in picks:
        p = tpl.at(layers[k])
        res = optimize_ga(p, GaParams(max_generations=200, rng_seed=0))
        same.append(res.strategy == primitive_strategy(p))
    elapsed = time.perf_counter() - start
    ok = all(same) and elapsed < 300
    assert record(1, "naive-condition equivalence", ok,
                  f"{sum(same)}/5 targets returned the primitive strategy in {elapsed:.1f} s (limit 300 s)")


# ---------------------------------------------------------------- 2

def test_c02_oracle_equivalence():
    start = time.perf_counter()
    bank = OtfBank(accommodation_grid(11), layer_grid(10))
    rng = np.random.default_rng(2024)
    exact = within_1pct = 0
    for _ in range(20):
        c = float(rng.choice([0.0, 0.05]))
        a_low = int(rng.choice([0, 3]))
        z = float(rng.uniform(bank.layer_depths[0], bank.layer_depths[-1]))
        p = ProblemTemplate(bank, dc_noise=c, a_low=a_low).at(z)
        _, bc = brute_force_optimum(p)
        gc = optimize_ga(p, GaParams(max_generations=200, rng_seed=0)).cost
        diff = gc.total - bc.total
        exact += abs(diff) <= 1e-9
        within_1pct += diff <= 0.01 * max(abs(bc.total), 1e-12) + 1e-9
    elapsed = time.perf_counter() - start
    ok = within_1pct == 20 and exact >= 19 and elapsed < 600
    assert record(2, "oracle equivalence", ok,
                  f"{exact}/20 within 1e-9, {within_1pct}/20 within 1% in {elapsed:.1f} s (limit 600 s)")


# ---------------------------------------------------------------- 3

def test_c03_layer_spacing():
    spacing = layer_spacing(80, 0.0, 5.5)
    grid = layer_grid(80)
    steps = {Fraction(b).limit_denominator(10 ** 6) - Fraction(a).limit_denominator(10 ** 6)
             for a, b in zip(grid[:-1], grid[1:])}
    ok = spacing == Fraction(6875, 100000) and steps == {spacing}
    assert record(3, "layer-spacing arithmetic", ok, f"spacing = {spacing} = {float(spacing)} D, "
                                                     f"{len(steps)} distinct step(s)")


# ---------------------------------------------------------------- 4

def test_c04_brightness_tradeoff(bank80):
    layers = bank80.layer_depths
    p = ProblemTemplate(bank80, dc_noise=0.0, a_low=0).at(layers[39])
    a_opt = optimize_ga(p, GaParams(max_generations=200, rng_seed=0)).strategy.lit_subframes

    sched = build_subframe_schedule("ramp", 60, layers)
    color = np.clip(0.5 + 0.2 * np.random.default_rng(4).standard_normal((32, 32)), 0, 1)
    scene = RgbdScene(color, np.full(color.shape, layers[39]))
    all_lit = StrategyTable(layers, np.ones((80, 80), dtype=np.uint8), np.zeros(80), np.zeros(80), np.zeros(80),
                            layers)
    cfg = SimulationConfig(normalization="cycle")
    one = simulate_retinal_image(render_backlight_sequence(scene, identity_table(layers), sched), layers[39], cfg)
    full = simulate_retinal_image(render_backlight_sequence(scene, all_lit, sched), layers[39], cfg)
    ratio = one.mean() / full.mean()
    ok = a_opt == 1 and abs(ratio - 1 / 80) <= 1e-6
    assert record(4, "brightness trade-off", ok, f"optimal A = {a_opt}; single-layer / all-lit luminance = "
                                                 f"{ratio:.9f} (1/n = {1 / 80:.9f})")


# ---------------------------------------------------------------- 5

def test_c05_brightness_bound(bank80):
    a_low = a_low_from_fraction(0.625, 80)
    tpl = ProblemTemplate(bank80, dc_noise=0.05, a_low=a_low)
    table = build_strategy_table(tpl, GaParams(max_generations=200, rng_seed=0))
    a = table.illumination_times
    ok = a_low == 50 and np.all(a >= a_low) and np.all(table.penalties == 0)
    assert record(5, "brightness bound", ok, f"A_low = {a_low}; A range [{a.min()}, {a.max()}] over {len(a)} "
                                             f"targets; max penalty {table.penalties.max():g}")


# ---------------------------------------------------------------- 6

def test_c06_dc_noise_dilution():
    layers = layer_grid(80)
    bank = OtfBank(layers, layers)  # accommodation planes on the layers: in-focus plane i = k
    violations = 0
    for k in range(80):
        clean = ProblemTemplate(bank, dc_noise=0.0).at(layers[k])
        noisy = ProblemTemplate(bank, dc_noise=0.05).at(layers[k])
        s = primitive_strategy(clean)
        m0 = np.abs(reconstructed_profile(s, clean, k))
        m1 = np.abs(reconstructed_profile(s, noisy, k))
        violations += int(np.count_nonzero(m1 > m0))
    assert record(6, "DC-noise dilution", violations == 0,
                  f"{violations} frequency samples where c = 0.05 MTF exceeds c = 0 MTF (80 targets x 64 samples)")


# ---------------------------------------------------------------- 7

def test_c07_hdr_range():
    layers = layer_grid(20)
    tpl = ProblemTemplate(OtfBank(accommodation_grid(21), layers), dc_noise=0.05, a_low=a_low_from_fraction(0.3, 20))
    table = build_strategy_table(tpl, GaParams(population_size=300, max_generations=100, rng_seed=0))
    sched = build_subframe_schedule("ramp", 60, layers)
    rng = np.random.default_rng(7)
    in_range = True
    for trial in range(3):
        scene = RgbdScene(rng.random((24, 24)), rng.uniform(0, 5.5, (24, 24)))
        seq = render_hdr_sequence(scene, table, sched, HdrOptions(rng.uniform(0.0, 2.0, (24, 24))), tpl)
        a_opt = table.illumination_times[quantize_depth(scene, layers).index]
        lit = seq.lit_counts()
        lo = np.maximum(np.ceil(0.5 * a_opt), 1)
        hi = np.floor(1.5 * a_opt)
        in_range &= bool(np.all((lit >= lo) & (lit <= hi) & (lit >= 1)))
    neutral = render_hdr_sequence(scene, table, sched, HdrOptions(np.ones((24, 24))), tpl)
    plain = render_backlight_sequence(scene, table, sched)
    exact = np.array_equal(neutral.masks, plain.masks)
    assert record(7, "HDR range", in_range and exact,
                  f"counts within [ceil(A/2), floor(3A/2)] and >= 1: {in_range}; neutral bit-exact: {exact}")


# ---------------------------------------------------------------- 8

def test_c08_aberration_correction():
    start = time.perf_counter()
    layers = layer_grid(80)
    table = identity_table(layers)
    sched = build_subframe_schedule("ramp", 60, layers)
    size = 256
    rng = np.random.default_rng(0)
    tex = gaussian_filter(rng.random((size, size)), 1.0)
    tex = (tex - tex.min()) / (tex.max() - tex.min())
    z0 = 2.75
    scene = RgbdScene(tex, np.full((size, size), z0))
    ab = AberrationSpec(seidel_field_curvature=10.0)
    optics = OpticalConfig()
    pre = precompensate_depth_map(scene, ab, optics, layers)
    z_s = float(layers[int(nearest_layer(z0, layers)[0])])

    aberrated = SimulationConfig(aberrations=ab, dc_noise=0.05)
    plain = simulate_retinal_image(render_backlight_sequence(scene, table, sched), z_s, aberrated)
    comp = simulate_retinal_image(render_backlight_sequence(pre.scene, table, sched), z_s, aberrated)
    ideal = simulate_retinal_image(render_backlight_sequence(scene, table, sched), z_s,
                                   SimulationConfig(dc_noise=0.05))

    pitch = aberrated.field_of_view / size
    band = 2.0  # cpd
    c_plain, c_comp, c_ideal = (band_limited_contrast(im, pitch, band) for im in (plain, comp, ideal))
    outer = field_fraction_map((size, size)) > 0.5
    better = float(np.mean(c_comp[outer] > c_plain[outer]))
    err_plain = float(np.abs(c_ideal - c_plain).sum())
    err_comp = float(np.abs(c_ideal - c_comp).sum())
    drop = 1 - err_comp / err_plain
    elapsed = time.perf_counter() - start
    ok = better >= 0.9 and drop >= 0.25 and elapsed < 600
    assert record(8, "aberration correction", ok,
                  f"compensated sharper at {better:.1%} of pixels beyond half-field; contrast error "
                  f"{err_plain:.1f} -> {err_comp:.1f} ({drop:.1%} drop); {elapsed:.0f} s")


# ---------------------------------------------------------------- 9

def test_c09_optics_sanity():
    mtf10 = float(diffraction_limited_otf(OpticalConfig()).values[-1].real)
    f = np.linspace(0, 10, 4001)
    v = otf_radial(1.0, f).real
    k = int(np.argmax(np.diff(np.sign(v)) != 0))
    null = f[k] - v[k] * (f[k + 1] - f[k]) / (v[k + 1] - v[k])
    estimate = 1.0 / (1.0 * 6e-3) / CYCLES_PER_RADIAN_PER_CPD  # 1/(delta d) in cpd
    rel = null / estimate - 1
    ok = mtf10 > 0.9 and abs(rel) <= 0.20
    assert record(9, "optics sanity", ok,
                  f"MTF(10 cpd) = {mtf10:.4f} (> 0.9: {mtf10 > 0.9}); first null at 1 D = {null:.3f} cpd vs "
                  f"1/(delta d) = {estimate:.3f} cpd, {rel:+.1%} (within 20%: {abs(rel) <= 0.2})")


# ---------------------------------------------------------------- 10

def test_c10_csf_shape():
    grid = np.linspace(0, 10, 64)
    peak = float(grid[np.argmax(csf_weight(grid))])
    assert record(10, "CSF shape", 4.0 <= peak <= 8.0, f"argmax over 0-10 cpd at {peak:.3f} cpd")


# ---------------------------------------------------------------- 11

def test_c11_simulation_conservation():
    layers = layer_grid(80)
    table = identity_table(layers)
    sched = build_subframe_schedule("ramp", 60, layers)
    rng = np.random.default_rng(11)
    img1 = gaussian_filter(rng.random((96, 96)), 1.0)
    img2 = rng.random((96, 96))
    depth = np.full((96, 96), layers[10])
    depth[:, 32:64] = layers[40]
    depth[:, 64:] = layers[70]
    seq = render_backlight_sequence(RgbdScene(img1, depth), table, sched)
    cfg = SimulationConfig(dc_noise=0.05)
    stack = simulate_focal_stack(seq, accommodation_grid(7), cfg)
    means = np.array([im.mean() for im in stack.images])
    drift = float(np.max(np.abs(means / means[0] - 1)))

    def sim(img):
        return simulate_retinal_image(BacklightSequence(seq.masks, img, sched), 1.9, cfg)

    a, b = 0.7, -1.3
    rms = float(np.sqrt(np.mean((sim(a * img1 + b * img2) - (a * sim(img1) + b * sim(img2))) ** 2)))
    ok = len(stack) == 7 and drift <= 1e-4 and rms <= 1e-6
    assert record(11, "simulation conservation", ok,
                  f"mean drift over 7 planes {drift:.2e} (<= 1e-4); linearity RMS {rms:.2e} (<= 1e-6)")


# ---------------------------------------------------------------- 12

CLI_CONFIG = """
[layers]
count = 10
[noise]
c = 0.05
[brightness]
a_low_fraction = 0.3
[ga]
population_size = 80
max_generations = 30
[simulate]
planes = 3
[contrast]
accommodation_planes = 16
[optics]
seidel_field_curvature = 4.0
"""


def _run_all_commands(root: Path):
    root.mkdir(parents=True, exist_ok=True)
    (root / "cfg.toml").write_text(CLI_CONFIG)
    rng = np.random.default_rng(0)
    fileio.write_color_image(root / "scene.png", rng.random((16, 20, 3)), 16)
    depth = np.full((16, 20), 2.75)
    depth[:, 10:] = 1.1
    fileio.write_depth(root / "depth.png", depth, 0.0, 5.5)
    fileio.write_png(root / "inten.png", (rng.random((16, 20)) * 65535).astype(int), 16)
    cfg = ["--config", str(root / "cfg.toml"), "--seed", "0"]
    p = lambda name: str(root / name)  # noqa: E731
    commands = [
        ["optimize", *cfg, "--target-depth", "2.75", "--out", p("s.json"), "--trace", p("trace.csv")],
        ["table", *cfg, "--out", p("t.bin")],
        ["render", *cfg, "--scene", p("scene.png"), "--depth", p("depth.png"), "--table", p("t.bin"),
         "--out", p("seq")],
        ["hdr", *cfg, "--scene", p("scene.png"), "--depth", p("depth.png"), "--table", p("t.bin"),
         "--intensity", p("inten.png"), "--out", p("hseq")],
        ["precompensate", *cfg, "--depth", p("depth.png"), "--out", p("pc.png")],
        ["simulate", *cfg, "--sequence", p("seq"), "--out", p("stack")],
        ["contrast", *cfg, "--table", p("t.bin"), "--out", p("cm")],
        ["schedule", *cfg, "--waveform", "triangle", "--out", p("sch.json")],
    ]
    return [cli_main(c) for c in commands]


def test_c12_determinism(tmp_path):
    codes_a = _run_all_commands(tmp_path / "a")
    codes_b = _run_all_commands(tmp_path / "b")
    files_a = sorted(q.relative_to(tmp_path / "a") for q in (tmp_path / "a").rglob("*") if q.is_file())
    files_b = sorted(q.relative_to(tmp_path / "b") for q in (tmp_path / "b").rglob("*") if q.is_file())
    differing = [str(f) for f in files_a if not filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f, shallow=False)]
    ok = codes_a == codes_b == [0] * 8 and files_a == files_b and not differing
    assert record(12, "determinism", ok, f"8 commands, exit codes {codes_a}; {len(files_a)} artifacts, "
                                         f"{len(differing)} differ{(': ' + ', '.join(differing)) if differing else ''}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
