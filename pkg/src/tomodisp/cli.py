"""Command-line interface: ``tomodisp <command> [flags]``.

Each command prints one JSON summary line on stdout and logs to stderr.
Exit status: 0 success, 1 validation error, 2 I/O error, 64 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .config import ToolkitConfig, load_config
from .ga import optimize_ga
from .layers import accommodation_grid
from .render import (HdrOptions, RgbdScene, build_subframe_schedule, depth_to_diopters, precompensate_depth_map,
                     quantize_depth, render_backlight_sequence, render_hdr_sequence)
from .simulate import ManifestError, contrast_error, contrast_map, ideal_contrast_map, simulate_focal_stack
from .strategy import brute_force_optimum, build_strategy_table, cost, primitive_strategy

log = logging.getLogger("tomodisp")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_USAGE = 0, 1, 2, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _emit(summary: dict):
    sys.stdout.write(fileio.dumps_json(summary) + "\n")
    sys.stdout.flush()


def _schedule(cfg: ToolkitConfig, args):
    return build_subframe_schedule(
        args.waveform or cfg.get("render", "waveform", "ramp"),
        float(cfg.get("render", "cycle_rate", 60.0)),
        cfg.layer_depths,
        cfg.get("render", "subframes_per_cycle"),
    )


def _load_scene(cfg: ToolkitConfig, args) -> RgbdScene:
    color = fileio.read_color_image(args.scene)
    depth = fileio.read_depth(args.depth)
    layers = cfg.layer_depths
    units = args.depth_units or cfg.get("render", "depth_units", "diopters")
    rng = cfg.get("render", "display_range", [float(layers[0]), float(layers[-1])])
    return RgbdScene(color, depth_to_diopters(depth, units, tuple(rng)))


def _check_table_grid(cfg: ToolkitConfig, table):
    if table.bits.shape[1] != len(cfg.layer_depths) or not np.allclose(table.layer_depths, cfg.layer_depths,
                                                                        rtol=0, atol=1e-12):
        raise ValueError("table layer grid does not match [layers] in the config")


# ---------------------------------------------------------------- commands

def cmd_optimize(cfg: ToolkitConfig, args):
    template = cfg.template(workers=args.workers)
    problem = template.at(args.target_depth)
    if args.method == "brute":
        strategy, breakdown = brute_force_optimum(problem)
        trace = None
    else:
        res = optimize_ga(problem, cfg.ga_params(args.seed))
        strategy, breakdown, trace = res.strategy, res.cost, res.trace
    prim = primitive_strategy(problem)
    out = Path(args.out)
    record = {
        "target_depth_diopters": problem.target_depth,
        "bitstring": strategy.bitstring,
        "A": strategy.lit_subframes,
        "cost": breakdown.total,
        "fidelity": breakdown.fidelity,
        "penalty": breakdown.penalty,
        "primitive_bitstring": prim.bitstring,
        "primitive_cost": cost(prim, problem).total,
        "layer_depths": list(problem.layer_depths),
        "dc_noise": problem.dc_noise,
        "a_low": problem.a_low,
        "gamma": problem.gamma,
        "method": args.method,
        "seed": args.seed,
    }
    fileio.write_json(out, record)
    summary = {"command": "optimize", "strategy": str(out), "bitstring": strategy.bitstring,
               "A": strategy.lit_subframes, "cost": breakdown.total}
    if trace is not None and args.trace:
        fileio.write_trace_csv(args.trace, trace)
        summary["trace"] = args.trace
    return summary


def cmd_table(cfg: ToolkitConfig, args):
    template = cfg.template(workers=args.workers)
    table = build_strategy_table(template, cfg.ga_params(args.seed), method=args.method, workers=args.workers)
    fileio.save_table(args.out, table)
    csv_path = args.csv or str(Path(args.out).with_suffix(".csv"))
    fileio.write_table_csv(csv_path, table)
    steps = table.hamming_steps()
    return {"command": "table", "table": args.out, "csv": csv_path, "table_id": table.table_id,
            "entries": len(table), "A_min": int(table.illumination_times.min()),
            "A_max": int(table.illumination_times.max()), "max_hamming_step": int(steps.max()) if steps.size else 0}


def cmd_render(cfg: ToolkitConfig, args):
    table = fileio.load_table(args.table)
    _check_table_grid(cfg, table)
    scene = _load_scene(cfg, args)
    schedule = _schedule(cfg, args)
    clamp = quantize_depth(scene, table.layer_depths).clamp_count
    if args.command == "hdr":
        intensity = fileio.read_depth(args.intensity) if args.intensity.lower().endswith(".pfm") else \
            _read_unit_map(args.intensity)
        seq = render_hdr_sequence(scene, table, schedule, HdrOptions(intensity, args.hdr_mode),
                                  cfg.template(workers=args.workers))
    else:
        seq = render_backlight_sequence(scene, table, schedule)
    manifest = fileio.save_sequence(args.out, seq)
    lit = seq.lit_counts()
    return {"command": args.command, "sequence": args.out, "masks": len(manifest["masks"]),
            "schedule_id": schedule.schedule_id, "table_id": table.table_id, "clamp_count": clamp,
            "lit_min": int(lit.min()), "lit_max": int(lit.max())}


def _read_unit_map(path) -> np.ndarray:
    arr, depth = fileio.read_png(path)
    if arr.ndim != 2:
        raise ValueError(f"{path}: intensity map must be single-channel")
    return arr / float(2 ** depth - 1)


def cmd_precompensate(cfg: ToolkitConfig, args):
    depth = fileio.read_depth(args.depth)
    layers = cfg.layer_depths
    units = args.depth_units or cfg.get("render", "depth_units", "diopters")
    depth = depth_to_diopters(depth, units, (float(layers[0]), float(layers[-1])))
    scene = RgbdScene(np.zeros(depth.shape), depth)
    res = precompensate_depth_map(scene, cfg.aberrations, cfg.optics, layers)
    fileio.write_depth(args.out, res.scene.depth, float(layers[0]), float(layers[-1]))
    return {"command": "precompensate", "depth": args.out, "clamp_count": res.clamp_count,
            "max_offset_diopters": float(np.max(np.abs(res.offsets)))}


def cmd_simulate(cfg: ToolkitConfig, args):
    seq = fileio.load_sequence(args.sequence)
    sim = cfg.simulation()
    depths = sim.accommodation_depths if args.depths is None else tuple(float(z) for z in args.depths)
    stack = simulate_focal_stack(seq, depths, sim, manifest_id=seq.table_id)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for k, img in enumerate(stack.images):
        name = f"focal_{k:02d}.png"
        fileio.write_color_image(out / name, img)
        names.append(name)
    meta = dict(stack.metadata, depths=list(stack.depths), images=names,
                means=[float(np.mean(im)) for im in stack.images])
    fileio.write_json(out / "stack.json", meta)
    return {"command": "simulate", "stack": str(out), "images": len(names), "optics_hash": sim.optics_hash()}


def cmd_contrast(cfg: ToolkitConfig, args):
    table = fileio.load_table(args.table)
    _check_table_grid(cfg, table)
    planes = int(cfg.get("contrast", "accommodation_planes", 160))
    reduction = cfg.get("contrast", "reduction", "mean")
    acc = accommodation_grid(planes, cfg.get("layers", "min_diopters", 0.0), cfg.get("layers", "max_diopters", 5.5))
    template = cfg.template(cfg.bank(acc, workers=args.workers))
    cmap = contrast_map(table, template, reduction)
    ideal = ideal_contrast_map(template, table.target_depths, reduction)
    err = contrast_error(cmap, ideal)
    stem = str(Path(args.out).with_suffix(""))
    fileio.write_contrast_map(stem, cmap)
    fileio.write_contrast_map(stem + "_error", cmap, err, signed=True)
    return {"command": "contrast", "map": stem + ".png", "csv": stem + ".csv", "error_map": stem + "_error.png",
            "summed_abs_error": float(np.abs(err).sum()), "shape": list(cmap.values.shape)}


def cmd_schedule(cfg: ToolkitConfig, args):
    schedule = _schedule(cfg, args)
    fileio.write_json(args.out, schedule.to_dict())
    return {"command": "schedule", "schedule": args.out, "schedule_id": schedule.schedule_id,
            "subframe_rate": schedule.subframe_rate}


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--seed", type=int, default=0, help="seed for all stochastic steps")
    common.add_argument("--workers", type=int, default=1, help="worker threads")
    common.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = _Parser(prog="tomodisp", description="Tomographic display simulation and optimization toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("optimize", parents=[common], help="optimal strategy for one target depth")
    p.add_argument("--target-depth", type=float, required=True)
    p.add_argument("--method", choices=["ga", "brute"], default="ga")
    p.add_argument("--out", default="strategy.json")
    p.add_argument("--trace", help="write the GA convergence trace CSV here")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("table", parents=[common], help="strategy table over the layer grid")
    p.add_argument("--method", choices=["ga", "brute"], default="ga")
    p.add_argument("--out", default="table.bin")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_table)

    for name, helptext in (("render", "compile an RGB-D scene into backlight masks"),
                           ("hdr", "render with per-pixel illumination-time scaling")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--scene", required=True, help="color PNG (sRGB)")
        p.add_argument("--depth", required=True, help="16-bit PNG with JSON sidecar, or PFM")
        p.add_argument("--table", required=True)
        p.add_argument("--out", default="sequence")
        p.add_argument("--waveform", choices=["ramp", "triangle"])
        p.add_argument("--depth-units", choices=["diopters", "meters", "affine"])
        if name == "hdr":
            p.add_argument("--intensity", required=True, help="intensity map: PNG in [0, 1] or PFM ratio")
            p.add_argument("--hdr-mode", choices=["linear", "ratio"], default="linear")
        p.set_defaults(func=cmd_render)

    p = sub.add_parser("precompensate", parents=[common], help="bias a depth map against field curvature")
    p.add_argument("--depth", required=True)
    p.add_argument("--out", default="depth_precomp.pfm")
    p.add_argument("--depth-units", choices=["diopters", "meters", "affine"])
    p.set_defaults(func=cmd_precompensate)

    p = sub.add_parser("simulate", parents=[common], help="simulate a retinal focal stack")
    p.add_argument("--sequence", required=True, help="backlight sequence directory")
    p.add_argument("--depths", type=float, nargs="+", help="accommodation depths in diopters")
    p.add_argument("--out", default="stack")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("contrast", parents=[common], help="contrast and contrast-error maps of a table")
    p.add_argument("--table", required=True)
    p.add_argument("--out", default="contrast")
    p.set_defaults(func=cmd_contrast)

    p = sub.add_parser("schedule", parents=[common], help="subframe-to-layer schedule")
    p.add_argument("--waveform", choices=["ramp", "triangle"])
    p.add_argument("--out", default="schedule.json")
    p.set_defaults(func=cmd_schedule)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"tomodisp: error: {exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise ValueError("--workers must be >= 1")
        cfg = load_config(args.config)
        summary = args.func(cfg, args)
    except (OSError, ManifestError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    _emit(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
