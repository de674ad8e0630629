"""File formats: strategy tables, traces, images, depth maps, sequences, contrast maps.

Every writer produces byte-identical output for identical input (sorted
JSON keys, fixed float formatting, no timestamps).
"""

from __future__ import annotations

import csv
import io
import json
import re
import struct
from pathlib import Path

import numpy as np
import png

from .render import BacklightSequence, SubframeSchedule
from .simulate import ContrastMap, ManifestError
from .strategy import StrategyTable

TABLE_MAGIC = b"TOMOTBL\x00"
TABLE_VERSION = 1
MASK_PATTERN = "mask_{:03d}.png"


class ArtifactFormatError(OSError):
    """A file exists but its contents are not the expected format."""


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


# ---------------------------------------------------------------- tables

def save_table(path, table: StrategyTable):
    """Binary table: magic, version, JSON header, packed bits, float64 cost columns."""
    n_targets, n_layers = table.bits.shape
    header = {
        "n_targets": n_targets,
        "n_layers": n_layers,
        "target_depths": table.target_depths.tolist(),
        "layer_depths": table.layer_depths.tolist(),
        "metadata": table.metadata,
        "table_id": table.table_id,
    }
    hbytes = dumps_json(header).encode()
    with open(path, "wb") as fh:
        fh.write(TABLE_MAGIC)
        fh.write(struct.pack("<HI", TABLE_VERSION, len(hbytes)))
        fh.write(hbytes)
        fh.write(np.packbits(table.bits, axis=1).tobytes())
        for col in (table.costs, table.fidelities, table.penalties):
            fh.write(np.asarray(col, dtype="<f8").tobytes())


def load_table(path) -> StrategyTable:
    data = Path(path).read_bytes()
    if not data.startswith(TABLE_MAGIC):
        raise ArtifactFormatError(f"{path}: not a strategy table (bad magic)")
    off = len(TABLE_MAGIC)
    try:
        version, hlen = struct.unpack_from("<HI", data, off)
        off += 6
        if version != TABLE_VERSION:
            raise ArtifactFormatError(f"{path}: unsupported table version {version}")
        header = json.loads(data[off:off + hlen])
        off += hlen
        nt, nl = header["n_targets"], header["n_layers"]
        row = (nl + 7) // 8
        packed = np.frombuffer(data, dtype=np.uint8, count=nt * row, offset=off).reshape(nt, row)
        off += nt * row
        bits = np.unpackbits(packed, axis=1, count=nl)
        cols = np.frombuffer(data, dtype="<f8", count=3 * nt, offset=off).reshape(3, nt)
        off += 24 * nt
    except (struct.error, ValueError, KeyError) as exc:
        raise ArtifactFormatError(f"{path}: truncated or corrupt table ({exc})") from exc
    if off != len(data):
        raise ArtifactFormatError(f"{path}: {len(data) - off} trailing bytes")
    table = StrategyTable(header["target_depths"], bits, cols[0], cols[1], cols[2], header["layer_depths"],
                          header.get("metadata", {}))
    if header.get("table_id") not in (None, table.table_id):
        raise ArtifactFormatError(f"{path}: table id mismatch")
    return table


def write_table_csv(path, table: StrategyTable):
    rows = [(repr(float(z)), table.entry(k).bitstring, int(table.illumination_times[k]), repr(float(table.costs[k])))
            for k, z in enumerate(table.target_depths)]
    _write_csv(path, ["target_depth_diopters", "bitstring", "A", "cost"], rows)


def write_trace_csv(path, trace: np.ndarray):
    rows = [(int(g), repr(float(b)), repr(float(m))) for g, b, m in trace]
    _write_csv(path, ["generation", "best_cost", "mean_cost"], rows)


# ---------------------------------------------------------------- images

def srgb_to_linear(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(v: np.ndarray) -> np.ndarray:
    v = np.clip(np.asarray(v, dtype=float), 0.0, 1.0)
    return np.where(v <= 0.0031308, 12.92 * v, 1.055 * v ** (1 / 2.4) - 0.055)


def read_png(path) -> tuple[np.ndarray, int]:
    """Raw PNG samples as (H, W) or (H, W, planes) integers plus the bit depth."""
    try:
        w, h, rows, info = png.Reader(filename=str(path)).asDirect()
        arr = np.vstack([np.asarray(r, dtype=np.uint32) for r in rows])
    except png.Error as exc:
        raise ArtifactFormatError(f"{path}: {exc}") from exc
    planes = info["planes"]
    arr = arr.reshape(h, w, planes) if planes > 1 else arr.reshape(h, w)
    return arr, info["bitdepth"]


def write_png(path, arr: np.ndarray, bitdepth: int):
    arr = np.asarray(arr)
    h, w = arr.shape[:2]
    planes = 1 if arr.ndim == 2 else arr.shape[2]
    writer = png.Writer(w, h, greyscale=planes in (1, 2), alpha=planes in (2, 4), bitdepth=bitdepth)
    with open(path, "wb") as fh:
        writer.write(fh, arr.reshape(h, w * planes).astype(int).tolist())


def read_color_image(path) -> np.ndarray:
    """8- or 16-bit PNG decoded from sRGB to linear intensity in [0, 1]; alpha dropped."""
    arr, depth = read_png(path)
    if arr.ndim == 3 and arr.shape[2] in (2, 4):
        arr = arr[..., :-1]
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    return srgb_to_linear(arr / float(2 ** depth - 1))


def write_color_image(path, img: np.ndarray, bitdepth: int = 16):
    """Linear image to sRGB PNG; values are clipped to [0, 1] here and only here."""
    q = np.round(linear_to_srgb(img) * (2 ** bitdepth - 1)).astype(np.uint32)
    write_png(path, q, bitdepth)


def _sidecar(path) -> Path:
    return Path(path).with_suffix(".json")


def read_depth(path) -> np.ndarray:
    """Depth map in diopters from PFM, or 16-bit PNG plus a JSON range sidecar."""
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        d = read_pfm(path)
        return d if d.ndim == 2 else d[..., 0]
    side = _sidecar(path)
    if not side.exists():
        raise FileNotFoundError(f"{side}: depth PNG needs a sidecar with min_diopters/max_diopters")
    rng = json.loads(side.read_text())
    try:
        lo, hi = float(rng["min_diopters"]), float(rng["max_diopters"])
    except KeyError as exc:
        raise ArtifactFormatError(f"{side}: missing {exc.args[0]}") from exc
    arr, depth = read_png(path)
    if arr.ndim != 2:
        raise ArtifactFormatError(f"{path}: depth PNG must be single-channel")
    return lo + arr / float(2 ** depth - 1) * (hi - lo)


def write_depth(path, depth: np.ndarray, min_diopters: float = None, max_diopters: float = None):
    path = Path(path)
    depth = np.asarray(depth, dtype=float)
    if path.suffix.lower() == ".pfm":
        write_pfm(path, depth)
        return
    lo = float(depth.min()) if min_diopters is None else float(min_diopters)
    hi = float(depth.max()) if max_diopters is None else float(max_diopters)
    span = hi - lo if hi > lo else 1.0
    q = np.round(np.clip((depth - lo) / span, 0, 1) * 65535).astype(np.uint32)
    write_png(path, q, 16)
    write_json(_sidecar(path), {"min_diopters": lo, "max_diopters": hi})


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        kind = fh.readline().strip()
        if kind not in (b"Pf", b"PF"):
            raise ArtifactFormatError(f"{path}: not a PFM file")
        dims = fh.readline()
        while dims.startswith(b"#"):
            dims = fh.readline()
        m = re.match(rb"^\s*(\d+)\s+(\d+)\s*$", dims)
        if not m:
            raise ArtifactFormatError(f"{path}: malformed PFM header")
        w, h = int(m.group(1)), int(m.group(2))
        scale = float(fh.readline().strip())
        planes = 3 if kind == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        raw = fh.read()
    if len(raw) != 4 * w * h * planes:
        raise ArtifactFormatError(f"{path}: expected {w * h * planes} samples")
    data = np.frombuffer(raw, dtype=dtype).reshape(h, w, planes) if planes > 1 else \
        np.frombuffer(raw, dtype=dtype).reshape(h, w)
    return np.flipud(data).astype(float)  # PFM rows run bottom to top


def write_pfm(path, arr: np.ndarray):
    arr = np.asarray(arr, dtype="<f4")
    h, w = arr.shape[:2]
    kind = b"PF" if arr.ndim == 3 else b"Pf"
    with open(path, "wb") as fh:
        fh.write(kind + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        fh.write(np.ascontiguousarray(np.flipud(arr)).tobytes())


# ---------------------------------------------------------------- sequences

def save_sequence(directory, seq: BacklightSequence) -> dict:
    """Masks as 1-bit PNGs, the display image as .npy, and a JSON manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = []
    for k, mask in enumerate(seq.masks):
        name = MASK_PATTERN.format(k)
        write_png(d / name, mask.astype(np.uint8), 1)
        names.append(name)
    np.save(d / "display.npy", np.asarray(seq.display_image, dtype=float), allow_pickle=False)
    manifest = {
        "masks": names,
        "shape": list(seq.masks.shape[1:]),
        "display_image": "display.npy",
        "schedule": seq.schedule.to_dict(),
        "layer_depths": list(seq.layer_depths),
        "table_id": seq.table_id,
    }
    write_json(d / "manifest.json", manifest)
    return manifest


def load_sequence(directory) -> BacklightSequence:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    schedule = SubframeSchedule.from_dict(manifest["schedule"])
    names = manifest.get("masks", [])
    if len(names) != schedule.subframes_per_cycle:
        raise ManifestError(f"manifest lists {len(names)} masks for {schedule.subframes_per_cycle} subframes")
    masks = []
    for name in names:
        if not (d / name).exists():
            raise ManifestError(f"missing mask {name}")
        arr, _ = read_png(d / name)
        masks.append(arr.astype(bool))
    display = np.load(d / manifest["display_image"], allow_pickle=False)
    return BacklightSequence(np.stack(masks), display, schedule, manifest.get("table_id", ""))


# ---------------------------------------------------------------- contrast maps

def write_contrast_map(stem, cmap: ContrastMap, values: np.ndarray = None, signed: bool = False):
    """16-bit PNG (rows: target depth, columns: accommodation depth) plus CSV.

    ``signed`` maps [-1, 1] onto the PNG range for error maps.
    """
    v = cmap.values if values is None else np.asarray(values, dtype=float)
    scaled = (np.clip(v, -1, 1) + 1) / 2 if signed else np.clip(v, 0, 1)
    write_png(f"{stem}.png", np.round(scaled * 65535).astype(np.uint32), 16)
    rows = [(repr(float(zd)), repr(float(zs)), repr(float(v[a, b])))
            for a, zd in enumerate(cmap.target_depths) for b, zs in enumerate(cmap.accommodation_depths)]
    _write_csv(f"{stem}.csv", ["z_d", "z_s", "value"], rows)
