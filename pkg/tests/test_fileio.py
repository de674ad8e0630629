import json

import numpy as np
import pytest

from tomodisp import fileio
from tomodisp.layers import layer_grid
from tomodisp.render import BacklightSequence, build_subframe_schedule
from tomodisp.simulate import ContrastMap, ManifestError
from tomodisp.strategy import StrategyTable


@pytest.fixture
def table():
    rng = np.random.default_rng(0)
    layers = layer_grid(13)
    bits = rng.integers(0, 2, (13, 13))
    bits[:, 0] = 1
    return StrategyTable(layers, bits, rng.random(13), rng.random(13), np.zeros(13), layers,
                         {"dc_noise": 0.05, "method": "ga"})


def test_table_round_trip(tmp_path, table):
    fileio.save_table(tmp_path / "t.bin", table)
    back = fileio.load_table(tmp_path / "t.bin")
    np.testing.assert_array_equal(back.bits, table.bits)
    np.testing.assert_array_equal(back.costs, table.costs)
    np.testing.assert_array_equal(back.layer_depths, table.layer_depths)
    assert back.metadata == table.metadata and back.table_id == table.table_id


def test_table_bytes_deterministic(tmp_path, table):
    fileio.save_table(tmp_path / "a.bin", table)
    fileio.save_table(tmp_path / "b.bin", table)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_corrupt_tables(tmp_path, table):
    p = tmp_path / "t.bin"
    p.write_bytes(b"garbage")
    with pytest.raises(fileio.ArtifactFormatError):
        fileio.load_table(p)
    fileio.save_table(p, table)
    data = p.read_bytes()
    p.write_bytes(data[:-5])
    with pytest.raises(fileio.ArtifactFormatError):
        fileio.load_table(p)
    p.write_bytes(data + b"x")
    with pytest.raises(fileio.ArtifactFormatError):
        fileio.load_table(p)


def test_table_csv(tmp_path, table):
    fileio.write_table_csv(tmp_path / "t.csv", table)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "target_depth_diopters,bitstring,A,cost"
    z, bits, a, c = lines[1].split(",")
    assert float(z) == table.target_depths[0] and bits == table.entry(0).bitstring
    assert int(a) == bits.count("1") and float(c) == table.costs[0]


def test_trace_csv(tmp_path):
    fileio.write_trace_csv(tmp_path / "tr.csv", np.array([[1, 3.0, 4.5], [2, 2.0, 3.0]]))
    assert (tmp_path / "tr.csv").read_text().splitlines() == ["generation,best_cost,mean_cost", "1,3.0,4.5",
                                                               "2,2.0,3.0"]


def test_srgb_round_trip():
    v = np.linspace(0, 1, 101)
    np.testing.assert_allclose(fileio.srgb_to_linear(fileio.linear_to_srgb(v)), v, atol=1e-12)
    assert fileio.srgb_to_linear(np.array([0.5]))[0] == pytest.approx(0.214041, abs=1e-6)


@pytest.mark.parametrize("bitdepth", [8, 16])
def test_color_png_round_trip(tmp_path, bitdepth):
    img = np.random.default_rng(1).random((5, 7, 3))
    fileio.write_color_image(tmp_path / "c.png", img, bitdepth)
    back = fileio.read_color_image(tmp_path / "c.png")
    assert back.shape == img.shape
    assert np.max(np.abs(back - img)) < (2e-2 if bitdepth == 8 else 1e-4)


def test_gray_and_alpha_png(tmp_path):
    fileio.write_png(tmp_path / "g.png", np.array([[0, 255], [128, 64]]), 8)
    g = fileio.read_color_image(tmp_path / "g.png")
    assert g.shape == (2, 2) and g[0, 1] == 1.0
    rgba = np.zeros((2, 2, 4), dtype=int)
    rgba[..., 3] = 255
    fileio.write_png(tmp_path / "a.png", rgba, 8)
    assert fileio.read_color_image(tmp_path / "a.png").shape == (2, 2, 3)


def test_depth_png_with_sidecar(tmp_path):
    d = np.random.default_rng(2).uniform(0, 5.5, (6, 4))
    fileio.write_depth(tmp_path / "d.png", d, 0.0, 5.5)
    assert json.loads((tmp_path / "d.json").read_text()) == {"max_diopters": 5.5, "min_diopters": 0.0}
    np.testing.assert_allclose(fileio.read_depth(tmp_path / "d.png"), d, atol=5.5 / 65535)


def test_depth_png_needs_sidecar(tmp_path):
    fileio.write_png(tmp_path / "d.png", np.zeros((2, 2), dtype=int), 16)
    with pytest.raises(FileNotFoundError):
        fileio.read_depth(tmp_path / "d.png")


def test_pfm_round_trip(tmp_path):
    d = np.random.default_rng(3).uniform(0, 5.5, (5, 9)).astype(np.float32).astype(float)
    fileio.write_depth(tmp_path / "d.pfm", d)
    np.testing.assert_array_equal(fileio.read_depth(tmp_path / "d.pfm"), d)
    rgb = np.random.default_rng(4).random((3, 4, 3)).astype(np.float32).astype(float)
    fileio.write_pfm(tmp_path / "c.pfm", rgb)
    np.testing.assert_array_equal(fileio.read_pfm(tmp_path / "c.pfm"), rgb)


def test_pfm_big_endian(tmp_path):
    data = np.arange(6, dtype=">f4").reshape(2, 3)
    (tmp_path / "b.pfm").write_bytes(b"Pf\n3 2\n1.0\n" + data.tobytes())
    np.testing.assert_array_equal(fileio.read_pfm(tmp_path / "b.pfm"), np.flipud(data))


def test_sequence_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    sched = build_subframe_schedule("triangle", 60, layer_grid(6), 8)
    seq = BacklightSequence(rng.random((8, 4, 5)) < 0.5, rng.random((4, 5, 3)), sched, "abc")
    manifest = fileio.save_sequence(tmp_path / "s", seq)
    assert manifest["masks"][0] == "mask_000.png" and len(manifest["masks"]) == 8
    back = fileio.load_sequence(tmp_path / "s")
    np.testing.assert_array_equal(back.masks, seq.masks)
    np.testing.assert_array_equal(back.display_image, seq.display_image)
    assert back.schedule == sched and back.table_id == "abc"
    (tmp_path / "s" / "mask_003.png").unlink()
    with pytest.raises(ManifestError):
        fileio.load_sequence(tmp_path / "s")


def test_contrast_map_export(tmp_path):
    cmap = ContrastMap([1.0, 2.0], [0.0, 1.0, 2.0], [[1.0, 0.5, 0.0], [0.2, 0.4, 0.6]])
    fileio.write_contrast_map(tmp_path / "m", cmap)
    arr, depth = fileio.read_png(tmp_path / "m.png")
    assert depth == 16 and arr.shape == (2, 3) and arr[0, 0] == 65535
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "z_d,z_s,value" and lines[2] == "1.0,1.0,0.5" and len(lines) == 7
    fileio.write_contrast_map(tmp_path / "e", cmap, np.array([[-1.0, 0, 1], [0, 0, 0]]), signed=True)
    arr, _ = fileio.read_png(tmp_path / "e.png")
    assert arr[0].tolist() == [0, 32768, 65535]
