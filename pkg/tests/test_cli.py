import json

import numpy as np
import pytest

from rayfusion.cli import main
from rayfusion.io import read_ply, read_trace, read_volume


def test_demo_prints_both_tie_branches(capsys):
    assert main(["demo", "weak-relaxation"]) == 0
    out = capsys.readouterr().out
    assert "energy -3.500" in out
    assert "tie branch LINEAR: energy -3.000000" in out
    assert "tie branch ZERO" in out


def test_validate_passes(capsys):
    assert main(["validate", "--seed", "3", "--trials", "3"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "oracle_bound" in out


def test_missing_config_exits_with_2(tmp_path, capsys):
    assert main(["reconstruct", "--config", str(tmp_path / "none.json")]) == 2
    assert "error" in capsys.readouterr().err


def test_synth_reconstruct_and_export(tmp_path, capsys):
    scene_dir = tmp_path / "box"
    assert main(["synth", "--scene", "box", "--out", str(scene_dir), "--max-outer", "15"]) == 0
    cfg = json.loads((scene_dir / "config.json").read_text())
    cfg["rays"]["pixel_stride"] = 2
    cfg["output"]["relaxed"] = "relaxed.vol"
    (scene_dir / "config.json").write_text(json.dumps(cfg))
    code = main(["reconstruct", "--config", str(scene_dir / "config.json"),
                 "--emit-slices", "z:8,x:3", "--emit-mesh"])
    assert code == 0
    out = scene_dir / "out"
    lab = read_volume(out / "labels.vol")
    assert lab.grid.dims == (16, 16, 16)
    assert read_volume(out / "relaxed.vol").values.shape == (16 ** 3, 2)
    assert len(read_trace(out / "trace.csv")) >= 1
    assert (out / "slices" / "slice_z0008.pgm").exists()
    assert (out / "slices" / "slice_x0003.pgm").exists()
    v, f, c = read_ply(out / "mesh.ply")
    assert len(f) > 0
    text = capsys.readouterr().out
    assert "energy" in text and "omitted constants" in text

    assert main(["export-mesh", "--in", str(out / "labels.vol"), "--out", str(tmp_path / "m.ply"),
                 "--origin", "1", "2", "3", "--voxel-size", "0.5"]) == 0
    v2, f2, _ = read_ply(tmp_path / "m.ply")
    assert len(f2) == len(f)
    assert np.allclose(v2.min(axis=0), 0.5 * v.min(axis=0) + [1, 2, 3], atol=1e-5)


def test_export_mesh_rejects_relaxed_volume(tmp_path, capsys):
    from rayfusion.grid import LabelField, VoxelGrid
    from rayfusion.io import write_volume
    write_volume(tmp_path / "r.vol", LabelField(VoxelGrid((2, 2, 2)), np.full((8, 2), 0.5)))
    assert main(["export-mesh", "--in", str(tmp_path / "r.vol"), "--out", str(tmp_path / "m.ply")]) == 2


def test_synth_image_size(tmp_path):
    from rayfusion.io import read_pfm
    assert main(["synth", "--scene", "wall", "--out", str(tmp_path), "--image-size", "12"]) == 0
    assert read_pfm(tmp_path / "view00.depth.pfm").shape == (12, 12)
