import csv
import json

import numpy as np
import pytest

from splinetomo.cli import EXIT_DIGEST, EXIT_INPUT, EXIT_USAGE, _digests, main
from splinetomo.formats import read_sinogram, read_volume, write_volume
from splinetomo.geometry import load_geometry

SMALL = ["--views", "4", "--rows", "6", "--cols", "8"]


def run(*argv):
    return main([str(a) for a in argv])


def test_zero_volume_projects_to_zero(tmp_path):
    write_volume(tmp_path / "z", np.zeros((6, 6, 6)))
    assert run("geometry", "--shape", "6,6,6", *SMALL, "--out", tmp_path / "g.json") == 0
    for proj in ("splinesplat", "voxel"):
        out = tmp_path / f"s_{proj}"
        assert run("project", "--volume", tmp_path / "z", "--geometry", tmp_path / "g.json",
                   "--projector", proj, "--out", out) == 0
        values, _ = read_sinogram(out, load_geometry(tmp_path / "g.json"))
        assert values.shape == (4, 6, 8) and not np.any(values)
    manifest = json.loads((tmp_path / "s_voxel.manifest.json").read_text())
    assert manifest["subcommand"] == "project"
    assert set(manifest) >= {"flags", "seeds", "inputs", "outputs", "timings_s", "version"}
    assert any(k.endswith("s_voxel.raw") for k in manifest["outputs"])


def test_reconstruct_refuses_foreign_sinogram(tmp_path, capsys):
    run("geometry", "--shape", "6,6,6", *SMALL, "--out", tmp_path / "a.json")
    run("geometry", "--shape", "6,6,6", "--views", "5", "--rows", "6", "--cols", "8",
        "--out", tmp_path / "b.json")
    write_volume(tmp_path / "z", np.ones((6, 6, 6)))
    run("project", "--volume", tmp_path / "z", "--geometry", tmp_path / "a.json",
        "--projector", "voxel", "--out", tmp_path / "s")
    capsys.readouterr()
    code = run("reconstruct", "--sinogram", tmp_path / "s", "--geometry", tmp_path / "b.json",
               "--shape", "6,6,6", "--out", tmp_path / "r")
    assert code == EXIT_DIGEST
    assert capsys.readouterr().err.startswith("splinetomo: digest-mismatch:")
    assert not (tmp_path / "r.raw").exists()


def test_error_categories(tmp_path, capsys):
    assert run("project", "--volume", tmp_path / "none", "--geometry", tmp_path / "none.json",
               "--out", tmp_path / "x") == EXIT_INPUT
    # a geometry whose source sits inside the volume is rejected after parsing
    assert run("geometry", "--shape", "6,6,6", "--source-distance", "1", "--detector-distance", "1",
               "--out", tmp_path / "g.json") == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["geometry", "--shape", "6,6", "--out", str(tmp_path / "g.json")])
    assert exc.value.code == EXIT_USAGE
    err = capsys.readouterr().err
    assert "splinetomo: input:" in err and "splinetomo: invalid-argument:" in err


def _pipeline(root):
    root.mkdir()
    steps = [
        ("phantom", "--shape", "8,8,6", "--seed", "5", "--coefficients", "--out", root / "ph"),
        ("geometry", "--shape", "8,8,6", *SMALL, "--out", root / "g.json"),
        ("simulate", "--volume", root / "ph", "--geometry", root / "g.json",
         "--noise-variance", "1e-3", "--seed", "2", "--out", root / "y"),
        ("reconstruct", "--sinogram", root / "y", "--geometry", root / "g.json", "--shape", "8,8,6",
         "--iterations", "5", "--out", root / "rec"),
        ("backproject", "--sinogram", root / "y", "--geometry", root / "g.json", "--shape", "8,8,6",
         "--projector", "voxel", "--out", root / "bp"),
        ("psnr", "--reference", root / "ph", "--test", root / "rec", "--out", root / "psnr.json"),
    ]
    for argv in steps:
        assert run(*argv) == 0, argv
    return {k.split("/")[-1]: v for k, v in _digests([root]).items()}


def test_pipeline_is_reproducible(tmp_path):
    a = _pipeline(tmp_path / "a")
    b = _pipeline(tmp_path / "b")
    assert a == b and len(a) >= 12
    assert "rec.residuals.csv" in a
    assert json.loads((tmp_path / "a" / "psnr.json").read_text())["psnr_db"] > 0
    _, header = read_volume(tmp_path / "a" / "rec")
    assert header["value_kind"] == "coefficients"


def test_benchmark(tmp_path):
    out = tmp_path / "bench"
    assert run("benchmark", "--shape", "10,10,8", "--views", "3", "--rows", "6", "--cols", "8",
               "--reps", "2", "--audit-rays", "50", "--out", out) == 0
    doc = json.loads((out / "benchmark.json").read_text())
    assert {r["projector"] for r in doc["projectors"]} == {"voxel", "splinesplat"}
    assert all(r["rays_per_second"] > 0 for r in doc["projectors"])
    assert doc["neighbor_audit"]["bound_exceeded"] == 0
    with open(out / "neighbor_counts.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 50 and all(int(r["evaluations"]) <= int(r["bound"]) for r in rows)
    assert (out / "benchmark.png").stat().st_size > 0
    assert (out / "run.manifest.json").exists()


def test_compare_two_seeds(tmp_path):
    out = tmp_path / "cmp"
    assert run("compare", "--shape", "12,12,8", "--views", "8", "--rows", "8", "--cols", "12",
               "--seeds", "0,1", "--iterations", "5", "--out", out) == 0
    doc = json.loads((out / "summary.json").read_text())
    assert [r["seed"] for r in doc["runs"]] == [0, 1]
    for r in doc["runs"]:
        assert r["gap_db"] == pytest.approx(r["psnr_spline_db"] - r["psnr_voxel_db"])
    with open(out / "summary.csv") as f:
        assert len(list(csv.reader(f))) == 3
    for name in ("slices.png", "convergence.png", "psnr.png", "slice_reference.csv",
                 "residuals_splinesplat_seed1.csv", "geometry.json", "run.manifest.json"):
        assert (out / name).exists(), name
    assert np.loadtxt(out / "slice_voxel_seed0.csv", delimiter=",").shape == (12, 12)
