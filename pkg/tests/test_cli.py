import json

import numpy as np
import pytest
import yaml

from floodcoarse.cli import EXIT_CHECK, EXIT_OK, EXIT_USAGE, main
from floodcoarse.grid import ElevationMap, read_raster, write_raster

SMALL = {
    "terrain": {"kind": "NotchedEmbankment", "rows": 32, "cols": 32, "cell_size": 16.0,
                "ridge_row": 20, "noise": 0.3, "seed": 1},
    "bc_grid": {"n_locations": 2, "discharges": [200.0]},
    "holdout": {"bc_grid": {"n_locations": 2, "discharges": [300.0]}},
    "solver": {"horizon_T": 600.0},
    "train": {"epochs": 2, "batch_size": 2, "lr": 0.02, "seed": 0},
}


@pytest.fixture
def workdir(tmp_path):
    cfg = tmp_path / "small.yaml"
    cfg.write_text(yaml.safe_dump(SMALL))
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "gen"), "--pgm"]) == EXIT_OK
    return tmp_path


def test_generate_outputs(workdir):
    gen = workdir / "gen"
    for name in ("dem.asc", "bcs.json", "holdout.json", "dem.pgm", "manifest.json"):
        assert (gen / name).exists(), name
    assert read_raster(gen / "dem.asc").shape == (32, 32)
    assert len(json.loads((gen / "bcs.json").read_text())) == 2
    manifest = json.loads((gen / "manifest.json").read_text())
    assert manifest["command"] == "generate" and "dem.asc" in manifest["outputs"]


def test_simulate_downsample_diffmap(workdir):
    gen = workdir / "gen"
    assert main(["simulate", "--dem", str(gen / "dem.asc"), "--bc", str(gen / "bcs.json"),
                 "--hours", "0.1", "--out", str(workdir / "sim")]) == EXIT_OK
    h = read_raster(workdir / "sim" / "h.asc")
    assert h.z.max() > 0
    assert (workdir / "sim" / "steplog.csv").read_text().startswith("step,")
    assert main(["downsample", "--dem", str(gen / "dem.asc"), "--factor", "16",
                 "--out", str(workdir / "ds")]) == EXIT_OK
    assert read_raster(workdir / "ds" / "coarse.asc").shape == (2, 2)
    coarse = ElevationMap(np.zeros((2, 2)), 256.0)
    write_raster(coarse, workdir / "dry.asc")
    assert main(["diffmap", "--a", str(workdir / "dry.asc"), "--b", str(workdir / "sim" / "h.asc"),
                 "--out", str(workdir / "diff")]) == EXIT_OK
    diff = read_raster(workdir / "diff" / "diff.asc").z
    assert np.all(diff <= 0)  # the dry map is less inundated everywhere
    summary = (workdir / "diff" / "summary.csv").read_text().splitlines()
    assert summary[0] == "loss,sum,per_pixel_mean" and summary[1].startswith("huber,")


def test_gradcheck_passes_and_can_fail(tmp_path):
    assert main(["gradcheck", "--size", "16", "--steps", "50", "--out", str(tmp_path / "gc")]) == EXIT_OK
    rows = (tmp_path / "gc" / "gradcheck.csv").read_text().splitlines()
    assert rows[0] == "row,col,adjoint,finite_difference" and len(rows) == 1 + 256
    # a wildly large epsilon breaks agreement
    assert main(["gradcheck", "--size", "8", "--steps", "20", "--eps", "5", "--tol", "1e-12",
                 "--out", str(tmp_path / "gc2")]) == EXIT_CHECK


def test_optimize_evaluate_replay(workdir):
    gen = workdir / "gen"
    cfg = workdir / "small.yaml"
    assert main(["optimize", "--dem", str(gen / "dem.asc"), "--config", str(cfg),
                 "--bc-set", str(gen / "bcs.json"), "--holdout", str(gen / "holdout.json"),
                 "--out", str(workdir / "opt")]) == EXIT_OK
    hist = (workdir / "opt" / "history.csv").read_text().splitlines()
    assert hist[0] == "epoch,train_loss,holdout_loss,lr,divergence_events" and len(hist) == 4
    assert (workdir / "opt" / "model.json").exists()
    assert main(["replay", "--manifest", str(workdir / "opt" / "manifest.json"),
                 "--out", str(workdir / "opt_replay")]) == EXIT_OK
    assert main(["replay", "--manifest", str(workdir / "opt" / "manifest.json"),
                 "--out", str(workdir / "opt")]) == EXIT_USAGE

    dataset = {"factor": 16, "holdout": [{"dem": str(gen / "dem.asc"), "bc": "auto"}]}
    ds = workdir / "ds.yaml"
    ds.write_text(yaml.safe_dump(dataset))
    assert main(["evaluate", "--dataset", str(ds), "--config", str(cfg), "--kinds", "AvgPool",
                 "--out", str(workdir / "ev")]) == EXIT_OK
    table = (workdir / "ev" / "table.csv").read_text().splitlines()
    assert table[0] == "model,n,mean,p50,p90,ratio_to_avgpool"
    assert table[1].startswith("AvgPool,1,") and table[1].endswith(",1.0")


def test_replay_detects_changed_input(workdir):
    gen = workdir / "gen"
    assert main(["downsample", "--dem", str(gen / "dem.asc"), "--out", str(workdir / "ds")]) == EXIT_OK
    z = read_raster(gen / "dem.asc")
    write_raster(z.with_z(z.z + 1.0), gen / "dem.asc")
    assert main(["replay", "--manifest", str(workdir / "ds" / "manifest.json"),
                 "--out", str(workdir / "ds2")]) == EXIT_USAGE


def test_usage_errors(tmp_path, capsys):
    assert main(["simulate", "--dem", str(tmp_path / "missing.asc"), "--auto-bc",
                 "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert main(["simulate"]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    bad = tmp_path / "bad.asc"
    bad.write_text("ncols 2\nnrows x\n")
    assert main(["downsample", "--dem", str(bad), "--out", str(tmp_path / "o2")]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_bench_command(tmp_path):
    cfg = tmp_path / "b.yaml"
    cfg.write_text(yaml.safe_dump({"terrain": {"kind": "Valley", "rows": 64, "cols": 64, "cell_size": 4.0},
                                   "auto_bc": {"width_m": 64.0, "discharge": 2.0},
                                   "solver": {"horizon_T": 60.0}}))
    assert main(["bench", "--config", str(cfg), "--factor", "4", "--out", str(tmp_path / "b")]) == EXIT_OK
    rows = dict(line.split(",") for line in (tmp_path / "b" / "bench.csv").read_text().splitlines()[1:])
    assert rows["coarse_shape"] == "16x16"
    manifest = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert manifest["bench_wall_clock"]["fine"] > 0
