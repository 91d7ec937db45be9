import json
import logging

import numpy as np
import pytest

from icecontour.cli import main
from icecontour.io import load_volume


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["phantom-gen", "--seed", "7", "--n-slices", "6", "--out", str(d)]) == 0
    return d


def test_phantom_gen_outputs(run_dir):
    for name in ("ct.json", "ct.raw", "labels.json", "labels.raw", "manifest.json", "phantom.json"):
        assert (run_dir / name).exists()
    assert len(list((run_dir / "meshes").glob("*.off"))) == 6
    m = json.loads((run_dir / "manifest.json").read_text())
    assert len(m["slices"]) == 6 and m["patient_id"] == "phantom-seed7"


def test_build_volume_logs_occupancy(run_dir, caplog):
    with caplog.at_level(logging.INFO, logger="icecontour"):
        rc = main(["build-volume", str(run_dir / "manifest.json")])
    assert rc == 0
    assert (run_dir / "sparse.json").exists() and (run_dir / "seeds.json").exists()
    assert "observed" in caplog.text
    sv = load_volume(run_dir / "sparse.json")
    assert sv.occupancy.any()


def test_segment_project_evaluate_chain(run_dir, capsys):
    m = str(run_dir / "manifest.json")
    assert main(["build-volume", m, "--grid-from", str(run_dir / "labels.json"),
                 "--out", str(run_dir / "g.json"), "--seeds-out", str(run_dir / "gs.json")]) == 0
    assert main(["segment", str(run_dir / "g.json"), "--seeds", str(run_dir / "gs.json"),
                 "--out", str(run_dir / "seg.json")]) == 0
    assert main(["project-mask", str(run_dir / "seg.json"), "--manifest", m,
                 "--out", str(run_dir / "masks")]) == 0
    assert len(list((run_dir / "masks").glob("mask_*.pgm"))) == 6
    capsys.readouterr()
    assert main(["evaluate", "--pred", str(run_dir / "seg.json"), "--gt", str(run_dir / "labels.json"),
                 "--pred-masks", str(run_dir / "masks"), "--manifest", m,
                 "--out", str(run_dir / "eval")]) == 0
    out = capsys.readouterr().out
    assert "3D volume" in out and "projected 2D" in out
    for name in ("report.txt", "report.csv", "report.json", "report.png"):
        assert (run_dir / "eval" / name).exists()


def test_evaluate_identical_files_all_ones(run_dir, capsys):
    lab = str(run_dir / "labels.json")
    assert main(["evaluate", "--pred", lab, "--gt", lab, "--out", str(run_dir / "same"),
                 "--no-figures"]) == 0
    text = capsys.readouterr().out
    rows = [ln for ln in text.splitlines() if ln.split() and ln.split()[0] in
            ("LA", "LAA", "LIPV", "LSPV", "RIPV", "RSPV", "Total")]
    assert len(rows) == 7 and all(r.split()[1:] == ["100.0", "/", "0.000"] for r in rows)


def test_complete_writes_dense(run_dir):
    assert main(["build-volume", str(run_dir / "manifest.json"), "--out", str(run_dir / "c_in.json")]) == 0
    assert main(["complete", str(run_dir / "c_in.json"), "--out", str(run_dir / "dense.json"),
                 "--iterations", "2"]) == 0
    d = load_volume(run_dir / "dense.json")
    assert np.all(np.isfinite(d.values))


def test_pair_mesh_finds_itself(run_dir, capsys):
    assert main(["pair-mesh", str(run_dir / "meshes" / "LA.off"), str(run_dir / "meshes")]) == 0
    idx, path, dist = capsys.readouterr().out.strip().split("\t")
    assert path.endswith("LA.off") and float(dist) < 1e-9


def test_shapes_ladder(capsys):
    assert main(["shapes", "--dims", "256,256,256", "--preset", "unet8"]) == 0
    lines = capsys.readouterr().out.splitlines()
    ext = [int(ln.rsplit("->", 1)[1].split("x")[0]) for ln in lines[1:9]]
    assert ext == [128, 64, 32, 16, 8, 4, 2, 1]


def test_shapes_error_exit_code(caplog):
    assert main(["shapes", "--dims", "200,200,200"]) == 2
    assert "layer 8" in caplog.text


def test_loss_check(capsys):
    assert main(["loss-check", "--seed", "3"]) == 0
    out = dict(ln.split() for ln in capsys.readouterr().out.splitlines())
    assert float(out["max_fd_rel_err"]) < 1e-6


def test_missing_input_exit_2(tmp_path):
    assert main(["build-volume", str(tmp_path / "nope.json")]) == 2


def test_unknown_command_exit_2():
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2


def test_malformed_dims_is_usage_error():
    with pytest.raises(SystemExit) as e:
        main(["shapes", "--dims", "64x64x64"])
    assert e.value.code == 2


def test_config_defaults_echoed(tmp_path, caplog):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 5}))
    with caplog.at_level(logging.INFO, logger="icecontour"):
        assert main(["loss-check", "--config", str(cfg)]) == 0
    assert "losses.lambda_rec_s = 1000.0" in caplog.text
    assert "effective seed=5" in caplog.text
