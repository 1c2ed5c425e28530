import json
from pathlib import Path

import numpy as np
import pytest

from circmc import cli
from circmc.experiments import RunConfig


def _read(path):
    return Path(path).read_bytes()


def test_normal1d_writes_reproducible_outputs(tmp_path, capsys):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        rc = cli.main(["normal1d", "--seed", "7", "--n", "400", "--r", "8",
                       "--k", "150", "--out", str(out)])
        assert rc == 0
    for name in ("trace.csv", "summary.json"):
        assert _read(out1 / name) == _read(out2 / name)
    # manifests match up to wall time and the differing output paths
    m1, m2 = (json.loads((o / "manifest.json").read_text())
              for o in (out1, out2))
    for m in (m1, m2):
        m.pop("wall_time_s")
        m["config"].pop("out_dir")
    assert m1 == m2
    report = json.loads((out1 / "summary.json").read_text())
    assert report["status"] == "coalesced"
    assert len(report["coalescence_counts"]) == 8


def test_trace_csv_round_trip(tmp_path):
    out = tmp_path / "run"
    cli.main(["normal1d", "--seed", "3", "--n", "200", "--r", "4",
              "--k", "80", "--out", str(out)])
    with open(out / "trace.csv") as fh:
        header = fh.readline().strip().split(",")
        rows = np.loadtxt(fh, delimiter=",")
    assert header == ["t", "y0"]
    assert rows.shape == (200, 2)
    # y values survive the text round trip bit-exactly
    report = json.loads((out / "summary.json").read_text())
    assert np.mean(rows[:, 1]) == pytest.approx(report["y_mean"], abs=1e-12)


def test_manifest_contains_descriptor_and_config(tmp_path):
    out = tmp_path / "run"
    cli.main(["normal1d", "--seed", "5", "--n", "200", "--r", "4",
              "--k", "80", "--out", str(out)])
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 5
    assert manifest["kernel"]["kind"] == "random_grid"
    assert manifest["status"] == "coalesced"
    assert "wall_time_s" in manifest


def test_divisibility_validation():
    with pytest.raises(ValueError):
        cli.main(["normal1d", "--seed", "1", "--n", "1000", "--r", "7"])


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 2, "n_steps": 200, "r": 4, "k": 60}))
    rc = cli.main(["normal1d", "--config", str(cfg), "--seed", "9"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert len(report["coalescence_counts"]) == 4
    # the flag overrode the file seed; rerunning with flag seed matches
    rc = cli.main(["normal1d", "--seed", "9", "--n", "200", "--r", "4",
                   "--k", "60"])
    report2 = json.loads(capsys.readouterr().out)
    assert report == report2


def test_bimodal_small_batch(capsys):
    rc = cli.main(["bimodal", "--seed", "1", "--n", "400", "--r", "8",
                   "--n-seeds", "6"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["n_runs"] == 6
    assert 0 <= report["single_mode_fraction"] <= 1


def test_mvn9_gibbs_study(tmp_path, capsys):
    out = tmp_path / "gibbs"
    rc = cli.main(["mvn9", "--study", "gibbs", "--seed", "2", "--n", "500",
                   "--out", str(out)])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["study"] == "gibbs"
    with open(out / "trace.csv") as fh:
        assert fh.readline().startswith("t,log_sq_dist_prec")


def test_table1_with_custom_stages(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "stages": [[0.04, 200], [0.02, 300]],
        "n_steps": 40, "n_replicates": 3, "w": 0.3}))
    rc = cli.main(["table1", "--config", str(cfg), "--seed", "11"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["predictions"]["multi_170000"]["0.1"] == 9
    cell = report["observed"]["0.3"]
    assert len(cell["times"]) == 3


def test_logistic_small_run(tmp_path, capsys):
    out = tmp_path / "lr"
    rc = cli.main(["logistic", "--seed", "3", "--n", "20", "--r", "10",
                   "--dataset-seed", "77", "--out", str(out)])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["status"] in ("coalesced", "cap_exceeded", "split_cycles")
    assert (out / "dataset.csv").exists()
    with open(out / "trace.csv") as fh:
        header = fh.readline().strip().split(",")
    assert "log10_inv_sqrt_tau1" in header
    assert "b01_minus_b02" in header
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["kernel"]["kind"] == "logistic_schedule"


def test_run_config_from_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": "normal1d", "seed": 4,
                               "n_steps": 100, "r": 5, "k": 30}))
    config = RunConfig.from_file(cfg)
    assert config.seed == 4 and config.r == 5
