import csv

import numpy as np
import pytest

from snowlo.cli import EXIT_INPUT, EXIT_OK, EXIT_PIPELINE, main
from snowlo.cloud import PointCloud
from snowlo.kitti import read_pose_file, write_cloud_bin


@pytest.fixture(scope="module")
def seq_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("seq")
    assert main(["synth", "--out", str(out), "--frames", "8", "--snow-fraction", "0.2",
                 "--seed", "3"]) == EXIT_OK
    return out


def test_synth_layout(seq_dir):
    assert len(list((seq_dir / "velodyne").glob("*.bin"))) == 8
    assert len(list((seq_dir / "labels").glob("*.bin"))) == 8
    assert len(read_pose_file(seq_dir / "poses.txt")) == 8


def test_odometry_writes_identical_pose_files(seq_dir, tmp_path):
    args = ["odometry", str(seq_dir), "--gt", str(seq_dir / "poses.txt"), "--lengths", "5,10"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    a = (tmp_path / "a" / "poses.txt").read_bytes()
    assert a == (tmp_path / "b" / "poses.txt").read_bytes()
    for name in ("diagnostics.jsonl", "drift.csv", "pair_errors.csv", "trajectory.png",
                 "drift.png"):
        assert (tmp_path / "a" / name).is_file()


def test_odometry_toggles_and_config(seq_dir, tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("inner_iters = 3\n")
    assert main(["odometry", str(seq_dir), "--out", str(tmp_path / "o"), "--config", str(cfg),
                 "--no-psm", "--no-mask", "--no-predictor", "--snow-ratio", "0.02"]) == EXIT_OK


def test_eval_and_denoise(seq_dir, tmp_path):
    gt = str(seq_dir / "poses.txt")
    assert main(["eval", "--gt", gt, "--est", gt, "--out", str(tmp_path / "e"),
                 "--lengths", "5"]) == EXIT_OK
    with open(tmp_path / "e" / "drift.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[0]["t_rel_pct"]) == 0.0
    assert main(["denoise", str(seq_dir), "--method", "mask", "--out",
                 str(tmp_path / "d")]) == EXIT_OK
    with open(tmp_path / "d" / "denoise.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 8
    assert all(float(r["precision"]) == 1.0 and float(r["recall"]) == 1.0 for r in rows)


def test_ablate(seq_dir, tmp_path):
    assert main(["ablate", str(seq_dir), "--gt", str(seq_dir / "poses.txt"), "--out",
                 str(tmp_path), "--lengths", "10"]) == EXIT_OK
    assert len((tmp_path / "ablation.csv").read_text().splitlines()) == 6
    assert (tmp_path / "ablation.png").is_file()


def test_malformed_inputs_exit_2(tmp_path):
    (tmp_path / "v").mkdir()
    (tmp_path / "v" / "000000.bin").write_bytes(b"\0" * 20)
    (tmp_path / "v" / "000001.bin").write_bytes(b"\0" * 32)
    assert main(["odometry", str(tmp_path / "v"), "--out", str(tmp_path / "o")]) == EXIT_INPUT
    assert main(["odometry", str(tmp_path / "missing"), "--out", str(tmp_path)]) == EXIT_INPUT
    (tmp_path / "p.txt").write_text("1 0 0\n")
    assert main(["eval", "--gt", str(tmp_path / "p.txt"), "--est", str(tmp_path / "p.txt"),
                 "--out", str(tmp_path)]) == EXIT_INPUT
    bad_cfg = tmp_path / "bad.cfg"
    bad_cfg.write_text("nonsense\n")
    assert main(["synth", "--out", str(tmp_path / "s"), "--config", str(bad_cfg)]) == EXIT_INPUT


def test_pipeline_failure_exits_3(tmp_path):
    d = tmp_path / "frames"
    d.mkdir()
    far = PointCloud(np.array([[100.0, 0, 0], [101.0, 0, 0]]), np.ones(2))
    for k in range(2):
        write_cloud_bin(d / f"{k:06d}.bin", far)
    assert main(["odometry", str(d), "--out", str(tmp_path / "o")]) == EXIT_PIPELINE
    assert len(read_pose_file(tmp_path / "o" / "poses.txt")) == 2


def test_missing_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
