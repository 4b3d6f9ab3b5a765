import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snowlo.cloud import PointCloud
from snowlo.errors import EmptyBreakdown, InvalidArgument, MalformedFile
from snowlo.kitti import (
    format_pose,
    list_frames,
    parse_pose,
    read_cloud_bin,
    read_labels,
    read_pose_file,
    write_cloud_bin,
    write_labels,
    write_pose_file,
)
from snowlo.pose import Pose, compose
from snowlo.trajectory import Trajectory, accumulate, kitti_metrics, write_drift_csv


def random_pose(rng):
    return Pose.from_rotvec(rng.normal(size=3), rng.uniform(-50, 50, 3))


def straight(n, step=1.0, yaw_per_step=0.0):
    return accumulate([Pose.from_rotvec([0, 0, yaw_per_step], [step, 0, 0])] * (n - 1))


def test_bin_two_points_is_32_bytes(tmp_path):
    c = PointCloud([[1, 2, 3], [4, 5, 6]], [7, 8])
    write_cloud_bin(tmp_path / "a.bin", c)
    assert (tmp_path / "a.bin").stat().st_size == 32
    back = read_cloud_bin(tmp_path / "a.bin")
    assert back.positions.tolist() == [[1, 2, 3], [4, 5, 6]]
    assert back.intensities.tolist() == [7, 8]


def test_bin_empty_file(tmp_path):
    (tmp_path / "e.bin").write_bytes(b"")
    assert len(read_cloud_bin(tmp_path / "e.bin")) == 0


def test_bin_round_trip_is_bitwise(tmp_path, rng):
    data = rng.normal(size=(8192, 4)).astype("<f4")
    data[:, 3] = np.abs(data[:, 3])
    (tmp_path / "x.bin").write_bytes(data.tobytes())
    c = read_cloud_bin(tmp_path / "x.bin")
    write_cloud_bin(tmp_path / "y.bin", c)
    assert (tmp_path / "x.bin").read_bytes() == (tmp_path / "y.bin").read_bytes()


@pytest.mark.parametrize("payload", [b"\0" * 20, np.array([0, 0, np.nan, 1], "<f4").tobytes(),
                                     np.array([0, 0, 0, -1], "<f4").tobytes()])
def test_bin_malformed(tmp_path, payload):
    (tmp_path / "bad.bin").write_bytes(payload)
    with pytest.raises(MalformedFile):
        read_cloud_bin(tmp_path / "bad.bin")


def test_labels_round_trip(tmp_path):
    write_labels(tmp_path / "l.label", np.array([0, 1, 1, 0]))
    assert read_labels(tmp_path / "l.label").tolist() == [0, 1, 1, 0]


def test_list_frames_prefers_velodyne_dir(tmp_path):
    (tmp_path / "velodyne").mkdir()
    for name in ("000001.bin", "000000.bin"):
        (tmp_path / "velodyne" / name).write_bytes(b"")
    assert [p.name for p in list_frames(tmp_path)] == ["000000.bin", "000001.bin"]


def test_identity_pose_line():
    assert format_pose(Pose.identity()) == "1 0 0 0 0 1 0 0 0 0 1 0"


def test_pose_file_round_trip(tmp_path, rng):
    poses = [random_pose(rng) for _ in range(100)]
    write_pose_file(tmp_path / "p.txt", Trajectory(poses))
    back = read_pose_file(tmp_path / "p.txt")
    for a, b in zip(poses, back.poses):
        assert np.abs(a.matrix - b.matrix).max() < 1e-8


@pytest.mark.parametrize("line", ["1 0 0 0 0 1 0 0 0 0 1", "1 0 0 0 0 1 0 0 0 0 1 x",
                                  "1 0 0 0 0 1 0 0 0 0 1 nan"])
def test_bad_pose_lines(line):
    with pytest.raises(MalformedFile):
        parse_pose(line)


def test_non_orthogonal_rotation_warns_and_projects(caplog):
    with caplog.at_level(logging.WARNING):
        p = parse_pose("1.01 0 0 0 0 1 0 0 0 0 1 0")
    assert "orthogonality" in caplog.text
    assert np.allclose(p.R.T @ p.R, np.eye(3), atol=1e-12)


def test_accumulate_identities():
    traj = accumulate([Pose.identity()] * 5)
    assert len(traj) == 6
    assert all(np.array_equal(p.matrix, np.eye(4)) for p in traj.poses)


def test_accumulate_unit_steps():
    traj = accumulate([Pose.from_rotvec([0, 0, 0], [0, 0, 1])] * 10)
    assert np.allclose(traj.poses[-1].t, [0, 0, 10])


def test_accumulate_matches_matrix_product(rng):
    rels = [random_pose(rng) for _ in range(20)]
    m = np.eye(4)
    for rel, pose in zip(rels, accumulate(rels).poses[1:]):
        m = m @ rel.matrix
        assert np.abs(pose.matrix - m).max() < 1e-10 * max(1, np.abs(m).max())


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_relative_then_accumulate_is_identity(seed):
    rng = np.random.default_rng(seed)
    traj = accumulate([random_pose(rng) for _ in range(8)])
    back = accumulate(traj.relative())
    for a, b in zip(traj.poses, back.poses):
        assert np.allclose(a.matrix, b.matrix, atol=1e-9)


def test_perfect_estimate_has_zero_drift():
    gt = straight(250)
    m = kitti_metrics(gt, gt)
    assert m.t_rel == 0 and m.r_rel == 0


def test_one_percent_scale_drift():
    m = kitti_metrics(straight(300), straight(300, step=1.01))
    assert abs(m.t_rel - 1.0) < 1e-6


def test_yaw_drift_in_degrees_per_100m():
    est = straight(300, yaw_per_step=np.radians(0.01))
    m = kitti_metrics(straight(300), est)
    assert abs(m.r_rel - 1.0) < 1e-6


def test_short_path_has_no_segments():
    with pytest.raises(EmptyBreakdown):
        kitti_metrics(straight(50), straight(50))


def test_trajectory_lengths_must_match():
    with pytest.raises(InvalidArgument):
        kitti_metrics(straight(150), straight(160))


def test_metrics_invariant_to_common_left_multiplication(rng):
    gt = accumulate([Pose.from_rotvec(rng.normal(scale=0.02, size=3), [2.0, 0.1, 0])] * 120)
    est = accumulate([Pose.from_rotvec(rng.normal(scale=0.02, size=3), [2.02, 0.1, 0])] * 120)
    base = kitti_metrics(gt, est)
    g = random_pose(rng)
    moved = kitti_metrics(gt.left_multiplied(g), est.left_multiplied(g))
    assert abs(moved.t_rel - base.t_rel) < 1e-9
    assert abs(moved.r_rel - base.r_rel) < 1e-9


def test_per_length_breakdown_and_csv(tmp_path):
    m = kitti_metrics(straight(450), straight(450, step=1.01))
    assert sorted(m.per_length) == [100, 200, 300, 400]
    write_drift_csv(tmp_path / "d.csv", m)
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "length_m,t_rel_pct,r_rel_deg_per_100m"
    assert len(lines) == 5
    assert float(lines[1].split(",")[1]) == pytest.approx(1.0)


def test_compose_order_matches_relative():
    a = Pose.from_rotvec([0, 0, 0.3], [1, 0, 0])
    b = Pose.from_rotvec([0.1, 0, 0], [0, 2, 0])
    rel = Trajectory([a, b]).relative()[0]
    assert np.allclose(compose(a, rel).matrix, b.matrix)
