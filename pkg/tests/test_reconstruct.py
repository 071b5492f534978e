from __future__ import annotations

import numpy as np
import pytest

from freehand import geometry as G
from freehand.reconstruct import (
    CachedPredictor,
    ImageGrid,
    OraclePredictor,
    Trajectory,
    accumulated_error,
    chain,
    dice_overlap,
    dice_points,
    evaluate,
    evaluate_scan,
    final_drift,
    frame_error,
    gt_trajectory,
)
from freehand.sampling import ScanTooShortError, TaskSet, full_taskset, gt_transforms, sample_tasks

from conftest import make_scan

GRID = ImageGrid(32, 32, 1.5)
CORNERS = GRID.corners()


def shifted(traj, offset):
    t = traj.transforms.copy()
    t[1:, :3, 3] += offset
    return Trajectory(t, traj.reconstructed, traj.interpolated)


class BiasedOracle(OraclePredictor):
    def __init__(self, tasks, bias):
        super().__init__(tasks)
        self.bias = bias

    def predict_windows(self, scan, starts):
        return super().predict_windows(scan, starts) @ self.bias


@pytest.mark.parametrize("M,main", [(2, (1, 2)), (5, (2, 4)), (8, (1, 8)), (8, (7, 8)), (8, (3, 5))])
@pytest.mark.parametrize("shape", ["straight", "c_shape", "s_shape"])
def test_oracle_chain_is_exact(M, main, shape):
    s = make_scan(shape, 41)
    traj = chain(s, OraclePredictor(full_taskset(M, main)))
    gt = gt_trajectory(s)
    assert np.max(np.abs(traj.transforms - gt.transforms)) < 1e-8
    assert not traj.interpolated.any()
    np.testing.assert_allclose(traj.transforms[0], np.eye(4), atol=1e-12)
    assert final_drift(gt, traj, CORNERS) < 1e-8
    assert dice_overlap(gt, traj, GRID) == 1.0


def test_interval_one_chain_equals_composed_pairs():
    s = make_scan("s_shape", 25)
    traj = chain(s, OraclePredictor(full_taskset(2, (1, 2))))
    cinv = G.invert(s.calib)
    pose = np.eye(4)
    for k in range(1, 25):
        step = cinv @ G.relative_gt(s.world_poses[k - 1], s.world_poses[k], s.calib)
        pose = pose @ G.invert(step)
        np.testing.assert_allclose(traj.transforms[k], pose, atol=1e-9)


def test_single_window():
    s = make_scan(n_frames=6)
    traj = chain(s, OraclePredictor(full_taskset(6, (2, 5))))
    assert list(traj.reconstructed) == [2, 3, 4, 5, 6]
    with pytest.raises(ScanTooShortError):
        chain(s, OraclePredictor(full_taskset(7, (1, 2))))


def test_gap_modes_and_flags():
    s = make_scan("c_shape", 40)
    sparse = TaskSet(8, ((1, 8), (2, 3)), (1, 8))
    traj = chain(s, OraclePredictor(sparse), gap_mode="auxiliary")
    # only anchors, never reached by an auxiliary pair, frames 2-7 are interpolated
    assert not traj.interpolated[0] and not traj.interpolated[7]
    assert traj.interpolated[1:7].all()
    full = OraclePredictor(full_taskset(8, (1, 8)))
    assert not chain(s, full, gap_mode="auxiliary").interpolated.any()
    interp = chain(s, full, gap_mode="interpolate")
    assert interp.interpolated[1:7].all()
    with pytest.raises(ValueError):
        chain(s, full, gap_mode="nope")


def test_trailing_frames_use_last_window():
    s = make_scan("s_shape", 30)
    ts = full_taskset(8, (2, 6))
    traj = chain(s, OraclePredictor(ts))
    assert not traj.interpolated.any()
    assert np.max(np.abs(traj.transforms - gt_trajectory(s).transforms)) < 1e-8


def test_frame_error_examples():
    rng = np.random.default_rng(0)
    t = G.random_se3(rng)
    assert frame_error(t, t, CORNERS) == 0.0
    assert frame_error(np.eye(4), G.translation(0, 2, 0), CORNERS) == pytest.approx(2.0)
    a, b = G.random_se3(rng), G.random_se3(rng)
    loop = np.mean([np.linalg.norm((a @ np.append(p, 1) - b @ np.append(p, 1))[:3]) for p in CORNERS])
    assert frame_error(a, b, CORNERS) == pytest.approx(loop, abs=1e-10)


def test_accumulated_error_examples():
    gt = gt_trajectory(make_scan(n_frames=12))
    assert accumulated_error(gt, gt, GRID) == 0.0
    assert accumulated_error(gt, shifted(gt, [0, 3.0, 0]), GRID) == pytest.approx(3.0)


def test_accumulated_error_loop_oracle():
    rng = np.random.default_rng(1)
    gt = gt_trajectory(make_scan(n_frames=6))
    pred = Trajectory(G.random_se3(rng, 6, 10), gt.reconstructed, gt.interpolated)
    grid = ImageGrid(5, 4, 2.0)
    dists = []
    for f in gt.reconstructed:
        for y in range(4):
            for x in range(5):
                p = np.array([x * 2.0, y * 2.0, 0, 1])
                dists.append(np.linalg.norm((gt.transforms[f - 1] @ p - pred.transforms[f - 1] @ p)[:3]))
    assert accumulated_error(gt, pred, grid) == pytest.approx(np.mean(dists), abs=1e-10)


def test_accumulated_error_stride_approximation():
    rng = np.random.default_rng(2)
    for _ in range(3):
        s = make_scan("c_shape", 30, seed=int(rng.integers(100)))
        gt = gt_trajectory(s)
        drift = G.params_to_matrix(np.array([0.002, -0.001, 0.003, 0.1, 0.05, -0.08]))
        poses = [np.eye(4)]
        for k in range(1, 30):
            poses.append(gt.transforms[k] @ np.linalg.matrix_power(drift, k))
        pred = Trajectory(np.array(poses), gt.reconstructed, gt.interpolated)
        grid = ImageGrid(64, 64, 0.75)
        full, coarse = accumulated_error(gt, pred, grid, 1), accumulated_error(gt, pred, grid, 8)
        assert abs(coarse - full) / full < 0.02


def test_index_set_mismatch():
    gt = gt_trajectory(make_scan(n_frames=10))
    other = gt_trajectory(make_scan(n_frames=11))
    with pytest.raises(ValueError):
        accumulated_error(gt, other, GRID)


def test_dice_examples():
    gt = gt_trajectory(make_scan(n_frames=10))
    assert dice_overlap(gt, gt, GRID) == 1.0
    assert dice_overlap(gt, shifted(gt, [500.0, 0, 0]), GRID) < 0.15  # frame 1 is shared
    lattice = np.stack(np.meshgrid(*[np.arange(0, 20, 0.25)] * 3, indexing="ij"), -1).reshape(-1, 3)
    assert dice_points(lattice, lattice + [1000.0, 0, 0]) == 0.0
    # two equal cubes shifted by half their side overlap by half their volume
    assert dice_points(lattice, lattice + [10.0, 0, 0]) == pytest.approx(0.5, abs=1 / 20)
    with pytest.raises(ValueError):
        dice_points(np.zeros((0, 3)), lattice)


def test_final_drift_examples():
    s = make_scan(n_frames=10)
    gt = gt_trajectory(s)
    t = gt.transforms.copy()
    t[-1] = G.translation(5, 0, 0) @ t[-1]
    pred = Trajectory(t, gt.reconstructed, gt.interpolated)
    assert final_drift(gt, pred, CORNERS) == pytest.approx(5.0)
    assert final_drift(gt, pred, CORNERS) == pytest.approx(frame_error(gt.transforms[-1], t[-1], CORNERS), abs=1e-12)


def test_drift_linear_under_constant_bias():
    s = make_scan("straight", 81, speed="constant")
    bias = G.params_to_matrix(np.array([0, 0, 0, 0.05, -0.02, 0.03]))
    ts = full_taskset(2, (1, 2))
    drifts = []
    for k in (10, 20, 40, 80):
        part = s.cropped(k + 1)
        traj = chain(part, BiasedOracle(ts, bias))
        drifts.append(final_drift(gt_trajectory(part), traj, CORNERS) / k)
    assert np.ptp(drifts) / np.mean(drifts) < 0.01


def test_metrics_world_frame_invariant():
    s = make_scan("s_shape", 30)
    gt = gt_trajectory(s)
    bias = G.params_to_matrix(np.array([0.01, 0.0, -0.01, 0.2, 0.1, 0.0]))
    pred = chain(s, BiasedOracle(full_taskset(2, (1, 2)), bias))
    q = G.params_to_matrix(np.array([0.4, -0.3, 1.2, 17.3, -4.1, 8.8]))
    moved_gt = Trajectory(q @ gt.transforms, gt.reconstructed, gt.interpolated)
    moved_pred = Trajectory(q @ pred.transforms, pred.reconstructed, pred.interpolated)
    assert accumulated_error(moved_gt, moved_pred, GRID) == pytest.approx(accumulated_error(gt, pred, GRID), abs=1e-9)
    assert final_drift(moved_gt, moved_pred, CORNERS) == pytest.approx(final_drift(gt, pred, CORNERS), abs=1e-9)
    assert dice_overlap(moved_gt, moved_pred, GRID) == pytest.approx(dice_overlap(gt, pred, GRID), abs=0.1)


def test_evaluate_and_cache():
    scans = [make_scan(shape, 30, seed=k) for k, shape in enumerate(["straight", "c_shape", "s_shape"])]
    calls = []

    class Counting(OraclePredictor):
        def predict_windows(self, scan, starts):
            calls.append(len(starts))
            return super().predict_windows(scan, starts)

    pred = CachedPredictor(Counting(full_taskset(6, (1, 6))))
    report = evaluate(scans, pred, stride=2)
    assert report.mean("eps_acc") < 1e-8 and report.mean("eps_dice") == 1.0
    n = sum(calls)
    evaluate(scans, pred, stride=2)
    assert sum(calls) == n
    summary = report.to_json()
    assert summary["stride_mode"] == "strided approximation"
    assert summary["dependency"] == {"past": 0, "future": 0, "interval": 5}


def test_report_files(tmp_path):
    s = make_scan(n_frames=20)
    metrics, traj = evaluate_scan(s, OraclePredictor(full_taskset(3, (1, 3))))
    assert metrics.eps_frame == 0.0
    traj.save_csv(tmp_path / "traj.csv")
    back = Trajectory.load_csv(tmp_path / "traj.csv")
    np.testing.assert_array_equal(back.transforms, traj.transforms)


def test_sampled_taskset_chain_runs():
    s = make_scan("c_shape", 50)
    ts = sample_tasks(12, 20, (5, 9), np.random.default_rng(0))
    traj = chain(s, OraclePredictor(ts))
    G.validate_se3(traj.transforms, tol=1e-8)
    # anchors are exact even when gaps are interpolated
    gt = gt_trajectory(s)
    for a in traj.anchors:
        np.testing.assert_allclose(traj.transforms[a - 1], gt.transforms[a - 1], atol=1e-8)
