from __future__ import annotations

import hashlib

import numpy as np
import pytest
from scipy.stats import spearmanr

from freehand import geometry as G
from freehand.dataio import load_scan
from freehand.synth import CorpusConfig, ImageGeometry, Phantom, PhantomSpec, TrajectorySpec, corpus_plan, generate_corpus, generate_scan
from freehand.synth.trajectory import TrajectoryError, arc_length, arc_positions, path_points

from conftest import SMALL, make_scan


def image_to_world(scan):
    return scan.world_poses @ scan.calib


def yaw_steps(scan):
    r = image_to_world(scan)[:, :3, :3]
    rel = r[1:] @ np.swapaxes(r[:-1], -1, -2)
    return np.arctan2(rel[:, 1, 0], rel[:, 0, 0])


def test_straight_constant_speed_is_uniform_screw():
    s = make_scan("straight", 40, speed="constant")
    w = image_to_world(s)
    rel = G.invert(w[:-1]) @ w[1:]
    assert np.max(np.abs(rel - rel[0])) < 1e-9


@pytest.mark.parametrize("orientation", ["perpendicular", "parallel"])
def test_turn_sign_pattern(orientation):
    for sign in (-1, 1):
        c = yaw_steps(make_scan("c_shape", 60, speed="constant", orientation=orientation, turn_sign=sign))
        assert np.all(np.sign(c) == sign)
        s = yaw_steps(make_scan("s_shape", 60, speed="constant", orientation=orientation, turn_sign=sign))
        signs = np.sign(s[np.abs(s) > 1e-12])
        assert np.count_nonzero(np.diff(signs)) == 1


def test_arc_length_matches_request():
    rng = np.random.default_rng(0)
    for shape in ("straight", "c_shape", "s_shape"):
        spec = TrajectorySpec(shape, 173.0, 400, heading_change=1.2)
        pts = path_points(spec, arc_positions(spec, rng))
        assert arc_length(pts) == pytest.approx(173.0, rel=0.01)


def test_jitter_correlation_length():
    def lag1(frames):
        steps = np.diff(arc_positions(TrajectorySpec(n_frames=2000, speed_profile="jitter", jitter_frames=frames), np.random.default_rng(1)))
        d = steps - steps.mean()
        return np.mean(d[1:] * d[:-1]) / d.var()

    assert abs(lag1(0)) < 0.1
    assert lag1(10) > 0.9
    with pytest.raises(TrajectoryError):
        TrajectorySpec(jitter_frames=-1)


def test_extreme_curvature_rejected():
    with pytest.raises(TrajectoryError, match="self-intersect"):
        TrajectorySpec("c_shape", heading_change=2.0)


def test_orientation_convention():
    # perpendicular: image normal along travel; parallel: normal across it
    for orientation, expect in (("perpendicular", 1.0), ("parallel", 0.0)):
        w = image_to_world(make_scan("straight", 5, orientation=orientation, speed="constant"))
        normal = w[0, :3, 2]
        assert abs(normal @ np.array([1.0, 0, 0])) == pytest.approx(expect, abs=1e-12)


def test_scan_lengths_in_typical_range():
    rng = np.random.default_rng(1)
    for n in rng.integers(36, 431, size=3):
        s = generate_scan(TrajectorySpec("straight", 150, int(n)), PhantomSpec(seed=0), ImageGeometry(8, 8, 4.0))
        assert 36 <= len(s) <= 430


def test_gt_self_consistency():
    s = make_scan("s_shape", 50)
    rng = np.random.default_rng(2)
    w, c = s.world_poses, s.calib
    cinv = G.invert(c)
    for _ in range(200):
        i, k, j = np.sort(rng.choice(50, 3, replace=False))
        lhs = G.relative_gt(w[k], w[j], c) @ cinv @ G.relative_gt(w[i], w[k], c)
        assert np.max(np.abs(lhs - G.relative_gt(w[i], w[j], c))) < 1e-10


def test_phantom_deterministic():
    pts = np.random.default_rng(3).uniform(-20, 20, size=(100, 3)) + [60, 0, -30]
    a, b = Phantom(PhantomSpec(seed=4)), Phantom(PhantomSpec(seed=4))
    np.testing.assert_array_equal(a.sample(pts), b.sample(pts))
    assert not np.array_equal(a.sample(pts), Phantom(PhantomSpec(seed=5)).sample(pts))


def test_straight_tubes():
    ph = Phantom(PhantomSpec(seed=2, wiggle_mm=(0.0, 0.0)))
    assert all(t.wiggle[0] == 0 and t.wiggle[3] == 0 for t in ph.tubes)
    # the default range is unchanged by the option
    assert Phantom(PhantomSpec(seed=2)).tubes[0].wiggle[0] >= 2.0


def test_image_pose_coupling():
    for k, (shape, orientation) in enumerate([("straight", "perpendicular"), ("c_shape", "parallel"), ("s_shape", "perpendicular")]):
        s = make_scan(shape, 60, seed=k, orientation=orientation, length_mm=150.0)
        corners = G.transform_points(image_to_world(s), s.corners())
        ii, jj = np.triu_indices(len(s), 1)
        pose_dist = np.linalg.norm(corners[ii] - corners[jj], axis=-1).mean(-1)
        img = s.images.astype(float)
        intensity = np.abs(img[ii] - img[jj]).mean(axis=(1, 2))
        assert spearmanr(pose_dist, intensity)[0] > 0.8


def test_full_corpus_plan_size():
    plan = corpus_plan(CorpusConfig(n_subjects=19))
    assert len(plan) == 228
    assert len({p.scan_id for p in plan}) == 228


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_small_corpus_loadable_and_deterministic(tmp_path):
    cfg = CorpusConfig(n_subjects=2, arms=["right"], n_frames=(10, 14), image={"width": 16, "height": 16, "spacing": 2.0})
    generate_corpus(cfg, tmp_path / "a")
    generate_corpus(cfg, tmp_path / "b")
    dirs = [p for p in (tmp_path / "a").iterdir() if p.is_dir()]
    assert len(dirs) == 12
    for d in dirs:
        assert 10 <= len(load_scan(d)) <= 14
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_subjects_differ_and_arms_mirror():
    cfg = CorpusConfig(n_subjects=2)
    plan = corpus_plan(cfg)
    ids = {p.scan_id for p in plan}
    assert "sub000_left_straight_parallel" in ids and "sub001_right_s_shape_perpendicular" in ids
    from freehand.synth.corpus import _subject_phantom

    a, b = _subject_phantom(cfg, 0, "right"), _subject_phantom(cfg, 1, "right")
    assert a.seed != b.seed
    assert _subject_phantom(cfg, 0, "left").mirror
