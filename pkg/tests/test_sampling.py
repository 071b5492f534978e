from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from freehand import geometry as G
from freehand.sampling import (
    ScanTooShortError,
    TaskSet,
    all_pairs,
    dependency_of,
    eligible_scans,
    full_taskset,
    gt_transforms,
    sample_sequence,
    sample_tasks,
)

from conftest import make_scan


def test_single_valid_start(rng):
    s = make_scan(n_frames=10)
    assert {sample_sequence(s, 10, rng).start_index for _ in range(20)} == {1}


def test_start_uniformity():
    s = make_scan(n_frames=100, speed="constant")
    rng = np.random.default_rng(0)
    starts = [sample_sequence(s, 2, rng).start_index for _ in range(10_000)]
    counts = np.bincount(starts, minlength=100)[1:]
    assert len(counts) == 99 and counts.min() > 0
    assert stats.chisquare(counts).pvalue > 1e-3


def test_m2_has_one_task(rng):
    s = make_scan(n_frames=10)
    sample = sample_sequence(s, 2, rng)
    assert list(sample.gt_pairs) == [(1, 2)]
    assert sample.frames.shape[0] == 2


def test_too_short_scan(rng):
    s = make_scan(n_frames=6)
    with pytest.raises(ScanTooShortError):
        sample_sequence(s, 7, rng)
    kept, skipped = eligible_scans([s, make_scan(n_frames=10, seed=1)], 7)
    assert skipped == [s.scan_id] and len(kept) == 1


def test_sample_gt_matches_geometry(rng):
    s = make_scan(n_frames=20)
    sample = sample_sequence(s, 5, rng)
    for (i, j), t in sample.gt_pairs.items():
        a = sample.start_index + i - 2
        b = sample.start_index + j - 2
        np.testing.assert_allclose(t, G.relative_gt(s.world_poses[a], s.world_poses[b], s.calib), atol=1e-12)


def test_task_examples(rng):
    assert sample_tasks(2, 1, (1, 2), rng).pairs == ((1, 2),)
    assert set(sample_tasks(3, 3, (1, 3), rng).pairs) == {(1, 2), (1, 3), (2, 3)}
    ts = sample_tasks(20, 80, (9, 15), rng)
    assert ts.tau_plus_1 == 80 and len(set(ts.pairs)) == 80 and (9, 15) in ts.pairs
    assert all(1 <= i < j <= 20 for i, j in ts.pairs)


def test_task_sampling_is_stratified(rng):
    ts = sample_tasks(20, 45, (1, 20), rng)
    intervals = {j - i for i, j in ts.pairs}
    # every adjacent pair, then every interval bin touched
    assert all((k, k + 1) in ts.pairs for k in range(1, 20))
    assert len(intervals) >= 8
    assert max(intervals) == 19


def test_task_sampling_deterministic():
    a = sample_tasks(30, 100, (10, 12), np.random.default_rng(5))
    b = sample_tasks(30, 100, (10, 12), np.random.default_rng(5))
    assert a == b


def test_task_errors(rng):
    with pytest.raises(ValueError):
        sample_tasks(5, 11, (1, 2), rng)
    with pytest.raises(ValueError):
        sample_tasks(5, 4, (4, 6), rng)
    with pytest.raises(ValueError):
        TaskSet(4, ((1, 2), (1, 2)), (1, 2))
    with pytest.raises(ValueError):
        TaskSet(4, ((1, 2),), (1, 3))


def test_taskset_json():
    ts = full_taskset(5, (2, 4))
    assert TaskSet.from_json(ts.to_json()) == ts
    assert ts.tau_plus_1 == 10 and ts.pairs == tuple(all_pairs(5))


def test_dependency_examples():
    p = dependency_of(100, 75, 76)
    assert (p.past, p.future, p.interval) == (74, 24, 1)
    p = dependency_of(2, 1, 2)
    assert (p.past, p.future) == (0, 0)
    p = dependency_of(20, 1, 20)
    assert (p.past, p.future, p.interval) == (0, 0, 19)
    for M in range(2, 12):
        for i, j in all_pairs(M):
            p = dependency_of(M, i, j)
            assert p.past + p.interval + p.future == M - 1
    with pytest.raises(ValueError):
        dependency_of(5, 3, 3)


def test_gt_chain_consistency():
    s = make_scan(n_frames=25)
    cinv = G.invert(s.calib)
    pairs = all_pairs(6)
    t = dict(zip(pairs, gt_transforms(s.world_poses, s.calib, 4, pairs)))
    for i, k, j in [(1, 2, 3), (1, 4, 6), (2, 3, 5)]:
        composed = t[(k, j)] @ cinv @ t[(i, k)]
        np.testing.assert_allclose(composed, t[(i, j)], atol=1e-8)
