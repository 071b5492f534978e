from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from freehand import geometry as G
from freehand.backends import TrainConfig
from freehand.dataio import PROTOCOLS
from freehand.harness import (
    AblationArm,
    AblationSpec,
    ExperimentConfig,
    emit_report,
    load_table,
    reduce_training_set,
    run_ablation,
    run_sweep,
    run_training,
    select_main_task,
    welch_ttest,
)
from freehand.harness.ablation import AblationReport, EmptyArmError
from freehand.harness.report import ReportError
from freehand.harness.stats import DegenerateSampleError
from freehand.harness.sweep import SweepResult
from freehand.reconstruct import METRIC_NAMES, OraclePredictor, evaluate
from freehand.sampling import dependency_of, full_taskset, TaskSet
from freehand.synth import CorpusConfig, generate_corpus

from conftest import make_scan


class NoisyOracle(OraclePredictor):
    """Ground truth with a per-task bias that grows with the pair interval."""

    def predict_windows(self, scan, starts):
        gt = super().predict_windows(scan, starts)
        bias = np.array([G.params_to_matrix(np.array([0.001 * k, 0, 0, 0.02 * (j - i), 0.01 * i, 0])) for k, (i, j) in enumerate(self.tasks.pairs)])
        return gt @ bias


@pytest.fixture(scope="module")
def scans():
    return [make_scan(shape, 24, seed=k) for k, shape in enumerate(["straight", "c_shape", "s_shape"])]


@pytest.fixture(scope="module")
def corpus():
    cfg = CorpusConfig(n_subjects=4, arms=["right"], n_frames=(16, 16), image={"width": 32, "height": 32, "spacing": 1.5})
    scans, split = generate_corpus(cfg)
    by_id = {s.scan_id: s for s in scans}
    return [by_id[i] for i in split.train], [by_id[i] for i in split.val], [by_id[i] for i in split.test]


def test_welch_examples():
    assert welch_ttest([1, 2, 3], [1, 2, 3]) == 1.0
    a, b = [1, 2, 3, 4, 5], [2, 3, 4, 5, 6]
    assert welch_ttest(a, b) == pytest.approx(stats.ttest_ind(a, b, equal_var=False).pvalue, abs=1e-9)
    assert welch_ttest([1, 2, 3, 4], [1001, 1002, 1003, 1004]) < 1e-6
    rng = np.random.default_rng(0)
    for _ in range(20):
        x, y = rng.normal(size=rng.integers(2, 20)), rng.normal(0.5, 2, size=rng.integers(2, 20))
        assert welch_ttest(x, y) == pytest.approx(stats.ttest_ind(x, y, equal_var=False).pvalue, abs=1e-9)


def test_welch_errors():
    with pytest.raises(DegenerateSampleError):
        welch_ttest([1, 1, 1], [2, 2, 2])
    with pytest.raises(ValueError):
        welch_ttest([1], [1, 2])


def test_oracle_sweep_is_exact(scans):
    models = {"m4": OraclePredictor(full_taskset(4, (1, 4))), "m2": OraclePredictor(full_taskset(2, (1, 2)))}
    res = run_sweep(models, scans, stride=4)
    assert len(res.rows) == 6 + 1
    for r in res.rows:
        assert r.mean["eps_acc"] < 1e-8 and r.mean["eps_drift"] < 1e-8 and r.mean["eps_dice"] == 1.0
        dep = dependency_of(r.M, r.i, r.j)
        assert (r.past, r.future, r.interval) == (dep.past, dep.future, dep.interval)


def test_aggregation_order(scans):
    res = run_sweep({"m5": NoisyOracle(full_taskset(5, (1, 5)))}, scans, stride=4)
    best, mean = res.best_over_tasks(5), res.mean_over_tasks(5)
    for m in METRIC_NAMES:
        if m == "eps_dice":
            assert mean[m][0] <= best[m][0]
        else:
            assert mean[m][0] >= best[m][0]
    x, y, _ = res.pooled("past", "eps_acc")
    assert list(x) == [0, 1, 2, 3]


def test_missing_rows_are_skipped(scans):
    sparse = TaskSet(4, ((1, 2), (1, 4)), (1, 4))
    res = run_sweep({"m": OraclePredictor(sparse)}, scans, [("m", (1, 4)), ("m", (2, 3))], stride=4)
    assert [(r.i, r.j) for r in res.rows] == [(1, 4)]
    assert res.skipped == [("m", 4, 2, 3)]


def test_sweep_deterministic_and_reproducible(scans):
    p = NoisyOracle(full_taskset(4, (2, 3)))
    a = run_sweep({"m": p}, scans, stride=2)
    b = run_sweep({"m": p}, scans, stride=2)
    assert a.to_json() == b.to_json()
    # a row is reproduced from the predictor, scans and grid row alone
    row = a.rows[3]
    again = evaluate(scans, p, (row.i, row.j), stride=2)
    assert again.mean("eps_acc") == row.mean["eps_acc"]
    assert SweepResult.from_json(a.to_json()).to_json() == a.to_json()


def test_select_main_task(scans):
    p = NoisyOracle(full_taskset(6, (1, 2)))
    pair, res = select_main_task(p, scans, stride=4, min_past=2)
    assert pair[0] >= 3
    assert min(r.mean["eps_acc"] for r in res.rows) == next(r for r in res.rows if (r.i, r.j) == pair).mean["eps_acc"]
    with pytest.raises(ValueError):
        select_main_task(p, scans, min_past=6)


def test_arm_validation():
    assert AblationArm().name == "baseline"
    assert AblationArm(protocol_subset=("straight",)).name == "protocol-straight"
    with pytest.raises(ValueError):
        AblationArm(anatomy_removal=0.3)
    with pytest.raises(ValueError):
        AblationArm(length_crop=0.6)
    with pytest.raises(ValueError):
        AblationArm(protocol_subset=())
    arms = AblationSpec("length", [0.5, 0.75]).arms()
    assert [a.name for a in arms] == ["baseline", "length-50", "length-75"]
    assert all(len(a.varied) <= 1 for a in arms)


def test_reductions(corpus):
    train, _, test = corpus
    test_ids = [s.scan_id for s in test]
    subjects = {s.meta.subject_id for s in train}
    kept = reduce_training_set(train, AblationArm(anatomy_removal=0.75), seed=1)
    assert len({s.meta.subject_id for s in kept}) == len(subjects) - int(np.floor(0.75 * len(subjects)))
    assert [s.scan_id for s in test] == test_ids
    half = reduce_training_set(train, AblationArm(length_crop=0.5))
    assert [len(s) for s in half] == [len(s) // 2 for s in train]
    straight = reduce_training_set(train, AblationArm(protocol_subset=("straight",)))
    assert {s.meta.protocol for s in straight} == {"straight"}
    with pytest.raises(EmptyArmError):
        reduce_training_set([s for s in train if s.meta.protocol != "straight"], AblationArm(protocol_subset=("straight",)))


def tiny_config(**kw):
    return ExperimentConfig(
        kind="feed_forward", M=4, main=(2, 4), encoder_width=16,
        train=TrainConfig(minibatch=4, step_size=1e-3, max_epochs=2, batches_per_epoch=2, val_windows=8, **kw),
    )


def test_identity_arm_matches_plain_training(corpus, tmp_path):
    train, val, test = corpus
    cfg = tiny_config()
    rep = run_ablation(AblationSpec("protocol", [["straight"]], seeds=[3]), cfg, train, val, test, tmp_path, stride=4)
    model, _ = run_training(cfg.with_seed(3), train, val)
    plain = evaluate(test, model, cfg.main, stride=4)
    base = [r for r in rep.results if r.arm.name == "baseline"][0]
    assert base.report.to_json() == plain.to_json()
    assert {c.arm for c in rep.comparisons} == {"protocol-straight"}
    back = AblationReport.from_json(rep.to_json())
    assert back.to_json() == rep.to_json()


def test_report_round_trip(scans, tmp_path):
    res = run_sweep({"m4": NoisyOracle(full_taskset(4, (1, 4))), "m3": NoisyOracle(full_taskset(3, (1, 3)))}, scans, stride=4)
    prov = {"seed": 7, "tasks": "1-2 1-3", "normalisation": "realised"}
    paths = emit_report(res, tmp_path / "rep", ["csv", "png"], prov)
    header, table = load_table(tmp_path / "rep" / "table_best.csv")
    assert header["seed"] == "7" and header["tasks"] == "1-2 1-3" and header["normalisation"] == "realised"
    for M in (3, 4):
        for m, (mean, std, _) in res.best_over_tasks(M).items():
            assert table[M][m] == (mean, std)
    _, table = load_table(tmp_path / "rep" / "table_mean.csv")
    assert table[4] == res.mean_over_tasks(4)
    for m in METRIC_NAMES:
        for by in ("past", "future"):
            p = tmp_path / "rep" / f"{m}_vs_{by}.png"
            assert p in paths and p.stat().st_size > 0


def test_report_errors(scans, tmp_path):
    res = run_sweep({"m": OraclePredictor(full_taskset(2, (1, 2)))}, scans, stride=4)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ReportError):
        emit_report(res, blocker / "sub", ["csv"])
    with pytest.raises(ValueError):
        emit_report(SweepResult([]), tmp_path / "r", ["csv"])
    with pytest.raises(ValueError):
        emit_report(res, tmp_path / "r", ["pdf"])
