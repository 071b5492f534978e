"""Evaluate trained models over (M, i*, j*) grids and aggregate the results."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..dataio import Scan
from ..reconstruct import METRIC_NAMES, CachedPredictor, Predictor, evaluate
from ..sampling import Pair, dependency_of

log = logging.getLogger(__name__)

# dice is an overlap: larger is better
HIGHER_IS_BETTER = {"eps_frame": False, "eps_acc": False, "eps_dice": True, "eps_drift": False}
POOLING_RULE = "pool every (model, task) row sharing the count; mean and std over their per-task means"


@dataclass
class SweepRow:
    model: str
    M: int
    i: int
    j: int
    past: int
    future: int
    interval: int
    n_scans: int
    mean: dict[str, float]
    std: dict[str, float]
    per_scan: dict[str, list[float]] = field(default_factory=dict, repr=False)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class SweepResult:
    rows: list[SweepRow]
    skipped: list[tuple[str, int, int, int]] = field(default_factory=list)
    stride: int = 1
    gap_mode: str = "auxiliary"

    def to_json(self) -> dict:
        return {
            "stride": self.stride,
            "gap_mode": self.gap_mode,
            "rows": [r.to_json() for r in self.rows],
            "skipped": [list(s) for s in self.skipped],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SweepResult":
        return cls([SweepRow(**r) for r in data["rows"]], [tuple(s) for s in data["skipped"]], data["stride"], data["gap_mode"])

    def Ms(self) -> list[int]:
        return sorted({r.M for r in self.rows})

    def rows_for(self, M: int) -> list[SweepRow]:
        return [r for r in self.rows if r.M == M]

    def best_over_tasks(self, M: int) -> dict[str, tuple[float, float, SweepRow]]:
        """Per metric: the best task's (mean, std) and the row it came from."""
        rows = self.rows_for(M)
        out = {}
        for m in METRIC_NAMES:
            pick = (max if HIGHER_IS_BETTER[m] else min)(rows, key=lambda r: r.mean[m])
            out[m] = (pick.mean[m], pick.std[m], pick)
        return out

    def mean_over_tasks(self, M: int) -> dict[str, tuple[float, float]]:
        """Per metric: mean and std across the per-task means."""
        rows = self.rows_for(M)
        return {m: (float(np.mean([r.mean[m] for r in rows])), float(np.std([r.mean[m] for r in rows]))) for m in METRIC_NAMES}

    def pooled(self, by: str, metric: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(counts, mean, std)`` of a metric against past or future frame counts."""
        if by not in ("past", "future", "interval"):
            raise ValueError("pool by past, future or interval")
        groups: dict[int, list[float]] = {}
        for r in self.rows:
            groups.setdefault(getattr(r, by), []).append(r.mean[metric])
        keys = np.array(sorted(groups))
        return keys, np.array([np.mean(groups[k]) for k in keys]), np.array([np.std(groups[k]) for k in keys])


def full_grid(models: Mapping[str, Predictor]) -> list[tuple[str, Pair]]:
    return [(name, pair) for name, p in models.items() for pair in p.tasks.pairs]


def run_sweep(
    models: Mapping[str, Predictor],
    test_scans: Sequence[Scan],
    grid: Iterable[tuple[str, Pair]] | None = None,
    stride: int = 1,
    voxel_mm: float = 1.0,
    gap_mode: str = "auxiliary",
) -> SweepResult:
    """Reconstruct every test scan with each grid row's main task.

    ``grid`` rows are ``(model name, (i*, j*))``; by default every pair of
    every model's task set. Rows whose pair the model did not learn are
    skipped and listed in the result.
    """
    cached = {name: CachedPredictor(p) for name, p in models.items()}
    result = SweepResult([], stride=stride, gap_mode=gap_mode)
    for name, pair in full_grid(models) if grid is None else grid:
        pred = cached[name]
        pair = (int(pair[0]), int(pair[1]))
        if pair not in pred.tasks.pairs:
            log.warning("model %s has no task %s; row skipped", name, pair)
            result.skipped.append((name, pred.M, *pair))
            continue
        report = evaluate(test_scans, pred, pair, stride, voxel_mm, gap_mode)
        dep = dependency_of(pred.M, *pair)
        result.rows.append(
            SweepRow(
                name,
                pred.M,
                pair[0],
                pair[1],
                dep.past,
                dep.future,
                dep.interval,
                len(report.scans),
                {m: report.mean(m) for m in METRIC_NAMES},
                {m: report.std(m) for m in METRIC_NAMES},
                {m: report.values(m).tolist() for m in METRIC_NAMES},
            )
        )
    return result


def select_main_task(
    predictor: Predictor,
    val_scans: Sequence[Scan],
    candidates: Iterable[Pair] | None = None,
    metric: str = "eps_acc",
    stride: int = 4,
    min_past: int = 0,
) -> tuple[Pair, SweepResult]:
    """Pick the main task with the best validation metric among learned pairs."""
    pairs = predictor.tasks.pairs if candidates is None else [tuple(p) for p in candidates]
    pairs = [p for p in pairs if p[0] - 1 >= min_past]
    if not pairs:
        raise ValueError(f"no candidate task with at least {min_past} past frames")
    res = run_sweep({"model": predictor}, val_scans, [("model", p) for p in pairs], stride)
    if not res.rows:
        raise ValueError("none of the candidate tasks was learned by the model")
    best = (max if HIGHER_IS_BETTER[metric] else min)(res.rows, key=lambda r: r.mean[metric])
    return (best.i, best.j), res
