"""Training-set reductions that vary one factor at a time: subjects removed,
protocols kept, and scan length cropped."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..dataio import PROTOCOLS, Scan
from ..reconstruct import METRIC_NAMES, MetricsReport, evaluate
from .experiment import ExperimentConfig, run_training
from .stats import DegenerateSampleError, cohens_d, welch_ttest
from .sweep import SweepResult, run_sweep

ANATOMY_LEVELS = (0.0, 0.25, 0.5, 0.75)
LENGTH_LEVELS = (0.5, 0.75, 1.0)
FACTORS = ("anatomy", "protocol", "length")

# Directional expectations, written next to the numbers rather than asserted.
EXPECTATIONS = {
    "protocol": "fewer scanning protocols in training are expected to raise errors on the removed shapes",
    "anatomy": "removing subjects is expected to raise errors less than removing protocols",
    "length": "shorter training scans are expected to raise errors for long dependencies",
}


class EmptyArmError(ValueError):
    pass


@dataclass(frozen=True)
class AblationArm:
    anatomy_removal: float = 0.0
    protocol_subset: tuple[str, ...] = PROTOCOLS
    length_crop: float = 1.0

    def __post_init__(self):
        if not any(math.isclose(self.anatomy_removal, v) for v in ANATOMY_LEVELS):
            raise ValueError(f"anatomy_removal must be one of {ANATOMY_LEVELS}")
        if not any(math.isclose(self.length_crop, v) for v in LENGTH_LEVELS):
            raise ValueError(f"length_crop must be one of {LENGTH_LEVELS}")
        subset = tuple(p for p in PROTOCOLS if p in self.protocol_subset)
        if not subset or set(subset) != set(self.protocol_subset):
            raise ValueError(f"protocol_subset must be a nonempty subset of {PROTOCOLS}")
        object.__setattr__(self, "protocol_subset", subset)

    @property
    def varied(self) -> list[str]:
        out = []
        if self.anatomy_removal != 0.0:
            out.append("anatomy")
        if self.protocol_subset != PROTOCOLS:
            out.append("protocol")
        if self.length_crop != 1.0:
            out.append("length")
        return out

    @property
    def name(self) -> str:
        if not self.varied:
            return "baseline"
        f = self.varied[0]
        if f == "anatomy":
            return f"anatomy-{int(round(self.anatomy_removal * 100))}"
        if f == "protocol":
            return "protocol-" + "+".join(self.protocol_subset)
        return f"length-{int(round(self.length_crop * 100))}"


@dataclass
class AblationSpec:
    factor: str
    levels: list
    seeds: list[int] = field(default_factory=lambda: [0])
    include_baseline: bool = True

    def __post_init__(self):
        if self.factor not in FACTORS:
            raise ValueError(f"factor must be one of {FACTORS}")
        if not self.seeds:
            raise ValueError("need at least one seed")

    def arms(self) -> list[AblationArm]:
        arms = [AblationArm()] if self.include_baseline else []
        for level in self.levels:
            if self.factor == "anatomy":
                arm = AblationArm(anatomy_removal=float(level))
            elif self.factor == "protocol":
                arm = AblationArm(protocol_subset=tuple(level))
            else:
                arm = AblationArm(length_crop=float(level))
            if len(arm.varied) > 1:
                raise ValueError("an arm may vary one factor only")
            if arm not in arms:
                arms.append(arm)
        return arms

    @classmethod
    def from_json(cls, data: dict) -> "AblationSpec":
        return cls(**data)


def reduce_training_set(scans: Sequence[Scan], arm: AblationArm, seed: int = 0) -> list[Scan]:
    """Apply an arm's reduction. Subjects are removed whole, never single scans."""
    out = list(scans)
    if arm.anatomy_removal:
        subjects = sorted({s.meta.subject_id for s in out})
        n_drop = int(math.floor(arm.anatomy_removal * len(subjects) + 1e-9))
        rng = np.random.default_rng(seed)
        dropped = set(rng.choice(subjects, size=n_drop, replace=False).tolist()) if n_drop else set()
        out = [s for s in out if s.meta.subject_id not in dropped]
    out = [s for s in out if s.meta.protocol in arm.protocol_subset]
    if arm.length_crop != 1.0:
        out = [s.cropped(int(math.floor(len(s) * arm.length_crop))) for s in out]
    if not out:
        raise EmptyArmError(f"arm {arm.name} leaves no training scans")
    return out


@dataclass
class ArmResult:
    arm: AblationArm
    seed: int
    n_train: int
    report: MetricsReport
    sweep: SweepResult | None = None

    def value(self, metric: str) -> float:
        return self.report.mean(metric)


@dataclass
class Comparison:
    arm: str
    metric: str
    baseline_median: float
    arm_median: float
    relative_change: float
    effect_size: float
    p_value: float | None
    note: str


@dataclass
class AblationReport:
    spec: AblationSpec
    results: list[ArmResult]
    test_ids: list[str]
    comparisons: list[Comparison] = field(default_factory=list)

    def arm_values(self, arm_name: str, metric: str) -> np.ndarray:
        """One value per seed: the test-set mean of ``metric``."""
        return np.array([r.value(metric) for r in self.results if r.arm.name == arm_name])

    def to_json(self) -> dict:
        return {
            "spec": asdict(self.spec),
            "test_scans": self.test_ids,
            "arms": [
                {
                    "arm": r.arm.name,
                    "levels": asdict(r.arm),
                    "seed": r.seed,
                    "n_train": r.n_train,
                    "summary": r.report.summary(),
                    "report": r.report.to_json(),
                    "sweep": None if r.sweep is None else r.sweep.to_json(),
                }
                for r in self.results
            ],
            "comparisons": [asdict(c) for c in self.comparisons],
        }

    @classmethod
    def from_json(cls, data: dict) -> "AblationReport":
        results = [
            ArmResult(
                AblationArm(**{**a["levels"], "protocol_subset": tuple(a["levels"]["protocol_subset"])}),
                a["seed"],
                a["n_train"],
                MetricsReport.from_json(a["report"]),
                None if a["sweep"] is None else SweepResult.from_json(a["sweep"]),
            )
            for a in data["arms"]
        ]
        return cls(AblationSpec.from_json(data["spec"]), results, data["test_scans"], [Comparison(**c) for c in data["comparisons"]])

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, indent=1)


def compare(report: AblationReport, metric: str = "eps_acc") -> list[Comparison]:
    """Each arm against the baseline arm: median over seeds, effect size and
    a Welch p-value over the pooled per-scan values."""
    base = [r for r in report.results if r.arm.name == "baseline"]
    if not base:
        return []
    base_scans = np.concatenate([r.report.values(metric) for r in base])
    b_med = float(np.median([r.value(metric) for r in base]))
    out = []
    for name in dict.fromkeys(r.arm.name for r in report.results if r.arm.name != "baseline"):
        rows = [r for r in report.results if r.arm.name == name]
        a_scans = np.concatenate([r.report.values(metric) for r in rows])
        a_med = float(np.median([r.value(metric) for r in rows]))
        try:
            p = welch_ttest(base_scans, a_scans)
        except (DegenerateSampleError, ValueError):
            p = None
        out.append(
            Comparison(
                name,
                metric,
                b_med,
                a_med,
                (a_med - b_med) / b_med if b_med else math.nan,
                cohens_d(base_scans, a_scans),
                p,
                EXPECTATIONS[report.spec.factor],
            )
        )
    return out


def run_ablation(
    spec: AblationSpec,
    base_config: ExperimentConfig,
    train_scans: Sequence[Scan],
    val_scans: Sequence[Scan],
    test_scans: Sequence[Scan],
    out_dir: str | Path | None = None,
    sweep_pairs: Sequence[tuple[int, int]] | None = None,
    stride: int = 1,
) -> AblationReport:
    """Train one model per (arm, seed) with the same budget and evaluate on the
    untouched test scans. Only the training set is reduced; validation and test
    sets are shared by every arm."""
    results = []
    for arm in spec.arms():
        for seed in spec.seeds:
            reduced = reduce_training_set(train_scans, arm, seed)
            cfg = base_config.with_seed(seed)
            arm_dir = None if out_dir is None else Path(out_dir) / f"{arm.name}_seed{seed}"
            model, _ = run_training(cfg, reduced, val_scans, arm_dir)
            report = evaluate(test_scans, model, cfg.main, stride)
            sweep = None
            if sweep_pairs:
                sweep = run_sweep({arm.name: model}, test_scans, [(arm.name, p) for p in sweep_pairs], stride)
            results.append(ArmResult(arm, seed, len(reduced), report, sweep))
    out = AblationReport(spec, results, [s.scan_id for s in test_scans])
    out.comparisons = [c for m in METRIC_NAMES for c in compare(out, m)]
    if out_dir is not None:
        out.save(Path(out_dir) / "ablation.json")
    return out
