"""One trainable configuration: backend, task set and optimiser settings."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from ..backends import BackendSpec, SequenceModel, TrainConfig, TrainingLog, build_model, train
from ..dataio import Scan
from ..sampling import TaskSet, full_taskset, n_universe, sample_tasks


@dataclass
class ExperimentConfig:
    kind: str = "feed_forward"
    M: int = 16
    tau_plus_1: int | None = None  # None: every pair
    main: tuple[int, int] = (9, 16)
    task_seed: int = 0
    encoder: str = "small_conv"
    encoder_width: int = 256
    hidden_width: int = 1024
    dropout: float = 0.0
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        self.main = (int(self.main[0]), int(self.main[1]))
        if self.kind == "baseline_adjacent":
            self.M, self.tau_plus_1, self.main = 2, 1, (1, 2)

    def taskset(self) -> TaskSet:
        tau = n_universe(self.M) if self.tau_plus_1 is None else self.tau_plus_1
        if tau == n_universe(self.M):
            return full_taskset(self.M, self.main)
        return sample_tasks(self.M, tau, self.main, np.random.default_rng(self.task_seed))

    def backend(self, image_shape: tuple[int, int], tasks: TaskSet) -> BackendSpec:
        return BackendSpec(
            self.kind, self.M, tasks.tau_plus_1, image_shape, self.encoder, self.encoder_width, self.hidden_width, self.dropout
        )

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return ExperimentConfig(**{**self._fields(), "train": TrainConfig(**{**asdict(self.train), "seed": seed})})

    def _fields(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_json(self) -> dict:
        out = self._fields()
        out["main"] = list(self.main)
        out["train"] = self.train.to_json()
        return out

    @classmethod
    def from_json(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(json.load(f))


def run_training(
    cfg: ExperimentConfig,
    train_scans: Sequence[Scan],
    val_scans: Sequence[Scan],
    out_dir: str | Path | None = None,
) -> tuple[SequenceModel, TrainingLog]:
    tasks = cfg.taskset()
    spec = cfg.backend(train_scans[0].image_shape, tasks)
    model = build_model(spec, tasks, cfg.train.seed)
    log_path = ckpt = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        log_path, ckpt = out / "train_log.csv", out
        with open(out / "experiment.json", "w", encoding="utf-8") as f:
            json.dump(cfg.to_json(), f, indent=1)
    return train(model, train_scans, val_scans, cfg.train, log_path, ckpt)
