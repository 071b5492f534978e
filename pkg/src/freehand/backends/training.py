"""Training loop with validation-based checkpoint selection.

One epoch is a fixed number of minibatches of freshly sampled sequences, not
a pass over every window; the definition is written into the log header.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .. import geometry
from ..dataio import Scan
from ..objective import batch_loss
from ..reconstruct import ImageGrid, accumulated_error, chain, gt_trajectory
from ..sampling import TaskSet, eligible_scans, gt_transforms, valid_starts
from .models import BackendSpec, SequenceModel

log = logging.getLogger(__name__)

STEP_SIZES = (1e-3, 1e-4, 1e-5)


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    minibatch: int = 32
    step_size: float = 1e-4
    weight_decay: float = 0.0  # decoupled (AdamW); 0 is plain Adam
    max_epochs: int = 100
    batches_per_epoch: int = 10
    seed: int = 0
    val_every: int = 1
    val_windows: int = 128
    val_stride: int = 4
    normalisation: str = "realised"
    deterministic: bool = True
    standardise_outputs: bool = True
    stats_windows: int = 1024

    def __post_init__(self):
        if not any(math.isclose(self.step_size, s) for s in STEP_SIZES):
            raise ValueError(f"step_size must be one of {STEP_SIZES}, got {self.step_size}")
        if self.minibatch < 1 or self.max_epochs < 1 or self.batches_per_epoch < 1:
            raise ValueError("minibatch, max_epochs and batches_per_epoch must be >= 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.val_every < 1:
            raise ValueError("val_every must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "TrainConfig":
        return cls(**data)


@dataclass
class TrainingLog:
    rows: list[dict] = field(default_factory=list)
    header: dict = field(default_factory=dict)
    best_epoch: int | None = None
    skipped_scans: list[str] = field(default_factory=list)

    COLUMNS = ("epoch", "train_loss", "val_loss", "val_eacc_main", "train_loss_universe", "seconds")

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            for k, v in self.header.items():
                f.write(f"# {k}: {v}\n")
            w = csv.writer(f)
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r["epoch"]] + [repr(float(r[c])) for c in self.COLUMNS[1:]])

    @classmethod
    def load_csv(cls, path: str | Path) -> "TrainingLog":
        header, body = {}, []
        with open(path, newline="") as f:
            for line in f:
                if line.startswith("# "):
                    k, _, v = line[2:].rstrip("\n").partition(": ")
                    header[k] = v
                else:
                    body.append(line)
        rows = []
        reader = csv.DictReader(body)
        for r in reader:
            rows.append({"epoch": int(r["epoch"]), **{c: float(r[c]) for c in cls.COLUMNS[1:]}})
        return cls(rows, header)


def build_model(spec: BackendSpec, tasks: TaskSet, seed: int = 0) -> SequenceModel:
    torch.manual_seed(seed)
    return SequenceModel(spec, tasks)


class _WindowPool:
    """Frames and ground-truth transforms for every window of a scan list."""

    def __init__(self, scans: Sequence[Scan], tasks: TaskSet):
        self.scans = list(scans)
        self.M = tasks.M
        self.images = [torch.from_numpy(s.images) for s in self.scans]
        self.gt = [
            torch.from_numpy(gt_transforms(s.world_poses, s.calib, valid_starts(len(s), self.M), tasks.pairs))
            for s in self.scans
        ]
        h, w = self.scans[0].image_shape
        self.corners = torch.from_numpy(geometry.corner_points(w, h, self.scans[0].meta.pixel_spacing))

    def draw(self, rng: np.random.Generator, n: int) -> list[tuple[int, int]]:
        """``n`` (scan position, 0-based start) picks: scan uniform, then start uniform."""
        out = []
        for _ in range(n):
            k = int(rng.integers(len(self.scans)))
            out.append((k, int(rng.integers(len(self.gt[k])))))
        return out

    def batch(self, picks: Sequence[tuple[int, int]]) -> tuple[torch.Tensor, torch.Tensor]:
        x = torch.stack([self.images[k][s : s + self.M] for k, s in picks]).to(torch.float32) / 255.0
        gt = torch.stack([self.gt[k][s] for k, s in picks]).to(torch.float32)
        return x, gt

    def describe(self, picks) -> str:
        return ", ".join(f"{self.scans[k].scan_id}@{s + 1}" for k, s in picks)


def _output_stats(pool: _WindowPool, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    picks = pool.draw(rng, n)
    gt = torch.stack([pool.gt[k][s] for k, s in picks]).numpy()
    params = geometry.matrix_to_params(gt)  # (n, T, 6)
    mean = params.mean(axis=0)
    floor = np.array([1e-3] * 3 + [1e-2] * 3)
    scale = np.maximum(params.std(axis=0), floor)
    return mean, scale


def validation_eacc(model: SequenceModel, scans: Sequence[Scan], stride: int = 4) -> float:
    errs = []
    for scan in scans:
        traj = chain(scan, model, model.tasks.main)
        errs.append(accumulated_error(gt_trajectory(scan), traj, ImageGrid.of(scan), stride))
    return float(np.mean(errs))


def train(
    model: SequenceModel,
    train_scans: Sequence[Scan],
    val_scans: Sequence[Scan],
    cfg: TrainConfig,
    log_path: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
) -> tuple[SequenceModel, TrainingLog]:
    """Train in place and return the model holding the best-validation weights."""
    torch.use_deterministic_algorithms(cfg.deterministic)
    torch.manual_seed(cfg.seed)
    tasks = model.tasks
    train_scans, skipped = eligible_scans(train_scans, model.M)
    val_scans, skipped_val = eligible_scans(val_scans, model.M)
    if skipped or skipped_val:
        log.warning("excluded %d scans shorter than M=%d", len(skipped) + len(skipped_val), model.M)
    if not train_scans or not val_scans:
        raise ValueError("training and validation sets must each contain a scan of length >= M")
    for s in list(train_scans) + list(val_scans):
        if s.image_shape != model.spec.image_shape:
            raise ValueError(f"{s.scan_id}: frames {s.image_shape} do not match model {model.spec.image_shape}")

    rng = np.random.default_rng(cfg.seed)
    pool = _WindowPool(train_scans, tasks)
    val_pool = _WindowPool(val_scans, tasks)
    val_picks = val_pool.draw(np.random.default_rng([cfg.seed, 1]), cfg.val_windows)
    if cfg.standardise_outputs:
        model.set_output_stats(*_output_stats(pool, np.random.default_rng([cfg.seed, 2]), cfg.stats_windows))

    if cfg.weight_decay > 0:
        opt = torch.optim.AdamW(model.parameters(), lr=cfg.step_size, weight_decay=cfg.weight_decay)
    else:
        opt = torch.optim.Adam(model.parameters(), lr=cfg.step_size)
    n_univ = tasks.M * (tasks.M - 1) // 2
    out = TrainingLog(
        header={
            "epoch": f"{cfg.batches_per_epoch} minibatches of {cfg.minibatch} sampled sequences",
            "seed": cfg.seed,
            "backend": model.spec.kind,
            "M": model.M,
            "main": tasks.main,
            "tasks": " ".join(f"{i}-{j}" for i, j in tasks.pairs),
            "normalisation": cfg.normalisation,
            "selection": "best validation accumulated error of the main task",
        },
        skipped_scans=list(skipped) + list(skipped_val),
    )
    best, best_state = math.inf, None
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        model.train()
        losses = []
        for b in range(cfg.batches_per_epoch):
            picks = pool.draw(rng, cfg.minibatch)
            x, gt = pool.batch(picks)
            loss = batch_loss(model(x), gt, pool.corners, cfg.normalisation, tasks.M)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {b + 1}; windows: {pool.describe(picks)}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        train_loss = float(np.mean(losses))
        if cfg.normalisation == "realised":
            universe = train_loss * tasks.tau_plus_1 / n_univ
        else:
            universe = train_loss
        row = {"epoch": epoch, "train_loss": train_loss, "train_loss_universe": universe,
               "val_loss": math.nan, "val_eacc_main": math.nan}
        if epoch % cfg.val_every == 0 or epoch == cfg.max_epochs:
            model.eval()
            with torch.no_grad():
                x, gt = val_pool.batch(val_picks)
                row["val_loss"] = batch_loss(model(x), gt, val_pool.corners, cfg.normalisation, tasks.M).item()
            row["val_eacc_main"] = validation_eacc(model, val_scans, cfg.val_stride)
            if row["val_eacc_main"] < best:
                best, out.best_epoch = row["val_eacc_main"], epoch
                best_state = copy.deepcopy(model.state_dict())
        row["seconds"] = time.perf_counter() - t0
        out.rows.append(row)
        log.info("epoch %d train %.4g val %.4g eacc %.4g", epoch, train_loss, row["val_loss"], row["val_eacc_main"])

    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
        model.save(Path(checkpoint_dir) / "last.pt")
    model.load_state_dict(best_state)
    model.eval()
    out.header["best_epoch"] = out.best_epoch
    if checkpoint_dir is not None:
        model.save(Path(checkpoint_dir) / "best.pt")
    if log_path is not None:
        out.save_csv(log_path)
    return model, out
