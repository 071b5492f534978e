"""Feed-forward, recurrent and adjacent-pair backends behind one wrapper.

All backends map ``M`` frames to ``tau+1`` parameter vectors; prediction
``k`` occupies head outputs ``[6k, 6k + 6)`` and belongs to ``tasks.pairs[k]``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .. import geometry
from ..dataio import Scan
from ..objective import TaskPrediction
from ..sampling import TaskSet
from .encoders import build_encoder

KINDS = ("feed_forward", "recurrent", "baseline_adjacent")
CHECKPOINT_FORMAT = "freehand-checkpoint"
CHECKPOINT_VERSION = 1


class InputMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class BackendSpec:
    kind: str
    M: int
    tau_plus_1: int
    image_shape: tuple[int, int]
    encoder: str = "small_conv"
    encoder_width: int = 256
    hidden_width: int = 1024  # recurrent only
    dropout: float = 0.0  # on the features entering the head

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "baseline_adjacent" and (self.M, self.tau_plus_1) != (2, 1):
            raise ValueError("the adjacent-pair baseline requires M=2 and tau+1=1")
        if self.M < 2:
            raise ValueError("M must be >= 2")
        if not 1 <= self.tau_plus_1 <= self.M * (self.M - 1) // 2:
            raise ValueError(f"tau+1={self.tau_plus_1} out of range for M={self.M}")
        object.__setattr__(self, "image_shape", tuple(int(v) for v in self.image_shape))

    @property
    def head_width(self) -> int:
        return self.tau_plus_1 * 6

    @classmethod
    def baseline(cls, image_shape, **kw) -> "BackendSpec":
        return cls("baseline_adjacent", 2, 1, image_shape, **kw)


class FeedForwardNet(nn.Module):
    """All ``M`` frames stacked on the channel axis."""

    def __init__(self, spec: BackendSpec):
        super().__init__()
        self.encoder = build_encoder(spec.encoder, spec.M, spec.encoder_width, spec.image_shape)
        self.drop = nn.Dropout(spec.dropout)
        self.head = nn.Linear(spec.encoder_width, spec.head_width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.drop(self.encoder(x)))


class RecurrentNet(nn.Module):
    """Per-frame encoder into an LSTM; one output after the last frame."""

    def __init__(self, spec: BackendSpec):
        super().__init__()
        self.encoder = build_encoder(spec.encoder, 1, spec.encoder_width, spec.image_shape)
        self.rnn = nn.LSTM(spec.encoder_width, spec.hidden_width, batch_first=True)
        self.drop = nn.Dropout(spec.dropout)
        self.head = nn.Linear(spec.hidden_width, spec.head_width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, m, h, w = x.shape
        feats = self.encoder(x.reshape(b * m, 1, h, w)).reshape(b, m, -1)
        out, _ = self.rnn(feats)  # zero state at every sequence start
        return self.head(self.drop(out[:, -1]))


def build_net(spec: BackendSpec) -> nn.Module:
    return RecurrentNet(spec) if spec.kind == "recurrent" else FeedForwardNet(spec)


def frames_to_tensor(frames) -> torch.Tensor:
    x = torch.as_tensor(np.asarray(frames))
    return x.to(torch.float32) / 255.0 if x.dtype == torch.uint8 else x.to(torch.float32)


class SequenceModel(nn.Module):
    """A backend with its task set and output standardisation.

    Head outputs are de-standardised as ``mean + scale * raw`` so every
    parameter starts near its training-set distribution.
    """

    def __init__(self, spec: BackendSpec, tasks: TaskSet):
        super().__init__()
        if tasks.M != spec.M or tasks.tau_plus_1 != spec.tau_plus_1:
            raise ValueError(
                f"task set (M={tasks.M}, tau+1={tasks.tau_plus_1}) does not match backend "
                f"(M={spec.M}, tau+1={spec.tau_plus_1})"
            )
        self.spec = spec
        self.tasks = tasks
        self.net = build_net(spec)
        self.register_buffer("out_mean", torch.zeros(spec.head_width))
        self.register_buffer("out_scale", torch.ones(spec.head_width))

    @property
    def M(self) -> int:
        return self.spec.M

    def set_output_stats(self, mean: np.ndarray, scale: np.ndarray) -> None:
        mean = np.asarray(mean, dtype=np.float32).reshape(-1)
        scale = np.asarray(scale, dtype=np.float32).reshape(-1)
        if mean.shape != (self.spec.head_width,) or scale.shape != mean.shape:
            raise ValueError("output statistics must have head_width entries")
        if np.any(scale <= 0):
            raise ValueError("output scale must be positive")
        self.out_mean.copy_(torch.from_numpy(mean))
        self.out_scale.copy_(torch.from_numpy(scale))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """``(B, M, H, W)`` in [0, 1] -> parameters ``(B, tau+1, 6)``."""
        raw = self.net(x)
        return (self.out_mean + self.out_scale * raw).reshape(x.shape[0], self.spec.tau_plus_1, 6)

    def _check_input(self, x: torch.Tensor) -> None:
        if x.shape[-3] != self.M:
            raise InputMismatchError(f"expected {self.M} frames, got {x.shape[-3]}")
        if tuple(x.shape[-2:]) != self.spec.image_shape:
            raise InputMismatchError(
                f"frames are {tuple(x.shape[-2:])}, model was trained on {self.spec.image_shape}"
            )

    @torch.no_grad()
    def predict(self, frames) -> list[TaskPrediction]:
        x = frames_to_tensor(frames)
        self._check_input(x)
        was_training = self.training
        self.eval()
        params = self(x[None])[0].double().numpy()
        self.train(was_training)
        return [TaskPrediction(pair, p) for pair, p in zip(self.tasks.pairs, params)]

    @torch.no_grad()
    def predict_params(self, windows, batch_size: int = 64) -> np.ndarray:
        x = frames_to_tensor(windows)
        self._check_input(x)
        was_training = self.training
        self.eval()
        out = [self(x[k : k + batch_size]).double().numpy() for k in range(0, len(x), batch_size)]
        self.train(was_training)
        return np.concatenate(out) if out else np.zeros((0, self.spec.tau_plus_1, 6))

    def predict_windows(self, scan: Scan, starts: Sequence[int]) -> np.ndarray:
        idx = np.asarray(starts)[:, None] - 1 + np.arange(self.M)
        params = self.predict_params(scan.images[idx])
        return geometry.params_to_matrix(params)

    def save(self, path: str | Path) -> None:
        torch.save(
            {
                "format": CHECKPOINT_FORMAT,
                "version": CHECKPOINT_VERSION,
                "spec": asdict(self.spec),
                "tasks": self.tasks.to_json(),
                "state_dict": self.state_dict(),
            },
            path,
        )

    @classmethod
    def load(cls, path: str | Path) -> "SequenceModel":
        blob = torch.load(path, map_location="cpu", weights_only=True)
        if blob.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a model checkpoint")
        if blob.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {blob.get('version')}")
        spec = BackendSpec(**blob["spec"])
        model = cls(spec, TaskSet.from_json(blob["tasks"]))
        model.load_state_dict(blob["state_dict"])
        model.eval()
        return model
