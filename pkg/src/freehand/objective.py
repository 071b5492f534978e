"""Multi-transformation point loss.

Every predicted transform and its ground truth are applied to the same image
points (the four corners by default); the loss is the mean squared coordinate
difference, averaged over points and tasks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .sampling import Pair, SequenceSample, n_universe

NORMALISATIONS = ("realised", "universe")


@dataclass(frozen=True)
class TaskPrediction:
    pair: Pair
    params: np.ndarray | torch.Tensor  # (rx, ry, rz, tx, ty, tz)


def params_to_matrix(p: torch.Tensor) -> torch.Tensor:
    """Differentiable ``(..., 6) -> (..., 4, 4)``, same convention as ``geometry``."""
    rx, ry, rz = p[..., 0], p[..., 1], p[..., 2]
    cx, sx = torch.cos(rx), torch.sin(rx)
    cy, sy = torch.cos(ry), torch.sin(ry)
    cz, sz = torch.cos(rz), torch.sin(rz)
    zero = torch.zeros_like(rx)
    one = torch.ones_like(rx)
    rows = [
        torch.stack([cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx, p[..., 3]], -1),
        torch.stack([sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx, p[..., 4]], -1),
        torch.stack([-sy, cy * sx, cy * cx, p[..., 5]], -1),
        torch.stack([zero, zero, zero, one], -1),
    ]
    return torch.stack(rows, -2)


def _apply(t: torch.Tensor, pts: torch.Tensor) -> torch.Tensor:
    return pts @ t[..., :3, :3].transpose(-1, -2) + t[..., None, :3, 3]


def point_mse(gt, pred, pts) -> torch.Tensor:
    """Mean over points and x/y/z of squared differences after each transform (mm^2)."""
    gt = torch.as_tensor(gt)
    pred = torch.as_tensor(pred, dtype=gt.dtype)
    pts = torch.as_tensor(pts, dtype=gt.dtype)
    return ((_apply(gt, pts) - _apply(pred, pts)) ** 2).mean(dim=(-2, -1))


def batch_loss(pred_params: torch.Tensor, gt: torch.Tensor, pts, normalisation: str = "realised", M: int | None = None) -> torch.Tensor:
    """Loss for a minibatch: ``pred_params (B, T, 6)``, ``gt (B, T, 4, 4)``.

    ``realised`` divides by the number of sampled tasks ``T``; ``universe``
    divides by all ``M(M-1)/2`` pairs as if unsampled tasks contributed zero.
    """
    pts = torch.as_tensor(pts, dtype=pred_params.dtype, device=pred_params.device)
    per_task = point_mse(gt.to(pred_params.dtype), params_to_matrix(pred_params), pts)
    loss = per_task.mean()
    if normalisation == "universe":
        if M is None:
            raise ValueError("universe normalisation needs M")
        loss = loss * per_task.shape[-1] / n_universe(M)
    elif normalisation != "realised":
        raise ValueError(f"normalisation must be one of {NORMALISATIONS}")
    return loss


def multi_task_loss(
    preds: Sequence[TaskPrediction],
    sample: SequenceSample,
    corners,
    normalisation: str = "realised",
) -> torch.Tensor:
    if not preds:
        raise ValueError("no task predictions")
    missing = [p.pair for p in preds if tuple(p.pair) not in sample.gt_pairs]
    if missing:
        raise KeyError(f"no ground truth for predicted pairs {missing}")
    params = torch.stack([torch.as_tensor(p.params, dtype=torch.float64) for p in preds])
    gt = torch.as_tensor(np.stack([sample.gt_pairs[tuple(p.pair)] for p in preds]))
    return batch_loss(params[None], gt[None], corners, normalisation, sample.M)
