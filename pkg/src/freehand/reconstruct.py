"""Whole-scan reconstruction by chaining main-task predictions, and the four
reconstruction metrics.

Trajectories hold, for every frame ``m``, the transform from image ``m`` to
the image coordinates of the scan's first frame (so frame 1 is the identity).
Predictors return image-to-tool transforms, as trained; the calibration is
removed on the left before chaining.
"""

from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import geometry
from .dataio import Scan
from .sampling import Pair, ScanTooShortError, TaskSet, dependency_of, gt_transforms

GAP_MODES = ("auxiliary", "interpolate")


class Predictor(Protocol):
    M: int
    tasks: TaskSet

    def predict_windows(self, scan: Scan, starts: Sequence[int]) -> np.ndarray:
        """Image-i-to-tool-j transforms, shape ``(len(starts), tau+1, 4, 4)``."""


class OraclePredictor:
    """Returns ground-truth transforms; the perfect-predictor reference."""

    def __init__(self, tasks: TaskSet):
        self.tasks = tasks
        self.M = tasks.M

    def predict_windows(self, scan: Scan, starts: Sequence[int]) -> np.ndarray:
        return gt_transforms(scan.world_poses, scan.calib, np.asarray(starts), self.tasks.pairs)


class CachedPredictor:
    """Memoises window predictions per (scan, start), so many main tasks can be
    evaluated from one set of forward passes."""

    def __init__(self, inner: Predictor):
        self.inner = inner
        self.M = inner.M
        self.tasks = inner.tasks
        self._cache: dict[tuple[str, int], np.ndarray] = {}

    def predict_windows(self, scan: Scan, starts: Sequence[int]) -> np.ndarray:
        todo = sorted({int(s) for s in starts if (scan.scan_id, int(s)) not in self._cache})
        if todo:
            for s, p in zip(todo, self.inner.predict_windows(scan, todo)):
                self._cache[(scan.scan_id, s)] = p
        return np.stack([self._cache[(scan.scan_id, int(s))] for s in starts])


@dataclass
class Trajectory:
    transforms: np.ndarray  # (L, 4, 4) image m -> image 1
    reconstructed: np.ndarray  # 1-based frame indices, reference excluded
    interpolated: np.ndarray  # (L,) bool, frames placed without a predicted transform
    anchors: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.transforms)

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["frame_index"] + [f"t{r}{c}" for r in range(3) for c in range(4)] + ["interpolated"])
            for k, t in enumerate(self.transforms):
                w.writerow([k + 1] + [repr(float(v)) for v in t[:3].ravel()] + [int(self.interpolated[k])])

    @classmethod
    def load_csv(cls, path: str | Path) -> "Trajectory":
        with open(path, newline="") as f:
            rows = list(csv.reader(f))[1:]
        t = np.zeros((len(rows), 4, 4))
        t[:, 3, 3] = 1.0
        for k, row in enumerate(rows):
            t[k, :3] = np.array([float(v) for v in row[1:13]]).reshape(3, 4)
        interp = np.array([bool(int(r[13])) for r in rows])
        return cls(t, np.arange(2, len(rows) + 1), interp)


def gt_trajectory(scan: Scan) -> Trajectory:
    cinv = geometry.invert(scan.calib)
    w0inv = geometry.invert(scan.world_poses[0])
    t = cinv @ w0inv @ scan.world_poses @ scan.calib
    t[:, 3] = (0.0, 0.0, 0.0, 1.0)
    return Trajectory(t, np.arange(2, len(scan) + 1), np.zeros(len(scan), bool))


def window_starts(L: int, M: int, interval: int) -> tuple[list[int], int | None]:
    """Starts of the chained windows and of the trailing window (or None)."""
    if L < M:
        raise ScanTooShortError(f"scan of {L} frames is shorter than M={M}")
    starts = list(range(1, L - M + 2, interval))
    tail = L - M + 1 if starts[-1] + M - 1 < L else None
    return starts, tail


def _place_by_graph(
    poses: dict[int, np.ndarray],
    start: int,
    frames: Sequence[int],
    sources: Sequence[int],
    pairs: Sequence[Pair],
    rel: np.ndarray,
) -> None:
    """Place ``frames`` by breadth-first search over predicted pairs of one window.

    ``rel[k]`` maps image ``pairs[k][0]`` into image ``pairs[k][1]`` (window
    positions). Only frames in ``frames`` are written.
    """
    inv = geometry._invert(rel)
    adj: dict[int, list[tuple[int, np.ndarray]]] = {}
    for (i, j), t, ti in zip(pairs, rel, inv):
        a, b = start + i - 1, start + j - 1
        adj.setdefault(b, []).append((a, t))  # G_a = G_b T
        adj.setdefault(a, []).append((b, ti))  # G_b = G_a T^-1
    want = set(frames)
    seen = {s: poses[s] for s in sources}
    queue = deque(sources)
    while queue:
        f = queue.popleft()
        for g, t in adj.get(f, ()):
            if g not in seen:
                seen[g] = seen[f] @ t
                queue.append(g)
                if g in want and g not in poses:
                    poses[g] = seen[g]


def chain(
    scan: Scan,
    predictor: Predictor,
    main: Pair | None = None,
    gap_mode: str = "auxiliary",
) -> Trajectory:
    if gap_mode not in GAP_MODES:
        raise ValueError(f"gap_mode must be one of {GAP_MODES}")
    tasks = predictor.tasks
    M = predictor.M
    main = tasks.main if main is None else (int(main[0]), int(main[1]))
    k_main = tasks.index(main)
    i_star, j_star = main
    d = dependency_of(M, i_star, j_star).interval
    L = len(scan)
    starts, tail = window_starts(L, M, d)
    all_starts = starts + ([tail] if tail is not None else [])
    cinv = geometry.invert(scan.calib)
    rel = cinv @ predictor.predict_windows(scan, all_starts)  # image i -> image j
    rel[..., 3, :] = (0.0, 0.0, 0.0, 1.0)

    poses: dict[int, np.ndarray] = {}
    anchors = [starts[0] + i_star - 1]
    poses[anchors[0]] = np.eye(4)
    for n, s in enumerate(starts):
        a, b = s + i_star - 1, s + j_star - 1
        poses[b] = poses[a] @ geometry._invert(rel[n, k_main][None])[0]
        anchors.append(b)

    interpolated = np.zeros(L + 1, bool)
    windows = [(s, rel[n]) for n, s in enumerate(starts)]
    for n, (s, r) in enumerate(windows):
        a, b = s + i_star - 1, s + j_star - 1
        lo = s if n == 0 else a
        span = range(lo, b + 1)
        if gap_mode == "auxiliary" or n == 0:
            targets = [f for f in span if f not in poses and (gap_mode == "auxiliary" or f < a)]
            _place_by_graph(poses, s, targets, [a, b], tasks.pairs, r)
    # frames after the last anchor come from the window that ends on the last frame
    end = tail if tail is not None else starts[-1]
    targets = list(range(anchors[-1] + 1, L + 1))
    if targets:
        srcs = [f for f in anchors if end <= f <= end + M - 1]
        _place_by_graph(poses, end, targets, srcs, tasks.pairs, rel[-1])

    for f in range(1, L + 1):
        if f in poses:
            continue
        interpolated[f] = True
        lower = max((a for a in anchors if a < f), default=None)
        upper = min((a for a in anchors if a > f), default=None)
        if lower is not None and upper is not None:
            poses[f] = geometry.interpolate_se3(poses[lower], poses[upper], (f - lower) / (upper - lower))
        else:
            # outside the anchor span: extrapolate the nearest anchor step
            p, q = (anchors[0], anchors[1]) if lower is None else (anchors[-2], anchors[-1])
            poses[f] = geometry.interpolate_se3(poses[p], poses[q], (f - p) / (q - p))

    ref = geometry._invert(poses[1][None])[0]
    transforms = np.stack([ref @ poses[f] for f in range(1, L + 1)])
    transforms[:, 3] = (0.0, 0.0, 0.0, 1.0)
    return Trajectory(transforms, np.arange(2, L + 1), interpolated[1:], anchors)


# --- metrics -----------------------------------------------------------------


def frame_error(gt: np.ndarray, pred: np.ndarray, corners: np.ndarray) -> np.ndarray:
    """Mean corner distance between the two transforms (mm); broadcasts over leading dims."""
    a = geometry.transform_points(gt, corners)
    b = geometry.transform_points(pred, corners)
    return np.linalg.norm(a - b, axis=-1).mean(axis=-1)


@dataclass(frozen=True)
class ImageGrid:
    width: int
    height: int
    spacing: float

    @classmethod
    def of(cls, scan: Scan) -> "ImageGrid":
        h, w = scan.image_shape
        return cls(w, h, scan.meta.pixel_spacing)

    def points(self, stride: int = 1) -> np.ndarray:
        return geometry.pixel_points(self.width, self.height, self.spacing, stride)

    def corners(self) -> np.ndarray:
        return geometry.corner_points(self.width, self.height, self.spacing)


def _check_same_frames(a: Trajectory, b: Trajectory) -> None:
    if len(a) != len(b) or not np.array_equal(a.reconstructed, b.reconstructed):
        raise ValueError("trajectories cover different frame sets")


def accumulated_error(traj_gt: Trajectory, traj_pred: Trajectory, grid: ImageGrid, stride: int = 1) -> float:
    """Mean distance of every (strided) pixel over all reconstructed frames."""
    _check_same_frames(traj_gt, traj_pred)
    pts = grid.points(stride)
    idx = traj_gt.reconstructed - 1
    total = 0.0
    for chunk in np.array_split(idx, max(1, len(idx) * len(pts) // 2_000_000 + 1)):
        a = geometry.transform_points(traj_gt.transforms[chunk], pts)
        b = geometry.transform_points(traj_pred.transforms[chunk], pts)
        total += np.linalg.norm(a - b, axis=-1).sum()
    return float(total / (len(idx) * len(pts)))


def final_drift(traj_gt: Trajectory, traj_pred: Trajectory, corners: np.ndarray) -> float:
    if len(traj_gt) == 0 or len(traj_pred) != len(traj_gt):
        raise ValueError("both trajectories must contain the scan's last frame")
    return float(frame_error(traj_gt.transforms[-1], traj_pred.transforms[-1], corners))


def dice_points(a: np.ndarray, b: np.ndarray, voxel_mm: float = 1.0) -> float:
    """Dice overlap of two point clouds voxelised on a common grid."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty occupancy")
    lo = np.minimum(a.min(axis=0), b.min(axis=0))

    def cells(p):
        # snap to 1e-6 voxel first so round-off cannot flip a point across a face
        return np.unique(np.floor(np.round((p - lo) / voxel_mm, 6)).astype(np.int64), axis=0)

    va, vb = cells(a), cells(b)
    dims = np.maximum(va.max(axis=0), vb.max(axis=0)) + 1
    ka = np.ravel_multi_index(va.T, dims)
    kb = np.ravel_multi_index(vb.T, dims)
    inter = np.intersect1d(ka, kb, assume_unique=True).size
    return 2.0 * inter / (len(ka) + len(kb))


def dice_overlap(traj_gt: Trajectory, traj_pred: Trajectory, grid: ImageGrid, voxel_mm: float = 1.0, stride: int = 1) -> float:
    _check_same_frames(traj_gt, traj_pred)
    pts = grid.points(stride)
    a = geometry.transform_points(traj_gt.transforms, pts).reshape(-1, 3)
    b = geometry.transform_points(traj_pred.transforms, pts).reshape(-1, 3)
    return dice_points(a, b, voxel_mm)


@dataclass
class ScanMetrics:
    scan_id: str
    eps_frame: float
    eps_acc: float
    eps_dice: float
    eps_drift: float
    protocol: str = ""
    orientation: str = ""
    n_interpolated: int = 0


METRIC_NAMES = ("eps_frame", "eps_acc", "eps_dice", "eps_drift")


def evaluate_scan(
    scan: Scan,
    predictor: Predictor,
    main: Pair | None = None,
    stride: int = 1,
    voxel_mm: float = 1.0,
    gap_mode: str = "auxiliary",
) -> tuple[ScanMetrics, Trajectory]:
    tasks = predictor.tasks
    main = tasks.main if main is None else tuple(main)
    traj = chain(scan, predictor, main, gap_mode)
    gt = gt_trajectory(scan)
    grid = ImageGrid.of(scan)
    corners = grid.corners()
    starts, _ = window_starts(len(scan), predictor.M, main[1] - main[0])
    pred_main = predictor.predict_windows(scan, starts)[:, tasks.index(main)]
    gt_main = gt_transforms(scan.world_poses, scan.calib, np.asarray(starts), [main])[:, 0]
    metrics = ScanMetrics(
        scan.scan_id,
        float(frame_error(gt_main, pred_main, corners).mean()),
        accumulated_error(gt, traj, grid, stride),
        dice_overlap(gt, traj, grid, voxel_mm, stride),
        final_drift(gt, traj, corners),
        scan.meta.protocol,
        scan.meta.orientation,
        int(traj.interpolated.sum()),
    )
    return metrics, traj


@dataclass
class MetricsReport:
    scans: list[ScanMetrics]
    M: int
    main: Pair
    stride: int = 1
    voxel_mm: float = 1.0
    gap_mode: str = "auxiliary"

    @property
    def profile(self):
        return dependency_of(self.M, *self.main)

    def values(self, metric: str) -> np.ndarray:
        return np.array([getattr(s, metric) for s in self.scans])

    def mean(self, metric: str) -> float:
        return float(self.values(metric).mean())

    def std(self, metric: str) -> float:
        return float(self.values(metric).std())

    def summary(self) -> dict:
        return {m: {"mean": self.mean(m), "std": self.std(m)} for m in METRIC_NAMES}

    def to_json(self) -> dict:
        return {
            "M": self.M,
            "main": list(self.main),
            "dependency": asdict(self.profile),
            "stride": self.stride,
            "stride_mode": "full lattice" if self.stride == 1 else "strided approximation",
            "voxel_mm": self.voxel_mm,
            "gap_mode": self.gap_mode,
            "summary": self.summary(),
            "scans": [asdict(s) for s in self.scans],
        }

    @classmethod
    def from_json(cls, data: dict) -> "MetricsReport":
        scans = [ScanMetrics(**row) for row in data["scans"]]
        return cls(scans, int(data["M"]), tuple(data["main"]), data["stride"], data["voxel_mm"], data["gap_mode"])

    def save(self, stem: str | Path) -> tuple[Path, Path]:
        stem = Path(stem)
        jpath, cpath = stem.with_suffix(".json"), stem.with_suffix(".csv")
        with open(jpath, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, indent=1)
        with open(cpath, "w", newline="") as f:
            w = csv.writer(f)
            fields = list(asdict(self.scans[0]).keys())
            w.writerow(fields)
            for s in self.scans:
                w.writerow([getattr(s, k) for k in fields])
        return jpath, cpath


def evaluate(
    scans: Sequence[Scan],
    predictor: Predictor,
    main: Pair | None = None,
    stride: int = 1,
    voxel_mm: float = 1.0,
    gap_mode: str = "auxiliary",
) -> MetricsReport:
    main = predictor.tasks.main if main is None else tuple(main)
    rows = [evaluate_scan(s, predictor, main, stride, voxel_mm, gap_mode)[0] for s in scans if len(s) >= predictor.M]
    if not rows:
        raise ValueError("no scan is long enough to evaluate")
    for r in rows:
        for m in METRIC_NAMES:
            if not math.isfinite(getattr(r, m)):
                raise FloatingPointError(f"{r.scan_id}: non-finite {m}")
    return MetricsReport(rows, predictor.M, main, stride, voxel_mm, gap_mode)
