"""Sub-sequence sampling and the per-sequence transformation task set."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import geometry
from .dataio import Scan

log = logging.getLogger(__name__)

Pair = tuple[int, int]


class ScanTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class DependencyProfile:
    past: int
    future: int
    interval: int


def dependency_of(M: int, i_star: int, j_star: int) -> DependencyProfile:
    if not 1 <= i_star < j_star <= M:
        raise ValueError(f"need 1 <= i* < j* <= M, got M={M}, i*={i_star}, j*={j_star}")
    return DependencyProfile(past=i_star - 1, future=M - j_star, interval=j_star - i_star)


def n_universe(M: int) -> int:
    return M * (M - 1) // 2


@dataclass(frozen=True)
class TaskSet:
    """Ordered (i, j) frame pairs predicted for one sequence length ``M``."""

    M: int
    pairs: tuple[Pair, ...]
    main: Pair

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple((int(i), int(j)) for i, j in self.pairs))
        object.__setattr__(self, "main", (int(self.main[0]), int(self.main[1])))
        if len(set(self.pairs)) != len(self.pairs):
            raise ValueError("task pairs must be unique")
        for i, j in self.pairs:
            if not 1 <= i < j <= self.M:
                raise ValueError(f"pair ({i}, {j}) outside 1 <= i < j <= {self.M}")
        if self.main not in self.pairs:
            raise ValueError(f"main task {self.main} not among the pairs")

    @property
    def tau_plus_1(self) -> int:
        return len(self.pairs)

    @property
    def main_index(self) -> int:
        return self.pairs.index(self.main)

    def index(self, pair: Pair) -> int:
        return self.pairs.index(tuple(pair))

    def with_main(self, main: Pair) -> "TaskSet":
        return TaskSet(self.M, self.pairs, main)

    def to_json(self) -> dict:
        return {"M": self.M, "pairs": [list(p) for p in self.pairs], "main": list(self.main)}

    @classmethod
    def from_json(cls, data: dict) -> "TaskSet":
        return cls(int(data["M"]), tuple(tuple(p) for p in data["pairs"]), tuple(data["main"]))


def all_pairs(M: int) -> list[Pair]:
    return [(i, j) for i in range(1, M) for j in range(i + 1, M + 1)]


def sample_tasks(M: int, tau_plus_1: int, main: Pair, rng: np.random.Generator, n_bins: int = 8) -> TaskSet:
    """Main task, then adjacent pairs, then pairs drawn round-robin over interval bins.

    Intervals ``2..M-1`` are split into at most ``n_bins`` contiguous bins so
    every interval range receives some heads even under a tight budget.
    """
    if M < 2:
        raise ValueError("M must be >= 2")
    main = (int(main[0]), int(main[1]))
    dependency_of(M, *main)
    universe = n_universe(M)
    if tau_plus_1 < 1 or tau_plus_1 > universe:
        raise ValueError(f"tau+1={tau_plus_1} outside [1, {universe}] for M={M}")
    if M > 2 and tau_plus_1 < 2:
        raise ValueError("tau+1 must be >= 2 when M > 2")

    chosen = [main]
    taken = {main}
    for i in range(1, M):
        if len(chosen) >= tau_plus_1:
            break
        if (i, i + 1) not in taken:
            chosen.append((i, i + 1))
            taken.add((i, i + 1))

    intervals = np.arange(2, M)
    bins = [b for b in np.array_split(intervals, min(n_bins, len(intervals))) if len(b)] if len(intervals) else []
    pools = []
    for b in bins:
        pool = [(i, i + d) for d in b for i in range(1, M - d + 1) if (i, i + d) not in taken]
        rng.shuffle(pool)
        pools.append(pool)
    while len(chosen) < tau_plus_1 and any(pools):
        for pool in pools:
            if pool and len(chosen) < tau_plus_1:
                pair = tuple(int(v) for v in pool.pop())
                chosen.append(pair)
                taken.add(pair)
    return TaskSet(M, tuple(sorted(chosen)), main)


def full_taskset(M: int, main: Pair) -> TaskSet:
    return TaskSet(M, tuple(all_pairs(M)), main)


@dataclass
class SequenceSample:
    scan_id: str
    start_index: int  # 1-based index of the first frame in the scan
    M: int
    frames: np.ndarray  # (M, H, W) uint8
    gt_pairs: dict[Pair, np.ndarray] = field(repr=False)

    def __post_init__(self):
        if self.start_index < 1:
            raise ValueError("start index is 1-based")
        for i, j in self.gt_pairs:
            if not 1 <= i < j <= self.M:
                raise ValueError(f"gt pair ({i}, {j}) outside the sequence")


def gt_transforms(world_poses: np.ndarray, calib: np.ndarray, start: int, pairs: Sequence[Pair]) -> np.ndarray:
    """Ground-truth image-i-to-tool-j transforms for a window starting at ``start``.

    ``start`` may be an int or an array of starts; the result has shape
    ``(..., len(pairs), 4, 4)``.
    """
    idx = np.asarray(pairs, dtype=np.int64).reshape(-1, 2) - 1
    s = np.asarray(start, dtype=np.int64)[..., None] - 1
    wi = world_poses[s + idx[:, 0]]
    wj = world_poses[s + idx[:, 1]]
    return geometry.relative_gt_unchecked(wi, wj, calib)


def valid_starts(scan_length: int, M: int) -> range:
    return range(1, scan_length - M + 2)


def sample_sequence(scan: Scan, M: int, rng: np.random.Generator, pairs: Sequence[Pair] | None = None) -> SequenceSample:
    if M < 2:
        raise ValueError("M must be >= 2")
    if len(scan) < M:
        raise ScanTooShortError(f"scan {scan.scan_id} has {len(scan)} frames, fewer than M={M}")
    pairs = all_pairs(M) if pairs is None else [tuple(p) for p in pairs]
    start = int(rng.integers(1, len(scan) - M + 2))
    gts = gt_transforms(scan.world_poses, scan.calib, start, pairs)
    return SequenceSample(
        scan.scan_id,
        start,
        M,
        scan.images[start - 1 : start - 1 + M],
        {p: g for p, g in zip(pairs, gts)},
    )


def eligible_scans(scans: Sequence[Scan], M: int) -> tuple[list[Scan], list[str]]:
    """Scans long enough for ``M``; the ids of excluded ones are returned too."""
    kept = [s for s in scans if len(s) >= M]
    skipped = [s.scan_id for s in scans if len(s) < M]
    if skipped:
        log.info("excluding %d scans shorter than M=%d: %s", len(skipped), M, ", ".join(skipped))
    return kept, skipped
