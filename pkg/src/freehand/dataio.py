"""On-disk scan container, loader/validator, and scan-level splits.

Layout of one scan directory::

    manifest.json      meta, calibration (16 row-major numbers), frame count,
                       image size, pixel spacing
    frames/000001.png  8-bit grayscale, one per frame
    poses.csv          frame_index,t00,...,t23 (first three rows of each
                       tool-to-world matrix, row-major)

A dataset root holds one such directory per scan plus ``split.json``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

from . import geometry

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
PROTOCOLS = ("straight", "c_shape", "s_shape")
ORIENTATIONS = ("perpendicular", "parallel")
ARMS = ("left", "right")
TYPICAL_LENGTH_RANGE = (36, 430)
POSE_TOL = 1e-6
POSE_FAIL_TOL = 1e-3
POSE_COLUMNS = ["frame_index"] + [f"t{r}{c}" for r in range(3) for c in range(4)]


class ScanFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ScanMeta:
    subject_id: str
    arm: str = "right"
    protocol: str = "straight"
    orientation: str = "perpendicular"
    fps: float = 20.0
    pixel_spacing: float = geometry.DEFAULT_PIXEL_SPACING

    def __post_init__(self):
        if self.arm not in ARMS:
            raise ValueError(f"arm must be one of {ARMS}, got {self.arm!r}")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"orientation must be one of {ORIENTATIONS}, got {self.orientation!r}")
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        if not self.pixel_spacing > 0:
            raise ValueError("pixel_spacing must be positive")


@dataclass(frozen=True)
class Frame:
    index: int
    image: np.ndarray
    timestamp_s: float | None = None


@dataclass(eq=False)
class Scan:
    """One tracked scan. Frame indices are 1-based and contiguous."""

    scan_id: str
    images: np.ndarray  # (L, H, W) uint8
    world_poses: np.ndarray  # (L, 4, 4) tool-to-world
    calib: np.ndarray  # (4, 4) image(mm)-to-tool
    meta: ScanMeta
    timestamps: np.ndarray | None = None
    pose_corrections: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.images = np.asarray(self.images)
        if self.images.ndim != 3 or self.images.dtype != np.uint8:
            raise ScanFormatError("images must be a (L, H, W) uint8 array")
        self.world_poses = np.asarray(self.world_poses, dtype=np.float64)
        if self.world_poses.shape != (len(self.images), 4, 4):
            raise ScanFormatError(
                f"{self.scan_id}: {len(self.images)} frames but pose array has shape {self.world_poses.shape}"
            )
        self.calib = geometry.validate_se3(self.calib, name="calib")
        if not TYPICAL_LENGTH_RANGE[0] <= len(self) <= TYPICAL_LENGTH_RANGE[1]:
            log.debug("scan %s has %d frames, outside the typical range", self.scan_id, len(self))

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.images.shape[1], self.images.shape[2]

    def frames(self) -> Iterator[Frame]:
        for k, img in enumerate(self.images):
            ts = None if self.timestamps is None else float(self.timestamps[k])
            yield Frame(k + 1, img, ts)

    def corners(self) -> np.ndarray:
        h, w = self.image_shape
        return geometry.corner_points(w, h, self.meta.pixel_spacing)

    def cropped(self, n_frames: int) -> "Scan":
        """The first ``n_frames`` frames as a new scan."""
        ts = None if self.timestamps is None else self.timestamps[:n_frames]
        return Scan(self.scan_id, self.images[:n_frames], self.world_poses[:n_frames], self.calib, self.meta, ts)


def save_scan(scan: Scan, dir_path: str | Path) -> Path:
    out = Path(dir_path)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    h, w = scan.image_shape
    manifest = {
        "format_version": FORMAT_VERSION,
        "scan_id": scan.scan_id,
        "meta": asdict(scan.meta),
        "calib": [float(v) for v in scan.calib.ravel()],
        "n_frames": len(scan),
        "image_size": {"width": w, "height": h},
        "pixel_spacing": scan.meta.pixel_spacing,
    }
    if scan.timestamps is not None:
        manifest["timestamps_s"] = [float(v) for v in scan.timestamps]
    with open(out / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1)
    for frame in scan.frames():
        Image.fromarray(frame.image).save(out / "frames" / f"{frame.index:06d}.png", optimize=False)
    with open(out / "poses.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(POSE_COLUMNS)
        for k, pose in enumerate(scan.world_poses):
            writer.writerow([k + 1] + [repr(float(v)) for v in pose[:3].ravel()])
    return out


def _read_manifest(path: Path) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ScanFormatError(f"{path}: cannot read manifest ({exc})") from exc
    for key in ("meta", "calib", "n_frames", "image_size"):
        if key not in manifest:
            raise ScanFormatError(f"{path}: manifest missing {key!r}")
    if len(manifest["calib"]) != 16:
        raise ScanFormatError(f"{path}: calib must have 16 numbers")
    return manifest


def _read_poses(path: Path, n_frames: int) -> np.ndarray:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != POSE_COLUMNS:
        raise ScanFormatError(f"{path}: bad header")
    rows = rows[1:]
    if len(rows) != n_frames:
        missing = len(rows) + 1
        raise ScanFormatError(
            f"{path}: manifest declares {n_frames} frames but found {len(rows)} pose rows (row {missing} missing)"
        )
    poses = np.zeros((n_frames, 4, 4))
    poses[:, 3, 3] = 1.0
    for k, row in enumerate(rows):
        if len(row) != 13 or int(row[0]) != k + 1:
            raise ScanFormatError(f"{path}: malformed pose row {k + 1}")
        poses[k, :3, :] = np.array([float(v) for v in row[1:]]).reshape(3, 4)
    return poses


def _check_poses(poses: np.ndarray, where: str) -> tuple[np.ndarray, np.ndarray]:
    r = poses[:, :3, :3]
    dev = np.linalg.norm(r @ np.swapaxes(r, -1, -2) - np.eye(3), axis=(-2, -1))
    det = np.linalg.det(r)
    for k in range(len(poses)):
        if not np.all(np.isfinite(poses[k])) or dev[k] > POSE_FAIL_TOL or abs(det[k] - 1) > POSE_FAIL_TOL:
            raise ScanFormatError(f"{where}: pose row {k + 1} is not a rigid transform (|RR^T-I|={dev[k]:.3g})")
    corrections = np.zeros(len(poses))
    bad = (dev > POSE_TOL) | (np.abs(det - 1) > POSE_TOL)
    if np.any(bad):
        fixed, delta = geometry.polar_project(poses[bad])
        poses = poses.copy()
        poses[bad] = fixed
        corrections[bad] = delta
        log.info("%s: renormalised %d poses (max correction %.3g)", where, bad.sum(), delta.max())
    return poses, corrections


def load_scan(dir_path: str | Path) -> Scan:
    src = Path(dir_path)
    manifest = _read_manifest(src / "manifest.json")
    n = int(manifest["n_frames"])
    w, h = manifest["image_size"]["width"], manifest["image_size"]["height"]
    poses = _read_poses(src / "poses.csv", n)
    poses, corrections = _check_poses(poses, str(src))
    calib = np.array(manifest["calib"], dtype=np.float64).reshape(4, 4)
    if np.max(np.abs(calib[3] - (0, 0, 0, 1))) > POSE_TOL:
        raise ScanFormatError(f"{src}: calib last row is not [0, 0, 0, 1]")
    calib = _check_poses(calib[None], f"{src} calib")[0][0]
    images = np.empty((n, h, w), dtype=np.uint8)
    for k in range(n):
        path = src / "frames" / f"{k + 1:06d}.png"
        if not path.exists():
            raise ScanFormatError(f"{src}: missing frame {k + 1}")
        img = np.asarray(Image.open(path).convert("L"))
        if img.shape != (h, w):
            raise ScanFormatError(f"{path}: size {img.shape[::-1]} does not match manifest {w}x{h}")
        images[k] = img
    meta = ScanMeta(**manifest["meta"])
    ts = manifest.get("timestamps_s")
    scan = Scan(
        manifest.get("scan_id", src.name),
        images,
        poses,
        calib,
        meta,
        None if ts is None else np.asarray(ts, dtype=np.float64),
        corrections,
    )
    return scan


@dataclass
class SplitManifest:
    train: list[str]
    val: list[str]
    test: list[str]
    ratio: tuple[int, int, int] = (3, 1, 1)
    seed: int | None = None

    def __post_init__(self):
        sets = [set(self.train), set(self.val), set(self.test)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValueError("split parts must be disjoint")

    def all_ids(self) -> list[str]:
        return self.train + self.val + self.test

    def to_json(self) -> dict:
        return {"train": self.train, "val": self.val, "test": self.test, "ratio": list(self.ratio), "seed": self.seed}

    @classmethod
    def from_json(cls, data: dict) -> "SplitManifest":
        return cls(list(data["train"]), list(data["val"]), list(data["test"]), tuple(data.get("ratio", (3, 1, 1))), data.get("seed"))

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, indent=1)

    @classmethod
    def load(cls, path: str | Path) -> "SplitManifest":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(json.load(f))


def apportion(n: int, ratio: Sequence[int]) -> list[int]:
    """Largest-remainder integer apportionment of ``n`` items by ``ratio``."""
    total = sum(ratio)
    quotas = [n * r / total for r in ratio]
    sizes = [math.floor(q) for q in quotas]
    order = sorted(range(len(ratio)), key=lambda k: (-(quotas[k] - sizes[k]), -ratio[k], k))
    for k in order[: n - sum(sizes)]:
        sizes[k] += 1
    return sizes


def make_split(scans: Sequence[Scan | str], ratio: Sequence[int] = (3, 1, 1), seed: int = 0) -> SplitManifest:
    ids = [s if isinstance(s, str) else s.scan_id for s in scans]
    if not ids:
        raise ValueError("cannot split an empty dataset")
    if len(ids) < 5:
        raise ValueError(f"need at least 5 scans to split, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate scan ids")
    order = sorted(ids)
    random.Random(seed).shuffle(order)
    n_train, n_val, _ = apportion(len(order), ratio)
    return SplitManifest(
        order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :], tuple(ratio), seed
    )


class Dataset:
    """A directory of scan containers plus its ``split.json``; scans load lazily."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        split_path = self.root / "split.json"
        self.split = SplitManifest.load(split_path) if split_path.exists() else None
        self._cache: dict[str, Scan] = {}

    def scan_ids(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir() if (p / "manifest.json").exists())

    def scan(self, scan_id: str) -> Scan:
        if scan_id not in self._cache:
            self._cache[scan_id] = load_scan(self.root / scan_id)
        return self._cache[scan_id]

    def scans(self, ids: Sequence[str]) -> list[Scan]:
        return [self.scan(i) for i in ids]

    def part(self, name: str) -> list[Scan]:
        if self.split is None:
            raise FileNotFoundError(f"{self.root} has no split.json")
        return self.scans(getattr(self.split, name))
