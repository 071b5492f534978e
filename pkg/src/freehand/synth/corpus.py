"""Scan and corpus generation on top of the phantom and trajectory models."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import geometry
from ..dataio import ARMS, ORIENTATIONS, PROTOCOLS, Scan, ScanMeta, SplitManifest, make_split, save_scan
from .phantom import Phantom, PhantomSpec
from .trajectory import SPEED_PROFILES, TrajectorySpec, image_poses

log = logging.getLogger(__name__)

DEFAULT_CALIB_PARAMS = (0.02, -0.03, 0.05, -20.0, 5.0, 15.0)


@dataclass(frozen=True)
class ImageGeometry:
    width: int = 64
    height: int = 64
    spacing: float = 0.75

    @property
    def width_mm(self) -> float:
        return (self.width - 1) * self.spacing

    def lattice(self) -> np.ndarray:
        return geometry.pixel_points(self.width, self.height, self.spacing)


def default_calib() -> np.ndarray:
    return geometry.params_to_matrix(np.array(DEFAULT_CALIB_PARAMS))


def render_frames(phantom: Phantom, image_to_world: np.ndarray, image_geom: ImageGeometry) -> np.ndarray:
    lattice = image_geom.lattice()
    world = geometry.transform_points(image_to_world, lattice)
    values = phantom.sample(world.reshape(-1, 3)).reshape(len(image_to_world), image_geom.height, image_geom.width)
    return np.clip(np.round(values * 255.0), 0, 255).astype(np.uint8)


def generate_scan(
    traj: TrajectorySpec,
    phantom: Phantom | PhantomSpec,
    image_geom: ImageGeometry = ImageGeometry(),
    calib: np.ndarray | None = None,
    seed: int = 0,
    scan_id: str = "scan",
    subject_id: str = "sub000",
    arm: str = "right",
    fps: float = 20.0,
) -> Scan:
    if isinstance(phantom, PhantomSpec):
        phantom = Phantom(phantom)
    calib = default_calib() if calib is None else geometry.validate_se3(calib, name="calib")
    rng = np.random.default_rng(seed)
    img_to_world = image_poses(traj, image_geom.width_mm, rng)
    tool_to_world = img_to_world @ geometry.invert(calib)
    images = render_frames(phantom, img_to_world, image_geom)
    meta = ScanMeta(subject_id, arm, traj.shape, traj.orientation, fps, image_geom.spacing)
    return Scan(scan_id, images, tool_to_world, calib, meta, np.arange(len(images)) / fps)


@dataclass
class CorpusConfig:
    n_subjects: int = 2
    arms: Sequence[str] = ARMS
    protocols: Sequence[str] = PROTOCOLS
    orientations: Sequence[str] = ORIENTATIONS
    n_frames: tuple[int, int] = (100, 100)
    length_mm: tuple[float, float] = (100.0, 200.0)
    speed_profiles: Sequence[str] = SPEED_PROFILES
    jitter_sigma: float = 0.3
    jitter_frames: float = 10.0
    heading_change: tuple[float, float] = (0.4, 0.9)
    image: ImageGeometry = field(default_factory=ImageGeometry)
    phantom: dict = field(default_factory=dict)
    calib_params: tuple[float, ...] = DEFAULT_CALIB_PARAMS
    fps: float = 20.0
    split_ratio: tuple[int, int, int] = (3, 1, 1)
    seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 2:
            raise ValueError("a corpus needs at least 2 subjects")
        if isinstance(self.image, dict):
            self.image = ImageGeometry(**self.image)
        self.n_frames = tuple(int(v) for v in np.broadcast_to(self.n_frames, (2,)))
        self.length_mm = tuple(float(v) for v in np.broadcast_to(self.length_mm, (2,)))
        self.heading_change = tuple(float(v) for v in np.broadcast_to(self.heading_change, (2,)))
        self.arms, self.protocols, self.orientations = list(self.arms), list(self.protocols), list(self.orientations)
        self.speed_profiles = list(self.speed_profiles)
        self.calib_params = tuple(self.calib_params)
        self.split_ratio = tuple(self.split_ratio)

    @property
    def scans_per_subject(self) -> int:
        return len(self.arms) * len(self.protocols) * len(self.orientations)

    def to_json(self) -> dict:
        data = asdict(self)
        data["image"] = asdict(self.image)
        return data

    @classmethod
    def from_json(cls, data: dict) -> "CorpusConfig":
        return cls(**data)


@dataclass(frozen=True)
class PlannedScan:
    scan_id: str
    subject: int
    arm: str
    trajectory: TrajectorySpec
    seed: int


def _subject_phantom(config: CorpusConfig, subject: int, arm: str) -> PhantomSpec:
    seed = int(np.random.SeedSequence([config.seed, subject, 7919]).generate_state(1)[0])
    return PhantomSpec(seed=seed, mirror=(arm == "left"), **config.phantom)


def corpus_plan(config: CorpusConfig) -> list[PlannedScan]:
    """Every scan of the corpus with its trajectory and seed, in a fixed order."""
    plan = []
    for subject in range(config.n_subjects):
        for a, arm in enumerate(config.arms):
            for p, protocol in enumerate(config.protocols):
                for o, orientation in enumerate(config.orientations):
                    ss = np.random.SeedSequence([config.seed, subject, a, p, o])
                    rng = np.random.default_rng(ss)
                    lo, hi = config.n_frames
                    traj = TrajectorySpec(
                        shape=protocol,
                        length_mm=float(rng.uniform(*config.length_mm)),
                        n_frames=int(rng.integers(lo, hi + 1)),
                        orientation=orientation,
                        speed_profile=str(config.speed_profiles[rng.integers(len(config.speed_profiles))]),
                        jitter_sigma=config.jitter_sigma,
                        jitter_frames=config.jitter_frames,
                        heading_change=float(rng.uniform(*config.heading_change)),
                        turn_sign=int(rng.choice([-1, 1])),
                    )
                    scan_id = f"sub{subject:03d}_{arm}_{protocol}_{orientation}"
                    plan.append(PlannedScan(scan_id, subject, arm, traj, int(rng.integers(2**31))))
    return plan


def generate_corpus(config: CorpusConfig, out_dir: str | Path | None = None) -> tuple[list[Scan], SplitManifest]:
    """Generate all scans; when ``out_dir`` is given, write containers, ``split.json`` and ``provenance.json``."""
    calib = geometry.params_to_matrix(np.array(config.calib_params))
    scans = []
    phantoms: dict[tuple[int, str], Phantom] = {}
    plan = corpus_plan(config)
    for item in plan:
        key = (item.subject, item.arm)
        if key not in phantoms:
            phantoms = {key: Phantom(_subject_phantom(config, item.subject, item.arm))}
        scan = generate_scan(
            item.trajectory,
            phantoms[key],
            config.image,
            calib,
            seed=item.seed,
            scan_id=item.scan_id,
            subject_id=f"sub{item.subject:03d}",
            arm=item.arm,
            fps=config.fps,
        )
        scans.append(scan)
        if out_dir is not None:
            save_scan(scan, Path(out_dir) / scan.scan_id)
    split = make_split(scans, config.split_ratio, config.seed)
    if out_dir is not None:
        out = Path(out_dir)
        split.save(out / "split.json")
        provenance = {
            "config": config.to_json(),
            "scans": [
                {"scan_id": p.scan_id, "seed": p.seed, "trajectory": asdict(p.trajectory),
                 "phantom": asdict(_subject_phantom(config, p.subject, p.arm))}
                for p in plan
            ],
        }
        with open(out / "provenance.json", "w", encoding="utf-8") as f:
            json.dump(provenance, f, indent=1)
    log.info("generated %d scans", len(scans))
    return scans, split
