"""Procedural forearm-like phantom: tubes and blobs over a smooth background,
with a fixed 3D Rayleigh speckle field so that nearby slices stay correlated."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates


@dataclass(frozen=True)
class PhantomSpec:
    seed: int = 0
    extent: tuple[tuple[float, float], ...] = ((-80.0, 290.0), (-130.0, 130.0), (-100.0, 5.0))
    n_tubes: int = 10
    n_blobs: int = 40
    speckle_mm: float = 1.0
    speckle_level: float = 0.6
    axial_gain: float = 0.7
    contrast: float = 0.4
    wiggle_mm: tuple[float, float] = (2.0, 12.0)  # lateral tube meander amplitude range
    mirror: bool = False  # y -> -y; a left arm as the mirror of the right


@dataclass
class _Tube:
    y0: float
    z0: float
    radius: float
    contrast: float
    wiggle: np.ndarray  # (amp_y, wavelength_y, phase_y, amp_z, wavelength_z, phase_z, amp_r, wavelength_r, phase_r)


class Phantom:
    def __init__(self, spec: PhantomSpec):
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        (x0, x1), (y0, y1), (z0, z1) = spec.extent
        self._x_span = (x0, x1)
        self.tubes = []
        for _ in range(spec.n_tubes):
            self.tubes.append(
                _Tube(
                    y0=rng.uniform(-40, 40),
                    z0=rng.uniform(-45, -5),
                    radius=rng.uniform(2.0, 7.0),
                    contrast=rng.choice([-1.0, 1.0]) * rng.uniform(0.15, 0.4) * spec.contrast,
                    wiggle=np.array(
                        [
                            rng.uniform(*spec.wiggle_mm), rng.uniform(40, 160), rng.uniform(0, 2 * np.pi),
                            rng.uniform(*spec.wiggle_mm) / 2, rng.uniform(40, 160), rng.uniform(0, 2 * np.pi),
                            rng.uniform(0.1, 0.4), rng.uniform(30, 90), rng.uniform(0, 2 * np.pi),
                        ]
                    ),
                )
            )
        self.blob_centres = np.stack(
            [rng.uniform(x0, x1, spec.n_blobs), rng.uniform(-60, 60, spec.n_blobs), rng.uniform(-60, -3, spec.n_blobs)],
            axis=-1,
        )
        self.blob_radii = rng.uniform(3.0, 12.0, size=(spec.n_blobs, 3))
        self.blob_contrast = rng.choice([-1.0, 1.0], spec.n_blobs) * rng.uniform(0.1, 0.35, spec.n_blobs) * spec.contrast
        self.background = rng.uniform(0, 2 * np.pi, 3)
        self._grid_origin = np.array([x0, y0, z0])
        shape = tuple(int(np.ceil((hi - lo) / spec.speckle_mm)) + 1 for lo, hi in spec.extent)
        # |complex gaussian| is Rayleigh; scale so the mean is 1
        self.speckle_grid = rng.rayleigh(np.sqrt(2.0 / np.pi), size=shape).astype(np.float32)

    def tissue(self, pts: np.ndarray) -> np.ndarray:
        """Noise-free echogenicity in roughly [0, 1] at world points ``(N, 3)``."""
        pts = np.asarray(pts, dtype=np.float64)
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        if self.spec.mirror:
            y = -y
        lo, hi = self._x_span
        a, b, c = self.background
        # echogenicity drifts steadily along the limb axis
        v = 0.12 + self.spec.axial_gain * (x - lo) / (hi - lo)
        v = v + 0.03 * np.sin(2 * np.pi * x / 90.0 + a) + 0.02 * np.sin(2 * np.pi * y / 70.0 + b)
        v = v * np.exp(z / 160.0)
        for t in self.tubes:
            w = t.wiggle
            cy = t.y0 + w[0] * np.sin(2 * np.pi * x / w[1] + w[2])
            cz = t.z0 + w[3] * np.sin(2 * np.pi * x / w[4] + w[5])
            r = t.radius * (1 + w[6] * np.sin(2 * np.pi * x / w[7] + w[8]))
            d = np.hypot(y - cy, z - cz)
            v = v + t.contrast * _soft_inside(r - d, 0.8)
        q = np.stack([x, y, z], axis=-1)
        for centre, radii, contrast in zip(self.blob_centres, self.blob_radii, self.blob_contrast):
            rel = (q - centre) / radii
            n2 = np.einsum("ij,ij->i", rel, rel)
            near = n2 < 4.0
            if np.any(near):
                v[near] += contrast * _soft_inside(1.0 - np.sqrt(n2[near]), 0.12)
        return np.clip(v, 0.02, 1.0)

    def speckle(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        if self.spec.mirror:
            pts = pts * np.array([1.0, -1.0, 1.0])
        idx = ((pts - self._grid_origin) / self.spec.speckle_mm).T
        return map_coordinates(self.speckle_grid, idx, order=1, mode="nearest")

    def sample(self, pts: np.ndarray) -> np.ndarray:
        level = self.spec.speckle_level
        return self.tissue(pts) * ((1.0 - level) + level * self.speckle(pts))


def _soft_inside(signed_dist: np.ndarray, edge: float) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(signed_dist / edge))
