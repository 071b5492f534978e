"""Parametric probe paths: straight, C and S shapes along +x at the skin (z = 0)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d

SHAPES = ("straight", "c_shape", "s_shape")
SPEED_PROFILES = ("constant", "ramp", "jitter")

_QUAD_POINTS = 8001


class TrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class TrajectorySpec:
    shape: str = "straight"
    length_mm: float = 150.0
    n_frames: int = 100
    orientation: str = "perpendicular"
    speed_profile: str = "constant"
    jitter_sigma: float = 0.3
    jitter_frames: float = 10.0  # correlation length of the speed jitter; 0 gives independent steps
    ramp: float = 1.0  # final speed / initial speed - 1
    heading_change: float = 0.8  # rad; total turn for C, peak excursion for S
    turn_sign: int = 1

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise TrajectoryError(f"unknown shape {self.shape!r}")
        if self.speed_profile not in SPEED_PROFILES:
            raise TrajectoryError(f"unknown speed profile {self.speed_profile!r}")
        if self.orientation not in ("perpendicular", "parallel"):
            raise TrajectoryError(f"unknown orientation {self.orientation!r}")
        if self.n_frames < 2:
            raise TrajectoryError("n_frames must be >= 2")
        if not self.length_mm > 0:
            raise TrajectoryError("length_mm must be positive")
        if self.jitter_frames < 0:
            raise TrajectoryError("jitter_frames must be >= 0")
        if self.turn_sign not in (-1, 1):
            raise TrajectoryError("turn_sign must be +1 or -1")
        if self.shape != "straight" and not 0 < self.heading_change < np.pi / 2:
            # beyond a quarter turn either way the sweep folds back on itself
            raise TrajectoryError(
                f"heading change {self.heading_change:.3f} rad would make the {self.shape} path self-intersect"
            )


def heading(spec: TrajectorySpec, u: np.ndarray) -> np.ndarray:
    """Heading angle (about +z) as a function of arc length ``u``."""
    s = np.asarray(u, dtype=np.float64) / spec.length_mm
    a = spec.turn_sign * spec.heading_change
    if spec.shape == "straight":
        return np.zeros_like(s)
    if spec.shape == "c_shape":
        return a * (s - 0.5)
    return a * (np.sin(np.pi * s) - 2.0 / np.pi)


def arc_positions(spec: TrajectorySpec, rng: np.random.Generator) -> np.ndarray:
    """Arc-length position of every frame, from 0 to ``length_mm``."""
    n = spec.n_frames
    if spec.speed_profile == "constant":
        steps = np.ones(n - 1)
    elif spec.speed_profile == "ramp":
        steps = 1.0 + spec.ramp * np.linspace(0.0, 1.0, n - 1)
    else:
        noise = rng.standard_normal(n - 1)
        if spec.jitter_frames > 0 and n > 2:
            # a hand does not change speed from one frame to the next
            noise = gaussian_filter1d(noise, spec.jitter_frames, mode="reflect")
            noise = (noise - noise.mean()) / max(noise.std(), 1e-12)
        steps = np.clip(1.0 + spec.jitter_sigma * noise, 0.1, None)
    u = np.concatenate([[0.0], np.cumsum(steps)])
    return u * (spec.length_mm / u[-1])


def path_points(spec: TrajectorySpec, u: np.ndarray) -> np.ndarray:
    """Skin-contact point ``(x, y, 0)`` at arc length ``u``."""
    u = np.asarray(u, dtype=np.float64)
    if spec.shape == "straight":
        return np.stack([u, np.zeros_like(u), np.zeros_like(u)], axis=-1)
    grid = np.linspace(0.0, spec.length_mm, _QUAD_POINTS)
    th = heading(spec, grid)
    du = np.diff(grid)
    x = np.concatenate([[0.0], np.cumsum(0.5 * (np.cos(th[1:]) + np.cos(th[:-1])) * du)])
    y = np.concatenate([[0.0], np.cumsum(0.5 * (np.sin(th[1:]) + np.sin(th[:-1])) * du)])
    return np.stack([np.interp(u, grid, x), np.interp(u, grid, y), np.zeros_like(u)], axis=-1)


def image_poses(spec: TrajectorySpec, width_mm: float, rng: np.random.Generator) -> np.ndarray:
    """Image-to-world transforms, one per frame.

    The image x axis is lateral (perpendicular) or along travel (parallel),
    the image y axis points into depth (-z) and the top edge is centred on the
    skin-contact point.
    """
    u = arc_positions(spec, rng)
    th = heading(spec, u)
    p = path_points(spec, u)
    travel = np.stack([np.cos(th), np.sin(th), np.zeros_like(th)], axis=-1)
    lateral = np.stack([-np.sin(th), np.cos(th), np.zeros_like(th)], axis=-1)
    x_axis = lateral if spec.orientation == "perpendicular" else travel
    y_axis = np.broadcast_to(np.array([0.0, 0.0, -1.0]), x_axis.shape)
    z_axis = np.cross(x_axis, y_axis)
    poses = np.zeros((len(u), 4, 4))
    poses[:, :3, 0] = x_axis
    poses[:, :3, 1] = y_axis
    poses[:, :3, 2] = z_axis
    poses[:, :3, 3] = p - 0.5 * width_mm * x_axis
    poses[:, 3, 3] = 1.0
    return poses


def arc_length(points: np.ndarray) -> float:
    return float(np.sum(np.linalg.norm(np.diff(points, axis=0), axis=-1)))
