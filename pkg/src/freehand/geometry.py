"""Rigid-body algebra on 4x4 homogeneous matrices.

Transforms are plain ``numpy`` arrays of shape ``(..., 4, 4)``; all functions
broadcast over leading batch dimensions. Angles are radians and lengths mm.

The 6-parameter view is ``(rx, ry, rz, tx, ty, tz)`` with the rotation built
as ``Rz(rz) @ Ry(ry) @ Rx(rx)``.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

SE3_TOL = 1e-9
DEFAULT_PIXEL_SPACING = 0.1875  # mm/px: 90 mm depth over 480 rows
_GIMBAL_EPS = 1e-9


class SE3ValidationError(ValueError):
    """Raised when a matrix violates one of the SE(3) invariants."""


def identity(batch: tuple[int, ...] = ()) -> np.ndarray:
    return np.broadcast_to(np.eye(4), batch + (4, 4)).copy()


def translation(tx: float, ty: float, tz: float) -> np.ndarray:
    t = np.eye(4)
    t[:3, 3] = (tx, ty, tz)
    return t


def rotation_x(angle: float) -> np.ndarray:
    return params_to_matrix(np.array([angle, 0.0, 0.0, 0.0, 0.0, 0.0]))


def rotation_y(angle: float) -> np.ndarray:
    return params_to_matrix(np.array([0.0, angle, 0.0, 0.0, 0.0, 0.0]))


def rotation_z(angle: float) -> np.ndarray:
    return params_to_matrix(np.array([0.0, 0.0, angle, 0.0, 0.0, 0.0]))


def validate_se3(t: np.ndarray, tol: float = SE3_TOL, name: str = "transform") -> np.ndarray:
    """Check shape, last row, orthonormality and handedness; return ``t`` as float64."""
    t = np.asarray(t, dtype=np.float64)
    if t.shape[-2:] != (4, 4):
        raise SE3ValidationError(f"{name}: expected (..., 4, 4) matrix, got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise SE3ValidationError(f"{name}: non-finite entries")
    last = t[..., 3, :]
    if np.max(np.abs(last - np.array([0.0, 0.0, 0.0, 1.0])), initial=0.0) > tol:
        raise SE3ValidationError(f"{name}: last row is not [0, 0, 0, 1]")
    r = t[..., :3, :3]
    ortho = np.linalg.norm(r @ np.swapaxes(r, -1, -2) - np.eye(3), axis=(-2, -1))
    if np.max(ortho, initial=0.0) > tol:
        raise SE3ValidationError(
            f"{name}: rotation block not orthonormal (|R R^T - I|_F = {np.max(ortho):.3g})"
        )
    det = np.linalg.det(r)
    if np.max(np.abs(det - 1.0), initial=0.0) > tol:
        raise SE3ValidationError(f"{name}: det(R) != +1 (got {np.min(det):.6g})")
    return t


def compose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Return ``a @ b`` after validating both operands."""
    a = validate_se3(a, name="a")
    b = validate_se3(b, name="b")
    return a @ b


def invert(t: np.ndarray) -> np.ndarray:
    t = validate_se3(t)
    return _invert(t)


def _invert(t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t)
    rt = np.swapaxes(t[..., :3, :3], -1, -2)
    out[..., :3, :3] = rt
    out[..., :3, 3] = -np.einsum("...ij,...j->...i", rt, t[..., :3, 3])
    out[..., 3, 3] = 1.0
    return out


def params_to_matrix(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != 6:
        raise ValueError(f"expected (..., 6) parameters, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("parameters must be finite")
    rx, ry, rz = p[..., 0], p[..., 1], p[..., 2]
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    m = np.zeros(p.shape[:-1] + (4, 4))
    m[..., 0, 0] = cz * cy
    m[..., 0, 1] = cz * sy * sx - sz * cx
    m[..., 0, 2] = cz * sy * cx + sz * sx
    m[..., 1, 0] = sz * cy
    m[..., 1, 1] = sz * sy * sx + cz * cx
    m[..., 1, 2] = sz * sy * cx - cz * sx
    m[..., 2, 0] = -sy
    m[..., 2, 1] = cy * sx
    m[..., 2, 2] = cy * cx
    m[..., :3, 3] = p[..., 3:]
    m[..., 3, 3] = 1.0
    return m


def matrix_to_params_flagged(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`params_to_matrix`, plus a gimbal-lock flag per matrix.

    At ``|ry| = pi/2`` the roll and yaw are not separable; ``rx`` is set to 0
    and the combined angle folded into ``rz``.
    """
    m = validate_se3(m)
    r = m[..., :3, :3]
    cy = np.hypot(r[..., 0, 0], r[..., 1, 0])
    locked = cy < _GIMBAL_EPS
    ry = np.arctan2(-r[..., 2, 0], cy)
    rx = np.where(locked, 0.0, np.arctan2(r[..., 2, 1], r[..., 2, 2]))
    rz = np.where(
        locked,
        np.arctan2(-r[..., 0, 1], r[..., 1, 1]),
        np.arctan2(r[..., 1, 0], r[..., 0, 0]),
    )
    params = np.concatenate([np.stack([rx, ry, rz], axis=-1), m[..., :3, 3]], axis=-1)
    return params, locked


def matrix_to_params(m: np.ndarray) -> np.ndarray:
    return matrix_to_params_flagged(m)[0]


def relative_gt(world_i: np.ndarray, world_j: np.ndarray, calib: np.ndarray) -> np.ndarray:
    """Ground-truth transform from image ``i`` into tool ``j`` coordinates.

    ``inv(world_j) @ world_i @ calib``; the inverse calibration on the left is
    omitted since point distances are invariant to it.
    """
    world_i = validate_se3(world_i, name="world_i")
    world_j = validate_se3(world_j, name="world_j")
    calib = validate_se3(calib, name="calib")
    return relative_gt_unchecked(world_i, world_j, calib)


def relative_gt_unchecked(world_i: np.ndarray, world_j: np.ndarray, calib: np.ndarray) -> np.ndarray:
    out = _invert(world_j) @ world_i @ calib
    out[..., 3, :] = (0.0, 0.0, 0.0, 1.0)
    return out


def transform_points(t: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Apply ``t`` to points of shape ``(..., N, 3)``; returns the same shape."""
    t = np.asarray(t, dtype=np.float64)
    pts = np.asarray(pts, dtype=np.float64)
    rot = t[..., None, :3, :3]
    return np.einsum("...ij,...j->...i", rot, pts) + t[..., None, :3, 3]


def corner_points(width_px: int, height_px: int, spacing: float = DEFAULT_PIXEL_SPACING) -> np.ndarray:
    """The four image corners in image-plane mm (z = 0), shape ``(4, 3)``."""
    if width_px < 2 or height_px < 2:
        raise ValueError(f"image must be at least 2x2 pixels, got {width_px}x{height_px}")
    if not spacing > 0:
        raise ValueError(f"pixel spacing must be positive, got {spacing}")
    x = (width_px - 1) * spacing
    y = (height_px - 1) * spacing
    return np.array([[0.0, 0.0, 0.0], [x, 0.0, 0.0], [0.0, y, 0.0], [x, y, 0.0]])


def pixel_points(width_px: int, height_px: int, spacing: float, stride: int = 1) -> np.ndarray:
    """Pixel centres on a strided lattice in image-plane mm, shape ``(N, 3)``.

    A strided lattice is centred in the image so its mean position matches
    the full lattice's to within half a pixel.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    xs = np.arange(((width_px - 1) % stride) // 2, width_px, stride) * spacing
    ys = np.arange(((height_px - 1) % stride) // 2, height_px, stride) * spacing
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    return np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=-1)


def polar_project(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest proper rotation for each rotation block (polar decomposition).

    Returns the corrected transforms and the Frobenius size of each correction.
    """
    t = np.array(t, dtype=np.float64)
    r = t[..., :3, :3]
    u, _, vt = np.linalg.svd(r)
    d = np.sign(np.linalg.det(u @ vt))
    u[..., :, 2] *= d[..., None]
    fixed = u @ vt
    delta = np.linalg.norm(fixed - r, axis=(-2, -1))
    t[..., :3, :3] = fixed
    t[..., 3, :] = (0.0, 0.0, 0.0, 1.0)
    return t, delta


def log_se3(t: np.ndarray) -> np.ndarray:
    """Twist ``(omega, v)`` with ``exp_se3(log_se3(t)) == t``."""
    t = np.asarray(t, dtype=np.float64)
    omega = Rotation.from_matrix(t[..., :3, :3].reshape(-1, 3, 3)).as_rotvec().reshape(t.shape[:-2] + (3,))
    v_inv = _left_jacobian_inverse(omega)
    v = np.einsum("...ij,...j->...i", v_inv, t[..., :3, 3])
    return np.concatenate([omega, v], axis=-1)


def exp_se3(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=np.float64)
    omega, v = xi[..., :3], xi[..., 3:]
    out = np.zeros(xi.shape[:-1] + (4, 4))
    out[..., :3, :3] = Rotation.from_rotvec(omega.reshape(-1, 3)).as_matrix().reshape(xi.shape[:-1] + (3, 3))
    out[..., :3, 3] = np.einsum("...ij,...j->...i", _left_jacobian(omega), v)
    out[..., 3, 3] = 1.0
    return out


def _skew(w: np.ndarray) -> np.ndarray:
    k = np.zeros(w.shape[:-1] + (3, 3))
    k[..., 0, 1], k[..., 0, 2] = -w[..., 2], w[..., 1]
    k[..., 1, 0], k[..., 1, 2] = w[..., 2], -w[..., 0]
    k[..., 2, 0], k[..., 2, 1] = -w[..., 1], w[..., 0]
    return k


def _left_jacobian(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w, axis=-1)[..., None, None]
    k = _skew(w)
    small = theta < 1e-3
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 0.5 - theta**2 / 24.0, (1 - np.cos(safe)) / safe**2)
    b = np.where(small, 1.0 / 6.0 - theta**2 / 120.0, (safe - np.sin(safe)) / safe**3)
    return np.eye(3) + a * k + b * (k @ k)


def _left_jacobian_inverse(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w, axis=-1)[..., None, None]
    k = _skew(w)
    small = theta < 1e-3
    safe = np.where(small, 1.0, theta)
    c = np.where(
        small,
        1.0 / 12.0 + theta**2 / 720.0,
        (1.0 - safe * np.sin(safe) / (2.0 * (1.0 - np.cos(safe)))) / safe**2,
    )
    return np.eye(3) - 0.5 * k + c * (k @ k)


def interpolate_se3(a: np.ndarray, b: np.ndarray, fraction: float) -> np.ndarray:
    """Screw-linear interpolation: constant-velocity motion from ``a`` to ``b``."""
    step = exp_se3(fraction * log_se3(_invert(a) @ b))
    return a @ step


def random_se3(rng: np.random.Generator, n: int | None = None, max_translation: float = 100.0) -> np.ndarray:
    size = 1 if n is None else n
    out = np.zeros((size, 4, 4))
    out[:, :3, :3] = Rotation.random(size, random_state=rng).as_matrix()
    out[:, :3, 3] = rng.uniform(-max_translation, max_translation, size=(size, 3))
    out[:, 3, 3] = 1.0
    return out[0] if n is None else out
