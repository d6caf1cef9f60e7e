"""Rotation algebra, camera models, and projection primitives.

Conventions used throughout the package:

- Rotations are plain 3x3 float64 arrays (orthonormal, det +1).
- Point sets are column-stacked: shape (3, p) in meters, (2, p) in pixels.
- Pixel coordinates are (u, v) with u along image columns and v along rows;
  integer coordinates are pixel centers, so the principal point (cx, cy)
  projects a point on the optical axis.
- Camera frame looks down +z; depths are the camera-frame z coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DegenerateGeometryError(ValueError):
    """Raised when a geometric fit has no unique solution (rank collapse)."""


class BehindCameraError(ValueError):
    """Raised when a point to be projected has nonpositive camera depth."""

    def __init__(self, message: str, columns: list[int] | None = None):
        super().__init__(message)
        self.columns = columns or []


def is_rotation(m: np.ndarray, tol: float = 1e-9) -> bool:
    """True if ``m`` is orthonormal with determinant +1 within ``tol``."""
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        return False
    return (
        np.allclose(m.T @ m, np.eye(3), atol=tol)
        and abs(np.linalg.det(m) - 1.0) <= tol
    )


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Axis-angle vector (radians) to rotation matrix via Rodrigues' formula."""
    w = np.asarray(w, dtype=float).reshape(3)
    angle = float(np.linalg.norm(w))
    if angle < 1e-12:
        return np.eye(3)
    axis = w / angle
    k = _skew(axis)
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def so3_log(r: np.ndarray) -> np.ndarray:
    """Rotation matrix to axis-angle vector with angle in [0, pi].

    Near pi (within 1e-6) the antisymmetric part vanishes, so the axis is
    extracted from the symmetric part (R + I)/2 using its largest diagonal
    entry; the sign is fixed so the first nonzero axis component is positive.
    """
    r = np.asarray(r, dtype=float)
    trace = float(np.trace(r))
    cos_angle = min(1.0, max(-1.0, 0.5 * (trace - 1.0)))
    angle = math.acos(cos_angle)
    if angle < 1e-12:
        return 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if math.pi - angle < 1e-6:
        # Symmetric-part extraction: (R + I)/2 = outer(axis, axis) at angle pi.
        q = 0.5 * (r + np.eye(3))
        i = int(np.argmax(np.diag(q)))
        axis = q[:, i] / math.sqrt(max(q[i, i], np.finfo(float).tiny))
        axis = axis / np.linalg.norm(axis)
        nonzero = np.nonzero(np.abs(axis) > 1e-12)[0]
        if nonzero.size and axis[nonzero[0]] < 0:
            axis = -axis
        return angle * axis
    scale = angle / (2.0 * math.sin(angle))
    return scale * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])


def _skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def orthogonal_procrustes(
    a: np.ndarray, b: np.ndarray, weights: np.ndarray | None = None
) -> np.ndarray:
    """Rotation minimizing sum_i w_i ||R a_i - b_i||^2 over SO(3).

    Inputs are column point sets (3, p); no centering is applied here, so
    callers remove translations beforehand if needed.  Solved by SVD of the
    weighted cross-covariance with a determinant correction that forbids
    reflections.

    Raises DegenerateGeometryError when the cross-covariance has rank < 2
    (the optimal rotation is then not unique).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.shape[0] != 3:
        raise ValueError(f"point sets must share a (3, p) shape, got {a.shape} vs {b.shape}")
    p = a.shape[1]
    if p < 3:
        raise ValueError(f"need at least 3 points, got {p}")
    if weights is None:
        weights = np.ones(p)
    weights = np.asarray(weights, dtype=float).reshape(p)
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")

    h = (a * weights) @ b.T
    u, s, vt = np.linalg.svd(h)
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        raise DegenerateGeometryError(
            "cross-covariance rank < 2: point configuration is degenerate"
        )
    d = np.sign(np.linalg.det(vt.T @ u.T))
    return vt.T @ np.diag([1.0, 1.0, d]) @ u.T


@dataclass(frozen=True)
class RigidTransform:
    """Rigid motion p -> rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if not is_rotation(rotation, tol=1e-9):
            raise ValueError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one 3-vector or a (3, p) column set."""
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            return self.rotation @ points + self.translation
        return self.rotation @ points + self.translation[:, None]

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self ∘ other)(p) = self(other(p))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class WeakCamera:
    """Weak-perspective camera: uniform scale, top two rotation rows, 2D shift.

    ``rot`` holds the first two rows of a rotation matrix (orthonormal rows);
    ``scale`` is in pixels per meter and ``shift`` in pixels.
    """

    scale: float
    rot: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rot, dtype=float).reshape(2, 3)
        if not np.allclose(rot @ rot.T, np.eye(2), atol=1e-9):
            raise ValueError("rotation rows must be orthonormal")
        object.__setattr__(self, "rot", rot)
        object.__setattr__(self, "shift", np.asarray(self.shift, dtype=float).reshape(2))
        if self.scale <= 0:
            raise ValueError("weak-perspective scale must be positive")

    def depth_axis(self) -> np.ndarray:
        """Unit direction invisible to the weak camera (third rotation row)."""
        return np.cross(self.rot[0], self.rot[1])


def lift_rotation(rot2x3: np.ndarray) -> np.ndarray:
    """Complete two orthonormal rows to a proper rotation (3rd row = cross)."""
    rot2x3 = np.asarray(rot2x3, dtype=float).reshape(2, 3)
    return np.vstack([rot2x3, np.cross(rot2x3[0], rot2x3[1])])


def project_weak(points: np.ndarray, cam: WeakCamera) -> np.ndarray:
    """Weak-perspective projection: scale * rot @ S + shift per column."""
    points = np.asarray(points, dtype=float)
    return cam.scale * (cam.rot @ points) + cam.shift[:, None]


def project_full(
    points: np.ndarray, pose: RigidTransform, k: CameraIntrinsics
) -> np.ndarray:
    """Pinhole projection of object-frame points under ``pose``.

    Raises BehindCameraError naming the offending columns when any
    transformed depth is nonpositive.
    """
    cam_points = pose.apply(np.asarray(points, dtype=float))
    z = cam_points[2]
    bad = np.nonzero(z <= 0)[0]
    if bad.size:
        raise BehindCameraError(
            f"{bad.size} point(s) behind camera, first at column {bad[0]}",
            columns=bad.tolist(),
        )
    return np.vstack(
        [k.fx * cam_points[0] / z + k.cx, k.fy * cam_points[1] / z + k.cy]
    )


def normalize_pixels(pixels: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Pixels (2, p) to normalized homogeneous coordinates (3, p)."""
    pixels = np.asarray(pixels, dtype=float)
    return np.vstack(
        [
            (pixels[0] - k.cx) / k.fx,
            (pixels[1] - k.cy) / k.fy,
            np.ones(pixels.shape[1]),
        ]
    )


def unproject_pixels(
    pixels: np.ndarray, depths: np.ndarray, k: CameraIntrinsics
) -> np.ndarray:
    """Back-project pixels with known depths to camera-frame points (3, p)."""
    rays = normalize_pixels(pixels, k)
    return rays * np.asarray(depths, dtype=float)


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """Quaternion (qx, qy, qz, qw) to rotation matrix; normalizes the input."""
    x, y, z, w = np.asarray(q, dtype=float).reshape(4)
    n = math.sqrt(x * x + y * y + z * z + w * w)
    if n == 0:
        raise ValueError("zero quaternion")
    x, y, z, w = x / n, y / n, z / n, w / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_to_quat(r: np.ndarray) -> np.ndarray:
    """Rotation matrix to quaternion (qx, qy, qz, qw), qw >= 0."""
    r = np.asarray(r, dtype=float)
    trace = float(np.trace(r))
    if trace > 0:
        s = math.sqrt(trace + 1.0) * 2.0
        w = 0.25 * s
        x = (r[2, 1] - r[1, 2]) / s
        y = (r[0, 2] - r[2, 0]) / s
        z = (r[1, 0] - r[0, 1]) / s
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        w = (r[2, 1] - r[1, 2]) / s
        x = 0.25 * s
        y = (r[0, 1] + r[1, 0]) / s
        z = (r[0, 2] + r[2, 0]) / s
    elif r[1, 1] > r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        w = (r[0, 2] - r[2, 0]) / s
        x = (r[0, 1] + r[1, 0]) / s
        y = 0.25 * s
        z = (r[1, 2] + r[2, 1]) / s
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        w = (r[1, 0] - r[0, 1]) / s
        x = (r[0, 2] + r[2, 0]) / s
        y = (r[1, 2] + r[2, 1]) / s
        z = 0.25 * s
    q = np.array([x, y, z, w])
    if q[3] < 0:
        q = -q
    return q


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Rotation drawn uniformly from SO(3) (normalized Gaussian quaternion)."""
    q = rng.normal(size=4)
    return quat_to_rotation(q / np.linalg.norm(q))
