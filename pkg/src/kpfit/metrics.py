"""Pose error metrics: geodesic rotation distance, MSSD, MSPD, average recall.

MSSD/MSPD take the minimum over a set of global symmetry transforms of the
model and the maximum over model vertices, matching the symmetry-aware
maximum-distance convention of 6-DoF benchmarks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    BehindCameraError,
    CameraIntrinsics,
    RigidTransform,
    project_full,
    so3_log,
)

MAX_MODEL_POINTS = 10_000


@dataclass(frozen=True)
class SymmetrySet:
    """Global symmetry transforms of a model; the identity is always present."""

    transforms: tuple[RigidTransform, ...] = ()

    def __post_init__(self):
        transforms = tuple(self.transforms)
        if not any(_is_identity(t) for t in transforms):
            transforms = (RigidTransform.identity(),) + transforms
        object.__setattr__(self, "transforms", transforms)


def _is_identity(t: RigidTransform, tol: float = 1e-12) -> bool:
    return (
        np.allclose(t.rotation, np.eye(3), atol=tol)
        and np.allclose(t.translation, 0.0, atol=tol)
    )


IDENTITY_SYMMETRY = SymmetrySet()


def subsample_points(points: np.ndarray, max_points: int = MAX_MODEL_POINTS) -> np.ndarray:
    """Deterministic stride subsample of a (3, n) vertex set."""
    points = np.asarray(points, dtype=float)
    n = points.shape[1]
    if n <= max_points:
        return points
    stride = int(np.ceil(n / max_points))
    return points[:, ::stride]


def rotation_geodesic(r1: np.ndarray, r2: np.ndarray) -> float:
    """Angle in [0, pi] between two rotations (Frobenius norm of the
    relative log over sqrt(2), i.e. the axis-angle magnitude)."""
    rel = np.asarray(r1, dtype=float).T @ np.asarray(r2, dtype=float)
    return float(np.linalg.norm(so3_log(rel)))


def translation_error(t1: np.ndarray, t2: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(t1, dtype=float) - np.asarray(t2, dtype=float)))


def mssd(
    est: RigidTransform,
    gt: RigidTransform,
    model_points: np.ndarray,
    sym: SymmetrySet = IDENTITY_SYMMETRY,
) -> float:
    """Maximum symmetry-aware surface distance in meters.

    min over symmetries s of max over vertices x of |est(x) - gt(s(x))|.
    """
    pts = subsample_points(model_points)
    est_pts = est.apply(pts)
    best = np.inf
    for s in sym.transforms:
        gt_pts = gt.apply(s.apply(pts))
        d = float(np.max(np.linalg.norm(est_pts - gt_pts, axis=0)))
        best = min(best, d)
    return best


def mspd(
    est: RigidTransform,
    gt: RigidTransform,
    model_points: np.ndarray,
    sym: SymmetrySet,
    k: CameraIntrinsics,
) -> float:
    """Maximum symmetry-aware projection distance in pixels."""
    pts = subsample_points(model_points)
    try:
        est_px = project_full(pts, est, k)
    except BehindCameraError as e:
        raise BehindCameraError(f"estimated pose: {e}", columns=e.columns) from e
    best = np.inf
    for s in sym.transforms:
        try:
            gt_px = project_full(s.apply(pts), gt, k)
        except BehindCameraError as e:
            raise BehindCameraError(f"ground-truth pose: {e}", columns=e.columns) from e
        d = float(np.max(np.linalg.norm(est_px - gt_px, axis=0)))
        best = min(best, d)
    return best


def recall_at_thresholds(errors, thresholds) -> float:
    """Average recall: mean over thresholds of the fraction of errors <= t."""
    errors = np.asarray(list(errors), dtype=float)
    thresholds = np.asarray(list(thresholds), dtype=float)
    if errors.size == 0 or thresholds.size == 0:
        raise ValueError("errors and thresholds must be nonempty")
    recalls = [(errors <= t).mean() for t in thresholds]
    return float(np.mean(recalls))
