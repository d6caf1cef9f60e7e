"""Seeded synthetic scenarios: ground truth for closed-loop testing.

Two generators share one RNG stream: pose scenarios (a deformable keypoint
model observed by weak- and full-perspective cameras, with optional pixel
noise and low-confidence outliers) and annotation scenarios (a box mesh
orbited by a camera, with rendered "real" depth frames and a drifted copy of
the trajectory).  Regenerating with the same seed is bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .annotate import Keypoints3D
from .geometry import (
    CameraIntrinsics,
    RigidTransform,
    WeakCamera,
    project_full,
    project_weak,
    random_rotation,
    so3_exp,
)
from .raster import SurfaceModel, compute_vertex_normals, render_depth
from .shape import ShapeBasis, build_pca_basis, instantiate


@dataclass(frozen=True)
class NoiseModel:
    """Isotropic pixel noise plus uniform in-image outliers.

    Outliers replace the observed pixel with a uniform draw over the image
    and are assigned ``outlier_confidence``; everything else gets
    ``inlier_confidence``.
    """

    pixel_sigma: float = 0.0
    outlier_fraction: float = 0.0
    inlier_confidence: float = 0.9
    outlier_confidence: float = 0.05


@dataclass(frozen=True)
class FrameTruth:
    frame_id: str
    pose: RigidTransform
    weak_cam: WeakCamera
    coefficients: np.ndarray
    pixels_weak: np.ndarray  # noiseless weak-perspective observations (2, p)
    pixels_full: np.ndarray  # noiseless pinhole observations (2, p)
    observed: np.ndarray  # noisy pinhole observations (2, p)
    confidences: np.ndarray  # (p,)
    outlier_mask: np.ndarray  # (p,) bool


@dataclass(frozen=True)
class PoseScenario:
    basis: ShapeBasis
    intrinsics: CameraIntrinsics
    frames: list[FrameTruth]
    noise: NoiseModel
    seed: int


DEFAULT_INTRINSICS = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


def make_pose_basis(rng: np.random.Generator, p: int = 10, k: int = 2) -> ShapeBasis:
    """Random deformable keypoint model: a box-scale mean plus smooth modes."""
    base = rng.uniform(-0.2, 0.2, size=(3, p))
    instances = [base + 0.03 * rng.normal(size=(3, p)) for _ in range(max(8, k + 2))]
    return build_pca_basis(instances, k=k)


def weak_camera_for_pose(pose: RigidTransform, k: CameraIntrinsics) -> WeakCamera:
    """Weak-perspective camera consistent with a full pose at its depth."""
    tz = float(pose.translation[2])
    scale = k.fx / tz
    shift = np.array(
        [
            k.cx + k.fx * pose.translation[0] / tz,
            k.cy + k.fy * pose.translation[1] / tz,
        ]
    )
    return WeakCamera(scale, pose.rotation[:2], shift)


def generate_pose_scenario(
    seed: int,
    n_frames: int,
    noise: NoiseModel = NoiseModel(),
    p: int = 10,
    k: int = 2,
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS,
) -> PoseScenario:
    rng = np.random.default_rng(seed)
    basis = make_pose_basis(rng, p=p, k=k)
    frames = []
    for i in range(n_frames):
        rotation = random_rotation(rng)
        translation = np.array(
            [rng.uniform(-0.15, 0.15), rng.uniform(-0.1, 0.1), rng.uniform(1.3, 2.4)]
        )
        pose = RigidTransform(rotation, translation)
        c = rng.normal(size=k) * np.sqrt(np.maximum(basis.eigenvalues, 0.0)) if k else np.zeros(0)
        points = instantiate(basis, c)
        weak_cam = weak_camera_for_pose(pose, intrinsics)
        pixels_weak = project_weak(points, weak_cam)
        pixels_full = project_full(points, pose, intrinsics)

        observed = pixels_full + noise.pixel_sigma * rng.normal(size=pixels_full.shape)
        confidences = np.full(p, noise.inlier_confidence)
        outlier_mask = rng.uniform(size=p) < noise.outlier_fraction
        n_out = int(outlier_mask.sum())
        if n_out:
            observed[0, outlier_mask] = rng.uniform(0, intrinsics.width, size=n_out)
            observed[1, outlier_mask] = rng.uniform(0, intrinsics.height, size=n_out)
            confidences[outlier_mask] = noise.outlier_confidence

        frames.append(
            FrameTruth(
                frame_id=f"frame_{i:04d}",
                pose=pose,
                weak_cam=weak_cam,
                coefficients=c,
                pixels_weak=pixels_weak,
                pixels_full=pixels_full,
                observed=observed,
                confidences=confidences,
                outlier_mask=outlier_mask,
            )
        )
    return PoseScenario(basis, intrinsics, frames, noise, seed)


# ---------------------------------------------------------------------------
# Annotation scenario: box mesh, orbit trajectory, rendered depth


def box_mesh(sx: float, sy: float, sz: float, center=(0.0, 0.0, 0.0)) -> SurfaceModel:
    """Axis-aligned box mesh with outward-facing triangles."""
    vertices, triangles = _box_geometry(sx, sy, sz, center)
    normals = compute_vertex_normals(vertices, triangles)
    return SurfaceModel(vertices, triangles, normals)


def _box_geometry(sx, sy, sz, center):
    hx, hy, hz = sx / 2, sy / 2, sz / 2
    vertices = np.array(
        [[x, y, z] for x in (-hx, hx) for y in (-hy, hy) for z in (-hz, hz)]
    ).T + np.asarray(center, dtype=float)[:, None]
    quads = [
        (0, 1, 3, 2),  # x = -hx
        (4, 6, 7, 5),  # x = +hx
        (0, 4, 5, 1),  # y = -hy
        (2, 3, 7, 6),  # y = +hy
        (0, 2, 6, 4),  # z = -hz
        (1, 5, 7, 3),  # z = +hz
    ]
    triangles = []
    for a, b, c, d in quads:
        triangles.append((a, b, c))
        triangles.append((a, c, d))
    return vertices, np.array(triangles)


def step_mesh(
    sx: float, sy: float, sz: float, cap_scale: float = 0.45, cap_offset=(0.06, -0.04)
) -> SurfaceModel:
    """A box with a smaller offset box on top.

    The cap breaks the face-parallel translation ambiguities a lone box
    leaves in point-to-plane alignment, so any orbit view is
    fully observable.
    """
    base_v, base_t = _box_geometry(sx, sy, sz, (0.0, 0.0, 0.0))
    cap_size = (cap_scale * sx, cap_scale * sy, cap_scale * sz)
    cap_center = (cap_offset[0], cap_offset[1], sz / 2 + cap_size[2] / 2)
    cap_v, cap_t = _box_geometry(*cap_size, cap_center)
    vertices = np.hstack([base_v, cap_v])
    triangles = np.vstack([base_t, cap_t + base_v.shape[1]])
    normals = compute_vertex_normals(vertices, triangles)
    return SurfaceModel(vertices, triangles, normals)


def add_floor(model: SurfaceModel, z: float, extent: float = 2.0) -> SurfaceModel:
    """Append a square floor quad at height ``z`` (normal up, toward -z camera
    views); gives projected rays past the object a real background to hit."""
    n = model.vertices.shape[1]
    floor_v = np.array(
        [
            [-extent, -extent, z],
            [extent, -extent, z],
            [extent, extent, z],
            [-extent, extent, z],
        ]
    ).T
    floor_t = np.array([[0, 1, 2], [0, 2, 3]]) + n
    floor_n = np.tile([[0.0], [0.0], [1.0]], (1, 4))
    return SurfaceModel(
        np.hstack([model.vertices, floor_v]),
        np.vstack([model.triangles, floor_t]),
        np.hstack([model.normals, floor_n]),
    )


def box_keypoints(sx: float, sy: float, sz: float, center=(0.0, 0.0, 0.0)) -> Keypoints3D:
    """Keypoints at the eight box corners plus two face centers."""
    hx, hy, hz = sx / 2, sy / 2, sz / 2
    corners = np.array(
        [[x, y, z] for x in (-hx, hx) for y in (-hy, hy) for z in (-hz, hz)]
    )
    extras = np.array([[hx, 0.0, 0.0], [0.0, hy, 0.0]])
    pts = np.vstack([corners, extras]).T + np.asarray(center, dtype=float)[:, None]
    corner_normals = corners / np.linalg.norm(corners, axis=1, keepdims=True)
    extra_normals = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    normals = np.vstack([corner_normals, extra_normals]).T
    names = tuple(f"corner_{i}" for i in range(8)) + ("face_x", "face_y")
    return Keypoints3D(pts, names, normals)


def lookat_pose(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """Camera pose (fixed frame to camera frame) looking from eye at target."""
    eye = np.asarray(eye, dtype=float)
    fwd = np.asarray(target, dtype=float) - eye
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=float))
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    rotation = np.vstack([right, down, fwd])
    return RigidTransform(rotation, -rotation @ eye)


def orbit_trajectory(
    n_frames: int, radius: float = 1.3, height: float = 0.7, target=(0.0, 0.0, 0.0)
) -> list[RigidTransform]:
    poses = []
    for i in range(n_frames):
        angle = 2.0 * np.pi * i / max(n_frames, 1)
        eye = [radius * np.cos(angle), radius * np.sin(angle), height]
        poses.append(lookat_pose(eye, target))
    return poses


def perturb_pose(
    rng: np.random.Generator,
    pose: RigidTransform,
    max_rot_deg: float,
    max_trans: float,
) -> RigidTransform:
    """Left-compose a random rigid perturbation bounded by the given limits."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.radians(rng.uniform(0.25 * max_rot_deg, max_rot_deg))
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    shift = rng.uniform(0.25 * max_trans, max_trans) * direction
    return RigidTransform(so3_exp(angle * axis), shift).compose(pose)


@dataclass(frozen=True)
class AnnotationScenario:
    model: SurfaceModel
    keypoints: Keypoints3D
    intrinsics: CameraIntrinsics
    gt_poses: list[RigidTransform]
    drift_poses: list[RigidTransform]
    depths: list[np.ndarray]  # rendered at the ground-truth poses
    frame_ids: list[str]
    seed: int


ANNOTATION_INTRINSICS = CameraIntrinsics(fx=280.0, fy=280.0, cx=160.0, cy=120.0, width=320, height=240)


def generate_annotation_scenario(
    seed: int,
    n_frames: int,
    max_drift_deg: float = 2.0,
    max_drift_m: float = 0.03,
    box_size=(0.4, 0.3, 0.25),
    intrinsics: CameraIntrinsics = ANNOTATION_INTRINSICS,
) -> AnnotationScenario:
    rng = np.random.default_rng(seed)
    model = add_floor(step_mesh(*box_size), z=-box_size[2] / 2)
    keypoints = box_keypoints(*box_size)
    gt_poses = orbit_trajectory(n_frames)
    drift_poses = [
        perturb_pose(rng, pose, max_drift_deg, max_drift_m) for pose in gt_poses
    ]
    depths = [render_depth(model, pose, intrinsics) for pose in gt_poses]
    frame_ids = [f"frame_{i:04d}" for i in range(n_frames)]
    return AnnotationScenario(
        model, keypoints, intrinsics, gt_poses, drift_poses, depths, frame_ids, seed
    )
