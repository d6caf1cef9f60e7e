"""Depth-based refinement of projected 3D keypoint annotations.

Given a reconstructed surface model, 3D keypoints on it, and per-frame real
depth images with estimated camera poses, keypoints are projected into each
frame, classified visible/occluded against a rendered depth image, and then
refined either individually (jump-edge adjustment or FPFH feature matching,
mutually exclusive per keypoint) or all together by a single rigid
correction from cropped point-to-plane ICP.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .features import fpfh
from .geometry import CameraIntrinsics, RigidTransform, unproject_pixels
from .icp import IcpConfig, IcpResult, InsufficientOverlapError, icp_point_to_plane
from .raster import PointCloud, SurfaceModel, cloud_from_depth, render_depth

VISIBLE = "visible"
OCCLUDED = "occluded"
REFINE_NONE = "none"
REFINE_JUMP_EDGE = "jump_edge"
REFINE_FEATURE_MATCH = "feature_match"
REFINE_ICP = "icp"


class EmptyCropError(ValueError):
    """Keypoint bounding volume contains no cloud points."""


@dataclass(frozen=True)
class Keypoints3D:
    """Named 3D keypoints in the model frame, with optional unit normals."""

    points: np.ndarray  # (3, p)
    names: tuple[str, ...]
    normals: Optional[np.ndarray] = None  # (3, p)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        names = tuple(self.names)
        if points.ndim != 2 or points.shape[0] != 3:
            raise ValueError("points must be (3, p)")
        if len(names) != points.shape[1]:
            raise ValueError("one name per keypoint required")
        if len(set(names)) != len(names):
            raise ValueError("keypoint names must be unique")
        normals = self.normals
        if normals is not None:
            normals = np.asarray(normals, dtype=float)
            if normals.shape != points.shape:
                raise ValueError("one normal per keypoint required")
            if not np.allclose(np.linalg.norm(normals, axis=0), 1.0, atol=1e-6):
                raise ValueError("keypoint normals must be unit length")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "normals", normals)


@dataclass(frozen=True)
class AnnotationFrame:
    """One real depth frame with its estimated camera pose.

    ``camera_pose`` maps model/fixed-frame points into the camera frame.
    """

    depth: np.ndarray  # (H, W) meters, 0 = missing
    camera_pose: RigidTransform
    intrinsics: CameraIntrinsics
    frame_id: str

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=float)
        if depth.shape != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError("depth dimensions must match the intrinsics")
        if not np.all(np.isfinite(depth)) or depth.min() < 0:
            raise ValueError("depth must be finite and nonnegative")
        object.__setattr__(self, "depth", depth)


@dataclass(frozen=True)
class ProjectedKeypoint:
    name: str
    u: float
    v: float
    cam_point: np.ndarray  # (3,) camera frame
    visibility: str = VISIBLE
    refinement: str = REFINE_NONE

    def __post_init__(self):
        object.__setattr__(self, "cam_point", np.asarray(self.cam_point, dtype=float).reshape(3))


@dataclass(frozen=True)
class AnnotationConfig:
    """Thresholds for occlusion tests and refinement; defaults sized for
    tabletop-to-room-scale objects, all in meters/pixels."""

    tau: float = -0.15  # view-normal dot threshold; above = occluded
    depth_slack: float = 0.02
    jump_threshold: float = 0.05
    jump_window: int = 11
    search_radius_px: int = 15
    fpfh_radius: float = 0.05
    fpfh_pad_px: int = 12
    w_euclid: float = 0.7
    w_feat: float = 0.3
    crop_dilation_frac: float = 0.10  # of the keypoint AABB diagonal
    crop_dilation_abs: float = 0.05
    normal_window: int = 5
    icp: IcpConfig = field(default_factory=IcpConfig)
    icp_max_points: int = 4000


@dataclass
class FrameAnnotation:
    frame_id: str
    keypoints: list[ProjectedKeypoint]
    camera_pose: RigidTransform
    warnings: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Projection and occlusion


def project_keypoints(
    kps: Keypoints3D, camera_pose: RigidTransform, k: CameraIntrinsics
) -> list[ProjectedKeypoint]:
    """Project keypoints into the image; off-image or behind-camera keypoints
    are flagged occluded rather than raising."""
    cam = camera_pose.apply(kps.points)
    out = []
    for i, name in enumerate(kps.names):
        x, y, z = cam[:, i]
        if z <= 0:
            out.append(ProjectedKeypoint(name, np.nan, np.nan, cam[:, i], OCCLUDED))
            continue
        u = k.fx * x / z + k.cx
        v = k.fy * y / z + k.cy
        on_image = 0 <= u <= k.width - 1 and 0 <= v <= k.height - 1
        vis = VISIBLE if on_image else OCCLUDED
        out.append(ProjectedKeypoint(name, u, v, cam[:, i], vis))
    return out


def occlusion_test(
    kp: ProjectedKeypoint,
    gen_depth: np.ndarray,
    normal_cam: Optional[np.ndarray] = None,
    view: Optional[np.ndarray] = None,
    tau: float = -0.15,
    depth_slack: float = 0.02,
) -> str:
    """Z-buffer plus facing-direction occlusion test for an on-image keypoint.

    Occluded when the keypoint sits deeper than the rendered surface at its
    pixel (beyond ``depth_slack``), when the rendered depth is missing there,
    or when its camera-frame normal satisfies view . normal > tau.  ``view``
    defaults to the camera principal axis (0, 0, 1).
    """
    if view is None:
        view = np.array([0.0, 0.0, 1.0])
    u = int(round(kp.u))
    v = int(round(kp.v))
    height, width = gen_depth.shape
    if not (0 <= u < width and 0 <= v < height):
        return OCCLUDED
    surface = gen_depth[v, u]
    if surface <= 0:
        return OCCLUDED  # nothing rendered here: conservative
    if kp.cam_point[2] > surface + depth_slack:
        return OCCLUDED
    if normal_cam is not None and float(np.dot(view, normal_cam)) > tau:
        return OCCLUDED
    return VISIBLE


def classify_keypoints(
    kps: Keypoints3D,
    camera_pose: RigidTransform,
    k: CameraIntrinsics,
    gen_depth: np.ndarray,
    cfg: AnnotationConfig = AnnotationConfig(),
) -> list[ProjectedKeypoint]:
    """Project all keypoints and classify their visibility."""
    projected = project_keypoints(kps, camera_pose, k)
    normals_cam = None
    if kps.normals is not None:
        normals_cam = camera_pose.rotation @ kps.normals
    out = []
    for i, kp in enumerate(projected):
        if kp.visibility == OCCLUDED:
            out.append(kp)
            continue
        n = None if normals_cam is None else normals_cam[:, i]
        vis = occlusion_test(kp, gen_depth, n, tau=cfg.tau, depth_slack=cfg.depth_slack)
        out.append(replace(kp, visibility=vis))
    return out


# ---------------------------------------------------------------------------
# Keypoint-level refinement


def jump_edge_adjust(
    kp: ProjectedKeypoint,
    real_depth: np.ndarray,
    gen_depth: np.ndarray,
    k: CameraIntrinsics,
    cfg: AnnotationConfig = AnnotationConfig(),
) -> ProjectedKeypoint:
    """Pull a keypoint whose ray overshot to the background back onto the
    nearest measured surface point.

    A jump edge is declared when the rendered depth at the keypoint pixel is
    shallower than the measured depth by more than ``cfg.jump_threshold``.
    The refined pixel is the projection of the real-depth point (within a
    local window) closest to the keypoint's 3D position.
    """
    u = int(round(kp.u))
    v = int(round(kp.v))
    height, width = real_depth.shape
    if not (0 <= u < width and 0 <= v < height):
        return kp
    measured = real_depth[v, u]
    if measured <= 0:
        return kp  # nothing to compare against
    rendered = gen_depth[v, u]
    if rendered <= 0:
        rendered = kp.cam_point[2]
    if rendered >= measured - cfg.jump_threshold:
        return kp  # not a jump edge

    half = cfg.jump_window // 2
    window = _window_cloud(real_depth, k, u, v, half)
    if window.size == 0:
        return kp
    dists = np.linalg.norm(window.points - kp.cam_point[:, None], axis=0)
    best = int(np.argmin(dists))
    bu, bv = window.pixels[:, best]
    return replace(kp, u=float(bu), v=float(bv), refinement=REFINE_JUMP_EDGE)


def feature_match_refine(
    kp: ProjectedKeypoint,
    gen_depth: np.ndarray,
    real_depth: np.ndarray,
    k: CameraIntrinsics,
    cfg: AnnotationConfig = AnnotationConfig(),
) -> ProjectedKeypoint:
    """Re-localize a visible keypoint by matching FPFH descriptors between
    the rendered and measured depth around it.

    Candidates are measured-depth points within ``cfg.search_radius_px`` of
    the keypoint pixel; the score mixes 3D Euclidean distance and descriptor
    L2 distance (cfg.w_euclid / cfg.w_feat), each normalized by its maximum
    over the candidates.
    """
    u = int(round(kp.u))
    v = int(round(kp.v))
    height, width = real_depth.shape
    if not (0 <= u < width and 0 <= v < height):
        return kp

    half = cfg.search_radius_px + cfg.fpfh_pad_px
    gen_cloud = _window_cloud(gen_depth, k, u, v, half, with_normals=True, cfg=cfg)
    real_cloud = _window_cloud(real_depth, k, u, v, half, with_normals=True, cfg=cfg)
    if gen_cloud.size == 0 or real_cloud.size == 0:
        return kp

    gen_desc, gen_isolated = fpfh(gen_cloud.points, gen_cloud.normals, cfg.fpfh_radius)
    real_desc, real_isolated = fpfh(real_cloud.points, real_cloud.normals, cfg.fpfh_radius)

    query_dists = np.linalg.norm(gen_cloud.points - kp.cam_point[:, None], axis=0)
    query_dists[gen_isolated] = np.inf
    if not np.isfinite(query_dists).any():
        return kp
    query = int(np.argmin(query_dists))
    qdesc = gen_desc[query]

    px_dist = np.linalg.norm(real_cloud.pixels - np.array([[u], [v]]), axis=0)
    cand = (px_dist <= cfg.search_radius_px) & ~real_isolated
    if not cand.any():
        return kp
    cand_idx = np.nonzero(cand)[0]
    euclid = np.linalg.norm(real_cloud.points[:, cand_idx] - kp.cam_point[:, None], axis=0)
    feat = np.linalg.norm(real_desc[cand_idx] - qdesc, axis=1)
    euclid_n = euclid / max(float(euclid.max()), 1e-12)
    feat_n = feat / max(float(feat.max()), 1e-12)
    score = cfg.w_euclid * euclid_n + cfg.w_feat * feat_n
    best = cand_idx[int(np.argmin(score))]
    bu, bv = real_cloud.pixels[:, best]
    return replace(kp, u=float(bu), v=float(bv), refinement=REFINE_FEATURE_MATCH)


def _window_cloud(
    depth: np.ndarray,
    k: CameraIntrinsics,
    u: int,
    v: int,
    half: int,
    with_normals: bool = False,
    cfg: Optional[AnnotationConfig] = None,
) -> PointCloud:
    """Back-project a square pixel window of a depth image."""
    height, width = depth.shape
    lo_u, hi_u = max(u - half, 0), min(u + half, width - 1)
    lo_v, hi_v = max(v - half, 0), min(v + half, height - 1)
    if with_normals:
        window = cfg.normal_window if cfg is not None else 5
        return cloud_from_depth_window(depth, k, lo_u, hi_u, lo_v, hi_v, window)
    sub = depth[lo_v : hi_v + 1, lo_u : hi_u + 1]
    vs, us = np.nonzero(sub > 0)
    if us.size == 0:
        return PointCloud(np.zeros((3, 0)), None, np.zeros((2, 0), dtype=int))
    full_us = us + lo_u
    full_vs = vs + lo_v
    pix = np.vstack([full_us, full_vs]).astype(float)
    pts = unproject_pixels(pix, sub[vs, us], k)
    return PointCloud(pts, None, np.vstack([full_us, full_vs]))


def cloud_from_depth_window(
    depth: np.ndarray,
    k: CameraIntrinsics,
    lo_u: int,
    hi_u: int,
    lo_v: int,
    hi_v: int,
    normal_window: int = 5,
) -> PointCloud:
    """Back-project a window with normals, padding the window so normal
    estimation sees the surrounding pixels."""
    pad = normal_window
    height, width = depth.shape
    a_u, b_u = max(lo_u - pad, 0), min(hi_u + pad, width - 1)
    a_v, b_v = max(lo_v - pad, 0), min(hi_v + pad, height - 1)
    sub = np.zeros_like(depth)
    sub[a_v : b_v + 1, a_u : b_u + 1] = depth[a_v : b_v + 1, a_u : b_u + 1]
    cloud = cloud_from_depth(sub, k, with_normals=True, normal_window=normal_window)
    inside = (
        (cloud.pixels[0] >= lo_u)
        & (cloud.pixels[0] <= hi_u)
        & (cloud.pixels[1] >= lo_v)
        & (cloud.pixels[1] <= hi_v)
    )
    return cloud.select(inside)


def refine_keypoint_level(
    frame: AnnotationFrame,
    model: SurfaceModel,
    kps: Keypoints3D,
    cfg: AnnotationConfig = AnnotationConfig(),
) -> FrameAnnotation:
    """Per-keypoint pipeline: occlusion classification, then jump-edge
    adjustment or feature matching (mutually exclusive) per visible keypoint."""
    gen_depth = render_depth(model, frame.camera_pose, frame.intrinsics)
    keypoints = classify_keypoints(kps, frame.camera_pose, frame.intrinsics, gen_depth, cfg)
    refined = []
    for kp in keypoints:
        if kp.visibility == OCCLUDED:
            refined.append(kp)
            continue
        adjusted = jump_edge_adjust(kp, frame.depth, gen_depth, frame.intrinsics, cfg)
        if adjusted.refinement == REFINE_JUMP_EDGE:
            refined.append(adjusted)
            continue
        refined.append(
            feature_match_refine(kp, gen_depth, frame.depth, frame.intrinsics, cfg)
        )
    return FrameAnnotation(frame.frame_id, refined, frame.camera_pose)


# ---------------------------------------------------------------------------
# Object-level refinement


def crop_by_keypoint_volume(
    cloud: Union[PointCloud, np.ndarray],
    kps: Union[Keypoints3D, np.ndarray],
    dilation: float = 0.0,
):
    """Keep cloud points inside the keypoint bounding box grown by
    ``dilation`` on every face.  Raises EmptyCropError when nothing is left."""
    kp_points = kps.points if isinstance(kps, Keypoints3D) else np.asarray(kps, dtype=float)
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    lo = kp_points.min(axis=1) - dilation
    hi = kp_points.max(axis=1) + dilation
    mask = np.all((points >= lo[:, None]) & (points <= hi[:, None]), axis=0)
    if not mask.any():
        raise EmptyCropError("no cloud points inside the keypoint volume")
    if isinstance(cloud, PointCloud):
        return cloud.select(mask)
    return points[:, mask]


@dataclass
class ObjectRefineResult:
    camera_pose: RigidTransform
    keypoints: list[ProjectedKeypoint]
    correction: RigidTransform
    icp: Optional[IcpResult]
    warning: Optional[str] = None


def object_refine(
    frame: AnnotationFrame,
    model: SurfaceModel,
    kps: Keypoints3D,
    cfg: AnnotationConfig = AnnotationConfig(),
) -> ObjectRefineResult:
    """Single rigid correction of the camera pose from cropped ICP.

    The model is rendered at the estimated pose; rendered and measured
    depths are back-projected, cropped to the keypoint volume (the measured
    crop dilated to absorb pose error), and aligned by point-to-plane ICP.
    The correction is composed into the camera pose and every keypoint,
    visible or occluded, is re-projected with it, so relative keypoint
    geometry is preserved exactly.
    """
    k = frame.intrinsics
    gen_depth = render_depth(model, frame.camera_pose, k)
    kp_cam = frame.camera_pose.apply(kps.points)
    diag = float(np.linalg.norm(kp_cam.max(axis=1) - kp_cam.min(axis=1)))
    dilation = cfg.crop_dilation_frac * diag + cfg.crop_dilation_abs

    warning = None
    icp_result = None
    correction = RigidTransform.identity()
    try:
        gen_cloud = cloud_from_depth(gen_depth, k)
        real_cloud = cloud_from_depth(
            frame.depth, k, with_normals=True, normal_window=cfg.normal_window
        )
        gen_crop = crop_by_keypoint_volume(gen_cloud, kp_cam)
        real_crop = crop_by_keypoint_volume(real_cloud, kp_cam, dilation)
        src = gen_crop.points
        if src.shape[1] > cfg.icp_max_points:
            stride = int(np.ceil(src.shape[1] / cfg.icp_max_points))
            src = src[:, ::stride]
        icp_result = icp_point_to_plane(src, real_crop, cfg=cfg.icp)
        correction = icp_result.transform
    except (EmptyCropError, InsufficientOverlapError) as err:
        warning = f"icp failed, keeping projected keypoints: {err}"

    new_pose = correction.compose(frame.camera_pose)
    if warning is None:
        refined_depth = render_depth(model, new_pose, k)
        keypoints = classify_keypoints(kps, new_pose, k, refined_depth, cfg)
        keypoints = [replace(kp, refinement=REFINE_ICP) for kp in keypoints]
    else:
        new_pose = frame.camera_pose
        keypoints = classify_keypoints(kps, frame.camera_pose, k, gen_depth, cfg)
    return ObjectRefineResult(new_pose, keypoints, correction, icp_result, warning)


def annotate_frame(
    frame: AnnotationFrame,
    model: SurfaceModel,
    kps: Keypoints3D,
    mode: str = "refine-object",
    cfg: AnnotationConfig = AnnotationConfig(),
) -> FrameAnnotation:
    """Dispatch one frame through projection or either refinement pipeline."""
    if mode == "project":
        gen_depth = render_depth(model, frame.camera_pose, frame.intrinsics)
        kp = classify_keypoints(kps, frame.camera_pose, frame.intrinsics, gen_depth, cfg)
        return FrameAnnotation(frame.frame_id, kp, frame.camera_pose)
    if mode == "refine-keypoint":
        return refine_keypoint_level(frame, model, kps, cfg)
    if mode == "refine-object":
        result = object_refine(frame, model, kps, cfg)
        warnings = [result.warning] if result.warning else []
        return FrameAnnotation(frame.frame_id, result.keypoints, result.camera_pose, warnings)
    raise ValueError(f"unknown annotation mode: {mode!r}")
