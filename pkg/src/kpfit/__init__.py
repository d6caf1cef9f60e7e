"""kpfit: 6-DoF object pose from confidence-weighted 2D semantic keypoints.

Core pieces: a deformable keypoint shape model (mean + PCA modes),
weak- and full-perspective pose solvers driven by per-keypoint confidence
weights, heatmap synthesis/peak extraction, pose-error metrics, and a
depth-based keypoint annotation refinement pipeline.
"""

from .annotate import (
    AnnotationConfig,
    AnnotationFrame,
    Keypoints3D,
    ProjectedKeypoint,
    annotate_frame,
    crop_by_keypoint_volume,
    feature_match_refine,
    jump_edge_adjust,
    object_refine,
    occlusion_test,
    project_keypoints,
)
from .features import fpfh
from .geometry import (
    BehindCameraError,
    CameraIntrinsics,
    DegenerateGeometryError,
    RigidTransform,
    WeakCamera,
    normalize_pixels,
    orthogonal_procrustes,
    project_full,
    project_weak,
    so3_exp,
    so3_log,
)
from .heatmap import CropMapping, Heatmap, extract_peak, synth_heatmap
from .icp import IcpConfig, InsufficientOverlapError, icp_point_to_plane
from .metrics import (
    SymmetrySet,
    mspd,
    mssd,
    recall_at_thresholds,
    rotation_geodesic,
    translation_error,
)
from .raster import PointCloud, SurfaceModel, cloud_from_depth, render_depth
from .shape import ShapeBasis, build_pca_basis, instantiate, select_components
from .solver import (
    FullPose,
    KeypointObservations,
    PoseEstimate,
    SolverConfig,
    TooFewKeypointsError,
    WeakPose,
    cost_weak,
    estimate_pose,
    init_weak_convex,
    solve_full,
    solve_weak,
)

__version__ = "0.1.0"
