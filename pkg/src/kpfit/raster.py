"""Depth rendering of triangle meshes and depth-image point cloud utilities.

Depth images are (H, W) float arrays in meters with 0 marking missing pixels.
Rendering uses perspective-correct barycentric interpolation (1/z is linear
in screen space), so depths on planar triangles are exact up to float error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import CameraIntrinsics, RigidTransform, unproject_pixels


@dataclass(frozen=True)
class SurfaceModel:
    """Triangle mesh with per-vertex unit normals."""

    vertices: np.ndarray  # (3, n) meters
    triangles: np.ndarray  # (m, 3) vertex indices
    normals: np.ndarray  # (3, n) unit vectors

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=float)
        triangles = np.asarray(self.triangles, dtype=int)
        normals = np.asarray(self.normals, dtype=float)
        if vertices.ndim != 2 or vertices.shape[0] != 3:
            raise ValueError("vertices must be (3, n)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise ValueError("triangles must be (m, 3)")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= vertices.shape[1]):
            raise ValueError("triangle indices out of range")
        if normals.shape != vertices.shape:
            raise ValueError("one normal per vertex required")
        lengths = np.linalg.norm(normals, axis=0)
        if normals.shape[1] and not np.allclose(lengths, 1.0, atol=1e-6):
            raise ValueError("vertex normals must be unit length")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)
        object.__setattr__(self, "normals", normals)

    def diameter(self) -> float:
        lo = self.vertices.min(axis=1)
        hi = self.vertices.max(axis=1)
        return float(np.linalg.norm(hi - lo))


def compute_vertex_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Area-weighted average of incident face normals, normalized per vertex."""
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=int)
    normals = np.zeros_like(vertices)
    a = vertices[:, triangles[:, 0]]
    b = vertices[:, triangles[:, 1]]
    c = vertices[:, triangles[:, 2]]
    face = np.cross((b - a).T, (c - a).T).T  # length = 2 * area
    for col in range(3):
        np.add.at(normals.T, triangles[:, col], face.T)
    lengths = np.linalg.norm(normals, axis=0)
    dangling = lengths == 0  # vertices with no (non-degenerate) incident face
    normals[2, dangling] = 1.0
    lengths[dangling] = 1.0
    return normals / lengths


@dataclass(frozen=True)
class PointCloud:
    """Column-stacked points with optional aligned normals and source pixels."""

    points: np.ndarray  # (3, m)
    normals: Optional[np.ndarray] = None  # (3, m)
    pixels: Optional[np.ndarray] = None  # (2, m) integer (u, v) of origin

    @property
    def size(self) -> int:
        return self.points.shape[1]

    def select(self, mask: np.ndarray) -> "PointCloud":
        return PointCloud(
            self.points[:, mask],
            None if self.normals is None else self.normals[:, mask],
            None if self.pixels is None else self.pixels[:, mask],
        )


def render_depth(
    model: SurfaceModel, camera_pose: RigidTransform, k: CameraIntrinsics
) -> np.ndarray:
    """Z-buffer rasterization of the mesh seen through ``camera_pose``.

    ``camera_pose`` maps model-frame points into the camera frame.  Pixels
    not covered by any triangle stay 0.  Triangles with any vertex at depth
    <= 1 mm are skipped (no near-plane clipping).
    """
    height, width = k.height, k.width
    zbuf = np.full((height, width), np.inf)

    cam = camera_pose.apply(model.vertices)
    z = cam[2]
    u = k.fx * np.divide(cam[0], z, out=np.zeros_like(z), where=z != 0) + k.cx
    v = k.fy * np.divide(cam[1], z, out=np.zeros_like(z), where=z != 0) + k.cy

    for tri in model.triangles:
        z1, z2, z3 = z[tri]
        if min(z1, z2, z3) <= 1e-3:
            continue
        x1, x2, x3 = u[tri]
        y1, y2, y3 = v[tri]
        lo_x = max(int(np.ceil(min(x1, x2, x3))), 0)
        hi_x = min(int(np.floor(max(x1, x2, x3))), width - 1)
        lo_y = max(int(np.ceil(min(y1, y2, y3))), 0)
        hi_y = min(int(np.floor(max(y1, y2, y3))), height - 1)
        if lo_x > hi_x or lo_y > hi_y:
            continue
        denom = (y2 - y3) * (x1 - x3) + (x3 - x2) * (y1 - y3)
        if abs(denom) < 1e-12:
            continue  # edge-on triangle
        px, py = np.meshgrid(
            np.arange(lo_x, hi_x + 1, dtype=float),
            np.arange(lo_y, hi_y + 1, dtype=float),
        )
        l1 = ((y2 - y3) * (px - x3) + (x3 - x2) * (py - y3)) / denom
        l2 = ((y3 - y1) * (px - x3) + (x1 - x3) * (py - y3)) / denom
        l3 = 1.0 - l1 - l2
        eps = -1e-12
        inside = (l1 >= eps) & (l2 >= eps) & (l3 >= eps)
        if not inside.any():
            continue
        inv_z = l1 / z1 + l2 / z2 + l3 / z3
        depth = np.where(inside & (inv_z > 0), 1.0 / np.maximum(inv_z, 1e-300), np.inf)
        window = zbuf[lo_y : hi_y + 1, lo_x : hi_x + 1]
        np.minimum(window, depth, out=window)

    zbuf[~np.isfinite(zbuf)] = 0.0
    return zbuf


def cloud_from_depth(
    depth: np.ndarray,
    k: CameraIntrinsics,
    with_normals: bool = False,
    normal_window: int = 5,
    stride: int = 1,
    origin: tuple[int, int] = (0, 0),
) -> PointCloud:
    """Back-project a depth image to a camera-frame cloud.

    With ``with_normals`` each point gets a covariance-estimated normal from
    its ``normal_window`` x ``normal_window`` pixel neighborhood, oriented
    toward the camera; points whose neighborhood is too sparse are dropped.
    ``origin`` gives the full-image pixel of ``depth[0, 0]`` so cropped
    windows back-project with correct coordinates.
    """
    depth = np.asarray(depth, dtype=float)
    valid = depth > 0
    normal_map = None
    if with_normals:
        normal_map, normal_ok = _normals_from_depth(depth, k, normal_window, origin)
        valid = valid & normal_ok
    vs, us = np.nonzero(valid)
    if stride > 1:
        vs, us = vs[::stride], us[::stride]
    full_us = us + origin[0]
    full_vs = vs + origin[1]
    pix = np.vstack([full_us, full_vs]).astype(float)
    pts = unproject_pixels(pix, depth[vs, us], k)
    normals = normal_map[:, vs, us] if with_normals else None
    return PointCloud(pts, normals, np.vstack([full_us, full_vs]))


def _normals_from_depth(
    depth: np.ndarray, k: CameraIntrinsics, window: int, origin: tuple[int, int] = (0, 0)
) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel surface normals from local 3x3 covariance of back-projected
    neighborhoods; returns (3, H, W) normals and a validity mask."""
    height, width = depth.shape
    half = window // 2
    valid = depth > 0

    us, vs = np.meshgrid(
        np.arange(width, dtype=float) + origin[0],
        np.arange(height, dtype=float) + origin[1],
    )
    pts = np.zeros((3, height, width))
    pts[0] = (us - k.cx) / k.fx * depth
    pts[1] = (vs - k.cy) / k.fy * depth
    pts[2] = depth

    pad = ((half, half), (half, half))
    pts_p = np.pad(pts, ((0, 0), *pad))
    valid_p = np.pad(valid, pad)

    count = np.zeros((height, width))
    sums = np.zeros((3, height, width))
    outer = np.zeros((3, 3, height, width))
    for dy in range(-half, half + 1):
        for dx in range(-half, half + 1):
            sl = (slice(half + dy, half + dy + height), slice(half + dx, half + dx + width))
            m = valid_p[sl]
            p = pts_p[(slice(None), *sl)] * m
            count += m
            sums += p
            outer += np.einsum("ihw,jhw->ijhw", p, p)

    ok = valid & (count >= 6)
    count_safe = np.maximum(count, 1.0)
    mean = sums / count_safe
    cov = outer / count_safe - np.einsum("ihw,jhw->ijhw", mean, mean)

    cov_flat = cov[:, :, ok].transpose(2, 0, 1)
    if cov_flat.shape[0]:
        _, evecs = np.linalg.eigh(cov_flat)
        n = evecs[:, :, 0].T  # (3, m): eigenvector of smallest eigenvalue
        # orient toward the camera (against the viewing ray)
        flip = np.einsum("im,im->m", n, pts[:, ok]) > 0
        n[:, flip] = -n[:, flip]
    else:
        n = np.zeros((3, 0))
    normal_map = np.zeros((3, height, width))
    normal_map[:, ok] = n
    return normal_map, ok
