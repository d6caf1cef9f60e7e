"""Point-to-plane ICP with small-angle Gauss-Newton updates.

Each iteration matches source points to their nearest target neighbors
(within a correspondence radius), linearizes the rotation, and solves the
6x6 normal equations for a twist update.  Steps that would increase the RMS
point-to-plane error are halved and ultimately rejected, and the best
transform seen is returned, so the final error never exceeds the initial.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import RigidTransform, so3_exp
from .raster import PointCloud


class InsufficientOverlapError(RuntimeError):
    """Fewer than six correspondences; the 6-DoF update is underdetermined."""


@dataclass(frozen=True)
class IcpConfig:
    max_iters: int = 30
    corr_dist: float = 0.10
    rel_tol: float = 1e-6
    # per-iteration trust region; oversized steps slide along weakly
    # constrained directions and shed correspondences
    max_rot_step: float = 0.2  # radians
    max_trans_step: float = 0.05  # meters
    min_match_ratio: float = 0.8


@dataclass
class IcpResult:
    transform: RigidTransform
    error: float  # RMS point-to-plane distance at the returned transform
    iterations: int
    correspondences: int
    converged: bool
    degenerate: bool  # 6x6 system was rank-deficient at some iteration


def icp_point_to_plane(
    src_points: np.ndarray,
    tgt: PointCloud,
    init: RigidTransform = RigidTransform.identity(),
    cfg: IcpConfig = IcpConfig(),
) -> IcpResult:
    """Align ``src_points`` (3, n) onto the oriented target cloud."""
    src_points = np.asarray(src_points, dtype=float)
    if tgt.normals is None:
        raise ValueError("target cloud needs normals for point-to-plane ICP")
    if src_points.shape[1] == 0 or tgt.size == 0:
        raise InsufficientOverlapError("empty cloud")

    tree = cKDTree(tgt.points.T)
    transform = init
    degenerate = False

    def match_and_error(t: RigidTransform):
        moved = t.apply(src_points)
        dist, idx = tree.query(moved.T, distance_upper_bound=cfg.corr_dist)
        ok = np.isfinite(dist)
        if int(ok.sum()) < 6:
            raise InsufficientOverlapError(
                f"{int(ok.sum())} correspondences within {cfg.corr_dist} m, need 6"
            )
        p = moved[:, ok]
        q = tgt.points[:, idx[ok]]
        n = tgt.normals[:, idx[ok]]
        resid = np.einsum("im,im->m", n, p - q)
        rms = float(np.sqrt(np.mean(resid**2)))
        return p, q, n, resid, rms, int(ok.sum())

    p, q, n, resid, error, n_corr = match_and_error(transform)
    best = (transform, error, n_corr)
    converged = False
    iterations = 0

    for iteration in range(cfg.max_iters):
        iterations = iteration + 1
        jac = np.hstack([np.cross(p.T, n.T), n.T])  # rows: [ (p x n)^T, n^T ]
        jtj = jac.T @ jac
        jtr = jac.T @ resid
        # Truncate near-null eigendirections (planar scenes leave in-plane
        # motion unobservable) instead of letting them blow up the step.
        evals, evecs = np.linalg.eigh(jtj)
        cutoff = 1e-6 * max(float(evals[-1]), np.finfo(float).tiny)
        keep = evals > cutoff
        if int(keep.sum()) < 6:
            degenerate = True
        delta = evecs[:, keep] @ ((evecs[:, keep].T @ -jtr) / evals[keep])

        rot_mag = float(np.linalg.norm(delta[:3]))
        trans_mag = float(np.linalg.norm(delta[3:]))
        shrink = min(
            1.0,
            cfg.max_rot_step / rot_mag if rot_mag > 0 else 1.0,
            cfg.max_trans_step / trans_mag if trans_mag > 0 else 1.0,
        )
        delta = shrink * delta

        prev_error = error
        accepted = False
        step = delta
        for _ in range(10):
            upd = RigidTransform(so3_exp(step[:3]), step[3:])
            cand = upd.compose(transform)
            try:
                cand_data = match_and_error(cand)
            except InsufficientOverlapError:
                step = 0.5 * step
                continue
            if cand_data[4] < error and cand_data[5] >= cfg.min_match_ratio * n_corr:
                transform = cand
                p, q, n, resid, error, n_corr = cand_data
                accepted = True
                break
            step = 0.5 * step
        if not accepted:
            break
        if error < best[1]:
            best = (transform, error, n_corr)
        if prev_error - error < cfg.rel_tol * max(prev_error, np.finfo(float).tiny):
            converged = True
            break

    transform, error, n_corr = best
    return IcpResult(
        transform=transform,
        error=error,
        iterations=iterations,
        correspondences=n_corr,
        converged=converged,
        degenerate=degenerate,
    )
