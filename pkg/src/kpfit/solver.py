"""Confidence-weighted deformable-model pose solvers.

Both solvers minimize one objective: half the weighted squared reprojection
residual plus a Tikhonov penalty on the shape coefficients,

    0.5 * || resid(theta) * sqrt(D) ||_F^2  +  0.5 * lam * ||c||^2,

where D is a diagonal matrix of per-keypoint confidences.  The weak solver
parameterizes the camera as (scale, top-two rotation rows, 2-D shift) and
runs block coordinate descent with a Stiefel-manifold gradient step for the
rotation rows; it is started from a convex relaxation.  The full solver,
given intrinsics, works in normalized coordinates with per-keypoint depths
and alternates closed-form depth / Procrustes rotation / translation /
coefficient updates, started from the weak solution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .geometry import (
    CameraIntrinsics,
    DegenerateGeometryError,
    RigidTransform,
    WeakCamera,
    lift_rotation,
    normalize_pixels,
    orthogonal_procrustes,
    project_weak,
)
from .heatmap import CropMapping, Heatmap, extract_peak
from .shape import ShapeBasis, instantiate


class TooFewKeypointsError(ValueError):
    """Fewer than four usable keypoints; pose is unconstrained."""


class NumericalFailureError(RuntimeError):
    """Solver produced a non-finite cost; carries the last valid solution."""

    def __init__(self, message: str, last_valid=None):
        super().__init__(message)
        self.last_valid = last_valid


@dataclass(frozen=True)
class KeypointObservations:
    """2-D detections: pixel columns (2, p) and confidences in [0, 1]."""

    pixels: np.ndarray
    confidences: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=float)
        conf = np.asarray(self.confidences, dtype=float).reshape(-1)
        if pixels.shape != (2, conf.shape[0]):
            raise ValueError("pixels must be (2, p) matching confidences")
        if np.any(conf < 0):
            raise ValueError("confidences must be nonnegative")
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "confidences", conf)

    @property
    def num_points(self) -> int:
        return self.confidences.shape[0]


@dataclass(frozen=True)
class WeakPose:
    cam: WeakCamera
    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float).reshape(-1))

    def rotation(self) -> np.ndarray:
        """Full rotation lifted from the two estimated rows."""
        return lift_rotation(self.cam.rot)


@dataclass(frozen=True)
class FullPose:
    pose: RigidTransform
    c: np.ndarray
    depths: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float).reshape(-1))
        object.__setattr__(self, "depths", np.asarray(self.depths, dtype=float).reshape(-1))


@dataclass(frozen=True)
class SolverConfig:
    """Knobs shared by both solvers.

    ``lam`` weighs the coefficient penalty (pixel-unit residuals; pair it
    with a stdev-scaled basis for a unit prior).  ``gamma`` switches the
    convex initializer to its spectral-norm-regularized form when positive.
    ``coplanarity_tol`` is the normal-equation condition number above which
    the weak solution is flagged ill-conditioned.
    """

    lam: float = 1.0
    gamma: float = 0.0
    max_iters: int = 1000
    rel_tol: float = 1e-9
    line_search_shrink: float = 0.5
    coplanarity_tol: float = 1e8
    min_depth: float = 0.01
    min_confidence: float = 1e-6
    init_iters: int = 200
    rot_steps: int = 4
    cost_tol: float = 0.0
    confidence_transform: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0:
            raise ValueError("lam and gamma must be nonnegative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if not 0 < self.line_search_shrink < 1:
            raise ValueError("line_search_shrink must be in (0, 1)")


@dataclass
class WeakSolution:
    pose: WeakPose
    cost: float
    trace: np.ndarray
    iterations: int
    converged: bool
    ill_conditioned: bool
    condition_number: float
    degenerate_scale: bool = False


@dataclass
class FullSolution:
    pose: FullPose
    cost: float
    trace: np.ndarray
    iterations: int
    converged: bool
    clamp_warning: bool


# ---------------------------------------------------------------------------
# Costs


def cost_weak(
    pixels: np.ndarray,
    confidences: np.ndarray,
    basis: ShapeBasis,
    pose: WeakPose,
    lam: float,
) -> float:
    """Weighted weak-perspective objective at ``pose``."""
    resid = np.asarray(pixels, dtype=float) - project_weak(instantiate(basis, pose.c), pose.cam)
    return _weighted_half_sq(resid, confidences) + 0.5 * lam * float(pose.c @ pose.c)


def cost_full(
    norm_pixels: np.ndarray,
    confidences: np.ndarray,
    basis: ShapeBasis,
    pose: FullPose,
    lam: float,
) -> float:
    """Weighted full-perspective objective in normalized coordinates.

    Residuals here are metric, so ``lam`` must be given in those units
    (solve_full converts its pixel-calibrated config value internally).
    """
    points = instantiate(basis, pose.c)
    resid = norm_pixels * pose.depths - pose.pose.apply(points)
    return _weighted_half_sq(resid, confidences) + 0.5 * lam * float(pose.c @ pose.c)


def _weighted_half_sq(resid: np.ndarray, confidences: np.ndarray) -> float:
    per_point = np.einsum("rp,rp->p", resid, resid)
    return 0.5 * float(np.asarray(confidences, dtype=float) @ per_point)


# ---------------------------------------------------------------------------
# Convex initialization (weak perspective, mean shape)


def init_weak_convex(
    pixels: np.ndarray,
    confidences: np.ndarray,
    mean_shape: np.ndarray,
    gamma: float = 0.0,
    n_coeffs: int = 0,
    init_iters: int = 200,
) -> WeakPose:
    """Globally-solvable pose initializer against the mean shape.

    Relaxes scale * rot to an unconstrained 2x3 matrix M.  With gamma = 0 the
    problem is weighted least squares and solved in closed form; with
    gamma > 0 a spectral-norm regularizer gamma * ||M||_2 is added and the
    problem solved by proximal gradient (the prox soft-shrinks the two
    singular values toward equalization).  M is then factored back into
    scale times orthonormal rows through its SVD.
    """
    w = np.asarray(pixels, dtype=float)
    d = np.asarray(confidences, dtype=float).reshape(-1)
    b = np.asarray(mean_shape, dtype=float)
    if int(np.count_nonzero(d > 0)) < 4:
        raise TooFewKeypointsError(
            f"{int(np.count_nonzero(d > 0))} weighted keypoints, need at least 4"
        )

    wsum = float(d.sum())
    wbar = (w @ d) / wsum
    bbar = (b @ d) / wsum
    wc = w - wbar[:, None]
    bc = b - bbar[:, None]

    gram = (bc * d) @ bc.T  # 3x3
    cross = (wc * d) @ bc.T  # 2x3
    m = np.linalg.lstsq(gram, cross.T, rcond=None)[0].T

    if gamma > 0:
        lip = float(np.linalg.eigvalsh(gram)[-1])
        step = 1.0 / max(lip, np.finfo(float).tiny)
        for _ in range(init_iters):
            grad = (m @ bc - wc) * d @ bc.T
            m = _prox_spectral(m - step * grad, gamma * step)

    u, svals, vt = np.linalg.svd(m, full_matrices=False)
    scale_ref = max(float(np.linalg.norm(wc)), 1e-300)
    if svals[0] <= 1e-12 * scale_ref:
        raise DegenerateGeometryError("weak-perspective scale collapsed to zero")
    if svals[1] <= 1e-9 * svals[0]:
        raise DegenerateGeometryError(
            "weighted keypoints are collinear; rotation rows are unrecoverable"
        )
    scale = 0.5 * float(svals[0] + svals[1])
    rot = u @ vt
    shift = wbar - scale * (rot @ bbar)
    return WeakPose(WeakCamera(scale, rot, shift), np.zeros(n_coeffs))


def _prox_spectral(m: np.ndarray, t: float) -> np.ndarray:
    """Prox of t * spectral norm for a 2x3 matrix."""
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    s1, s2 = float(s[0]), float(s[1])
    if s1 + s2 <= t:
        return np.zeros_like(m)
    if s1 - s2 >= t:
        new = np.array([s1 - t, s2])
    else:
        half = 0.5 * (s1 + s2 - t)
        new = np.array([half, half])
    return (u * new) @ vt


# ---------------------------------------------------------------------------
# Weak-perspective block coordinate descent


def _stiefel_tangent_project(rot: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Project a Euclidean gradient onto the tangent space at ``rot``
    (2x3 matrices with orthonormal rows, embedded metric)."""
    sym = grad @ rot.T
    sym = 0.5 * (sym + sym.T)
    return grad - sym @ rot


def _polar_retract(m: np.ndarray) -> np.ndarray:
    """Nearest matrix with orthonormal rows (polar factor)."""
    u, _, vt = np.linalg.svd(m, full_matrices=False)
    return u @ vt


def _rbar_euclidean_gradient(
    pixels: np.ndarray,
    confidences: np.ndarray,
    points: np.ndarray,
    scale: float,
    rot: np.ndarray,
    shift: np.ndarray,
) -> np.ndarray:
    resid = pixels - scale * (rot @ points) - shift[:, None]
    return -scale * (resid * confidences) @ points.T


def rbar_riemannian_gradient(
    pixels: np.ndarray,
    confidences: np.ndarray,
    points: np.ndarray,
    scale: float,
    rot: np.ndarray,
    shift: np.ndarray,
) -> np.ndarray:
    """Riemannian gradient of the weak data term with respect to the
    rotation rows; exposed so it can be checked against finite differences."""
    return _stiefel_tangent_project(
        rot, _rbar_euclidean_gradient(pixels, confidences, points, scale, rot, shift)
    )


def _solve_tikhonov(gram: np.ndarray, rhs: np.ndarray, lam: float) -> np.ndarray:
    """Solve (gram + lam I) c = rhs; fall back to a truncated eigendecomposition
    (smallest-norm solution) when conditioning exceeds 1e10."""
    k = gram.shape[0]
    a = gram + lam * np.eye(k)
    evals, evecs = np.linalg.eigh(a)
    emax = max(float(evals[-1]), np.finfo(float).tiny)
    if evals[0] > emax / 1e10:
        return np.linalg.solve(a, rhs)
    keep = evals > emax / 1e10
    coeffs = (evecs.T @ rhs)[keep] / evals[keep]
    return evecs[:, keep] @ coeffs


def solve_weak(
    pixels: np.ndarray,
    confidences: np.ndarray,
    basis: ShapeBasis,
    cfg: SolverConfig = SolverConfig(),
    init: Optional[WeakPose] = None,
) -> WeakSolution:
    """Minimize the weak-perspective objective by block coordinate descent.

    Sweep order: closed-form scale, closed-form shift, Tikhonov-regularized
    coefficients, then one backtracking Riemannian gradient step on the
    rotation rows.  Every block update is accepted only if it does not
    increase the objective, so the returned trace is non-increasing.
    """
    w = np.asarray(pixels, dtype=float)
    d = np.asarray(confidences, dtype=float).reshape(-1)
    if int(np.count_nonzero(d > 0)) < 4:
        raise TooFewKeypointsError(
            f"{int(np.count_nonzero(d > 0))} weighted keypoints, need at least 4"
        )
    if init is None:
        init = init_weak_convex(w, d, basis.mean, cfg.gamma, basis.k, cfg.init_iters)

    scale = float(init.cam.scale)
    rot = init.cam.rot.copy()
    shift = init.cam.shift.copy()
    c = np.asarray(init.c, dtype=float).reshape(-1)
    if c.shape[0] != basis.k:
        c = np.zeros(basis.k)

    wsum = float(d.sum())
    k = basis.k
    modes_flat = basis.modes  # (k, 3, p)
    points = instantiate(basis, c)
    degenerate_scale = False

    def current_cost() -> float:
        resid = w - scale * (rot @ points) - shift[:, None]
        return _weighted_half_sq(resid, d) + 0.5 * cfg.lam * float(c @ c)

    cost = current_cost()
    if not np.isfinite(cost):
        raise NumericalFailureError("non-finite cost at initialization")
    trace = [cost]
    converged = False
    sweeps = 0

    for sweep in range(cfg.max_iters):
        sweeps = sweep + 1
        cost_at_sweep_start = cost

        # (a) scale: scalar least squares.
        u = rot @ points
        den = float(np.einsum("rp,rp,p->", u, u, d))
        if den > 0:
            num = float(np.einsum("rp,rp,p->", w - shift[:, None], u, d))
            new_scale = num / den
            if new_scale <= 0:
                new_scale = np.finfo(float).tiny
                degenerate_scale = True
            old = scale
            scale = new_scale
            new_cost = current_cost()
            if new_cost <= cost:
                cost = new_cost
                trace.append(cost)
            else:
                scale = old

        # (b) shift: weighted mean of the unshifted residual.
        old = shift
        shift = ((w - scale * (rot @ points)) * d).sum(axis=1) / wsum
        new_cost = current_cost()
        if new_cost <= cost:
            cost = new_cost
            trace.append(cost)
        else:
            shift = old

        # (c) coefficients: k x k Tikhonov normal equations.
        if k > 0:
            proj_modes = scale * np.einsum("rc,kcp->krp", rot, modes_flat)
            base = w - scale * (rot @ basis.mean) - shift[:, None]
            gram = np.einsum("krp,lrp,p->kl", proj_modes, proj_modes, d)
            rhs = np.einsum("krp,rp,p->k", proj_modes, base, d)
            old_c, old_points = c, points
            c = _solve_tikhonov(gram, rhs, cfg.lam)
            points = instantiate(basis, c)
            new_cost = current_cost()
            if new_cost <= cost:
                cost = new_cost
                trace.append(cost)
            else:
                c, points = old_c, old_points

        # (d) rotation rows: Riemannian gradient steps, preconditioned by a
        # curvature bound so the backtracking search from 1.0 accepts early.
        lipschitz = scale**2 * float(np.einsum("rp,rp,p->", points, points, d))
        inv_l = 1.0 / max(lipschitz, np.finfo(float).tiny)
        for _ in range(max(cfg.rot_steps, 1)):
            grad = rbar_riemannian_gradient(w, d, points, scale, rot, shift)
            if float(np.linalg.norm(grad)) == 0.0:
                break
            step = inv_l * grad
            alpha = 1.0
            old_rot = rot
            cost_before_step = cost
            while alpha > 1e-14:
                rot = _polar_retract(old_rot - alpha * step)
                new_cost = current_cost()
                if new_cost < cost:
                    cost = new_cost
                    trace.append(cost)
                    break
                alpha *= cfg.line_search_shrink
            else:
                rot = old_rot
                break
            if cost_before_step - cost < cfg.rel_tol * max(cost_before_step, np.finfo(float).tiny):
                break

        if not np.isfinite(cost):
            raise NumericalFailureError(
                "non-finite cost during weak solve",
                last_valid=WeakPose(WeakCamera(scale, rot, shift), c),
            )
        if cost <= cfg.cost_tol:
            converged = True
            break
        if cost_at_sweep_start - cost < cfg.rel_tol * max(cost_at_sweep_start, np.finfo(float).tiny):
            converged = True
            break

    pose = WeakPose(WeakCamera(max(scale, np.finfo(float).tiny), rot, shift), c)
    cond = _weak_condition_number(w, d, basis, scale, rot, shift, c)
    return WeakSolution(
        pose=pose,
        cost=cost,
        trace=np.asarray(trace),
        iterations=sweeps,
        converged=converged,
        ill_conditioned=bool(cond > cfg.coplanarity_tol),
        condition_number=cond,
        degenerate_scale=degenerate_scale,
    )


def _weak_condition_number(
    w: np.ndarray,
    d: np.ndarray,
    basis: ShapeBasis,
    scale: float,
    rot: np.ndarray,
    shift: np.ndarray,
    c: np.ndarray,
) -> float:
    """Condition number of the normal equations of the full weak parameter
    block (scale, shift, coefficients, rotation-row tangent coordinates).

    Near-coplanar keypoint configurations parallel to the image plane couple
    rotation and shift and drive this to infinity.
    """
    points = instantiate(basis, c)
    p = points.shape[1]
    sd = np.sqrt(d)
    u = rot @ points  # (2, p)

    cols = []
    cols.append((u * sd).reshape(-1))  # d resid / d scale (sign dropped)
    for r in range(2):
        e = np.zeros((2, p))
        e[r] = sd
        cols.append(e.reshape(-1))
    for j in range(basis.k):
        cols.append((scale * (rot @ basis.modes[j]) * sd).reshape(-1))
    r3 = np.cross(rot[0], rot[1])
    spin = np.array([[0.0, -1.0], [1.0, 0.0]]) @ rot / np.sqrt(2.0)
    tangents = [spin, np.vstack([r3, np.zeros(3)]), np.vstack([np.zeros(3), r3])]
    for v in tangents:
        cols.append((scale * (v @ points) * sd).reshape(-1))

    jac = np.stack(cols, axis=1)
    svals = np.linalg.svd(jac, compute_uv=False)
    smax, smin = float(svals[0]), float(svals[-1])
    if smin <= smax * 1e-154:
        return np.inf
    return (smax / smin) ** 2


# ---------------------------------------------------------------------------
# Full-perspective block coordinate descent


def solve_full(
    pixels: np.ndarray,
    k_cam: CameraIntrinsics,
    confidences: np.ndarray,
    basis: ShapeBasis,
    cfg: SolverConfig = SolverConfig(),
    init: Optional[WeakPose] = None,
) -> FullSolution:
    """Minimize the full-perspective objective by block coordinate descent.

    Works on normalized image coordinates.  Per sweep: closed-form depths
    (clamped to ``cfg.min_depth``), rotation by weighted Procrustes jointly
    with the closed-form translation, then the Tikhonov coefficient update.
    Initialized from the weak-perspective solution: the rotation is the
    lifted row pair and the starting depth is fx / scale.

    ``cfg.lam`` is defined against pixel-unit residuals; the residuals here
    are metric (normalized coordinates times depth), so the penalty is
    converted by the squared projection scale (depth / focal)^2 at the
    initial depth, keeping one lambda meaningful for both solvers.
    """
    w = np.asarray(pixels, dtype=float)
    d = np.asarray(confidences, dtype=float).reshape(-1)
    if init is None:
        init = solve_weak(w, d, basis, cfg).pose

    wt = normalize_pixels(w, k_cam)  # (3, p)
    p = wt.shape[1]
    wsum = float(d.sum())

    rot = lift_rotation(init.cam.rot)
    tz = k_cam.fx / max(float(init.cam.scale), np.finfo(float).tiny)
    lam = cfg.lam * tz * tz / (k_cam.fx * k_cam.fy)
    trans = np.array(
        [
            (init.cam.shift[0] - k_cam.cx) * tz / k_cam.fx,
            (init.cam.shift[1] - k_cam.cy) * tz / k_cam.fy,
            tz,
        ]
    )
    c = np.asarray(init.c, dtype=float).reshape(-1)
    if c.shape[0] != basis.k:
        c = np.zeros(basis.k)
    points = instantiate(basis, c)

    # Defensive: keep the initial model in front of the camera.
    cam_z = (rot @ points)[2] + trans[2]
    if cam_z.mean() <= 0:
        trans[2] += cfg.min_depth - float(cam_z.min())

    depths = np.full(p, trans[2])
    ray_sq = np.einsum("rp,rp->p", wt, wt)

    def current_cost() -> float:
        resid = wt * depths - rot @ points - trans[:, None]
        return _weighted_half_sq(resid, d) + 0.5 * lam * float(c @ c)

    cost = current_cost()
    if not np.isfinite(cost):
        raise NumericalFailureError("non-finite cost at full-perspective init")
    trace = [cost]
    converged = False
    sweeps = 0
    clamp_hits = np.zeros(p, dtype=int)
    depth_updates = 0

    for sweep in range(cfg.max_iters):
        sweeps = sweep + 1
        cost_at_sweep_start = cost

        # (a) depths: perpendicular foot along each ray, clamped to min_depth.
        q = rot @ points + trans[:, None]
        new_depths = np.einsum("rp,rp->p", wt, q) / ray_sq
        clamped = new_depths < cfg.min_depth
        clamp_hits += clamped  # counts infeasible update attempts
        depth_updates += 1
        old = depths
        depths = np.where(clamped, cfg.min_depth, new_depths)
        new_cost = current_cost()
        if new_cost <= cost:
            cost = new_cost
            trace.append(cost)
        else:
            depths = old

        # (b)+(c) rotation and translation: weighted Procrustes after
        # removing weighted centroids, then the closed-form translation.
        v = wt * depths
        vbar = (v @ d) / wsum
        sbar = (points @ d) / wsum
        old_rot, old_trans = rot, trans
        try:
            rot = orthogonal_procrustes(points - sbar[:, None], v - vbar[:, None], d)
        except DegenerateGeometryError:
            rot = old_rot
        trans = ((v - rot @ points) @ d) / wsum
        new_cost = current_cost()
        if new_cost <= cost:
            cost = new_cost
            trace.append(cost)
        else:
            rot, trans = old_rot, old_trans

        # Joint depth/translation step: depths and the translation are nearly
        # collinear along the viewing rays, which makes their alternation
        # crawl; eliminating the depths leaves sum_i d_i (I - P_i) (q_i + T) = 0
        # with P_i the projection onto ray i, a 3x3 system for T.
        q = rot @ points
        a_mat = wsum * np.eye(3) - (wt * (d / ray_sq)) @ wt.T
        ray_dot_q = np.einsum("rp,rp->p", wt, q)
        b_vec = -((q * d).sum(axis=1) - (wt * (d * ray_dot_q / ray_sq)).sum(axis=1))
        old_trans, old_depths = trans, depths
        try:
            cand_t = np.linalg.solve(a_mat, b_vec)
        except np.linalg.LinAlgError:
            cand_t = np.linalg.lstsq(a_mat, b_vec, rcond=None)[0]
        cand_z = np.einsum("rp,rp->p", wt, q + cand_t[:, None]) / ray_sq
        clamped = cand_z < cfg.min_depth
        clamp_hits += clamped
        depth_updates += 1
        trans = cand_t
        depths = np.where(clamped, cfg.min_depth, cand_z)
        new_cost = current_cost()
        if new_cost <= cost:
            cost = new_cost
            trace.append(cost)
        else:
            trans, depths = old_trans, old_depths

        # (d) coefficients.
        if basis.k > 0:
            proj_modes = np.einsum("rc,kcp->krp", rot, basis.modes)
            base = v - rot @ basis.mean - trans[:, None]
            gram = np.einsum("krp,lrp,p->kl", proj_modes, proj_modes, d)
            rhs = np.einsum("krp,rp,p->k", proj_modes, base, d)
            old_c, old_points = c, points
            c = _solve_tikhonov(gram, rhs, lam)
            points = instantiate(basis, c)
            new_cost = current_cost()
            if new_cost <= cost:
                cost = new_cost
                trace.append(cost)
            else:
                c, points = old_c, old_points

        if not np.isfinite(cost):
            raise NumericalFailureError(
                "non-finite cost during full solve",
                last_valid=FullPose(RigidTransform(rot, trans), c, depths),
            )
        if cost <= cfg.cost_tol:
            converged = True
            break
        if cost_at_sweep_start - cost < cfg.rel_tol * max(cost_at_sweep_start, np.finfo(float).tiny):
            converged = True
            break

    weighted = d > 0
    clamp_warning = bool(np.any(clamp_hits[weighted] > 0.5 * max(depth_updates, 1)))
    pose = FullPose(RigidTransform(rot, trans), c, depths)
    return FullSolution(
        pose=pose,
        cost=cost,
        trace=np.asarray(trace),
        iterations=sweeps,
        converged=converged,
        clamp_warning=clamp_warning,
    )


# ---------------------------------------------------------------------------
# Pipeline entry point


@dataclass
class PoseEstimate:
    """Weak solution always; full solution when intrinsics were supplied."""

    weak: WeakSolution
    full: Optional[FullSolution]
    observations: KeypointObservations
    weak_residuals_px: np.ndarray
    full_residuals_px: Optional[np.ndarray]


def observations_from_heatmaps(
    heatmaps: Sequence[Heatmap], mapping: Optional[CropMapping] = None
) -> KeypointObservations:
    """Peak-extract a heatmap stack into solver observations."""
    us, vs, conf = [], [], []
    for hm in heatmaps:
        peak = extract_peak(hm)
        u, v = peak.u, peak.v
        if mapping is not None:
            u, v = mapping.to_full(u, v)
        us.append(u)
        vs.append(v)
        conf.append(peak.confidence)
    return KeypointObservations(np.array([us, vs]), np.array(conf))


def estimate_pose(
    obs: Union[KeypointObservations, Sequence[Heatmap]],
    basis: ShapeBasis,
    k_cam: Optional[CameraIntrinsics] = None,
    cfg: SolverConfig = SolverConfig(),
) -> PoseEstimate:
    """Run the full pipeline on detections or raw heatmaps.

    Extracts peaks if heatmaps are given, applies the optional confidence
    transform, requires at least four keypoints above ``cfg.min_confidence``,
    then runs the convex-initialized weak solver and, when intrinsics are
    available, the full-perspective solver on top of it.
    """
    if not isinstance(obs, KeypointObservations):
        obs = observations_from_heatmaps(obs)
    d = obs.confidences
    if cfg.confidence_transform is not None:
        d = np.asarray(cfg.confidence_transform(d), dtype=float).reshape(-1)
    usable = int(np.count_nonzero(d > cfg.min_confidence))
    if usable < 4:
        raise TooFewKeypointsError(
            f"only {usable} keypoints above confidence {cfg.min_confidence}, need 4"
        )

    weak = solve_weak(obs.pixels, d, basis, cfg)
    weak_resid = obs.pixels - project_weak(
        instantiate(basis, weak.pose.c), weak.pose.cam
    )
    weak_resid_px = np.linalg.norm(weak_resid, axis=0)

    full = None
    full_resid_px = None
    if k_cam is not None:
        full = solve_full(obs.pixels, k_cam, d, basis, cfg, init=weak.pose)
        cam_pts = full.pose.pose.apply(instantiate(basis, full.pose.c))
        z = cam_pts[2]
        with np.errstate(divide="ignore", invalid="ignore"):
            proj = np.vstack(
                [
                    k_cam.fx * cam_pts[0] / z + k_cam.cx,
                    k_cam.fy * cam_pts[1] / z + k_cam.cy,
                ]
            )
        full_resid_px = np.linalg.norm(obs.pixels - proj, axis=0)
        full_resid_px[z <= 0] = np.nan

    return PoseEstimate(
        weak=weak,
        full=full,
        observations=KeypointObservations(obs.pixels, d),
        weak_residuals_px=weak_resid_px,
        full_residuals_px=full_resid_px,
    )
