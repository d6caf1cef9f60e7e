"""Fast point feature histograms (FPFH) for oriented point clouds.

Per point: a simplified histogram (SPFH) of the three Darboux-frame angles
to every neighbor inside the support radius, 11 bins per angle, then the
distance-weighted accumulation of neighbor SPFHs.  The final 33-vector is
L1-normalized per 11-bin block, making it invariant to sampling density and
to rigid motion of the cloud.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

N_BINS = 11


def fpfh(
    points: np.ndarray, normals: np.ndarray, radius: float
) -> tuple[np.ndarray, np.ndarray]:
    """Descriptors for a (3, m) cloud with unit normals.

    Returns (descriptors (m, 33), isolated (m,)); isolated points (no
    neighbor within ``radius``) get a zero descriptor and a raised flag.
    """
    points = np.asarray(points, dtype=float)
    normals = np.asarray(normals, dtype=float)
    if points.shape != normals.shape or points.shape[0] != 3:
        raise ValueError("points and normals must both be (3, m)")
    if radius <= 0:
        raise ValueError("radius must be positive")
    m = points.shape[1]
    if m == 0:
        return np.zeros((0, 3 * N_BINS)), np.zeros(0, dtype=bool)

    tree = cKDTree(points.T)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    if pairs.size == 0:
        return np.zeros((m, 3 * N_BINS)), np.ones(m, dtype=bool)

    # angles are computed once per unordered pair, in both directions
    src = np.concatenate([pairs[:, 0], pairs[:, 1]])
    tgt = np.concatenate([pairs[:, 1], pairs[:, 0]])

    spfh = np.zeros((m, 3 * N_BINS))
    dvec = points[:, tgt] - points[:, src]
    dist = np.linalg.norm(dvec, axis=0)
    good = dist > 1e-12
    src, tgt, dvec, dist = src[good], tgt[good], dvec[:, good], dist[good]
    dunit = dvec / dist

    u = normals[:, src]
    v = np.cross(u.T, dunit.T).T
    vnorm = np.linalg.norm(v, axis=0)
    vnorm[vnorm < 1e-12] = 1.0
    v = v / vnorm
    w = np.cross(u.T, v.T).T
    nt = normals[:, tgt]

    alpha = np.einsum("ik,ik->k", v, nt)
    phi = np.einsum("ik,ik->k", u, dunit)
    theta = np.arctan2(np.einsum("ik,ik->k", w, nt), np.einsum("ik,ik->k", u, nt))

    bins_a = _bin_index(alpha, -1.0, 1.0)
    bins_p = _bin_index(phi, -1.0, 1.0)
    bins_t = _bin_index(theta, -np.pi, np.pi)
    np.add.at(spfh, (src, bins_a), 1.0)
    np.add.at(spfh, (src, N_BINS + bins_p), 1.0)
    np.add.at(spfh, (src, 2 * N_BINS + bins_t), 1.0)

    neighbor_count = np.zeros(m)
    np.add.at(neighbor_count, src, 1.0)
    isolated = neighbor_count == 0
    spfh = _normalize_blocks(spfh)

    # distance-weighted accumulation of neighbor SPFHs
    acc = np.zeros_like(spfh)
    weights = 1.0 / np.maximum(dist, 1e-12)
    np.add.at(acc, src, weights[:, None] * spfh[tgt])
    with np.errstate(invalid="ignore"):
        desc = spfh + acc / np.maximum(neighbor_count, 1.0)[:, None]
    desc = _normalize_blocks(desc)
    desc[isolated] = 0.0
    return desc, isolated


def _bin_index(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    idx = np.floor((values - lo) / (hi - lo) * N_BINS).astype(int)
    return np.clip(idx, 0, N_BINS - 1)


def _normalize_blocks(hist: np.ndarray) -> np.ndarray:
    out = hist.copy()
    for b in range(3):
        block = out[:, b * N_BINS : (b + 1) * N_BINS]
        totals = block.sum(axis=1, keepdims=True)
        totals[totals == 0] = 1.0
        block /= totals
    return out
