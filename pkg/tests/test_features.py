"""FPFH descriptor properties: planar degeneracy, rigid invariance."""

import numpy as np
import pytest

from kpfit.features import fpfh
from kpfit.geometry import random_rotation


def plane_cloud(n=8, spacing=0.01):
    xs = np.arange(n) * spacing
    grid = np.array(np.meshgrid(xs, xs)).reshape(2, -1)
    points = np.vstack([grid, np.zeros(grid.shape[1])])
    normals = np.tile([[0.0], [0.0], [1.0]], (1, points.shape[1]))
    return points, normals


def corner_cloud(n=6, spacing=0.01):
    """Three orthogonal faces meeting at the origin."""
    xs = (np.arange(n) + 0.5) * spacing
    g = np.array(np.meshgrid(xs, xs)).reshape(2, -1)
    z = np.zeros(g.shape[1])
    faces = [
        (np.vstack([g[0], g[1], z]), [0.0, 0.0, 1.0]),
        (np.vstack([g[0], z, g[1]]), [0.0, 1.0, 0.0]),
        (np.vstack([z, g[0], g[1]]), [1.0, 0.0, 0.0]),
    ]
    pts = np.hstack([f[0] for f in faces])
    nrm = np.hstack([np.tile(np.array(f[1])[:, None], (1, g.shape[1])) for f in faces])
    return pts, nrm


class TestFpfh:
    def test_shape_and_normalization(self):
        pts, nrm = plane_cloud()
        desc, isolated = fpfh(pts, nrm, radius=0.03)
        assert desc.shape == (pts.shape[1], 33)
        assert not isolated.any()
        for b in range(3):
            block = desc[:, b * 11 : (b + 1) * 11]
            np.testing.assert_allclose(block.sum(axis=1), 1.0, atol=1e-9)

    def test_plane_descriptors_identical(self):
        # On a uniform plane with identical normals every angular triplet is
        # (0, 0, 0), so all descriptors coincide.
        pts, nrm = plane_cloud()
        desc, _ = fpfh(pts, nrm, radius=0.03)
        spread = np.abs(desc - desc[0]).max()
        assert spread < 1e-6

    def test_rigid_invariance(self, rng):
        pts, nrm = corner_cloud()
        desc0, iso0 = fpfh(pts, nrm, radius=0.025)
        r = random_rotation(rng)
        t = rng.normal(size=3)
        desc1, iso1 = fpfh(r @ pts + t[:, None], r @ nrm, radius=0.025)
        np.testing.assert_array_equal(iso0, iso1)
        assert np.abs(desc0 - desc1).max() < 1e-6

    def test_isolated_point_zero_descriptor(self):
        pts = np.array([[0.0, 10.0], [0.0, 0.0], [0.0, 0.0]])
        nrm = np.tile([[0.0], [0.0], [1.0]], (1, 2))
        desc, isolated = fpfh(pts, nrm, radius=0.05)
        assert isolated.all()
        np.testing.assert_array_equal(desc, np.zeros((2, 33)))

    def test_distinguishes_plane_from_corner(self):
        pts_p, nrm_p = plane_cloud()
        pts_c, nrm_c = corner_cloud()
        dp, _ = fpfh(pts_p, nrm_p, radius=0.03)
        dc, _ = fpfh(pts_c, nrm_c, radius=0.03)
        # corner-adjacent points see mixed normals; their histograms differ
        # from any plane histogram
        plane_sig = dp[len(dp) // 2]
        corner_idx = np.argmin(np.linalg.norm(pts_c, axis=0))
        assert np.linalg.norm(dc[corner_idx] - plane_sig) > 0.1

    def test_input_validation(self):
        with pytest.raises(ValueError):
            fpfh(np.zeros((3, 4)), np.zeros((3, 5)), radius=0.1)
        with pytest.raises(ValueError):
            fpfh(np.zeros((3, 4)), np.zeros((3, 4)), radius=0.0)
