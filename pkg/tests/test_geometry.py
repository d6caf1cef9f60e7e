"""Rotation algebra and projection primitives.

Expected values are either arithmetic one-liners or checked against
independent constructions (quaternion oracle, brute-force rotation grids).
"""

import math

import numpy as np
import pytest

from kpfit.geometry import (
    BehindCameraError,
    CameraIntrinsics,
    DegenerateGeometryError,
    RigidTransform,
    WeakCamera,
    is_rotation,
    lift_rotation,
    normalize_pixels,
    orthogonal_procrustes,
    project_full,
    project_weak,
    quat_to_rotation,
    random_rotation,
    rotation_to_quat,
    so3_exp,
    so3_log,
    unproject_pixels,
)

K = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


class TestSo3Exp:
    def test_zero_gives_identity(self):
        np.testing.assert_allclose(so3_exp([0, 0, 0]), np.eye(3))

    def test_quarter_turn_about_z(self):
        r = so3_exp([0, 0, math.pi / 2])
        np.testing.assert_allclose(r @ [1, 0, 0], [0, 1, 0], atol=1e-12)

    def test_result_is_rotation(self, rng):
        for _ in range(50):
            w = rng.normal(size=3)
            assert is_rotation(so3_exp(w))

    def test_log_round_trip(self, rng):
        for _ in range(200):
            w = rng.normal(size=3)
            w *= rng.uniform(0, math.pi - 1e-3) / np.linalg.norm(w)
            np.testing.assert_allclose(so3_log(so3_exp(w)), w, atol=1e-9)


class TestSo3Log:
    def test_identity(self):
        np.testing.assert_allclose(so3_log(np.eye(3)), np.zeros(3), atol=1e-15)

    def test_small_rotation_about_x(self):
        r = so3_exp([0.3, 0, 0])
        np.testing.assert_allclose(so3_log(r), [0.3, 0, 0], atol=1e-12)

    def test_pi_about_z(self):
        r = np.diag([-1.0, -1.0, 1.0])  # half turn about z
        w = so3_log(r)
        assert abs(np.linalg.norm(w) - math.pi) < 1e-9
        # sign convention: first nonzero axis component positive
        np.testing.assert_allclose(w, [0, 0, math.pi], atol=1e-9)
        np.testing.assert_allclose(so3_exp(w), r, atol=1e-9)
        np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)

    def test_near_pi_branch(self, rng):
        for _ in range(20):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            angle = math.pi - 1e-8
            r = so3_exp(angle * axis)
            w = so3_log(r)
            assert abs(np.linalg.norm(w) - angle) < 1e-6
            np.testing.assert_allclose(so3_exp(w), r, atol=1e-7)


class TestProcrustes:
    def test_equal_sets_give_identity(self, rng):
        a = rng.normal(size=(3, 6))
        np.testing.assert_allclose(orthogonal_procrustes(a, a), np.eye(3), atol=1e-12)

    def test_recovers_known_rotation(self, rng):
        for _ in range(20):
            a = rng.normal(size=(3, 5))
            r0 = random_rotation(rng)
            r = orthogonal_procrustes(a, r0 @ a)
            np.testing.assert_allclose(r, r0, atol=1e-9)

    def test_zero_weight_excludes_outlier(self, rng):
        a = rng.normal(size=(3, 6))
        r0 = random_rotation(rng)
        b = r0 @ a
        b[:, 2] = 1e6  # corrupted, but weightless
        w = np.ones(6)
        w[2] = 0.0
        np.testing.assert_allclose(orthogonal_procrustes(a, b, w), r0, atol=1e-9)

    def test_never_a_reflection(self, rng):
        for _ in range(50):
            a = rng.normal(size=(3, 4))
            b = rng.normal(size=(3, 4))
            r = orthogonal_procrustes(a, b)
            assert is_rotation(r)

    def test_collinear_points_degenerate(self, rng):
        direction = rng.normal(size=3)
        a = np.outer(direction, rng.normal(size=5))
        b = np.outer(rng.normal(size=3), rng.normal(size=5))
        with pytest.raises(DegenerateGeometryError):
            orthogonal_procrustes(a, b)

    def test_beats_rotation_grid(self, rng):
        # The SVD solution is the global optimum: a dense random grid of
        # rotations must never achieve a larger trace(R @ H).
        quats = rng.normal(size=(20000, 4))
        quats /= np.linalg.norm(quats, axis=1, keepdims=True)
        grid = np.stack([quat_to_rotation(q) for q in quats])
        for _ in range(5):
            a = rng.normal(size=(3, 4))
            b = rng.normal(size=(3, 4))
            w = rng.uniform(0.1, 1.0, size=4)
            h = (a * w) @ b.T  # objective: sum_i w_i b_i . R a_i == trace(R h)
            r = orthogonal_procrustes(a, b, w)
            best_grid = np.einsum("nij,ji->n", grid, h).max()
            assert np.trace(r @ h) >= best_grid - 1e-9 * np.linalg.norm(h)


class TestRigidTransform:
    def test_compose_inverse_is_identity(self, rng):
        t = RigidTransform(random_rotation(rng), rng.normal(size=3))
        ident = t.compose(t.inverse())
        np.testing.assert_allclose(ident.rotation, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(ident.translation, np.zeros(3), atol=1e-9)

    def test_composition_associative(self, rng):
        ts = [RigidTransform(random_rotation(rng), rng.normal(size=3)) for _ in range(3)]
        left = ts[0].compose(ts[1]).compose(ts[2])
        right = ts[0].compose(ts[1].compose(ts[2]))
        np.testing.assert_allclose(left.matrix(), right.matrix(), atol=1e-9)

    def test_apply_matches_matrix(self, rng):
        t = RigidTransform(random_rotation(rng), rng.normal(size=3))
        p = rng.normal(size=(3, 7))
        hom = t.matrix() @ np.vstack([p, np.ones(7)])
        np.testing.assert_allclose(t.apply(p), hom[:3], atol=1e-12)


class TestProjectWeak:
    def test_zero_points_give_shift(self):
        cam = WeakCamera(1.0, np.eye(3)[:2], np.array([5.0, 7.0]))
        out = project_weak(np.zeros((3, 4)), cam)
        np.testing.assert_allclose(out, np.array([[5.0], [7.0]]) @ np.ones((1, 4)))

    def test_scale_arithmetic(self):
        cam = WeakCamera(2.0, np.eye(3)[:2], np.zeros(2))
        out = project_weak(np.array([[1.0], [2.0], [3.0]]), cam)
        np.testing.assert_allclose(out, [[2.0], [4.0]])

    def test_depth_axis_translation_invisible(self, rng):
        r = random_rotation(rng)
        cam = WeakCamera(3.0, r[:2], rng.normal(size=2))
        s = rng.normal(size=(3, 6))
        shifted = s + np.outer(cam.depth_axis(), rng.normal(size=6))
        np.testing.assert_allclose(project_weak(s, cam), project_weak(shifted, cam), atol=1e-9)


class TestProjectFull:
    def test_principal_point(self):
        out = project_full(np.array([[0.0], [0.0], [1.0]]), RigidTransform.identity(), K)
        np.testing.assert_allclose(out, [[320.0], [240.0]])

    def test_off_axis_point(self):
        out = project_full(np.array([[1.0], [0.0], [2.0]]), RigidTransform.identity(), K)
        np.testing.assert_allclose(out, [[570.0], [240.0]])

    def test_behind_camera_names_column(self):
        pts = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, -1.0]])
        with pytest.raises(BehindCameraError) as err:
            project_full(pts, RigidTransform.identity(), K)
        assert err.value.columns == [1]

    def test_unproject_round_trip(self, rng):
        pose = RigidTransform(random_rotation(rng), np.array([0.1, -0.2, 2.0]))
        pts = rng.uniform(-0.3, 0.3, size=(3, 8))
        px = project_full(pts, pose, K)
        depths = pose.apply(pts)[2]
        cam_pts = unproject_pixels(px, depths, K)
        np.testing.assert_allclose(cam_pts, pose.apply(pts), atol=1e-9)


class TestNormalizePixels:
    def test_principal_point_maps_to_origin(self):
        out = normalize_pixels(np.array([[320.0], [240.0]]), K)
        np.testing.assert_allclose(out, [[0.0], [0.0], [1.0]])

    def test_one_focal_length_right(self):
        out = normalize_pixels(np.array([[820.0], [240.0]]), K)
        np.testing.assert_allclose(out, [[1.0], [0.0], [1.0]])

    def test_reproject_at_unit_depth(self, rng):
        px = rng.uniform(0, 640, size=(2, 10))
        px[1] = rng.uniform(0, 480, size=10)
        rays = normalize_pixels(px, K)
        back = project_full(rays, RigidTransform.identity(), K)
        np.testing.assert_allclose(back, px, atol=1e-12)


class TestQuaternions:
    def test_round_trip(self, rng):
        for _ in range(100):
            r = random_rotation(rng)
            np.testing.assert_allclose(quat_to_rotation(rotation_to_quat(r)), r, atol=1e-9)

    def test_lift_rotation_proper(self, rng):
        r = random_rotation(rng)
        lifted = lift_rotation(r[:2])
        assert is_rotation(lifted)
        np.testing.assert_allclose(lifted, r, atol=1e-12)


class TestIntrinsicsValidation:
    def test_rejects_nonpositive_focal(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=-1.0, fy=1.0, cx=0.0, cy=0.0, width=10, height=10)

    def test_rejects_off_image_principal_point(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=1.0, fy=1.0, cx=20.0, cy=0.0, width=10, height=10)
