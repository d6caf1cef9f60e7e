"""Round trips for every on-disk format."""

import numpy as np
import pytest

from kpfit import formats
from kpfit.annotate import FrameAnnotation, Keypoints3D, ProjectedKeypoint
from kpfit.geometry import CameraIntrinsics, RigidTransform, random_rotation
from kpfit.heatmap import CropMapping
from kpfit.metrics import SymmetrySet
from kpfit.shape import build_pca_basis
from kpfit.solver import KeypointObservations, SolverConfig, estimate_pose
from kpfit.synth import box_mesh, generate_pose_scenario

K = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


class TestPly:
    def test_round_trip(self, tmp_path, rng):
        model = box_mesh(0.4, 0.3, 0.25)
        path = tmp_path / "m.ply"
        formats.write_ply(path, model)
        back = formats.read_ply(path)
        np.testing.assert_allclose(back.vertices, model.vertices, atol=1e-6)
        np.testing.assert_array_equal(back.triangles, model.triangles)
        np.testing.assert_allclose(back.normals, model.normals, atol=1e-6)

    def test_normals_computed_when_absent(self, tmp_path):
        model = box_mesh(0.2, 0.2, 0.2)
        lines = ["ply", "format ascii 1.0",
                 f"element vertex {model.vertices.shape[1]}",
                 "property float x", "property float y", "property float z",
                 f"element face {model.triangles.shape[0]}",
                 "property list uchar int vertex_indices", "end_header"]
        for i in range(model.vertices.shape[1]):
            lines.append(" ".join(repr(float(x)) for x in model.vertices[:, i]))
        for tri in model.triangles:
            lines.append(f"3 {tri[0]} {tri[1]} {tri[2]}")
        path = tmp_path / "bare.ply"
        path.write_text("\n".join(lines) + "\n")
        back = formats.read_ply(path)
        np.testing.assert_allclose(np.linalg.norm(back.normals, axis=0), 1.0, atol=1e-9)

    def test_rejects_binary_header(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_text("ply\nformat binary_little_endian 1.0\nend_header\n")
        with pytest.raises(formats.FormatError):
            formats.read_ply(path)


class TestDepthImages:
    def test_pfm_float32_exact(self, tmp_path, rng):
        depth = rng.uniform(0, 3, size=(31, 45)).astype(np.float32)
        path = tmp_path / "d.pfm"
        formats.write_pfm(path, depth)
        back = formats.read_pfm(path)
        np.testing.assert_array_equal(back, depth)

    def test_pgm_millimeter_round_trip(self, tmp_path, rng):
        depth_mm = rng.integers(0, 5000, size=(20, 30))
        depth_m = depth_mm / 1000.0
        path = tmp_path / "d.pgm"
        formats.write_pgm16(path, depth_m)
        back = formats.read_pgm16(path)
        np.testing.assert_allclose(back, depth_m, atol=1e-9)

    def test_read_depth_dispatch(self, tmp_path):
        depth = np.full((8, 9), 1.5, dtype=np.float32)
        formats.write_pfm(tmp_path / "a.pfm", depth)
        formats.write_pgm16(tmp_path / "a.pgm", depth)
        np.testing.assert_allclose(formats.read_depth(tmp_path / "a.pfm"), depth)
        np.testing.assert_allclose(formats.read_depth(tmp_path / "a.pgm"), depth)
        with pytest.raises(formats.FormatError):
            formats.read_depth(tmp_path / "a.exr")


class TestTum:
    def test_round_trip_quaternions(self, tmp_path, rng):
        poses = [
            (float(i), RigidTransform(random_rotation(rng), rng.normal(size=3)))
            for i in range(10)
        ]
        path = tmp_path / "traj.txt"
        formats.write_tum(path, poses)
        back = formats.read_tum(path)
        assert len(back) == 10
        for (ts0, p0), (ts1, p1) in zip(poses, back):
            assert ts0 == ts1
            np.testing.assert_allclose(p1.rotation, p0.rotation, atol=1e-9)
            np.testing.assert_allclose(p1.translation, p0.translation, atol=1e-12)

    def test_skips_comments(self, tmp_path):
        path = tmp_path / "traj.txt"
        path.write_text("# header\n0.0 0 0 0 0 0 0 1\n")
        back = formats.read_tum(path)
        assert len(back) == 1
        np.testing.assert_allclose(back[0][1].rotation, np.eye(3))

    def test_rejects_short_rows(self, tmp_path):
        path = tmp_path / "traj.txt"
        path.write_text("0.0 1 2 3\n")
        with pytest.raises(formats.FormatError):
            formats.read_tum(path)


class TestKhm:
    def test_round_trip_float32_exact(self, tmp_path, rng):
        stack = rng.uniform(size=(4, 12, 17)).astype(np.float32)
        names = [f"kp{i}" for i in range(4)]
        mapping = CropMapping(scale=(2.0, 2.0), offset=(10.0, 20.0))
        path = tmp_path / "f.khm"
        formats.write_khm(path, stack, names, mapping)
        back, back_names, back_mapping = formats.read_khm(path)
        np.testing.assert_array_equal(back, stack)
        assert back_names == names
        assert back_mapping == mapping

    def test_magic_bytes(self, tmp_path, rng):
        stack = np.zeros((1, 2, 3), dtype=np.float32)
        path = tmp_path / "f.khm"
        formats.write_khm(path, stack, ["a"])
        raw = path.read_bytes()
        assert raw[:4] == b"KHM1"
        import struct

        assert struct.unpack("<III", raw[4:16]) == (3, 2, 1)

    def test_rejects_corrupt(self, tmp_path):
        path = tmp_path / "f.khm"
        path.write_bytes(b"NOPE" + b"\0" * 20)
        with pytest.raises(formats.FormatError):
            formats.read_khm(path)


class TestJsonArtifacts:
    def test_basis_round_trip(self, tmp_path, rng):
        shapes = [rng.normal(size=(3, 6)) for _ in range(5)]
        basis = build_pca_basis(shapes, k=2, names=[f"n{i}" for i in range(6)])
        path = tmp_path / "b.json"
        formats.write_basis(path, basis)
        back = formats.read_basis(path)
        np.testing.assert_allclose(back.mean, basis.mean)
        np.testing.assert_allclose(back.modes, basis.modes)
        np.testing.assert_allclose(back.eigenvalues, basis.eigenvalues)
        assert back.names == basis.names

    def test_intrinsics_round_trip(self, tmp_path):
        path = tmp_path / "k.json"
        formats.write_intrinsics(path, K)
        assert formats.read_intrinsics(path) == K

    def test_keypoints3d_round_trip(self, tmp_path, rng):
        normals = rng.normal(size=(3, 5))
        normals /= np.linalg.norm(normals, axis=0)
        kps = Keypoints3D(rng.normal(size=(3, 5)), tuple("abcde"), normals)
        path = tmp_path / "kp.json"
        formats.write_keypoints3d(path, kps)
        back = formats.read_keypoints3d(path)
        np.testing.assert_allclose(back.points, kps.points)
        np.testing.assert_allclose(back.normals, kps.normals, atol=1e-12)
        assert back.names == kps.names

    def test_observations_round_trip(self, tmp_path, rng):
        frames = [
            {
                "frame_id": f"frame_{i}",
                "pixels": rng.uniform(0, 640, size=(2, 4)),
                "confidences": rng.uniform(size=4),
            }
            for i in range(3)
        ]
        path = tmp_path / "obs.json"
        formats.write_observations(path, ["a", "b", "c", "d"], frames)
        names, back = formats.read_observations(path)
        assert names == ["a", "b", "c", "d"]
        for f0, f1 in zip(frames, back):
            assert f1["frame_id"] == f0["frame_id"]
            np.testing.assert_allclose(f1["observations"].pixels, f0["pixels"])

    def test_gt_poses_round_trip(self, tmp_path, rng):
        frames = [
            {
                "frame_id": f"f{i}",
                "pose": RigidTransform(random_rotation(rng), rng.normal(size=3)),
                "coefficients": rng.normal(size=2),
            }
            for i in range(3)
        ]
        path = tmp_path / "gt.json"
        formats.write_gt_poses(path, frames)
        back = formats.read_gt_poses(path)
        for f in frames:
            np.testing.assert_allclose(back[f["frame_id"]]["pose"].rotation, f["pose"].rotation)
            np.testing.assert_allclose(back[f["frame_id"]]["coefficients"], f["coefficients"])

    def test_symmetries_round_trip(self, tmp_path, rng):
        sym = SymmetrySet((RigidTransform(random_rotation(rng), np.zeros(3)),))
        path = tmp_path / "sym.json"
        formats.write_symmetries(path, sym)
        back = formats.read_symmetries(path)
        assert len(back.transforms) == len(sym.transforms)

    def test_pose_estimate_round_trip(self, tmp_path):
        scenario = generate_pose_scenario(seed=1, n_frames=1)
        f = scenario.frames[0]
        est = estimate_pose(
            KeypointObservations(f.pixels_full, f.confidences),
            scenario.basis,
            scenario.intrinsics,
            SolverConfig(lam=0.0, cost_tol=1e-14),
        )
        path = tmp_path / "pose.json"
        formats.write_pose_estimate(path, f.frame_id, est)
        back = formats.read_pose_estimate(path)
        assert back["frame_id"] == f.frame_id
        assert back["full"]
        np.testing.assert_allclose(back["rotation"], est.full.pose.pose.rotation)
        np.testing.assert_allclose(back["translation"], est.full.pose.pose.translation)

    def test_annotation_round_trip(self, tmp_path):
        ann = FrameAnnotation(
            "f0",
            [
                ProjectedKeypoint("a", 10.0, 20.0, [0, 0, 1.0], "visible", "icp"),
                ProjectedKeypoint("b", np.nan, np.nan, [0, 0, -1.0], "occluded", "none"),
            ],
            RigidTransform.identity(),
            warnings=["w"],
        )
        path = tmp_path / "ann.json"
        formats.write_annotation(path, ann)
        back = formats.read_annotation(path)
        assert back["frame_id"] == "f0"
        assert back["keypoints"][0]["u"] == 10.0
        assert np.isnan(back["keypoints"][1]["u"])
        assert back["keypoints"][1]["visibility"] == "occluded"
        assert back["warnings"] == ["w"]


class TestDeterminism:
    def test_writers_are_byte_stable(self, tmp_path, rng):
        model = box_mesh(0.3, 0.2, 0.1)
        depth = rng.uniform(0, 2, size=(10, 12)).astype(np.float32)
        a = tmp_path / "a"
        b = tmp_path / "b"
        a.mkdir()
        b.mkdir()
        for d in (a, b):
            formats.write_ply(d / "m.ply", model)
            formats.write_pfm(d / "d.pfm", depth)
            formats.write_intrinsics(d / "k.json", K)
        assert (a / "m.ply").read_bytes() == (b / "m.ply").read_bytes()
        assert (a / "d.pfm").read_bytes() == (b / "d.pfm").read_bytes()
        assert (a / "k.json").read_bytes() == (b / "k.json").read_bytes()
