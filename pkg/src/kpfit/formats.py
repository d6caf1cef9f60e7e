"""File formats: meshes, depth images, trajectories, and JSON artifacts.

All writers are deterministic (fixed field order, repr-based float text,
raw little-endian binary) and atomic (write to a temp file, then rename),
so identical inputs produce byte-identical files.

Conventions:
- PLY: ASCII, vertices in meters, optional per-vertex normals.
- PFM: grayscale float32, negative scale line = little-endian, rows stored
  bottom-up per the format; depths in meters, 0 = missing.
- PGM: 16-bit binary (big-endian per Netpbm), millimeters, 0 = missing.
- TUM trajectory: "timestamp tx ty tz qx qy qz qw" per line, encoding the
  fixed-frame-to-camera transform.
- KHM heatmap container: magic "KHM1", little-endian u32 width/height/
  channels, then float32 data, channel-major row-major; keypoint names and
  the crop-to-image affine mapping live in a "<file>.json" sidecar.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .annotate import FrameAnnotation, Keypoints3D, ProjectedKeypoint
from .geometry import (
    CameraIntrinsics,
    RigidTransform,
    lift_rotation,
    quat_to_rotation,
    rotation_to_quat,
)
from .heatmap import CropMapping
from .metrics import SymmetrySet
from .raster import SurfaceModel, compute_vertex_normals
from .shape import ShapeBasis
from .solver import KeypointObservations, PoseEstimate


class FormatError(ValueError):
    """Malformed or unsupported input file."""


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2) + "\n")


def load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _float_or_none(x) -> Optional[float]:
    x = float(x)
    return None if not np.isfinite(x) else x


# ---------------------------------------------------------------------------
# PLY mesh


def write_ply(path, model: SurfaceModel) -> None:
    n = model.vertices.shape[1]
    m = model.triangles.shape[0]
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
        "property float nx",
        "property float ny",
        "property float nz",
        f"element face {m}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    v = model.vertices.astype(np.float32)
    nrm = model.normals.astype(np.float32)
    for i in range(n):
        fields = [float(v[0, i]), float(v[1, i]), float(v[2, i]),
                  float(nrm[0, i]), float(nrm[1, i]), float(nrm[2, i])]
        lines.append(" ".join(repr(f) for f in fields))
    for tri in model.triangles:
        lines.append(f"3 {tri[0]} {tri[1]} {tri[2]}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_ply(path) -> SurfaceModel:
    with open(path, "r", encoding="utf-8") as fh:
        if fh.readline().strip() != "ply":
            raise FormatError(f"{path}: not a PLY file")
        fmt = fh.readline().strip()
        if fmt != "format ascii 1.0":
            raise FormatError(f"{path}: only ASCII PLY supported, got {fmt!r}")
        n_vertex = n_face = 0
        properties: list[str] = []
        collecting_vertex = False
        while True:
            line = fh.readline()
            if not line:
                raise FormatError(f"{path}: unexpected end of header")
            line = line.strip()
            if line.startswith("comment"):
                continue
            if line.startswith("element vertex"):
                n_vertex = int(line.split()[-1])
                collecting_vertex = True
                continue
            if line.startswith("element face"):
                n_face = int(line.split()[-1])
                collecting_vertex = False
                continue
            if line.startswith("property") and collecting_vertex:
                properties.append(line.split()[-1])
                continue
            if line == "end_header":
                break
        idx = {name: i for i, name in enumerate(properties)}
        for req in ("x", "y", "z"):
            if req not in idx:
                raise FormatError(f"{path}: vertex property {req!r} missing")
        has_normals = all(k in idx for k in ("nx", "ny", "nz"))
        verts = np.zeros((3, n_vertex))
        normals = np.zeros((3, n_vertex)) if has_normals else None
        for i in range(n_vertex):
            fields = fh.readline().split()
            verts[:, i] = [float(fields[idx[k]]) for k in ("x", "y", "z")]
            if has_normals:
                normals[:, i] = [float(fields[idx[k]]) for k in ("nx", "ny", "nz")]
        tris = np.zeros((n_face, 3), dtype=int)
        for i in range(n_face):
            fields = fh.readline().split()
            if int(fields[0]) != 3:
                raise FormatError(f"{path}: only triangle faces supported")
            tris[i] = [int(fields[1]), int(fields[2]), int(fields[3])]
    if normals is None:
        normals = compute_vertex_normals(verts, tris)
    else:
        lengths = np.linalg.norm(normals, axis=0)
        bad = lengths < 1e-9
        if bad.any():
            normals[:, bad] = compute_vertex_normals(verts, tris)[:, bad]
            lengths = np.linalg.norm(normals, axis=0)
        normals = normals / np.maximum(lengths, 1e-300)
    return SurfaceModel(verts, tris, normals)


# ---------------------------------------------------------------------------
# Depth images


def write_pfm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 2:
        raise FormatError("PFM writer expects a 2-D grayscale image")
    header = f"Pf\n{image.shape[1]} {image.shape[0]}\n-1.0\n".encode("ascii")
    atomic_write_bytes(path, header + image[::-1].tobytes())  # bottom-up rows


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"Pf":
            raise FormatError(f"{path}: not a grayscale PFM")
        width, height = (int(t) for t in fh.readline().split())
        scale = float(fh.readline())
        data = np.frombuffer(fh.read(width * height * 4), dtype="<f4" if scale < 0 else ">f4")
        if data.size != width * height:
            raise FormatError(f"{path}: truncated PFM payload")
    return data.reshape(height, width)[::-1].copy()


def write_pgm16(path, depth_m: np.ndarray) -> None:
    depth_m = np.asarray(depth_m, dtype=float)
    mm = np.clip(np.round(depth_m * 1000.0), 0, 65535).astype(">u2")
    header = f"P5\n{depth_m.shape[1]} {depth_m.shape[0]}\n65535\n".encode("ascii")
    atomic_write_bytes(path, header + mm.tobytes())


def read_pgm16(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise FormatError(f"{path}: not a binary PGM")
        line = fh.readline()
        while line.startswith(b"#"):
            line = fh.readline()
        width, height = (int(t) for t in line.split())
        maxval = int(fh.readline())
        if maxval != 65535:
            raise FormatError(f"{path}: expected 16-bit PGM, maxval={maxval}")
        data = np.frombuffer(fh.read(width * height * 2), dtype=">u2")
        if data.size != width * height:
            raise FormatError(f"{path}: truncated PGM payload")
    return data.reshape(height, width).astype(float) / 1000.0


def read_depth(path) -> np.ndarray:
    """Dispatch on extension: .pfm (meters) or .pgm (millimeters)."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        return read_pfm(path).astype(float)
    if suffix == ".pgm":
        return read_pgm16(path)
    raise FormatError(f"{path}: unsupported depth format {suffix!r}")


# ---------------------------------------------------------------------------
# TUM trajectory


def write_tum(path, stamped_poses: Iterable[tuple[float, RigidTransform]]) -> None:
    lines = []
    for ts, pose in stamped_poses:
        q = rotation_to_quat(pose.rotation)
        t = pose.translation
        fields = [float(ts)] + [float(x) for x in t] + [float(x) for x in q]
        lines.append(" ".join(repr(f) for f in fields))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_tum(path) -> list[tuple[float, RigidTransform]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 8:
                raise FormatError(f"{path}:{lineno}: expected 8 fields, got {len(fields)}")
            ts = float(fields[0])
            t = np.array([float(x) for x in fields[1:4]])
            q = np.array([float(x) for x in fields[4:8]])
            out.append((ts, RigidTransform(quat_to_rotation(q), t)))
    return out


# ---------------------------------------------------------------------------
# KHM heatmap container

KHM_MAGIC = b"KHM1"


def write_khm(
    path,
    stack: np.ndarray,
    names: Iterable[str],
    mapping: CropMapping = CropMapping(),
) -> None:
    stack = np.asarray(stack, dtype="<f4")
    if stack.ndim != 3:
        raise FormatError("KHM stack must be (channels, height, width)")
    channels, height, width = stack.shape
    names = list(names)
    if len(names) != channels:
        raise FormatError("one keypoint name per channel required")
    header = KHM_MAGIC + struct.pack("<III", width, height, channels)
    atomic_write_bytes(path, header + stack.tobytes(order="C"))
    sidecar = {
        "keypoint_names": names,
        "crop_mapping": {"scale": list(mapping.scale), "offset": list(mapping.offset)},
    }
    dump_json(str(path) + ".json", sidecar)


def read_khm(path) -> tuple[np.ndarray, list[str], CropMapping]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != KHM_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        width, height, channels = struct.unpack("<III", fh.read(12))
        data = np.frombuffer(fh.read(channels * height * width * 4), dtype="<f4")
        if data.size != channels * height * width:
            raise FormatError(f"{path}: truncated KHM payload")
    stack = data.reshape(channels, height, width).copy()
    sidecar = load_json(str(path) + ".json")
    names = list(sidecar["keypoint_names"])
    cm = sidecar.get("crop_mapping", {"scale": [1.0, 1.0], "offset": [0.0, 0.0]})
    mapping = CropMapping(tuple(cm["scale"]), tuple(cm["offset"]))
    return stack, names, mapping


# ---------------------------------------------------------------------------
# JSON artifacts


def write_intrinsics(path, k: CameraIntrinsics) -> None:
    dump_json(
        path,
        {
            "fx": float(k.fx),
            "fy": float(k.fy),
            "cx": float(k.cx),
            "cy": float(k.cy),
            "width": int(k.width),
            "height": int(k.height),
        },
    )


def read_intrinsics(path) -> CameraIntrinsics:
    d = load_json(path)
    try:
        return CameraIntrinsics(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )
    except KeyError as err:
        raise FormatError(f"{path}: missing intrinsics field {err}") from err


def write_basis(path, basis: ShapeBasis) -> None:
    dump_json(
        path,
        {
            "names": list(basis.names),
            "b0": basis.mean.tolist(),
            "modes": [m.tolist() for m in basis.modes],
            "eigenvalues": basis.eigenvalues.tolist(),
        },
    )


def read_basis(path) -> ShapeBasis:
    d = load_json(path)
    try:
        mean = np.asarray(d["b0"], dtype=float)
        modes = np.asarray(d["modes"], dtype=float).reshape(-1, *mean.shape)
        return ShapeBasis(mean, modes, np.asarray(d["eigenvalues"], dtype=float), tuple(d["names"]))
    except KeyError as err:
        raise FormatError(f"{path}: missing basis field {err}") from err


def write_keypoints3d(path, kps: Keypoints3D) -> None:
    records = []
    for i, name in enumerate(kps.names):
        rec = {"name": name, "xyz": kps.points[:, i].tolist()}
        if kps.normals is not None:
            rec["normal"] = kps.normals[:, i].tolist()
        records.append(rec)
    dump_json(path, {"keypoints": records})


def read_keypoints3d(path) -> Keypoints3D:
    d = load_json(path)
    records = d.get("keypoints")
    if not records:
        raise FormatError(f"{path}: no keypoints")
    names = tuple(r["name"] for r in records)
    points = np.array([r["xyz"] for r in records], dtype=float).T
    normals = None
    if all("normal" in r for r in records):
        normals = np.array([r["normal"] for r in records], dtype=float).T
        normals = normals / np.maximum(np.linalg.norm(normals, axis=0), 1e-300)
    return Keypoints3D(points, names, normals)


def write_observations(path, names: Iterable[str], frames: list[dict]) -> None:
    """frames: [{"frame_id": str, "pixels": (2, p) array, "confidences": (p,)}]"""
    payload = {
        "keypoint_names": list(names),
        "frames": [
            {
                "frame_id": f["frame_id"],
                "pixels": np.asarray(f["pixels"], dtype=float).tolist(),
                "confidences": np.asarray(f["confidences"], dtype=float).tolist(),
            }
            for f in frames
        ],
    }
    dump_json(path, payload)


def read_observations(path) -> tuple[list[str], list[dict]]:
    d = load_json(path)
    names = list(d.get("keypoint_names", []))
    frames = []
    try:
        for f in d.get("frames", []):
            frames.append(
                {
                    "frame_id": str(f["frame_id"]),
                    "observations": KeypointObservations(
                        np.asarray(f["pixels"], dtype=float),
                        np.asarray(f["confidences"], dtype=float),
                    ),
                }
            )
    except (KeyError, ValueError) as err:
        raise FormatError(f"{path}: malformed observations ({err})") from err
    return names, frames


def write_gt_poses(path, frames: list[dict]) -> None:
    """frames: [{"frame_id", "pose": RigidTransform, "coefficients": array}]"""
    payload = {
        "frames": [
            {
                "frame_id": f["frame_id"],
                "rotation": f["pose"].rotation.tolist(),
                "translation": f["pose"].translation.tolist(),
                "c": np.asarray(f.get("coefficients", []), dtype=float).tolist(),
            }
            for f in frames
        ]
    }
    dump_json(path, payload)


def read_gt_poses(path) -> dict[str, dict]:
    d = load_json(path)
    out = {}
    try:
        for f in d.get("frames", []):
            out[str(f["frame_id"])] = {
                "pose": RigidTransform(
                    np.asarray(f["rotation"], dtype=float),
                    np.asarray(f["translation"], dtype=float),
                ),
                "coefficients": np.asarray(f.get("c", []), dtype=float),
            }
    except (KeyError, ValueError) as err:
        raise FormatError(f"{path}: malformed ground-truth poses ({err})") from err
    return out


def write_symmetries(path, sym: SymmetrySet) -> None:
    dump_json(
        path,
        {
            "transforms": [
                {"rotation": t.rotation.tolist(), "translation": t.translation.tolist()}
                for t in sym.transforms
            ]
        },
    )


def read_symmetries(path) -> SymmetrySet:
    d = load_json(path)
    transforms = tuple(
        RigidTransform(np.asarray(t["rotation"], dtype=float), np.asarray(t["translation"], dtype=float))
        for t in d.get("transforms", [])
    )
    return SymmetrySet(transforms)


def pose_estimate_to_dict(frame_id: str, est: PoseEstimate) -> dict:
    weak = est.weak
    lifted = lift_rotation(weak.pose.cam.rot)
    out = {
        "frame_id": frame_id,
        "rotation": (est.full.pose.pose.rotation if est.full else lifted).tolist(),
        "translation": est.full.pose.pose.translation.tolist() if est.full else None,
        "c": (est.full.pose.c if est.full else weak.pose.c).tolist(),
        "s": float(weak.pose.cam.scale),
        "weak": {
            "scale": float(weak.pose.cam.scale),
            "rot": weak.pose.cam.rot.tolist(),
            "shift": weak.pose.cam.shift.tolist(),
            "rotation": lifted.tolist(),
            "c": weak.pose.c.tolist(),
            "cost": float(weak.cost),
            "trace": np.asarray(weak.trace).tolist(),
            "residuals_px": [_float_or_none(r) for r in est.weak_residuals_px],
            "flags": {
                "converged": bool(weak.converged),
                "ill_conditioned": bool(weak.ill_conditioned),
                "degenerate_scale": bool(weak.degenerate_scale),
            },
            "condition_number": _float_or_none(weak.condition_number),
            "iterations": weak.iterations,
        },
        "full": None,
    }
    if est.full is not None:
        full = est.full
        out["full"] = {
            "rotation": full.pose.pose.rotation.tolist(),
            "translation": full.pose.pose.translation.tolist(),
            "c": full.pose.c.tolist(),
            "z": full.pose.depths.tolist(),
            "cost": float(full.cost),
            "trace": np.asarray(full.trace).tolist(),
            "residuals_px": [_float_or_none(r) for r in est.full_residuals_px],
            "flags": {
                "converged": bool(full.converged),
                "clamp_warning": bool(full.clamp_warning),
            },
            "iterations": full.iterations,
        }
    return out


def write_pose_estimate(path, frame_id: str, est: PoseEstimate) -> None:
    dump_json(path, pose_estimate_to_dict(frame_id, est))


def read_pose_estimate(path) -> dict:
    d = load_json(path)
    try:
        out = {
            "frame_id": str(d["frame_id"]),
            "weak_rotation": np.asarray(d["weak"]["rotation"], dtype=float),
            "rotation": np.asarray(d["rotation"], dtype=float),
            "translation": (
                None if d.get("translation") is None else np.asarray(d["translation"], dtype=float)
            ),
            "full": d.get("full") is not None,
            "flags": {
                "weak": d["weak"]["flags"],
                "full": d["full"]["flags"] if d.get("full") else None,
            },
        }
    except (KeyError, ValueError) as err:
        raise FormatError(f"{path}: malformed pose estimate ({err})") from err
    return out


def write_annotation(path, ann: FrameAnnotation) -> None:
    dump_json(
        path,
        {
            "frame_id": ann.frame_id,
            "keypoints": [
                {
                    "name": kp.name,
                    "u": _float_or_none(kp.u),
                    "v": _float_or_none(kp.v),
                    "visibility": kp.visibility,
                    "refinement": kp.refinement,
                }
                for kp in ann.keypoints
            ],
            "warnings": list(ann.warnings),
        },
    )


def read_annotation(path) -> dict:
    d = load_json(path)
    return {
        "frame_id": str(d["frame_id"]),
        "keypoints": [
            {
                "name": kp["name"],
                "u": np.nan if kp["u"] is None else float(kp["u"]),
                "v": np.nan if kp["v"] is None else float(kp["v"]),
                "visibility": kp["visibility"],
                "refinement": kp["refinement"],
            }
            for kp in d.get("keypoints", [])
        ],
        "warnings": list(d.get("warnings", [])),
    }
