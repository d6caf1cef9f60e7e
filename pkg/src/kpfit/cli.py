"""Command-line interface.

Subcommands: synth (seeded ground-truth scenario), build-basis (PCA shape
model from keypoint files), solve (pose per frame from observations or
heatmap stacks), annotate (project/refine keypoints against depth frames),
evaluate (metrics CSV + summary + figures).

Exit codes: 0 success, 1 per-frame failures, 2 invalid input.  A JSON
config file can predefine any subcommand's options; explicit flags win.
The frame-parallel worker count comes from --workers or KPFIT_WORKERS.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import formats
from .annotate import AnnotationConfig, AnnotationFrame, Keypoints3D, annotate_frame
from .geometry import CameraIntrinsics
from .heatmap import CropMapping, Heatmap, synth_heatmap
from .metrics import SymmetrySet, subsample_points
from .raster import SurfaceModel
from .report import ThresholdGrids, evaluate_frames, write_report
from .shape import ShapeBasis, build_pca_basis, select_components
from .solver import (
    KeypointObservations,
    SolverConfig,
    estimate_pose,
    observations_from_heatmaps,
)
from .synth import NoiseModel, generate_annotation_scenario, generate_pose_scenario

EXIT_OK = 0
EXIT_FRAME_FAILURES = 1
EXIT_INVALID_INPUT = 2


class CliError(Exception):
    """Invalid input; maps to exit code 2."""


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        apply_config_file(parser, args)
        return args.func(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    except formats.FormatError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID_INPUT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kpfit",
        description="6-DoF pose from confidence-weighted 2D keypoints, plus "
        "depth-based annotation refinement.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a seeded synthetic scenario directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=20, help="pose frames to generate")
    p.add_argument("--pixel-sigma", type=float, default=0.0)
    p.add_argument("--outlier-fraction", type=float, default=0.0)
    p.add_argument("--inlier-confidence", type=float, default=0.9)
    p.add_argument("--outlier-confidence", type=float, default=0.05)
    p.add_argument("--keypoints", type=int, default=10, help="keypoints per frame")
    p.add_argument("--modes", type=int, default=2, help="shape modes")
    p.add_argument("--annotation-frames", type=int, default=12)
    p.add_argument("--drift-deg", type=float, default=2.0)
    p.add_argument("--drift-m", type=float, default=0.03)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-basis", help="PCA shape basis from 3D keypoint files")
    p.add_argument("inputs", nargs="+", help="keypoints3d JSON files, one per instance")
    p.add_argument("--out", required=True, help="output basis JSON")
    p.add_argument("--k", type=int, default=None, help="explicit mode count")
    p.add_argument(
        "--variance-target",
        type=float,
        default=0.95,
        help="smallest k explaining more than this variance fraction",
    )
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_build_basis)

    p = sub.add_parser("solve", help="estimate per-frame poses")
    p.add_argument("--basis", required=True)
    p.add_argument("--observations", default=None, help="observations JSON")
    p.add_argument("--heatmaps", default=None, help="directory of .khm stacks")
    p.add_argument("--intrinsics", default=None, help="camera intrinsics JSON")
    p.add_argument("--out", required=True, help="output directory for pose JSONs")
    p.add_argument("--lam", type=float, default=1.0, help="coefficient penalty weight")
    p.add_argument("--gamma", type=float, default=0.0, help="spectral-norm weight for the init")
    p.add_argument("--min-confidence", type=float, default=1e-6)
    p.add_argument("--uniform-weights", action="store_true", help="ignore confidences")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("annotate", help="project/refine 3D keypoints against depth frames")
    p.add_argument("--mesh", required=True, help="surface model PLY")
    p.add_argument("--trajectory", required=True, help="TUM trajectory (fixed-to-camera)")
    p.add_argument("--keypoints", required=True, help="keypoints3d JSON")
    p.add_argument("--depth-dir", required=True, help="directory of .pfm/.pgm depth frames")
    p.add_argument("--intrinsics", required=True)
    p.add_argument(
        "--mode",
        choices=["project", "refine-object", "refine-keypoint"],
        default="refine-object",
    )
    p.add_argument("--out", required=True)
    p.add_argument("--heatmap-sigma", type=float, default=1.0)
    p.add_argument("--no-heatmaps", action="store_true", help="skip KHM training stacks")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("evaluate", help="pose-error metrics and report")
    p.add_argument("--poses", required=True, help="directory of pose JSONs")
    p.add_argument("--gt", required=True, help="ground-truth poses JSON")
    p.add_argument("--model", required=True, help="evaluation surface PLY")
    p.add_argument("--symmetries", default=None, help="symmetry transforms JSON")
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_evaluate)

    return parser


def apply_config_file(parser: argparse.ArgumentParser, args: argparse.Namespace) -> None:
    """Fill in values from --config JSON; explicit CLI flags keep priority.

    Keys use the flag names with dashes or underscores; unknown keys are
    rejected.
    """
    config_path = getattr(args, "config", None)
    if not config_path:
        return
    try:
        with open(config_path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as err:
        raise CliError(f"{config_path}: invalid JSON ({err})")
    if not isinstance(raw, dict):
        raise CliError(f"{config_path}: config must be a JSON object")

    sub_actions = [a for a in parser._actions if isinstance(a, argparse._SubParsersAction)]
    subparser = sub_actions[0].choices[args.command]
    defaults = {
        a.dest: a.default
        for a in subparser._actions
        if a.dest not in ("help", "config", "func")
    }
    for key, value in raw.items():
        dest = key.replace("-", "_")
        if dest not in defaults:
            raise CliError(f"{config_path}: unknown config key {key!r} for {args.command}")
        if getattr(args, dest) == defaults[dest]:
            setattr(args, dest, value)


def _workers(args) -> int:
    if getattr(args, "workers", None):
        return max(1, int(args.workers))
    env = os.environ.get("KPFIT_WORKERS")
    return max(1, int(env)) if env else 1


def _hull_model(points: np.ndarray) -> SurfaceModel:
    """Evaluation surface for a synthetic keypoint object: its convex hull."""
    from scipy.spatial import ConvexHull

    from .raster import compute_vertex_normals

    hull = ConvexHull(points.T)
    triangles = hull.simplices
    return SurfaceModel(points, triangles, compute_vertex_normals(points, triangles))


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    noise = NoiseModel(
        pixel_sigma=args.pixel_sigma,
        outlier_fraction=args.outlier_fraction,
        inlier_confidence=args.inlier_confidence,
        outlier_confidence=args.outlier_confidence,
    )
    scenario = generate_pose_scenario(
        args.seed, args.frames, noise, p=args.keypoints, k=args.modes
    )
    formats.write_basis(out / "basis.json", scenario.basis)
    formats.write_intrinsics(out / "intrinsics.json", scenario.intrinsics)
    formats.write_ply(out / "eval_model.ply", _hull_model(scenario.basis.mean))
    formats.write_observations(
        out / "observations.json",
        scenario.basis.names,
        [
            {"frame_id": f.frame_id, "pixels": f.observed, "confidences": f.confidences}
            for f in scenario.frames
        ],
    )
    formats.write_gt_poses(
        out / "gt_poses.json",
        [
            {"frame_id": f.frame_id, "pose": f.pose, "coefficients": f.coefficients}
            for f in scenario.frames
        ],
    )

    hm_dir = out / "heatmaps"
    hm_dir.mkdir(exist_ok=True)
    k = scenario.intrinsics
    mapping = CropMapping(scale=(2.0, 2.0), offset=(0.0, 0.0))
    hm_h, hm_w = k.height // 2, k.width // 2
    for f in scenario.frames:
        stack = np.zeros((len(scenario.basis.names), hm_h, hm_w), dtype=np.float32)
        for j in range(stack.shape[0]):
            cu, cv = mapping.to_crop(f.observed[0, j], f.observed[1, j])
            hm = synth_heatmap(cu, cv, hm_h, hm_w, sigma=1.0, amplitude=f.confidences[j])
            stack[j] = hm.grid.astype(np.float32)
        formats.write_khm(hm_dir / f"{f.frame_id}.khm", stack, scenario.basis.names, mapping)

    ann = generate_annotation_scenario(
        args.seed, args.annotation_frames, args.drift_deg, args.drift_m
    )
    formats.write_ply(out / "mesh.ply", ann.model)
    formats.write_keypoints3d(out / "keypoints3d.json", ann.keypoints)
    formats.write_intrinsics(out / "annotation_intrinsics.json", ann.intrinsics)
    formats.write_tum(
        out / "trajectory_gt.txt",
        [(float(i), pose) for i, pose in enumerate(ann.gt_poses)],
    )
    formats.write_tum(
        out / "trajectory_drift.txt",
        [(float(i), pose) for i, pose in enumerate(ann.drift_poses)],
    )
    depth_dir = out / "depth"
    depth_dir.mkdir(exist_ok=True)
    for fid, depth in zip(ann.frame_ids, ann.depths):
        formats.write_pfm(depth_dir / f"{fid}.pfm", depth)

    formats.dump_json(
        out / "scenario.json",
        {
            "seed": args.seed,
            "pose_frames": args.frames,
            "noise": {
                "pixel_sigma": noise.pixel_sigma,
                "outlier_fraction": noise.outlier_fraction,
                "inlier_confidence": noise.inlier_confidence,
                "outlier_confidence": noise.outlier_confidence,
            },
            "keypoints": args.keypoints,
            "modes": args.modes,
            "annotation_frames": args.annotation_frames,
            "drift_deg": args.drift_deg,
            "drift_m": args.drift_m,
        },
    )
    print(f"scenario written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# build-basis


def cmd_build_basis(args) -> int:
    instance_files = [formats.read_keypoints3d(p) for p in args.inputs]
    reference = instance_files[0]
    aligned = [reference.points]
    for path, kps in zip(args.inputs[1:], instance_files[1:]):
        if set(kps.names) != set(reference.names):
            raise CliError(f"{path}: keypoint names differ from {args.inputs[0]}")
        order = [kps.names.index(n) for n in reference.names]
        aligned.append(kps.points[:, order])

    if len(aligned) == 1:
        basis = ShapeBasis.rigid(reference.points, reference.names)
    else:
        basis = build_pca_basis(
            aligned, variance_target=args.variance_target, k=args.k, names=reference.names
        )
    formats.write_basis(args.out, basis)

    print(f"basis: {basis.num_points} keypoints, {basis.k} modes")
    if basis.k:
        total = basis.eigenvalues.sum()
        cum = 0.0
        print("mode  eigenvalue  explained  cumulative")
        for i, ev in enumerate(basis.eigenvalues):
            cum += ev
            print(f"{i:4d}  {ev:10.3e}  {ev / total:9.1%}  {cum / total:10.1%}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# solve


def _solve_one(task) -> tuple[str, bool, str]:
    frame_id, obs, basis, k_cam, cfg, out_path = task
    try:
        est = estimate_pose(obs, basis, k_cam, cfg)
        formats.write_pose_estimate(out_path, frame_id, est)
        return frame_id, True, ""
    except Exception as err:  # per-frame isolation; aggregated in exit code
        return frame_id, False, str(err)


def cmd_solve(args) -> int:
    if bool(args.observations) == bool(args.heatmaps):
        raise CliError("exactly one of --observations / --heatmaps is required")
    basis = formats.read_basis(args.basis)
    k_cam = formats.read_intrinsics(args.intrinsics) if args.intrinsics else None
    cfg = SolverConfig(
        lam=args.lam, gamma=args.gamma, min_confidence=args.min_confidence
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    tasks = []
    if args.observations:
        names, frames = formats.read_observations(args.observations)
        if names and tuple(names) != tuple(basis.names):
            raise CliError("observation keypoint names do not match the basis")
        for f in frames:
            obs = f["observations"]
            if args.uniform_weights:
                obs = KeypointObservations(obs.pixels, np.ones_like(obs.confidences))
            tasks.append((f["frame_id"], obs, basis, k_cam, cfg, out / f"{f['frame_id']}.json"))
    else:
        stack_paths = sorted(Path(args.heatmaps).glob("*.khm"))
        if not stack_paths:
            raise CliError(f"no .khm stacks in {args.heatmaps}")
        for path in stack_paths:
            stack, names, mapping = formats.read_khm(path)
            if tuple(names) != tuple(basis.names):
                raise CliError(f"{path}: keypoint names do not match the basis")
            hms = [Heatmap(g, n) for g, n in zip(stack, names)]
            obs = observations_from_heatmaps(hms, mapping)
            if args.uniform_weights:
                obs = KeypointObservations(obs.pixels, np.ones_like(obs.confidences))
            frame_id = path.stem
            tasks.append((frame_id, obs, basis, k_cam, cfg, out / f"{frame_id}.json"))

    results = _run_tasks(_solve_one, tasks, _workers(args))
    failures = [(fid, msg) for fid, ok, msg in results if not ok]
    for fid, msg in failures:
        print(f"frame {fid} failed: {msg}", file=sys.stderr)
    print(f"solved {len(results) - len(failures)}/{len(results)} frames -> {out}")
    return EXIT_FRAME_FAILURES if failures else EXIT_OK


# ---------------------------------------------------------------------------
# annotate


def _annotate_one(task) -> tuple[str, bool, str]:
    (frame_id, depth_path, pose, model, kps, mode, cfg, out_dir, k_cam,
     heatmap_sigma, write_heatmaps) = task
    try:
        depth = formats.read_depth(depth_path)
        frame = AnnotationFrame(depth, pose, k_cam, frame_id)
        ann = annotate_frame(frame, model, kps, mode, cfg)
        formats.write_annotation(Path(out_dir) / f"{frame_id}.json", ann)
        if write_heatmaps:
            stack = np.zeros((len(ann.keypoints), k_cam.height, k_cam.width), dtype=np.float32)
            for j, kp in enumerate(ann.keypoints):
                if np.isfinite(kp.u) and np.isfinite(kp.v):
                    hm = synth_heatmap(kp.u, kp.v, k_cam.height, k_cam.width, sigma=heatmap_sigma)
                    stack[j] = hm.grid.astype(np.float32)
            formats.write_khm(
                Path(out_dir) / f"{frame_id}.khm",
                stack,
                [kp.name for kp in ann.keypoints],
            )
        return frame_id, True, ""
    except Exception as err:
        return frame_id, False, str(err)


def cmd_annotate(args) -> int:
    model = formats.read_ply(args.mesh)
    kps = formats.read_keypoints3d(args.keypoints)
    k_cam = formats.read_intrinsics(args.intrinsics)
    trajectory = formats.read_tum(args.trajectory)
    depth_paths = sorted(
        p for p in Path(args.depth_dir).iterdir() if p.suffix.lower() in (".pfm", ".pgm")
    )
    if len(depth_paths) != len(trajectory):
        raise CliError(
            f"{len(trajectory)} trajectory poses but {len(depth_paths)} depth frames"
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = AnnotationConfig()

    tasks = [
        (
            path.stem,
            str(path),
            pose,
            model,
            kps,
            args.mode,
            cfg,
            str(out),
            k_cam,
            args.heatmap_sigma,
            not args.no_heatmaps,
        )
        for (ts, pose), path in zip(trajectory, depth_paths)
    ]
    results = _run_tasks(_annotate_one, tasks, _workers(args))
    failures = [(fid, msg) for fid, ok, msg in results if not ok]
    for fid, msg in failures:
        print(f"frame {fid} skipped: {msg}", file=sys.stderr)
    print(f"annotated {len(results) - len(failures)}/{len(results)} frames -> {out}")
    if failures and len(failures) == len(results):
        return EXIT_FRAME_FAILURES
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate


def cmd_evaluate(args) -> int:
    gt = formats.read_gt_poses(args.gt)
    model = formats.read_ply(args.model)
    k_cam = formats.read_intrinsics(args.intrinsics)
    sym = formats.read_symmetries(args.symmetries) if args.symmetries else SymmetrySet()
    pose_paths = sorted(Path(args.poses).glob("*.json"))
    if not pose_paths:
        raise CliError(f"no pose JSONs in {args.poses}")

    frames = []
    for path in pose_paths:
        est = formats.read_pose_estimate(path)
        fid = est["frame_id"]
        if fid not in gt:
            raise CliError(f"{path}: frame id {fid!r} not present in {args.gt}")
        frames.append(
            {
                "frame_id": fid,
                "est_rotation": est["rotation"],
                "est_translation": est["translation"],
                "gt_pose": gt[fid]["pose"],
            }
        )
    frames.sort(key=lambda f: f["frame_id"])

    points = subsample_points(model.vertices)
    summary = write_report(
        args.out,
        evaluate_frames(frames, points, sym, k_cam),
        diameter=model.diameter(),
        image_width=k_cam.width,
        grids=ThresholdGrids(),
        plots=not args.no_plots,
    )
    med_rot = summary["median_rotation_deg"]
    print(
        f"evaluated {summary['n_frames']} frames: median rotation "
        f"{med_rot:.3f} deg" if med_rot is not None else "no frames evaluated"
    )
    if summary["ar_mssd"] is not None:
        print(f"AR(mssd) = {summary['ar_mssd']:.4f}  AR(mspd) = {summary['ar_mspd']:.4f}")
    return EXIT_OK


def _run_tasks(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


if __name__ == "__main__":
    sys.exit(main())
