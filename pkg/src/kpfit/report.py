"""Evaluation reports: per-frame CSV, summary JSON, and rendered figures.

The CSV carries one row per frame (rotation in degrees, translation in
meters, MSSD in meters, MSPD in pixels); the summary holds medians, average
recall under the configured threshold grids, and the grids themselves.
Figures (error histograms and recall curves) are rendered to PNG next to
the CSV unless disabled.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .formats import atomic_write_bytes, atomic_write_text, dump_json
from .geometry import BehindCameraError, CameraIntrinsics, RigidTransform
from .metrics import (
    SymmetrySet,
    mspd,
    mssd,
    recall_at_thresholds,
    rotation_geodesic,
    translation_error,
)

CSV_HEADER = "frame_id,rotation_deg,translation_m,mssd_m,mspd_px"


@dataclass
class FrameMetrics:
    frame_id: str
    rotation_deg: float
    translation_m: float = np.nan
    mssd_m: float = np.nan
    mspd_px: float = np.nan


@dataclass(frozen=True)
class ThresholdGrids:
    """AR threshold grids; the benchmark-inherited defaults are conventional,
    not authoritative, and fully configurable."""

    mssd_fractions: tuple = tuple(np.arange(0.05, 0.51, 0.05).round(2))
    mspd_pixels: tuple = tuple(float(x) for x in range(5, 51, 5))

    def mssd_thresholds(self, diameter: float) -> list[float]:
        return [f * diameter for f in self.mssd_fractions]

    def mspd_thresholds(self, image_width: int) -> list[float]:
        return [p * image_width / 640.0 for p in self.mspd_pixels]


def evaluate_frames(
    frames: list[dict],
    model_points: np.ndarray,
    sym: SymmetrySet,
    k: Optional[CameraIntrinsics],
) -> list[FrameMetrics]:
    """frames: [{"frame_id", "est_rotation", "est_translation" (opt),
    "gt_pose": RigidTransform}] -> per-frame metric rows."""
    rows = []
    for f in frames:
        gt_pose = f["gt_pose"]
        rot_deg = float(np.degrees(rotation_geodesic(f["est_rotation"], gt_pose.rotation)))
        row = FrameMetrics(f["frame_id"], rot_deg)
        if f.get("est_translation") is not None:
            est_pose = RigidTransform(f["est_rotation"], f["est_translation"])
            row.translation_m = translation_error(est_pose.translation, gt_pose.translation)
            row.mssd_m = mssd(est_pose, gt_pose, model_points, sym)
            if k is not None:
                try:
                    row.mspd_px = mspd(est_pose, gt_pose, model_points, sym, k)
                except BehindCameraError:
                    # the estimate projects outside the view frustum: an
                    # unbounded projection error, counted as a miss
                    row.mspd_px = np.inf
        rows.append(row)
    return rows


def summarize(
    rows: list[FrameMetrics],
    diameter: float,
    image_width: int,
    grids: ThresholdGrids = ThresholdGrids(),
) -> dict:
    rot = np.array([r.rotation_deg for r in rows])
    trans = np.array([r.translation_m for r in rows])
    mssd_v = np.array([r.mssd_m for r in rows])
    mspd_v = np.array([r.mspd_px for r in rows])
    summary = {
        "n_frames": len(rows),
        "median_rotation_deg": _nanmedian(rot),
        "median_translation_m": _nanmedian(trans),
        "median_mssd_m": _nanmedian(mssd_v),
        "median_mspd_px": _nanmedian(mspd_v),
        "ar_mssd": None,
        "ar_mspd": None,
        "thresholds": {
            "mssd_m": grids.mssd_thresholds(diameter),
            "mspd_px": grids.mspd_thresholds(image_width),
        },
    }
    # AR counts infinite errors (e.g. behind-camera projections) as misses;
    # NaN marks frames where the metric was never computed.
    if (~np.isnan(mssd_v)).any():
        summary["ar_mssd"] = recall_at_thresholds(
            mssd_v[~np.isnan(mssd_v)], summary["thresholds"]["mssd_m"]
        )
    if (~np.isnan(mspd_v)).any():
        summary["ar_mspd"] = recall_at_thresholds(
            mspd_v[~np.isnan(mspd_v)], summary["thresholds"]["mspd_px"]
        )
    return summary


def _nanmedian(values: np.ndarray) -> Optional[float]:
    finite = values[np.isfinite(values)]
    return float(np.median(finite)) if finite.size else None


def write_csv(path, rows: list[FrameMetrics]) -> None:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(
            f"{r.frame_id},{_cell(r.rotation_deg)},{_cell(r.translation_m)},"
            f"{_cell(r.mssd_m)},{_cell(r.mspd_px)}"
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def _cell(x: float) -> str:
    x = float(x)
    if np.isnan(x):
        return ""  # metric not computed for this frame
    if np.isinf(x):
        return "inf"
    return repr(x)


def write_report(
    out_dir,
    rows: list[FrameMetrics],
    diameter: float,
    image_width: int,
    grids: ThresholdGrids = ThresholdGrids(),
    plots: bool = True,
) -> dict:
    """Write metrics.csv, summary.json, and (optionally) figures; returns
    the summary dict."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "metrics.csv", rows)
    summary = summarize(rows, diameter, image_width, grids)
    dump_json(out_dir / "summary.json", summary)
    if plots:
        render_figures(out_dir, rows, summary)
    return summary


def render_figures(out_dir, rows: list[FrameMetrics], summary: dict) -> list[Path]:
    """Render error histograms and recall curves as PNGs next to the CSV."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    written = []

    rot = np.array([r.rotation_deg for r in rows])
    trans = np.array([r.translation_m for r in rows])
    mssd_v = np.array([r.mssd_m for r in rows])
    mspd_v = np.array([r.mspd_px for r in rows])

    fig, axes = plt.subplots(2, 2, figsize=(9, 7))
    panels = [
        (axes[0, 0], rot, "rotation error [deg]"),
        (axes[0, 1], trans, "translation error [m]"),
        (axes[1, 0], mssd_v, "MSSD [m]"),
        (axes[1, 1], mspd_v, "MSPD [px]"),
    ]
    for ax, values, label in panels:
        finite = values[np.isfinite(values)]
        if finite.size:
            ax.hist(finite, bins=min(20, max(5, finite.size // 3)), color="#4878cf")
            ax.axvline(np.median(finite), color="k", linestyle="--", linewidth=1)
        ax.set_xlabel(label)
        ax.set_ylabel("frames")
    fig.tight_layout()
    path = out_dir / "error_histograms.png"
    _save_png(fig, path)
    plt.close(fig)
    written.append(path)

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, values, thresholds, label in [
        (axes[0], mssd_v, summary["thresholds"]["mssd_m"], "MSSD threshold [m]"),
        (axes[1], mspd_v, summary["thresholds"]["mspd_px"], "MSPD threshold [px]"),
    ]:
        finite = values[np.isfinite(values)]
        if finite.size:
            recalls = [float((finite <= t).mean()) for t in thresholds]
            ax.plot(thresholds, recalls, marker="o", color="#4878cf")
            ax.set_ylim(-0.05, 1.05)
        ax.set_xlabel(label)
        ax.set_ylabel("recall")
    fig.tight_layout()
    path = out_dir / "recall_curves.png"
    _save_png(fig, path)
    plt.close(fig)
    written.append(path)
    return written


def _save_png(fig, path: Path) -> None:
    # route through a buffer + atomic rename; strip metadata so repeated
    # runs are byte-identical
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=110, metadata={"Software": None})
    atomic_write_bytes(path, buf.getvalue())
