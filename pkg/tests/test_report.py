"""Report assembly: per-frame metrics, summaries, CSV cells, figures."""

import json
import math

import numpy as np
import pytest

from kpfit.geometry import CameraIntrinsics, RigidTransform, so3_exp
from kpfit.metrics import SymmetrySet
from kpfit.report import (
    FrameMetrics,
    ThresholdGrids,
    evaluate_frames,
    summarize,
    write_csv,
    write_report,
)

K = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


def _model_points(rng):
    return rng.uniform(-0.1, 0.1, size=(3, 30))


class TestEvaluateFrames:
    def test_exact_pose_rows_are_zero(self, rng):
        gt = RigidTransform(np.eye(3), [0, 0, 1.5])
        rows = evaluate_frames(
            [{"frame_id": "f0", "est_rotation": np.eye(3), "est_translation": gt.translation, "gt_pose": gt}],
            _model_points(rng),
            SymmetrySet(),
            K,
        )
        r = rows[0]
        assert r.rotation_deg == pytest.approx(0.0, abs=1e-9)
        assert r.translation_m == 0.0
        assert r.mssd_m == 0.0
        assert r.mspd_px == 0.0

    def test_rotation_only_when_no_translation(self, rng):
        gt = RigidTransform(np.eye(3), [0, 0, 1.5])
        est_rot = so3_exp([0, math.radians(5.0), 0])
        rows = evaluate_frames(
            [{"frame_id": "f0", "est_rotation": est_rot, "gt_pose": gt}],
            _model_points(rng),
            SymmetrySet(),
            K,
        )
        assert rows[0].rotation_deg == pytest.approx(5.0, abs=1e-9)
        assert np.isnan(rows[0].translation_m)
        assert np.isnan(rows[0].mssd_m)

    def test_behind_camera_estimate_gives_infinite_mspd(self, rng):
        gt = RigidTransform(np.eye(3), [0, 0, 1.5])
        rows = evaluate_frames(
            [
                {
                    "frame_id": "f0",
                    "est_rotation": np.eye(3),
                    "est_translation": np.array([0.0, 0.0, -1.5]),
                    "gt_pose": gt,
                }
            ],
            _model_points(rng),
            SymmetrySet(),
            K,
        )
        assert np.isinf(rows[0].mspd_px)
        assert np.isfinite(rows[0].mssd_m)


class TestSummarize:
    def test_medians_and_ar(self):
        rows = [
            FrameMetrics("a", 1.0, 0.01, 0.01, 2.0),
            FrameMetrics("b", 3.0, 0.02, 0.02, 4.0),
            FrameMetrics("c", 5.0, 0.03, 0.50, 100.0),
        ]
        summary = summarize(rows, diameter=1.0, image_width=640)
        assert summary["median_rotation_deg"] == 3.0
        assert summary["median_mssd_m"] == 0.02
        # mssd thresholds 0.05..0.5 of diameter 1.0; errors 0.01/0.02 pass
        # all 10, 0.5 passes only the last -> (10+10+1)/30
        assert summary["ar_mssd"] == pytest.approx(21 / 30)

    def test_infinite_errors_count_as_misses(self):
        rows = [FrameMetrics("a", 1.0, 0.0, 0.0, np.inf), FrameMetrics("b", 1.0, 0.0, 0.0, 0.0)]
        summary = summarize(rows, diameter=1.0, image_width=640)
        assert summary["ar_mspd"] == pytest.approx(0.5)
        assert summary["median_mspd_px"] == 0.0  # median over finite values

    def test_all_nan_leaves_ar_none(self):
        rows = [FrameMetrics("a", 1.0)]
        summary = summarize(rows, diameter=1.0, image_width=640)
        assert summary["ar_mssd"] is None
        assert summary["median_translation_m"] is None

    def test_threshold_grids_scale(self):
        grids = ThresholdGrids()
        assert grids.mssd_thresholds(2.0)[0] == pytest.approx(0.1)
        assert grids.mspd_thresholds(1280)[0] == pytest.approx(10.0)


class TestOutputs:
    def test_csv_cells(self, tmp_path):
        rows = [FrameMetrics("a", 1.5, np.nan, np.inf, 2.0)]
        write_csv(tmp_path / "m.csv", rows)
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert lines[0] == "frame_id,rotation_deg,translation_m,mssd_m,mspd_px"
        assert lines[1] == "a,1.5,,inf,2.0"

    def test_write_report_files(self, tmp_path):
        rows = [FrameMetrics(f"f{i}", float(i), 0.01 * i, 0.002 * i, 1.0 * i) for i in range(8)]
        summary = write_report(tmp_path, rows, diameter=0.5, image_width=640)
        assert (tmp_path / "metrics.csv").exists()
        assert (tmp_path / "summary.json").exists()
        assert (tmp_path / "error_histograms.png").exists()
        assert (tmp_path / "recall_curves.png").exists()
        on_disk = json.loads((tmp_path / "summary.json").read_text())
        assert on_disk["n_frames"] == summary["n_frames"] == 8

    def test_plots_disabled(self, tmp_path):
        rows = [FrameMetrics("f", 1.0, 0.1, 0.1, 1.0)]
        write_report(tmp_path, rows, diameter=0.5, image_width=640, plots=False)
        assert not (tmp_path / "error_histograms.png").exists()
