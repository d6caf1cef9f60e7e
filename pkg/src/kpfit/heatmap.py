"""Keypoint heatmap synthesis and peak extraction.

This fixes the data contract between any keypoint detector and the pose
solver: one nonnegative H x W grid per keypoint, where the peak location is
the detection and the peak value its confidence.  Ground-truth maps are
isotropic Gaussians (sigma defaults to one pixel).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Heatmap:
    """Single-keypoint response grid; grid[v, u] indexes row v, column u."""

    grid: np.ndarray
    keypoint_name: str = ""

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        if grid.ndim != 2 or grid.shape[0] < 1 or grid.shape[1] < 1:
            raise ValueError("heatmap grid must be a nonempty 2-D array")
        if not np.all(np.isfinite(grid)):
            raise ValueError("heatmap grid must be finite")
        object.__setattr__(self, "grid", grid)


@dataclass(frozen=True)
class CropMapping:
    """Affine map from heatmap coordinates to full-image pixels.

    full = scale * crop + offset, elementwise over (u, v).
    """

    scale: tuple[float, float] = (1.0, 1.0)
    offset: tuple[float, float] = (0.0, 0.0)

    def to_full(self, u: float, v: float) -> tuple[float, float]:
        return (
            self.scale[0] * u + self.offset[0],
            self.scale[1] * v + self.offset[1],
        )

    def to_crop(self, u: float, v: float) -> tuple[float, float]:
        return (
            (u - self.offset[0]) / self.scale[0],
            (v - self.offset[1]) / self.scale[1],
        )


@dataclass(frozen=True)
class PeakDetection:
    u: float
    v: float
    confidence: float


def synth_heatmap(
    u: float,
    v: float,
    height: int,
    width: int,
    sigma: float = 1.0,
    amplitude: float = 1.0,
    keypoint_name: str = "",
) -> Heatmap:
    """Gaussian bump centered at subpixel (u, v); off-image centers leave tails."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    xs = np.arange(width, dtype=float)
    ys = np.arange(height, dtype=float)
    gx = np.exp(-((xs - u) ** 2) / (2.0 * sigma**2))
    gy = np.exp(-((ys - v) ** 2) / (2.0 * sigma**2))
    return Heatmap(amplitude * np.outer(gy, gx), keypoint_name)


def extract_peak(hm: Heatmap, subpixel: bool = False) -> PeakDetection:
    """Argmax location and value; row-major first occurrence breaks ties.

    With ``subpixel`` a one-dimensional quadratic is fit through the peak and
    its axis neighbors (off by default; the integer argmax is the contract).
    """
    grid = hm.grid
    flat_idx = int(np.argmax(grid))
    v, u = divmod(flat_idx, grid.shape[1])
    conf = float(grid[v, u])
    if not subpixel:
        return PeakDetection(float(u), float(v), conf)

    uu, vv = float(u), float(v)
    if 0 < u < grid.shape[1] - 1:
        uu += _parabola_offset(grid[v, u - 1], grid[v, u], grid[v, u + 1])
    if 0 < v < grid.shape[0] - 1:
        vv += _parabola_offset(grid[v - 1, u], grid[v, u], grid[v + 1, u])
    return PeakDetection(uu, vv, conf)


def _parabola_offset(left: float, center: float, right: float) -> float:
    denom = left - 2.0 * center + right
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))
