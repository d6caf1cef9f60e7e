"""Deformable keypoint shape model: a mean shape plus linear PCA modes.

A shape with coefficients c evaluates to  mean + sum_i c_i * modes[i].
Instance-level fitting (known rigid model) is the degenerate k = 0 basis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ShapeBasis:
    """Mean keypoint shape with k orthonormal deformation modes.

    mean: (3, p) meters. modes: (k, 3, p), mutually orthonormal under the
    vectorized inner product. eigenvalues: per-mode sample variance of the
    training set, sorted descending. names: p keypoint labels.
    """

    mean: np.ndarray
    modes: np.ndarray
    eigenvalues: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        modes = np.asarray(self.modes, dtype=float).reshape(-1, *mean.shape)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "eigenvalues", np.asarray(self.eigenvalues, dtype=float))
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) != mean.shape[1]:
            raise ValueError("one name per keypoint required")
        if self.eigenvalues.shape != (modes.shape[0],):
            raise ValueError("one eigenvalue per mode required")

    @property
    def k(self) -> int:
        return self.modes.shape[0]

    @property
    def num_points(self) -> int:
        return self.mean.shape[1]

    @staticmethod
    def rigid(points: np.ndarray, names) -> "ShapeBasis":
        """Degenerate k = 0 basis for a single known model."""
        points = np.asarray(points, dtype=float)
        return ShapeBasis(points, np.zeros((0, *points.shape)), np.zeros(0), tuple(names))

    def scaled_by_stdev(self) -> "ShapeBasis":
        """Basis with modes premultiplied by sqrt(eigenvalue).

        Coefficients of the returned basis are in units of training-set
        standard deviations, which makes a unit Tikhonov weight on them a
        natural prior.
        """
        scale = np.sqrt(np.maximum(self.eigenvalues, 0.0))
        return ShapeBasis(
            self.mean,
            self.modes * scale[:, None, None],
            np.ones_like(self.eigenvalues),
            self.names,
        )


def instantiate(basis: ShapeBasis, c: np.ndarray) -> np.ndarray:
    """Evaluate the shape model at coefficients ``c`` -> (3, p) points."""
    c = np.asarray(c, dtype=float).reshape(-1)
    if c.shape[0] != basis.k:
        raise ValueError(f"expected {basis.k} coefficients, got {c.shape[0]}")
    if basis.k == 0:
        return basis.mean.copy()
    return basis.mean + np.tensordot(c, basis.modes, axes=1)


def select_components(eigenvalues: np.ndarray, threshold: float) -> int:
    """Smallest k whose eigenvalues explain more than ``threshold`` of variance."""
    eigenvalues = np.asarray(eigenvalues, dtype=float)
    total = eigenvalues.sum()
    if total <= 0:
        return 0
    fractions = np.cumsum(eigenvalues) / total
    k = int(np.searchsorted(fractions, threshold, side="right")) + 1
    return min(k, eigenvalues.size)


def build_pca_basis(
    instances,
    variance_target: float = 0.95,
    k: int | None = None,
    names=None,
) -> ShapeBasis:
    """PCA basis from aligned (3, p) keypoint sets sharing keypoint order.

    Shapes are vectorized, mean-centered, and decomposed by SVD.  The mode
    count is the explicit ``k`` when given, otherwise the smallest count
    explaining more than ``variance_target`` of the variance.  Mode signs are
    fixed so each mode's largest-magnitude entry is positive, making the
    basis deterministic and independent of instance ordering.
    """
    instances = [np.asarray(x, dtype=float) for x in instances]
    if len(instances) < 2:
        raise ValueError("need at least 2 instances for PCA")
    shape = instances[0].shape
    if shape[0] != 3:
        raise ValueError("instances must be (3, p) arrays")
    for i, x in enumerate(instances):
        if x.shape != shape:
            raise ValueError(f"instance {i} has shape {x.shape}, expected {shape}")
    p = shape[1]
    if names is None:
        names = tuple(f"kp{i}" for i in range(p))
    names = tuple(names)

    n = len(instances)
    data = np.stack([x.reshape(-1) for x in instances])  # (n, 3p)
    mean_vec = data.mean(axis=0)
    centered = data - mean_vec

    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    variances = svals**2 / (n - 1)
    # Treat numerically-zero variance as absent so identical shapes give k=0.
    floor = 1e-12 * max(float(variances[0]) if variances.size else 0.0, 1e-300)
    effective = np.where(variances > floor, variances, 0.0)

    max_rank = min(n - 1, 3 * p)
    if k is not None:
        if k > max_rank:
            raise ValueError(f"requested k={k} exceeds max rank {max_rank} for {n} instances")
        n_modes = k
    else:
        n_modes = select_components(effective, variance_target)

    modes = vt[:n_modes].reshape(n_modes, 3, p)
    eigenvalues = variances[:n_modes].copy()

    for j in range(n_modes):
        flat = modes[j].reshape(-1)
        lead = flat[int(np.argmax(np.abs(flat)))]
        if lead < 0:
            modes[j] = -modes[j]

    return ShapeBasis(mean_vec.reshape(3, p), modes, eigenvalues, names)


def project_coefficients(basis: ShapeBasis, points: np.ndarray) -> np.ndarray:
    """Coefficients of the orthogonal projection of ``points`` onto the modes."""
    delta = (np.asarray(points, dtype=float) - basis.mean).reshape(-1)
    if basis.k == 0:
        return np.zeros(0)
    return basis.modes.reshape(basis.k, -1) @ delta
