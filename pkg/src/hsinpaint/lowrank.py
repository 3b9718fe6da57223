"""Singular value thresholding on the pixels x bands unfolding."""

from __future__ import annotations

import numpy as np

from hsinpaint.cube import HsiCube


def _svd(a):
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise np.linalg.LinAlgError("SVD of a matrix with non-finite entries")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    # deterministic signs: largest-magnitude entry of each left vector is non-negative
    idx = np.argmax(np.abs(u), axis=0)
    sign = np.where(u[idx, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    return u * sign, s, vt * sign[:, None]


def svt(a, tau: float) -> np.ndarray:
    """``U max(S - tau, 0) V^T``: the proximal map of ``tau * ||.||_*``."""
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    u, s, vt = _svd(a)
    s = np.maximum(s - tau, 0.0)
    keep = s > 0
    return (u[:, keep] * s[keep]) @ vt[keep]


def svt_cube(cube: HsiCube, tau: float) -> HsiCube:
    """SVT applied to the (rows*cols, bands) unfolding, refolded to a cube."""
    return HsiCube.from_unfolded(svt(cube.unfold(), tau), cube.rows, cube.cols, cube.value_range)


def nuclear_norm(a) -> float:
    return float(np.sum(np.linalg.svd(np.asarray(a, dtype=np.float64), compute_uv=False)))
