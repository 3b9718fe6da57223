"""Averaged non-local-means denoiser with a symmetric doubly stochastic filter.

The filter matrix ``W`` comes from NLM affinities of a guide image, balanced
by symmetric Sinkhorn scaling; the denoiser is ``D = (1 - theta) I + theta W``.
Because ``W`` is symmetric and doubly stochastic its spectral norm is 1, so
``D`` is linear and theta-averaged.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from hsinpaint import kernels
from hsinpaint.errors import ShapeMismatchError

SYM_TOL = 1e-8
SUM_TOL = 1e-6
NORM_TOL = 1e-6


@dataclass(frozen=True)
class NlmConfig:
    patch_radius: int = 1
    search_radius: int = 2
    h: float = 1.0
    theta: float = 0.5

    def __post_init__(self):
        if self.patch_radius < 0 or self.search_radius < 0:
            raise ValueError("patch_radius and search_radius must be >= 0")
        if not self.h > 0:
            raise ValueError(f"bandwidth h must be > 0, got {self.h}")
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must lie strictly inside (0, 1), got {self.theta}")

    def to_dict(self):
        return asdict(self)


def _as_guide(guide, grid):
    g = np.asarray(guide, dtype=np.float64)
    if grid is not None:
        rows, cols = grid
        if g.size % (rows * cols):
            raise ShapeMismatchError(f"guide of size {g.size} does not fit a {rows}x{cols} grid")
        g = g.reshape(-1, rows, cols)
    elif g.ndim == 2:
        g = g[None]
    elif g.ndim != 3:
        raise ValueError("guide must be (rows, cols), (channels, rows, cols) or flat with grid=")
    return g


def nlm_weights(guide, config: NlmConfig, grid=None) -> np.ndarray:
    """Raw affinities ``exp(-||p_i - p_j||^2 / h^2)`` between pixels within the search window.

    ``guide`` is a (rows, cols) image, a (channels, rows, cols) stack, or a flat
    vector together with ``grid=(rows, cols)``. Patches are squares of radius
    ``patch_radius`` with symmetric edge padding; the distance sums over
    channels. Pixel order is row-major. Entries outside the window are 0.
    """
    if not config.h > 0:
        raise ValueError("bandwidth h must be > 0")
    g = _as_guide(guide, grid)
    return kernels.nlm_affinity(g, int(config.patch_radius), int(config.search_radius), float(config.h))


def sinkhorn_symmetrize(w, iters=50, tol=1e-8, full_output=False):
    """Symmetric doubly stochastic scaling ``diag(d) W diag(d)`` followed by ``(W + W^T)/2``.

    Uses the damped fixed point ``d <- sqrt(d / (W d))``. Non-convergence within
    ``iters`` is reported with a warning; the residual (max deviation of a row
    or column sum from 1) is returned when ``full_output`` is set.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError("sinkhorn_symmetrize needs a square matrix")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    if np.any(np.diag(w) <= 0):
        raise ValueError("weights need a strictly positive diagonal")
    d = np.ones(w.shape[0])
    residual = np.inf
    for _ in range(iters):
        d = np.sqrt(d / (w @ d))
        residual = float(np.max(np.abs(d * (w @ d) - 1.0)))
        if residual <= tol:
            break
    out = d[:, None] * w * d[None, :]
    out = 0.5 * (out + out.T)
    residual = float(max(np.max(np.abs(out.sum(axis=0) - 1.0)), np.max(np.abs(out.sum(axis=1) - 1.0))))
    if residual > tol:
        warnings.warn(f"Sinkhorn scaling stopped at residual {residual:.3g} > {tol:g}",
                      RuntimeWarning, stacklevel=2)
    return (out, residual) if full_output else out


@dataclass(frozen=True, eq=False)
class AveragedDenoiser:
    """Linear map ``v -> (1 - theta) v + theta W v`` acting along the first axis of ``v``.

    The constructor does not check the weights (so deliberately broken
    operators can be built for certification tests); use :meth:`check` or
    :func:`build_averaged_nlm` for a validated instance.
    """

    weights: np.ndarray
    theta: float = 0.5

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError("weights must be a square matrix")
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def identity(cls, n: int, theta: float = 0.5) -> "AveragedDenoiser":
        return cls(np.eye(n), theta)

    def apply(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape[0] != self.dim:
            raise ShapeMismatchError(f"signal length {v.shape[0]} does not match denoiser size {self.dim}")
        return (1.0 - self.theta) * v + self.theta * (self.weights @ v)

    __call__ = apply

    def apply_adjoint(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape[0] != self.dim:
            raise ShapeMismatchError(f"signal length {v.shape[0]} does not match denoiser size {self.dim}")
        return (1.0 - self.theta) * v + self.theta * (self.weights.T @ v)

    def matrix(self) -> np.ndarray:
        return (1.0 - self.theta) * np.eye(self.dim) + self.theta * self.weights

    def scaled(self, factor: float) -> "AveragedDenoiser":
        """Same theta with the filter matrix multiplied by ``factor``."""
        return AveragedDenoiser(self.weights * factor, self.theta)

    def check(self) -> list[str]:
        """Violated structural invariants of ``W`` (empty list when valid)."""
        w = self.weights
        problems = []
        if not 0.0 < self.theta < 1.0:
            problems.append(f"theta {self.theta} outside (0, 1)")
        if not np.all(np.isfinite(w)):
            problems.append("non-finite weights")
            return problems
        if np.max(np.abs(w - w.T)) >= SYM_TOL:
            problems.append("weights not symmetric")
        if np.min(w) < 0:
            problems.append("negative weights")
        if max(np.max(np.abs(w.sum(0) - 1)), np.max(np.abs(w.sum(1) - 1))) > SUM_TOL:
            problems.append("row/column sums differ from 1")
        return problems


def build_averaged_nlm(guide, config: NlmConfig, grid=None) -> AveragedDenoiser:
    """NLM affinities of ``guide`` -> Sinkhorn -> validated :class:`AveragedDenoiser`."""
    w = sinkhorn_symmetrize(nlm_weights(guide, config, grid))
    d = AveragedDenoiser(w, config.theta)
    problems = d.check()
    if problems:
        raise ValueError("averaged NLM construction failed: " + "; ".join(problems))
    return d


def apply_denoiser(d: AveragedDenoiser, v):
    return d.apply(v)


def _power_norm(op, dim, iters, rng, tol=1e-12):
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iters):
        w = op.apply_adjoint(op.apply(v))
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0, v
        new = float(np.sqrt(nw))
        v = w / nw
        if abs(new - sigma) <= tol * max(new, 1.0):
            sigma = new
            break
        sigma = new
    return float(np.linalg.norm(op.apply(v))), v


DENSE_NORM_MAX_DIM = 2048


def _spectral_norm(op, dim, iters, rng):
    """Top singular value and right singular vector; dense SVD when the operator is small."""
    if dim <= DENSE_NORM_MAX_DIM and hasattr(op, "matrix"):
        _, s, vt = np.linalg.svd(op.matrix())
        return float(s[0]), vt[0]
    return _power_norm(op, dim, iters, rng)


def certify_nonexpansive(d, trials=100, seed=0, power_iters=500) -> dict:
    """Empirical and spectral non-expansiveness check of a linear operator.

    ``max_ratio`` is the largest ``||D(a) - D(b)|| / ||a - b||`` over ``trials``
    random pairs plus one pair aligned with the power-iteration vector;
    ``spectral_norm`` is exact for small operators that expose ``matrix()``
    and comes from power iteration on ``D^T D`` otherwise. The operator
    passes when both are <= 1 + 1e-6.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    dim = d.dim
    sigma, top = _spectral_norm(d, dim, power_iters, rng)
    ratios = []
    for _ in range(trials):
        a, b = rng.standard_normal(dim), rng.standard_normal(dim)
        ratios.append(np.linalg.norm(d.apply(a) - d.apply(b)) / np.linalg.norm(a - b))
    a = rng.standard_normal(dim)
    ratios.append(np.linalg.norm(d.apply(a + top) - d.apply(a)) / np.linalg.norm(top))
    max_ratio = float(max(ratios))
    return {
        "max_ratio": max_ratio,
        "spectral_norm": sigma,
        "theta": float(getattr(d, "theta", float("nan"))),
        "pass": bool(max_ratio <= 1 + NORM_TOL and sigma <= 1 + NORM_TOL),
    }


def averagedness_gap(d, x, y) -> float:
    """``||x-y||^2 - ((1-theta)/theta)||(I-D)x - (I-D)y||^2 - ||Dx - Dy||^2``; >= 0 for theta-averaged D."""
    dx, dy = d.apply(x), d.apply(y)
    diff = np.asarray(x) - np.asarray(y)
    resid = diff - (dx - dy)
    return float(np.sum(diff ** 2) - (1 - d.theta) / d.theta * np.sum(resid ** 2) - np.sum((dx - dy) ** 2))
