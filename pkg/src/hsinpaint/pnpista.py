"""Plug-and-play ISTA: ``alpha <- D(alpha - eta * grad f(alpha))``.

``f(alpha) = (mu1/2)||z - Phi alpha||^2``; the step ``eta`` defaults to
``1/beta`` with ``beta = mu1 * sigma_max(Phi)^2`` so the gradient map is
non-expansive for any dictionary scaling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from hsinpaint.dictionary import as_matrix
from hsinpaint.errors import NumericalAbort, ShapeMismatchError

log = logging.getLogger(__name__)

BURN_IN = 5


@dataclass(frozen=True)
class PnpIstaConfig:
    max_iters: int = 50
    eta: float | None = None
    tol: float = 1e-6

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.eta is not None and not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")

    @classmethod
    def for_dictionary(cls, phi, mu1=1.0, **kw) -> "PnpIstaConfig":
        cfg = cls(**kw)
        if cfg.eta is not None and cfg.eta * beta_smoothness(phi, mu1) > 1.0 + 1e-9:
            raise ValueError("eta * beta must be <= 1")
        return cfg


def grad_f(phi, z, alpha, mu1=1.0):
    """``mu1 * Phi^T (Phi alpha - z)``."""
    mat = as_matrix(phi)
    z = np.asarray(z, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if z.shape[0] != mat.shape[0] or alpha.shape[0] != mat.shape[1]:
        raise ShapeMismatchError(
            f"dictionary {mat.shape} incompatible with z {z.shape} and alpha {alpha.shape}")
    return mu1 * (mat.T @ (mat @ alpha - z))


def beta_smoothness(phi, mu1=1.0, iters=1000, seed=0, tol=1e-14) -> float:
    """``mu1 * sigma_max(Phi)^2`` by power iteration on ``Phi^T Phi``."""
    mat = as_matrix(phi)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(mat.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = mat.T @ (mat @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        new = float(v @ w)
        v = w / nw
        if abs(new - lam) <= tol * max(new, 1e-300):
            lam = new
            break
        lam = new
    return mu1 * float(v @ (mat.T @ (mat @ v)))


def strong_convexity(phi, mu1=1.0) -> float:
    """``mu1 * sigma_min(Phi)^2`` if Phi has full column rank, else 0."""
    mat = as_matrix(phi)
    if mat.shape[1] > mat.shape[0]:
        return 0.0
    s = np.linalg.svd(mat, compute_uv=False)
    if s[-1] <= s[0] * max(mat.shape) * np.finfo(float).eps:
        return 0.0
    return mu1 * float(s[-1] ** 2)


def _apply(denoiser, v):
    fn = getattr(denoiser, "apply", denoiser)
    return fn(v)


def pnp_ista_solve(phi, z, denoiser, cfg: PnpIstaConfig | None = None, mu1=1.0, alpha0=None,
                   beta=None):
    """Run PnP-ISTA and return ``(alpha, residual_trace)``.

    ``denoiser`` is any callable (or object with ``apply``) acting on arrays
    shaped like ``alpha``. Iteration stops after ``cfg.max_iters`` steps or once
    ``||alpha_{k+1} - alpha_k|| <= tol * (1 + ||alpha_k||)``. Increases of the
    fixed-point residual after the burn-in are logged, not raised.
    """
    cfg = cfg or PnpIstaConfig()
    mat = as_matrix(phi)
    z = np.asarray(z, dtype=np.float64)
    if z.shape[0] != mat.shape[0]:
        raise ShapeMismatchError(f"signal length {z.shape[0]} does not match atom length {mat.shape[0]}")
    if beta is None:
        beta = beta_smoothness(mat, mu1)
    eta = cfg.eta if cfg.eta is not None else (1.0 / beta if beta > 0 else 1.0)
    if eta * beta > 1.0 + 1e-9:
        raise ValueError(f"eta * beta = {eta * beta:.6g} exceeds 1")
    rho = strong_convexity(mat, mu1)
    if not rho > beta / 2:
        log.debug("strong convexity %.3g <= beta/2 = %.3g; convergence hypothesis not met", rho, beta / 2)
    shape = (mat.shape[1],) + z.shape[1:]
    alpha = np.zeros(shape) if alpha0 is None else np.array(alpha0, dtype=np.float64)
    gram = mat.T @ mat
    phitz = mat.T @ z
    trace = []
    for k in range(cfg.max_iters):
        step = alpha - eta * mu1 * (gram @ alpha - phitz)
        new = _apply(denoiser, step)
        if not np.all(np.isfinite(new)):
            raise NumericalAbort(f"PnP-ISTA iterate became non-finite at iteration {k}", k)
        res = float(np.linalg.norm(new - alpha))
        if k > BURN_IN and res > trace[-1] * (1 + 1e-9) + 1e-15:
            log.debug("fixed-point residual increased at iteration %d (%.3g > %.3g)", k, res, trace[-1])
        trace.append(res)
        done = res <= cfg.tol * (1.0 + np.linalg.norm(alpha))
        alpha = new
        if done:
            break
    return alpha, trace
