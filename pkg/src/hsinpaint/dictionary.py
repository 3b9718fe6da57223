"""Dictionaries, lasso sparse coders (ISTA and ADMM) and online dictionary learning.

All coders minimize ``(mu1/2)||z - Phi a||^2 + w_s ||a||_1``. ``z`` may be a
single vector or a matrix whose columns are coded independently.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from hsinpaint.errors import CubeFormatError, ShapeMismatchError

NORM_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Atom matrix of shape (atom_len, n_atoms) with unit-norm columns."""

    atoms: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=np.float64)
        if a.ndim != 2 or min(a.shape) < 1:
            raise ValueError(f"atoms must be a non-empty 2D array, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("dictionary contains non-finite entries")
        norms = np.linalg.norm(a, axis=0)
        if np.any(np.abs(norms - 1.0) > NORM_TOL):
            raise ValueError("dictionary atoms must have unit Euclidean norm")
        object.__setattr__(self, "atoms", a)

    @classmethod
    def from_matrix(cls, mat) -> "Dictionary":
        """Normalize the columns of ``mat`` (zero columns are rejected)."""
        mat = np.asarray(mat, dtype=np.float64)
        norms = np.linalg.norm(mat, axis=0)
        if np.any(norms == 0):
            raise ValueError("cannot normalize a zero atom")
        return cls(mat / norms)

    @property
    def atom_len(self) -> int:
        return self.atoms.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[1]


def as_matrix(phi) -> np.ndarray:
    return phi.atoms if isinstance(phi, Dictionary) else np.asarray(phi, dtype=np.float64)


def save_dictionary(d: Dictionary, path) -> None:
    """``<path>.json`` header + ``<path>.bin`` float32 little-endian column-major atoms."""
    path = Path(path)
    if path.suffix in (".json", ".bin"):
        path = path.with_suffix("")
    header = {"atom_len": d.atom_len, "n_atoms": d.n_atoms, "dtype": "f32le", "order": "column-major"}
    path.with_name(path.name + ".json").write_text(json.dumps(header))
    path.with_name(path.name + ".bin").write_bytes(np.asarray(d.atoms.T, dtype="<f4").tobytes())


def load_dictionary(path) -> Dictionary:
    """Read a dictionary file pair; atoms are re-normalized after float32 decoding."""
    path = Path(path)
    if path.suffix in (".json", ".bin"):
        path = path.with_suffix("")
    hp, bp = path.with_name(path.name + ".json"), path.with_name(path.name + ".bin")
    for p in (hp, bp):
        if not p.exists():
            raise FileNotFoundError(f"missing file: {p}")
    header = json.loads(hp.read_text())
    try:
        m, k = int(header["atom_len"]), int(header["n_atoms"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CubeFormatError(f"bad dictionary header {hp}: {exc}") from None
    raw = bp.read_bytes()
    if len(raw) != 4 * m * k:
        raise CubeFormatError(f"{bp}: expected {4 * m * k} bytes, got {len(raw)}")
    mat = np.frombuffer(raw, dtype="<f4").reshape(k, m).T.astype(np.float64)
    if not np.all(np.isfinite(mat)):
        raise CubeFormatError(f"{bp}: non-finite atoms")
    return Dictionary.from_matrix(mat)


def soft_threshold(v, tau):
    """Elementwise shrinkage ``sign(v) * max(|v| - tau, 0)``."""
    if tau < 0:
        raise ValueError(f"threshold must be >= 0, got {tau}")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def spectral_norm_sq(mat) -> float:
    """Largest eigenvalue of ``mat.T @ mat`` (exact, via the smaller Gram matrix)."""
    m = np.asarray(mat, dtype=np.float64)
    g = m @ m.T if m.shape[0] <= m.shape[1] else m.T @ m
    return float(np.linalg.eigvalsh(g)[-1])


def lasso_objective(phi, z, alpha, w_s, mu1=1.0) -> float:
    mat = as_matrix(phi)
    r = np.asarray(z, dtype=np.float64) - mat @ alpha
    return float(0.5 * mu1 * np.sum(r * r) + w_s * np.sum(np.abs(alpha)))


def _check_dims(mat, z):
    z = np.asarray(z, dtype=np.float64)
    if z.shape[0] != mat.shape[0]:
        raise ShapeMismatchError(f"signal length {z.shape[0]} does not match atom length {mat.shape[0]}")
    return z


def ista_sparse_code(phi, z, w_s, iters=200, step=None, mu1=1.0, alpha0=None, full_output=False):
    """Proximal gradient (ISTA) lasso solver.

    ``step`` defaults to ``1/(mu1 * sigma_max(Phi)^2)``, the largest step for
    which the objective is guaranteed non-increasing. With ``full_output`` the
    per-iteration objective values are returned alongside the code.
    """
    mat = as_matrix(phi)
    z = _check_dims(mat, z)
    if iters < 1:
        raise ValueError("iters must be >= 1")
    lip = mu1 * spectral_norm_sq(mat)
    if step is None:
        step = 1.0 / lip if lip > 0 else 1.0
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    if lip > 0 and step * lip > 1.0 + 1e-12:
        warnings.warn("ISTA step exceeds 1/beta; the objective may increase", RuntimeWarning, stacklevel=2)
    shape = (mat.shape[1],) + z.shape[1:]
    alpha = np.zeros(shape) if alpha0 is None else np.array(alpha0, dtype=np.float64)
    gram = mat.T @ mat
    phitz = mat.T @ z
    thresh = step * w_s
    trace = []
    for _ in range(iters):
        grad = mu1 * (gram @ alpha - phitz)
        alpha = soft_threshold(alpha - step * grad, thresh)
        if full_output:
            trace.append(lasso_objective(mat, z, alpha, w_s, mu1))
    return (alpha, trace) if full_output else alpha


def admm_sparse_code(phi, z, w_s, rho=1.0, iters=500, mu1=1.0, full_output=False):
    """ADMM lasso solver with the split ``a = v``.

    a-step: solve ``(mu1 Phi^T Phi + rho I) a = mu1 Phi^T z + rho (v - u)``;
    v-step: ``v = soft_threshold(a + u, w_s / rho)``; u-step: ``u += a - v``.
    Returns the sparse iterate ``v``; ``full_output`` adds the primal residuals
    ``||a - v||``.
    """
    mat = as_matrix(phi)
    z = _check_dims(mat, z)
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    k = mat.shape[1]
    chol = cho_factor(mu1 * (mat.T @ mat) + rho * np.eye(k))
    rhs0 = mu1 * (mat.T @ z)
    v = np.zeros((k,) + z.shape[1:])
    u = np.zeros_like(v)
    residuals = []
    for _ in range(iters):
        a = cho_solve(chol, rhs0 + rho * (v - u))
        v = soft_threshold(a + u, w_s / rho)
        u = u + a - v
        residuals.append(float(np.linalg.norm(a - v)))
    return (v, residuals) if full_output else v


# ---------------------------------------------------------------------------
# online dictionary learning

def _code(mat, patches_t, w_s, iters):
    return ista_sparse_code(mat, patches_t, w_s, iters=iters)


def _mean_objective(mat, patches_t, w_s, iters):
    codes = _code(mat, patches_t, w_s, iters)
    r = patches_t - mat @ codes
    per = 0.5 * np.sum(r * r, axis=0) + w_s * np.sum(np.abs(codes), axis=0)
    return float(per.mean()), codes, per


def _init_atoms(patches, n_atoms, rng):
    n, m = patches.shape
    take = min(n_atoms, n)
    picked = patches[rng.choice(n, size=take, replace=False)].T.copy()
    extra = rng.standard_normal((m, n_atoms - take))
    atoms = np.concatenate([picked, extra], axis=1)
    norms = np.linalg.norm(atoms, axis=0)
    bad = norms < 1e-12
    if np.any(bad):
        atoms[:, bad] = rng.standard_normal((m, int(bad.sum())))
        norms = np.linalg.norm(atoms, axis=0)
    return atoms / norms


def _update_atoms(atoms, a_acc, b_acc, sweeps=1):
    """Block-coordinate atom update from the accumulated statistics."""
    for _ in range(sweeps):
        for j in range(atoms.shape[1]):
            if a_acc[j, j] <= 1e-12:
                continue
            u = atoms[:, j] + (b_acc[:, j] - atoms @ a_acc[:, j]) / a_acc[j, j]
            nu = np.linalg.norm(u)
            if nu > 1e-12:
                atoms[:, j] = u / nu
    return atoms


def _reseed(atoms, codes, per_obj, patches_t, dup_tol=0.99):
    """Replace unused or near-duplicate atoms with the worst-fitted patches."""
    used = np.any(codes != 0, axis=1)
    gram = np.abs(atoms.T @ atoms)
    np.fill_diagonal(gram, 0.0)
    dup = np.zeros(atoms.shape[1], dtype=bool)
    for j in range(atoms.shape[1]):
        if not dup[j] and np.any(gram[j, j + 1:] > dup_tol):
            dup[j + 1:] |= gram[j, j + 1:] > dup_tol
    targets = np.flatnonzero(~used | dup)
    if targets.size == 0:
        return atoms, 0
    worst = np.argsort(-per_obj, kind="stable")
    replaced = 0
    for j, p in zip(targets, worst):
        v = patches_t[:, p]
        nv = np.linalg.norm(v)
        if nv > 1e-12:
            atoms[:, j] = v / nv
            replaced += 1
    return atoms, replaced


def online_dictionary_learn(patches, n_atoms, w_s, epochs=10, seed=0, batch_size=64,
                            code_iters=50, full_output=False):
    """Learn a unit-norm dictionary from ``patches`` (n_patches x atom_len).

    Each epoch visits the patches in a seeded random order in mini-batches:
    codes come from 50 ISTA iterations, the statistics ``A = sum a a^T`` and
    ``B = sum p a^T`` are accumulated and every atom gets one block-coordinate
    update followed by re-normalization. Atoms unused during the epoch (or
    nearly collinear with another atom) are re-seeded from the worst-fitted
    patches. An epoch whose dictionary does not lower the mean objective
    ``1/2||p - Phi a||^2 + w_s||a||_1`` is rolled back, so the recorded
    objective never increases.
    """
    p = np.asarray(patches, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ValueError("online_dictionary_learn needs a non-empty (n_patches, atom_len) array")
    if n_atoms < 1:
        raise ValueError("n_atoms must be >= 1")
    if not np.all(np.isfinite(p)):
        raise ValueError("patches contain non-finite values")
    rng = np.random.default_rng(seed)
    n = p.shape[0]
    pt = p.T
    atoms = _init_atoms(p, n_atoms, rng)
    best, codes, per = _mean_objective(atoms, pt, w_s, code_iters)
    a_acc = np.zeros((n_atoms, n_atoms))
    b_acc = np.zeros((p.shape[1], n_atoms))
    history = [best]
    for _ in range(epochs):
        cand = atoms.copy()
        ca, cb = a_acc.copy(), b_acc.copy()
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = pt[:, order[start:start + batch_size]]
            alpha = _code(cand, batch, w_s, code_iters)
            ca += alpha @ alpha.T
            cb += batch @ alpha.T
            cand = _update_atoms(cand, ca, cb)
        obj, c_codes, c_per = _mean_objective(cand, pt, w_s, code_iters)
        reseeded, n_re = _reseed(cand.copy(), c_codes, c_per, pt)
        if n_re:
            r_obj, r_codes, r_per = _mean_objective(reseeded, pt, w_s, code_iters)
            if r_obj <= obj:
                cand, obj, c_codes, c_per = reseeded, r_obj, r_codes, r_per
        if obj <= best:
            atoms, a_acc, b_acc, best = cand, ca, cb, obj
        history.append(best)
    d = Dictionary.from_matrix(atoms)
    return (d, history) if full_output else d
