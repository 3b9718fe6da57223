"""ADMM inpainting with a low-rank prior (SVT or a 1-Lipschitz DIP) and PnP sparse coding.

Splitting: ``x`` is the image, ``alpha`` the sparse codes of its patches,
``u`` the low-rank copy. One outer iteration runs

1. alpha-step: PnP-ISTA on ``z = P(x) + lambda1/mu1`` with an averaged NLM denoiser,
2. u-step: ``u = SVT(x + lambda2/mu2, w_lr/mu2)`` or ``u = f_theta(x + lambda2/mu2)``,
3. x-step: closed-form elementwise division,
4. multiplier ascent and geometric penalty growth.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from hsinpaint.cube import HsiCube, MaskCube, PatchLayout, cube_to_patches, patches_to_cube
from hsinpaint.denoise import AveragedDenoiser, NlmConfig, build_averaged_nlm, certify_nonexpansive
from hsinpaint.dictionary import Dictionary, as_matrix, ista_sparse_code, soft_threshold
from hsinpaint.errors import CertificationError, NumericalAbort, ShapeMismatchError
from hsinpaint.lipdip import Network, certify_lipschitz, dip_train_steps, encoder_decoder
from hsinpaint.lowrank import nuclear_norm, svt
from hsinpaint.metrics import mpsnr
from hsinpaint.pnpista import PnpIstaConfig, beta_smoothness, pnp_ista_solve

log = logging.getLogger(__name__)

TRACE_FIELDS = ("iter", "dx", "dl1", "dl2", "objective", "mpsnr", "lyapunov_proxy", "dip_loss")


@dataclass(frozen=True)
class SolverConfig:
    """Solver hyperparameters; the defaults are the reference settings of the method."""

    # objective weights and ADMM penalties
    gamma: float = 0.5
    w_lr: float = 1.0
    w_s: float = 1.0
    mu1: float = 0.5
    mu2: float = 0.5
    lambda1_init: float = 0.0
    lambda2_init: float = 0.0
    rho1: float = 1.05
    rho2: float = 1.05
    theory_mode: bool = False
    max_outer_iters: int = 200
    branch: str = "svt"
    seed: int = 0
    # noise level of the observation (synthesis / reporting)
    sigma_y: float = 0.12
    # early stopping on windowed moving variance of the reconstructions
    early_stop: bool = True
    wmv_window: int = 20
    wmv_patience: int = 100
    # sparse coding
    pnp_iters: int = 50
    pnp_tol: float = 1e-6
    lambda_ista: float = 0.1
    denoiser: str = "nlm"
    patch_rows: int = 2
    patch_cols: int = 2
    patch_stride: int = 1
    nlm_patch_radius: int = 0
    nlm_search_radius: int = 1
    nlm_h: float = 1.0
    nlm_theta: float = 0.5
    nlm_rebuild_every: int = 1
    # deep image prior
    dip_lr: float = 0.1
    dip_lr_decay: float = 0.98
    dip_steps: int = 1
    dip_input_noise: float = 0.0
    lip_budget: float = 1.0
    dip_widths: tuple = (16, 32)
    dip_coupling: bool = False
    # diagnostics
    lyapunov_window: int = 50

    def __post_init__(self):
        if self.branch not in ("svt", "dip"):
            raise ValueError(f"branch must be 'svt' or 'dip', got {self.branch!r}")
        if self.denoiser not in ("nlm", "soft"):
            raise ValueError(f"denoiser must be 'nlm' or 'soft', got {self.denoiser!r}")
        for name in ("gamma", "w_lr", "w_s", "sigma_y", "lambda_ista", "dip_input_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("mu1", "mu2", "lip_budget"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.rho1 < 1 or self.rho2 < 1:
            raise ValueError("rho1 and rho2 must be >= 1")
        if not 0.0 < self.dip_lr_decay <= 1.0:
            raise ValueError("dip_lr_decay must lie in (0, 1]")
        if self.max_outer_iters < 1 or self.pnp_iters < 1 or self.dip_steps < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.wmv_window < 2 or self.wmv_patience < 1:
            raise ValueError("wmv_window must be >= 2 and wmv_patience >= 1")
        if not 0.0 < self.nlm_theta < 1.0:
            raise ValueError("nlm_theta must lie in (0, 1)")
        if self.nlm_rebuild_every < 1 or self.lyapunov_window < 2:
            raise ValueError("nlm_rebuild_every must be >= 1 and lyapunov_window >= 2")
        object.__setattr__(self, "dip_widths", tuple(int(w) for w in self.dip_widths))

    @property
    def effective_rho(self) -> tuple[float, float]:
        return (1.0, 1.0) if self.theory_mode else (self.rho1, self.rho2)

    def nlm_config(self) -> NlmConfig:
        return NlmConfig(self.nlm_patch_radius, self.nlm_search_radius, self.nlm_h, self.nlm_theta)

    def layout(self, rows: int, cols: int) -> PatchLayout:
        """Patch layout; a zero patch size means one full-plane patch per band."""
        if self.patch_rows <= 0 or self.patch_cols <= 0:
            return PatchLayout.full(rows, cols)
        pr, pc = min(self.patch_rows, rows), min(self.patch_cols, cols)
        s = max(1, self.patch_stride)
        return PatchLayout(rows, cols, pr, pc, s, s)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dip_widths"] = list(self.dip_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown solver config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SolverState:
    x: np.ndarray
    u: np.ndarray
    alpha: np.ndarray
    lambda1: np.ndarray
    lambda2: np.ndarray
    mu1: float
    mu2: float
    iteration: int = 0

    def check_finite(self):
        for name in ("x", "u", "alpha", "lambda1", "lambda2"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericalAbort(f"{name} became non-finite at iteration {self.iteration}", self.iteration)


@dataclass
class IterTrace:
    rows: list = field(default_factory=list)

    def append(self, **row):
        self.rows.append({k: row.get(k) for k in TRACE_FIELDS})

    def __len__(self):
        return len(self.rows)

    def column(self, name) -> np.ndarray:
        return np.array([np.nan if r[name] is None else r[name] for r in self.rows], dtype=np.float64)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for r in self.rows:
            w.writerow(["" if r[k] is None else (r[k] if k == "iter" else repr(float(r[k]))) for k in TRACE_FIELDS])
        return buf.getvalue()


@dataclass
class SolveResult:
    x: HsiCube
    trace: IterTrace
    stop_reason: str
    iterations: int
    best_iteration: int
    state: SolverState
    certification: dict
    objective_check: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# elementary updates

def x_update(state: SolverState, y, mask, phi, layout: PatchLayout, gamma: float) -> np.ndarray:
    """Closed-form x-step: a pure elementwise division.

    numerator   = gamma M y + mu1 sum_i P_i^T Phi alpha_i + mu2 u - sum_i P_i^T lambda1_i - lambda2
    denominator = gamma M + mu1 * overlap_counts + mu2
    """
    yd = np.asarray(getattr(y, "data", y), dtype=np.float64)
    m = np.asarray(getattr(mask, "data", mask), dtype=np.float64)
    bands = yd.shape[0]
    mat = as_matrix(phi)
    back = patches_to_cube(state.mu1 * (mat @ state.alpha) - state.lambda1, layout, bands)
    num = gamma * m * yd + back + state.mu2 * state.u - state.lambda2
    den = gamma * m + state.mu1 * layout.overlap_counts[None] + state.mu2
    if np.any(den <= 0):
        raise NumericalAbort("zero denominator in the x-update", state.iteration)
    return num / den


def multiplier_update(state: SolverState, phi, layout: PatchLayout) -> SolverState:
    """``lambda1_i += mu1 (P_i x - Phi alpha_i)``, ``lambda2 += mu2 (x - u)``."""
    mat = as_matrix(phi)
    state.lambda1 = state.lambda1 + state.mu1 * (cube_to_patches(state.x, layout) - mat @ state.alpha)
    state.lambda2 = state.lambda2 + state.mu2 * (state.x - state.u)
    return state


def penalty_update(state: SolverState, rho1: float, rho2: float, w_lr: float = 1.0) -> float:
    """Grow both penalties geometrically; returns the new SVT threshold ``w_lr / mu2``."""
    if rho1 < 1 or rho2 < 1:
        raise ValueError("penalty growth factors must be >= 1")
    state.mu1 *= rho1
    state.mu2 *= rho2
    return w_lr / state.mu2


def objective(x, alpha, y, mask, phi, layout, cfg: SolverConfig) -> float:
    """``gamma/2||y - Mx||^2 + w_lr||x||_* + 1/2 sum_i||P_i x - Phi alpha_i||^2 + w_s sum_i||alpha_i||_1``."""
    yd = np.asarray(getattr(y, "data", y), dtype=np.float64)
    m = np.asarray(getattr(mask, "data", mask), dtype=np.float64)
    mat = as_matrix(phi)
    r = yd - m * x
    fit = cube_to_patches(x, layout) - mat @ alpha
    lr = nuclear_norm(x.reshape(x.shape[0], -1).T) if cfg.w_lr else 0.0
    return float(0.5 * cfg.gamma * np.sum(r * r) + cfg.w_lr * lr
                 + 0.5 * np.sum(fit * fit) + cfg.w_s * np.sum(np.abs(alpha)))


def objective_at(x, y, mask, phi, layout, cfg: SolverConfig, iters: int = 200) -> float:
    """Objective at ``x`` with the codes minimized for it (lasso on the patches of ``x``)."""
    alpha = ista_sparse_code(phi, cube_to_patches(np.asarray(x, dtype=np.float64), layout), cfg.w_s, iters=iters)
    return objective(x, alpha, y, mask, phi, layout, cfg)


def lyapunov_proxy(xs, lam1s, lam2s, mu1, mu2) -> np.ndarray:
    """``2||x_k - x_K||^2 + ||l1_k - l1_K||^2/mu1^2 + ||l2_k - l2_K||^2/mu2^2`` anchored at the last state K.

    ``mu1``/``mu2`` may be scalars or per-state sequences.
    """
    n = len(xs)
    if n < 1 or len(lam1s) != n or len(lam2s) != n:
        raise ValueError("need equally long, non-empty state sequences")
    mu1 = np.broadcast_to(np.asarray(mu1, dtype=np.float64), (n,))
    mu2 = np.broadcast_to(np.asarray(mu2, dtype=np.float64), (n,))
    xk, l1k, l2k = xs[-1], lam1s[-1], lam2s[-1]
    return np.array([
        2 * np.sum((xs[i] - xk) ** 2) + np.sum((lam1s[i] - l1k) ** 2) / mu1[i] ** 2
        + np.sum((lam2s[i] - l2k) ** 2) / mu2[i] ** 2
        for i in range(n)
    ])


def wmv_curve(history, window: int) -> np.ndarray:
    """Windowed moving variance: mean over entries of the variance across each full window."""
    if window < 2:
        raise ValueError("window must be >= 2")
    h = [np.asarray(getattr(r, "data", r), dtype=np.float64) for r in history]
    return np.array([float(np.mean(np.var(np.stack(h[i - window + 1:i + 1]), axis=0)))
                     for i in range(window - 1, len(h))])


def wmv_early_stop(history, window: int = 20, patience: int = 100) -> dict:
    """Decide whether to stop from a list of reconstructions.

    The WMV at iteration ``i`` (0-based, ``i >= window - 1``) covers
    reconstructions ``i - window + 1 .. i``. Stop once the running minimum has
    not improved for ``patience`` consecutive iterations. ``best_index`` is the
    iteration attaining the minimum (None before the first full window).
    """
    if window < 2:
        raise ValueError("window must be >= 2")
    if len(history) < window:
        return {"stop": False, "best_index": None, "wmv": []}
    curve = wmv_curve(history, window)
    best, best_i, since = math.inf, None, 0
    stop = False
    for j, v in enumerate(curve):
        i = j + window - 1
        if v < best:
            best, best_i, since = v, i, 0
        else:
            since += 1
            if since >= patience:
                stop = True
                break
    return {"stop": stop, "best_index": best_i, "wmv": curve.tolist()}


class WmvMonitor:
    """Incremental version of :func:`wmv_early_stop` keeping only the last window."""

    def __init__(self, window: int, patience: int):
        self.window, self.patience = window, patience
        self.buf = []
        self.best = math.inf
        self.best_index = None
        self.best_x = None
        self.since = 0
        self.count = 0

    def push(self, x) -> bool:
        self.buf.append(np.array(x, dtype=np.float64))
        if len(self.buf) > self.window:
            self.buf.pop(0)
        i = self.count
        self.count += 1
        if len(self.buf) < self.window:
            return False
        v = float(np.mean(np.var(np.stack(self.buf), axis=0)))
        if v < self.best:
            self.best, self.best_index, self.best_x, self.since = v, i, self.buf[-1].copy(), 0
            return False
        self.since += 1
        return self.since >= self.patience


# ---------------------------------------------------------------------------
# denoiser in the code domain

class PatchGridDenoiser:
    """Averaged NLM acting on the code matrix across patch positions.

    Codes are arranged as (n_atoms, bands, count); the filter ``W`` (count x
    count) mixes codes of similar patch positions, shared across bands, so the
    map on the flattened code vector is ``(1 - t) I + t (I kron W)``: still
    symmetric, doubly stochastic-based and t-averaged.
    """

    def __init__(self, base: AveragedDenoiser, bands: int, theta: float):
        self.base = base
        self.bands = bands
        self.theta = theta

    def __call__(self, alpha):
        if self.theta == 0.0:
            return alpha
        k, n = alpha.shape
        a = alpha.reshape(k, self.bands, -1)
        mixed = a @ self.base.weights  # W symmetric
        return ((1.0 - self.theta) * a + self.theta * mixed).reshape(k, n)


def _effective_theta(theta: float, w_s: float, penalty_ratio: float = 1.0) -> float:
    """Denoising strength for the current penalty.

    ``t/(1-t) = w_s * theta/(1-theta) / penalty_ratio`` with
    ``penalty_ratio = mu1_k / mu1_0``: the plug-in counterpart of a proximal
    step on ``(w_s/mu1) g``, weakening as the penalty grows just as the SVT
    threshold ``w_lr/mu2`` does. ``w_s = 0`` gives the identity.
    """
    if w_s <= 0:
        return 0.0
    odds = w_s * theta / (1.0 - theta) / penalty_ratio
    return odds / (1.0 + odds)


def patch_guide(x, layout: PatchLayout) -> np.ndarray:
    """Guide image on the patch grid: each grid node carries all bands of its patch."""
    bands = x.shape[0]
    cols = cube_to_patches(x, layout)  # (patch_len, bands*count)
    gr, gc = layout.grid_shape
    g = cols.reshape(layout.patch_len, bands, layout.count).transpose(1, 0, 2)
    return g.reshape(bands * layout.patch_len, gr, gc)


def build_code_denoiser(x, layout: PatchLayout, cfg: SolverConfig, penalty_ratio: float = 1.0):
    """The sparse-coding denoiser for the current reconstruction ``x``."""
    bands = x.shape[0]
    if cfg.denoiser == "soft":
        return None
    theta = _effective_theta(cfg.nlm_theta, cfg.w_s, penalty_ratio)
    base = build_averaged_nlm(patch_guide(x, layout), cfg.nlm_config())
    return PatchGridDenoiser(base, bands, theta)


# ---------------------------------------------------------------------------
# driver

def _prepare(y, mask, phi):
    yc = y if isinstance(y, HsiCube) else HsiCube(np.asarray(y, dtype=np.float64))
    mk = mask if isinstance(mask, MaskCube) else MaskCube(np.asarray(mask))
    if yc.shape != mk.shape:
        raise ShapeMismatchError(f"observation {yc.shape} and mask {mk.shape} differ")
    return yc, mk, as_matrix(phi)


def init_state(y: HsiCube, n_atoms: int, layout: PatchLayout, cfg: SolverConfig) -> SolverState:
    x0 = np.asarray(y.data, dtype=np.float64).copy()
    ncols = y.bands * layout.count
    return SolverState(
        x=x0, u=x0.copy(), alpha=np.zeros((n_atoms, ncols)),
        lambda1=np.full((layout.patch_len, ncols), float(cfg.lambda1_init)),
        lambda2=np.full(x0.shape, float(cfg.lambda2_init)),
        mu1=float(cfg.mu1), mu2=float(cfg.mu2),
    )


def default_network(bands, rows, cols, cfg: SolverConfig) -> Network:
    spec = encoder_decoder(bands, widths=cfg.dip_widths, budget=cfg.lip_budget)
    return Network(spec, rows, cols, seed=cfg.seed, lr=cfg.dip_lr)


def solve(y, mask, phi, cfg: SolverConfig | None = None, net: Network | None = None,
          denoiser=None, truth: HsiCube | None = None, certify: bool = True) -> SolveResult:
    """Run the ADMM solver on the branch selected by ``cfg.branch``.

    ``denoiser`` overrides the per-iteration NLM construction with a fixed
    :class:`AveragedDenoiser` on the patch grid (or any callable on the code
    matrix). ``truth`` enables the MPSNR column of the trace.
    """
    cfg = cfg or SolverConfig()
    y, mask, mat = _prepare(y, mask, phi)
    bands, rows, cols = y.shape
    layout = cfg.layout(rows, cols)
    if mat.shape[0] != layout.patch_len:
        raise ShapeMismatchError(
            f"dictionary atoms have length {mat.shape[0]} but patches have {layout.patch_len} entries")
    rho1, rho2 = cfg.effective_rho
    state = init_state(y, mat.shape[1], layout, cfg)
    cert = {}

    fixed_denoiser = None
    if denoiser is not None:
        if isinstance(denoiser, AveragedDenoiser):
            if denoiser.dim != layout.count:
                raise ShapeMismatchError(f"denoiser acts on {denoiser.dim} positions, layout has {layout.count}")
            fixed_denoiser = PatchGridDenoiser(denoiser, bands, _effective_theta(denoiser.theta, cfg.w_s))
            probe = denoiser
        else:
            fixed_denoiser = denoiser
            probe = None
    elif cfg.denoiser == "nlm":
        probe = build_averaged_nlm(patch_guide(state.x, layout), cfg.nlm_config())
    else:
        probe = None
    if certify and probe is not None:
        cert["denoiser"] = certify_nonexpansive(probe, trials=50, seed=cfg.seed)
        if not cert["denoiser"]["pass"]:
            raise CertificationError(f"denoiser failed non-expansiveness certification: {cert['denoiser']}")

    if cfg.branch == "dip":
        if net is None:
            net = default_network(bands, rows, cols, cfg)
        if net.in_shape != y.shape:
            raise ShapeMismatchError(f"network expects {net.in_shape}, observation is {y.shape}")
        net.adam.lr = cfg.dip_lr
        if certify:
            cert["network"] = certify_lipschitz(net, trials=50, seed=cfg.seed)
            if not cert["network"]["pass"]:
                raise CertificationError(f"network failed Lipschitz certification: {cert['network']}")

    beta_cache = {}
    pnp_cfg = PnpIstaConfig(max_iters=cfg.pnp_iters, tol=cfg.pnp_tol)
    rng = np.random.default_rng(cfg.seed)
    trace = IterTrace()
    monitor = WmvMonitor(cfg.wmv_window, cfg.wmv_patience)
    keep = cfg.lyapunov_window
    hist_x, hist_l1, hist_l2, hist_mu = [], [], [], []
    code_denoiser = fixed_denoiser
    stop_reason = "max_iters"
    yd = np.asarray(y.data, dtype=np.float64)

    for k in range(cfg.max_outer_iters):
        state.iteration = k
        x_prev, l1_prev, l2_prev = state.x, state.lambda1, state.lambda2

        # alpha-step
        ratio = state.mu1 / cfg.mu1
        if fixed_denoiser is None and cfg.denoiser == "nlm":
            if k % cfg.nlm_rebuild_every == 0:
                code_denoiser = build_code_denoiser(state.x, layout, cfg, ratio)
            else:
                code_denoiser.theta = _effective_theta(cfg.nlm_theta, cfg.w_s, ratio)
        elif isinstance(fixed_denoiser, PatchGridDenoiser):
            fixed_denoiser.theta = _effective_theta(fixed_denoiser.base.theta, cfg.w_s, ratio)
        beta = beta_cache.get(state.mu1)
        if beta is None:
            beta = beta_cache.setdefault(state.mu1, beta_smoothness(mat, state.mu1))
        z = cube_to_patches(state.x, layout) + state.lambda1 / state.mu1
        if cfg.denoiser == "soft" and fixed_denoiser is None:
            tau = cfg.lambda_ista * cfg.w_s / beta * (cfg.mu1 / state.mu1)
            den = lambda v: soft_threshold(v, tau)  # noqa: E731
        else:
            den = code_denoiser
        state.alpha, _ = pnp_ista_solve(mat, z, den, pnp_cfg, mu1=state.mu1, alpha0=state.alpha, beta=beta)

        # u-step
        a = state.x + state.lambda2 / state.mu2
        dip_loss = None
        if cfg.branch == "svt":
            unf = a.reshape(bands, -1).T
            state.u = svt(unf, cfg.w_lr / state.mu2).T.reshape(a.shape)
        else:
            inp = a + cfg.dip_input_noise * rng.standard_normal(a.shape) if cfg.dip_input_noise else a
            if not net.frozen:
                target, m = yd, mask.data
                if cfg.dip_coupling:
                    # masked data term plus the ADMM proximity term, as one weighted least squares
                    m = np.ones_like(yd)
                    target = a
                lr = cfg.dip_lr * cfg.dip_lr_decay ** k
                _, losses = dip_train_steps(net, inp, target, m, steps=cfg.dip_steps, lr=lr)
                dip_loss = losses[-1]
            state.u = net.forward(inp)

        # x-step, multipliers, penalties
        state.x = x_update(state, yd, mask, mat, layout, cfg.gamma)
        multiplier_update(state, mat, layout)
        state.check_finite()
        mu_used = (state.mu1, state.mu2)
        penalty_update(state, rho1, rho2, cfg.w_lr)

        row = {
            "iter": k + 1,
            "dx": float(np.linalg.norm(state.x - x_prev)),
            "dl1": float(np.linalg.norm(state.lambda1 - l1_prev)),
            "dl2": float(np.linalg.norm(state.lambda2 - l2_prev)),
            "objective": objective(state.x, state.alpha, yd, mask, mat, layout, cfg),
            "mpsnr": mpsnr(truth, y.with_data(state.x)) if truth is not None else None,
            "dip_loss": dip_loss,
        }
        trace.append(**row)
        hist_x.append(state.x.copy())
        hist_l1.append(state.lambda1.copy())
        hist_l2.append(state.lambda2.copy())
        hist_mu.append(mu_used)
        if len(hist_x) > keep:
            hist_x.pop(0), hist_l1.pop(0), hist_l2.pop(0), hist_mu.pop(0)

        if cfg.early_stop and monitor.push(state.x):
            stop_reason = "wmv_early_stop"
            break

    n = len(trace)
    mus = np.asarray(hist_mu)
    proxy = lyapunov_proxy(hist_x, hist_l1, hist_l2, mus[:, 0], mus[:, 1])
    for j, v in enumerate(proxy):
        trace.rows[n - len(proxy) + j]["lyapunov_proxy"] = float(v)

    x_out = state.x
    best = n - 1
    if stop_reason == "wmv_early_stop" and monitor.best_x is not None:
        x_out, best = monitor.best_x, monitor.best_index

    # ADMM is not monotone in the raw objective, so this is reported rather than enforced
    f_in = objective_at(yd, yd, mask, mat, layout, cfg)
    f_out = objective_at(x_out, yd, mask, mat, layout, cfg)
    decreased = f_out <= f_in * (1 + 1e-9) + 1e-12
    check = {"objective_input": f_in, "objective_output": f_out, "decreased": bool(decreased)}
    if not check["decreased"]:
        log.warning("objective at the output (%.6g) exceeds its value at the observation (%.6g)", f_out, f_in)
    else:
        log.info("objective %.6g at the observation, %.6g at the output", f_in, f_out)
    return SolveResult(y.with_data(x_out), trace, stop_reason, n, best, state, cert, check)


def run_lrs_pnp(y, mask, phi, denoiser=None, cfg: SolverConfig | None = None, truth=None) -> SolveResult:
    cfg = replace(cfg or SolverConfig(), branch="svt")
    return solve(y, mask, phi, cfg, denoiser=denoiser, truth=truth)


def run_lrs_pnp_dip(y, mask, phi, denoiser=None, net: Network | None = None, cfg: SolverConfig | None = None,
                    truth=None) -> SolveResult:
    cfg = replace(cfg or SolverConfig(), branch="dip")
    return solve(y, mask, phi, cfg, net=net, denoiser=denoiser, truth=truth)


def learn_dictionary_for(y: HsiCube, cfg: SolverConfig, n_atoms: int | None = None, epochs: int = 10,
                         seed: int = 0, w_s: float = 0.1) -> Dictionary:
    """Dictionary learned from the observed patches of ``y`` under the solver's patch layout."""
    from hsinpaint.dictionary import online_dictionary_learn

    layout = cfg.layout(y.rows, y.cols)
    patches = cube_to_patches(np.asarray(y.data, dtype=np.float64), layout).T
    n_atoms = n_atoms or 2 * layout.patch_len
    return online_dictionary_learn(patches, n_atoms, w_s, epochs=epochs, seed=seed)
