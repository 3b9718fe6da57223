"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line."""

import json
import time
from dataclasses import replace

import numpy as np
import pytest
from conftest import record_acceptance

from hsinpaint.benchmark import benchmark_config
from hsinpaint.cli import main
from hsinpaint.cube import save_cube, save_mask
from hsinpaint.denoise import NlmConfig, averagedness_gap, build_averaged_nlm, certify_nonexpansive
from hsinpaint.dictionary import admm_sparse_code, ista_sparse_code, lasso_objective, save_dictionary, soft_threshold
from hsinpaint.lipdip import ConvOperator, Network, certify_lipschitz, dip_train_steps, encoder_decoder
from hsinpaint.lowrank import svt
from hsinpaint.metrics import mpsnr
from hsinpaint.pnpista import PnpIstaConfig, beta_smoothness, pnp_ista_solve
from hsinpaint.solver import SolverConfig, solve


def dense_svt(a, tau):
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    return (u * np.maximum(s - tau, 0.0)) @ vt


def test_svt_matches_dense_svd_shrinkage():
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        a = rng.standard_normal((8, 6))
        tau = rng.uniform(0, 3)
        worst = max(worst, float(np.max(np.abs(svt(a, tau) - dense_svt(a, tau)))))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-8 and dt < 1.0
    record_acceptance("svt oracle", ok, f"max entry error {worst:.2e} (<= 1e-8), {dt:.2f}s")
    assert ok


def test_sparse_coding_solvers_agree():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        phi = rng.standard_normal((8, 12))
        phi /= np.linalg.norm(phi, axis=0)
        z = rng.standard_normal(8)
        w_s, mu1 = rng.uniform(0.05, 0.5), 1.0
        eta = 1.0 / beta_smoothness(phi, mu1)
        pnp, _ = pnp_ista_solve(phi, z, lambda v, t=eta * w_s: soft_threshold(v, t),
                                PnpIstaConfig(max_iters=20_000, tol=1e-12), mu1=mu1)
        ista = ista_sparse_code(phi, z, w_s, iters=5000, mu1=mu1)
        admm = admm_sparse_code(phi, z, w_s, iters=2000, mu1=mu1)
        f = [lasso_objective(phi, z, a, w_s, mu1) for a in (pnp, ista, admm)]
        worst = max(worst, max(f) - min(f))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-5 and dt < 5.0
    record_acceptance("sparse coding oracle", ok, f"max objective gap {worst:.2e} (<= 1e-5), {dt:.2f}s")
    assert ok


def test_dip_gradients_match_finite_differences():
    t0 = time.perf_counter()
    net = Network(encoder_decoder(2, widths=(4,)), 4, 4, seed=0)
    rng = np.random.default_rng(2)
    x, target = rng.standard_normal((2, 4, 4)), rng.standard_normal((2, 4, 4))
    mask = (rng.random((2, 4, 4)) > 0.25).astype(float)
    for layer in net.layers:  # nonzero biases so every parameter is exercised
        if "bias" in layer.params():
            layer.bias = 0.1 * rng.standard_normal(layer.bias.shape)
    _, grad = net.loss_and_grad(x, target, mask)
    theta = net.get_flat().copy()
    eps = 1e-5
    worst = 0.0
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = eps
        net.set_flat(theta + e)
        lp = net.loss_and_grad(x, target, mask)[0]
        net.set_flat(theta - e)
        lm = net.loss_and_grad(x, target, mask)[0]
        fd = (lp - lm) / (2 * eps)
        worst = max(worst, abs(fd - grad[i]) / max(abs(fd), abs(grad[i]), 1e-5))
    net.set_flat(theta)
    dt = time.perf_counter() - t0
    ok = worst < 1e-4 and dt < 30.0
    record_acceptance("gradient check", ok, f"{theta.size} parameters, max relative error {worst:.2e} (< 1e-4), "
                                            f"{dt:.2f}s")
    assert ok


def test_lipschitz_certification_after_training(bench):
    truth, mask, y = bench
    t0 = time.perf_counter()
    cfg = SolverConfig()
    net = Network(encoder_decoder(y.bands, widths=cfg.dip_widths), y.rows, y.cols, seed=0)
    rng = np.random.default_rng(3)
    z = rng.standard_normal(y.shape)
    dip_train_steps(net, z, y.data, mask.data, steps=500, lr=0.1)
    rep = certify_lipschitz(net, trials=200, seed=0)
    # independent per-layer check: dense SVD of each convolution operator
    dense = [np.linalg.svd(ConvOperator(c.weight, c.in_shape).dense(), compute_uv=False)[0] for c in net.conv_layers]
    dt = time.perf_counter() - t0
    ok = rep["empirical_ratio"] <= 1 + 1e-4 and max(dense) <= 1 + 1e-4 and rep["pass"] and dt < 60.0
    record_acceptance("lipschitz certification", ok,
                      f"empirical ratio {rep['empirical_ratio']:.6f}, max layer sigma {max(dense):.8f} "
                      f"(<= 1 + 1e-4), {dt:.1f}s")
    assert ok


def test_denoiser_averagedness_and_refusal(bench):
    _, _, y = bench
    t0 = time.perf_counter()
    d = build_averaged_nlm(y.data, NlmConfig(1, 2, 1.0, 0.5))
    rng = np.random.default_rng(4)
    gaps = [averagedness_gap(d, rng.standard_normal(d.dim), rng.standard_normal(d.dim)) for _ in range(200)]
    bad = certify_nonexpansive(d.scaled(1.5))
    good = certify_nonexpansive(d)
    dt = time.perf_counter() - t0
    ok = min(gaps) >= -1e-8 and good["pass"] and not bad["pass"] and dt < 10.0
    record_acceptance("denoiser averagedness", ok,
                      f"min gap {min(gaps):.2e} (>= -1e-8), scaled x1.5 ratio {bad['max_ratio']:.3f} refused, "
                      f"{dt:.2f}s")
    assert ok


def test_convergence_behavior(bench, bench_dict):
    truth, mask, y = bench
    t0 = time.perf_counter()
    res = solve(y, mask, bench_dict, SolverConfig(branch="dip"), truth=truth)
    dx = res.trace.column("dx")
    ratio = float(np.median(dx[-10:]) / np.median(dx[:10]))
    theory = solve(y, mask, bench_dict, SolverConfig(branch="dip", theory_mode=True, early_stop=False), truth=truth)
    proxy = theory.trace.column("lyapunov_proxy")
    proxy = proxy[np.isfinite(proxy)]
    steps = np.diff(proxy)
    frac = float(np.mean(steps <= 1e-12 * np.maximum(proxy[:-1], 1.0)))
    dt = time.perf_counter() - t0
    ok = ratio <= 0.1 and frac >= 0.95 and dt < 300.0
    record_acceptance("convergence", ok,
                      f"dx late/early median {ratio:.4f} (<= 0.1) over {res.iterations} iters, "
                      f"lyapunov non-increasing {frac:.3f} (>= 0.95), {dt:.1f}s")
    assert ok


@pytest.mark.parametrize("branch", ["svt", "dip"])
def test_inpainting_efficacy(bench, bench_dict, branch):
    truth, mask, y = bench
    t0 = time.perf_counter()
    res = solve(y, mask, bench_dict, benchmark_config(branch=branch), truth=truth)
    before, after = mpsnr(truth, y), mpsnr(truth, res.x)
    dt = time.perf_counter() - t0
    ok = after - before >= 5.0 and dt < 300.0
    record_acceptance(f"efficacy ({branch})", ok,
                      f"MPSNR {before:.2f} -> {after:.2f} dB, gain {after - before:.2f} (>= 5), {dt:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def bench_files(bench, bench_dict, tmp_path_factory):
    truth, mask, y = bench
    root = tmp_path_factory.mktemp("bench")
    save_cube(truth, root / "truth")
    save_mask(mask, root / "mask")
    save_cube(y, root / "observed")
    save_dictionary(bench_dict, root / "dictionary")
    return root


def _inputs(root):
    return ["--input", str(root / "observed"), "--mask", str(root / "mask"),
            "--dictionary", str(root / "dictionary"), "--truth", str(root / "truth")]


def test_ablation_shape(bench_files):
    t0 = time.perf_counter()
    out = bench_files / "ablation"
    code = main(["ablate", *_inputs(bench_files), "--preset", "benchmark", "--workers", "3", "--out", str(out)])
    lines = (out / "ablation.csv").read_text().splitlines()
    grid = np.array([[float(v) for v in line.split(",")[1:]] for line in lines[1:]])
    dt = time.perf_counter() - t0
    others = np.delete(grid.ravel(), 0)
    i, j = np.unravel_index(np.nanargmax(grid), grid.shape)
    ok = (code == 0 and grid.shape == (3, 3) and np.all(np.isfinite(grid)) and grid[0, 0] < others.min()
          and i > 0 and j > 0 and dt < 900.0)
    table = "; ".join(",".join(f"{v:.2f}" for v in row) for row in grid)
    record_acceptance("ablation shape", ok, f"rows w_s=0,0.5,1 x cols w_lr=0,0.5,1: [{table}], "
                                            f"max at w_s={(0, 0.5, 1)[i]}, w_lr={(0, 0.5, 1)[j]}, {dt:.1f}s")
    assert ok


def test_deterministic_inpaint(bench_files):
    t0 = time.perf_counter()
    same = True
    for branch in ("svt", "dip"):
        runs = [bench_files / f"det_{branch}_{k}" for k in range(2)]
        for out in runs:
            assert main(["inpaint", *_inputs(bench_files), "--preset", "benchmark", "--branch", branch,
                         "--seed", "7", "--deterministic", "--out", str(out)]) == 0
        for name in ("inpainted.bin", "inpainted.json", "trace.csv"):
            same &= (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes()
    dt = time.perf_counter() - t0
    ok = bool(same) and dt < 300.0
    record_acceptance("determinism", ok, f"cube and trace byte-identical across repeats on both branches, {dt:.1f}s")
    assert ok


def test_default_hyperparameters_wired(capsys):
    t0 = time.perf_counter()
    assert main(["config"]) == 0
    s = json.loads(capsys.readouterr().out)["solver"]
    want = {"gamma": 0.5, "w_lr": 1.0, "w_s": 1.0, "mu1": 0.5, "mu2": 0.5, "lambda1_init": 0.0,
            "lambda2_init": 0.0, "sigma_y": 0.12, "dip_lr": 0.1, "lip_budget": 1.0, "pnp_iters": 50,
            "max_outer_iters": 200}
    wrong = {k: s[k] for k, v in want.items() if s[k] != v}
    dt = time.perf_counter() - t0
    ok = not wrong and dt < 1.0
    record_acceptance("default hyperparameters", ok, "all match" if ok else f"mismatched {wrong}")
    assert ok
