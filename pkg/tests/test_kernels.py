import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hsinpaint import _pykernels, kernels

try:
    from hsinpaint import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = [pytest.param(_pykernels, id="python"),
            pytest.param(_ckernels, id="cython",
                         marks=pytest.mark.skipif(_ckernels is None, reason="extension not built"))]


def direct_conv(x, w, stride=1):
    """Loop-by-loop zero-padded cross-correlation."""
    c, h, wd = x.shape
    o, _, k, _ = w.shape
    pad = k // 2
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    xp[:, pad:pad + h, pad:pad + wd] = x
    ho, wo = (h + 2 * pad - k) // stride + 1, (wd + 2 * pad - k) // stride + 1
    y = np.zeros((o, ho, wo))
    for oc in range(o):
        for i in range(ho):
            for j in range(wo):
                y[oc, i, j] = np.sum(w[oc] * xp[:, i * stride:i * stride + k, j * stride:j * stride + k])
    return y


def direct_affinity(g, pr, sr, h):
    c, rows, cols = g.shape
    gp = np.pad(g, ((0, 0), (pr, pr), (pr, pr)), mode="symmetric")
    n = rows * cols
    w = np.zeros((n, n))
    for i in range(n):
        ri, ci = divmod(i, cols)
        pi = gp[:, ri:ri + 2 * pr + 1, ci:ci + 2 * pr + 1]
        for j in range(n):
            rj, cj = divmod(j, cols)
            if abs(ri - rj) <= sr and abs(ci - cj) <= sr:
                pj = gp[:, rj:rj + 2 * pr + 1, cj:cj + 2 * pr + 1]
                w[i, j] = np.exp(-np.sum((pi - pj) ** 2) / h ** 2)
    return w


def test_dispatch_names_backend():
    assert kernels.BACKEND in ("cython", "python")
    if _ckernels is not None:
        assert kernels.BACKEND == "cython"


def test_env_var_forces_fallback():
    env = dict(os.environ, HSINPAINT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from hsinpaint import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("impl", BACKENDS)
@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("k", [1, 3, 5])
def test_conv_matches_direct_loops(impl, stride, k, rng):
    x = rng.standard_normal((3, 6, 6))
    w = rng.standard_normal((4, 3, k, k))
    np.testing.assert_allclose(impl.conv2d(x, w, stride), direct_conv(x, w, stride), atol=1e-12)


@pytest.mark.parametrize("impl", BACKENDS)
@given(seed=st.integers(0, 10_000), stride=st.sampled_from([1, 2]), k=st.sampled_from([1, 3]),
       size=st.sampled_from([4, 5, 6]))
def test_conv_gradients_are_adjoints(impl, seed, stride, k, size):
    r = np.random.default_rng(seed)
    x = r.standard_normal((2, size, size))
    w = r.standard_normal((3, 2, k, k))
    y = impl.conv2d(x, w, stride)
    gy = r.standard_normal(y.shape)
    # <conv(x), gy> = <x, grad_input(gy)> = <w, grad_weight(x, gy)>
    lhs = np.sum(y * gy)
    gx = impl.conv2d_grad_input(gy, w, stride, size, size)
    gw = impl.conv2d_grad_weight(x, gy, k, stride)
    assert abs(lhs - np.sum(x * gx)) <= 1e-10 * (1 + abs(lhs))
    assert abs(lhs - np.sum(w * gw)) <= 1e-10 * (1 + abs(lhs))


@pytest.mark.skipif(_ckernels is None, reason="extension not built")
@given(seed=st.integers(0, 10_000), stride=st.sampled_from([1, 2]), k=st.sampled_from([1, 3, 5]))
def test_backends_agree_on_conv(seed, stride, k):
    r = np.random.default_rng(seed)
    x = r.standard_normal((3, 8, 8))
    w = r.standard_normal((5, 3, k, k))
    y = _pykernels.conv2d(x, w, stride)
    np.testing.assert_allclose(_ckernels.conv2d(x, w, stride), y, atol=1e-12)
    gy = r.standard_normal(y.shape)
    np.testing.assert_allclose(_ckernels.conv2d_grad_input(gy, w, stride, 8, 8),
                               _pykernels.conv2d_grad_input(gy, w, stride, 8, 8), atol=1e-12)
    np.testing.assert_allclose(_ckernels.conv2d_grad_weight(x, gy, k, stride),
                               _pykernels.conv2d_grad_weight(x, gy, k, stride), atol=1e-12)


@pytest.mark.parametrize("impl", BACKENDS)
@pytest.mark.parametrize("pr,sr", [(0, 0), (0, 1), (1, 2), (2, 1)])
def test_nlm_affinity_matches_direct_loops(impl, pr, sr, rng):
    g = rng.random((2, 5, 4))
    np.testing.assert_allclose(impl.nlm_affinity(g, pr, sr, 0.7), direct_affinity(g, pr, sr, 0.7), atol=1e-14)


@pytest.mark.skipif(_ckernels is None, reason="extension not built")
@given(seed=st.integers(0, 10_000), pr=st.integers(0, 2), sr=st.integers(0, 3),
       h=st.floats(0.1, 5.0))
def test_backends_agree_on_affinity(seed, pr, sr, h):
    g = np.random.default_rng(seed).random((3, 6, 5))
    np.testing.assert_allclose(_ckernels.nlm_affinity(g, pr, sr, h), _pykernels.nlm_affinity(g, pr, sr, h),
                               atol=1e-14)
