"""Pure numpy implementations of the hot kernels.

Signatures match ``_ckernels`` exactly; ``hsinpaint.kernels`` picks one of the
two at import time.
"""

import numpy as np


def _out_size(n, k, stride):
    pad = k // 2
    return (n + 2 * pad - k) // stride + 1


def _window(xp, a, b, stride, ho, wo):
    return xp[:, a:a + stride * (ho - 1) + 1:stride, b:b + stride * (wo - 1) + 1:stride]


def conv2d(x, w, stride=1):
    """Zero-padded cross-correlation of ``x`` (C, H, W) with ``w`` (O, C, k, k)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    k = w.shape[2]
    pad = k // 2
    ho, wo = _out_size(x.shape[1], k, stride), _out_size(x.shape[2], k, stride)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    y = np.zeros((w.shape[0], ho, wo))
    for a in range(k):
        for b in range(k):
            y += np.tensordot(w[:, :, a, b], _window(xp, a, b, stride, ho, wo), axes=(1, 0))
    return y


def conv2d_grad_input(gy, w, stride, height, width):
    """Adjoint of :func:`conv2d` with respect to its input."""
    gy = np.ascontiguousarray(gy, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    k = w.shape[2]
    pad = k // 2
    ho, wo = gy.shape[1], gy.shape[2]
    gxp = np.zeros((w.shape[1], height + 2 * pad, width + 2 * pad))
    for a in range(k):
        for b in range(k):
            _window(gxp, a, b, stride, ho, wo)[...] += np.tensordot(
                w[:, :, a, b].T, gy, axes=(1, 0))
    return np.ascontiguousarray(gxp[:, pad:pad + height, pad:pad + width])


def conv2d_grad_weight(x, gy, k, stride=1):
    """Gradient of ``<gy, conv2d(x, w)>`` with respect to ``w``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    gy = np.ascontiguousarray(gy, dtype=np.float64)
    pad = k // 2
    ho, wo = gy.shape[1], gy.shape[2]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    gw = np.empty((gy.shape[0], x.shape[0], k, k))
    for a in range(k):
        for b in range(k):
            gw[:, :, a, b] = np.tensordot(gy, _window(xp, a, b, stride, ho, wo),
                                          axes=([1, 2], [1, 2]))
    return gw


def nlm_affinity(guide, patch_radius, search_radius, h):
    """Dense NLM affinity matrix over the pixels of ``guide`` (ch, R, C).

    Entry (i, j) is ``exp(-||p_i - p_j||^2 / h^2)`` when pixel j lies in the
    square search window of pixel i and 0 otherwise. Patches use symmetric
    padding at the border.
    """
    guide = np.ascontiguousarray(guide, dtype=np.float64)
    ch, rows, cols = guide.shape
    r = patch_radius
    gp = np.pad(guide, ((0, 0), (r, r), (r, r)), mode="symmetric")
    side = 2 * r + 1
    # patch vectors, one row per pixel
    patches = np.empty((rows, cols, ch * side * side))
    col = 0
    for c in range(ch):
        for a in range(side):
            for b in range(side):
                patches[:, :, col] = gp[c, a:a + rows, b:b + cols]
                col += 1
    n = rows * cols
    out = np.zeros((n, n))
    idx = np.arange(n).reshape(rows, cols)
    inv_h2 = 1.0 / (h * h)
    s = search_radius
    for dr in range(-s, s + 1):
        for dc in range(-s, s + 1):
            r0, r1 = max(0, -dr), min(rows, rows - dr)
            c0, c1 = max(0, -dc), min(cols, cols - dc)
            if r0 >= r1 or c0 >= c1:
                continue
            p = patches[r0:r1, c0:c1]
            q = patches[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
            d = np.sum((p - q) ** 2, axis=2)
            out[idx[r0:r1, c0:c1].ravel(), idx[r0 + dr:r1 + dr, c0 + dc:c1 + dc].ravel()] = \
                np.exp(-d * inv_h2).ravel()
    return out
