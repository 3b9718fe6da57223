"""A small 1-Lipschitz convolutional encoder-decoder used as a deep image prior.

Every layer has a known Lipschitz bound: convolutions are kept at spectral
norm <= budget by projection, max pooling and LeakyReLU are 1-Lipschitz, the
modified batch norm ``L (x - mean) + b`` is L-Lipschitz (centering is an
orthogonal projection), and the scaled nearest-neighbour upsampling is an
isometry. There are no skip connections, so the product of the per-layer
bounds bounds the whole network.

Everything runs in float64; gradients are hand-written reverse mode.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, LinearOperator, eigsh

from hsinpaint import kernels
from hsinpaint.cube import HsiCube, MaskCube
from hsinpaint.errors import CubeFormatError, NumericalAbort, ShapeMismatchError

LIP_TOL = 1e-4
LAYER_KINDS = ("conv2d", "maxpool", "activation", "modified_batchnorm", "upsample_scaled")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 3
    stride: int = 1
    factor: int = 2
    activation: str = "leaky_relu"
    slope: float = 0.2
    lip_budget: float = 1.0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv2d":
            if self.kernel % 2 == 0 or self.kernel < 1:
                raise ValueError("conv kernels must be odd-sized")
            if self.stride not in (1, 2):
                raise ValueError("conv stride must be 1 or 2")
        if self.kind == "activation" and self.activation not in ("leaky_relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind in ("maxpool", "upsample_scaled") and self.factor < 1:
            raise ValueError("factor must be >= 1")


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    channels: int

    @property
    def lip_bound(self) -> float:
        """Product of per-layer Lipschitz budgets."""
        out = 1.0
        for s in self.layers:
            if s.kind in ("conv2d", "modified_batchnorm"):
                out *= s.lip_budget
            elif s.kind == "activation" and s.activation == "leaky_relu":
                out *= max(1.0, abs(s.slope))
        return out

    @property
    def downsampling(self) -> int:
        f = 1
        for s in self.layers:
            if s.kind == "maxpool":
                f *= s.factor
            elif s.kind == "conv2d":
                f *= s.stride
        return f

    def to_dict(self):
        return {"channels": self.channels, "layers": [asdict(s) for s in self.layers]}

    @classmethod
    def from_dict(cls, d) -> "NetworkSpec":
        return cls(tuple(LayerSpec(**s) for s in d["layers"]), int(d["channels"]))


def encoder_decoder(channels: int, widths=(16, 32), kernel=3, slope=0.2, budget=1.0) -> NetworkSpec:
    """Skip-free encoder-decoder: conv/BN/act + pool per width, bottleneck conv, mirrored decoder.

    The default ``widths=(16, 32)`` gives channels c -> 16 -> 32 -> 32 -> 16 -> c
    over three resolutions. The final conv is followed by batch norm only.
    """
    layers = []

    def block(cin, cout, act=True):
        layers.append(LayerSpec("conv2d", cin, cout, kernel=kernel, lip_budget=budget))
        layers.append(LayerSpec("modified_batchnorm", cout, cout, lip_budget=budget))
        if act:
            layers.append(LayerSpec("activation", slope=slope))

    prev = channels
    for w in widths:
        block(prev, w)
        layers.append(LayerSpec("maxpool", factor=2))
        prev = w
    block(prev, prev)
    for w in reversed(widths[:-1]):
        layers.append(LayerSpec("upsample_scaled", factor=2))
        block(prev, w)
        prev = w
    layers.append(LayerSpec("upsample_scaled", factor=2))
    block(prev, channels, act=False)
    return NetworkSpec(tuple(layers), channels)


def identity_spec(channels: int) -> NetworkSpec:
    """A single 1x1 convolution; with identity weights it copies its input."""
    return NetworkSpec((LayerSpec("conv2d", channels, channels, kernel=1),), channels)


# ---------------------------------------------------------------------------
# functional pieces

def modified_batchnorm(x, lip, bias):
    """``lip * (x - per-channel mean) + bias`` with no variance normalization."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.reshape(x.shape[0], -1).mean(axis=1)
    shape = (-1,) + (1,) * (x.ndim - 1)
    return lip * (x - mean.reshape(shape)) + np.asarray(bias, dtype=np.float64).reshape(shape)


def upsample_scaled(x, factor: int):
    """Nearest-neighbour upsampling divided by ``factor``: an exact isometry."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    if factor == 1:
        return x.copy()
    return np.repeat(np.repeat(x, factor, axis=-2), factor, axis=-1) / factor


def _upsample_adjoint(g, factor):
    c, h, w = g.shape
    return g.reshape(c, h // factor, factor, w // factor, factor).sum(axis=(2, 4)) / factor


def maxpool(x, factor: int = 2):
    return _maxpool(np.asarray(x, dtype=np.float64), factor)[0]


def _maxpool(x, f):
    c, h, w = x.shape
    if h % f or w % f:
        raise ShapeMismatchError(f"spatial extent {(h, w)} not divisible by pool factor {f}")
    blocks = x.reshape(c, h // f, f, w // f, f).transpose(0, 1, 3, 2, 4).reshape(c, h // f, w // f, f * f)
    arg = np.argmax(blocks, axis=-1)
    return np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0], arg


def _maxpool_adjoint(g, arg, f):
    c, ho, wo = g.shape
    blocks = np.zeros((c, ho, wo, f * f))
    np.put_along_axis(blocks, arg[..., None], g[..., None], axis=-1)
    return blocks.reshape(c, ho, wo, f, f).transpose(0, 1, 3, 2, 4).reshape(c, ho * f, wo * f)


def leaky_relu(x, slope=0.2):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x, slope * x)


# ---------------------------------------------------------------------------
# spectral norms

class ConvOperator:
    """Zero-padded convolution on a fixed grid, exposed as a linear operator."""

    def __init__(self, weight, in_shape, stride=1):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.in_shape = tuple(in_shape)
        self.stride = stride

    def apply(self, x):
        return kernels.conv2d(x.reshape(self.in_shape), self.weight, self.stride)

    def adjoint(self, y):
        _, h, w = self.in_shape
        return kernels.conv2d_grad_input(y, self.weight, self.stride, h, w)

    def dense(self) -> np.ndarray:
        """Materialized matrix (rows: flattened output, cols: flattened input)."""
        n = int(np.prod(self.in_shape))
        cols = []
        for i in range(n):
            e = np.zeros(n)
            e[i] = 1.0
            cols.append(self.apply(e).ravel())
        return np.stack(cols, axis=1)


class _DenseOperator:
    def __init__(self, mat):
        self.mat = np.asarray(mat, dtype=np.float64)
        self.in_shape = (self.mat.shape[1],)

    def apply(self, x):
        return self.mat @ x.ravel()

    def adjoint(self, y):
        return self.mat.T @ y.ravel()


def _as_operator(layer, in_shape=None):
    if isinstance(layer, (ConvOperator, _DenseOperator)):
        return layer
    if isinstance(layer, Conv2d):
        return layer.operator()
    w = np.asarray(layer, dtype=np.float64)
    if w.ndim == 2:
        return _DenseOperator(w)
    if w.ndim == 4:
        if in_shape is None:
            raise ValueError("a convolution kernel needs in_shape for its spectral norm")
        return ConvOperator(w, in_shape)
    raise ValueError("expected a dense matrix, a conv kernel or a Conv2d layer")


def power_iteration_sigma(layer, iters=50, seed=0, in_shape=None, v0=None, tol=0.0, full_output=False):
    """Largest singular value by power iteration on ``A^T A``.

    ``layer`` is a dense matrix, a (out, in, k, k) kernel with ``in_shape``, or a
    :class:`Conv2d`. Convolutions are applied matrix-free. The estimate
    ``||A v||`` is non-decreasing in ``iters``. ``v0`` warm-starts the
    iteration; iteration stops early when the relative change of the
    estimate falls below ``tol``.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    op = _as_operator(layer, in_shape)
    if v0 is None:
        v = np.random.default_rng(seed).standard_normal(op.in_shape)
    else:
        v = np.array(v0, dtype=np.float64).reshape(op.in_shape)
    nv = np.linalg.norm(v)
    if nv == 0:
        v = np.random.default_rng(seed).standard_normal(op.in_shape)
        nv = np.linalg.norm(v)
    v = v / nv
    sigma = float(np.linalg.norm(op.apply(v)))
    for _ in range(iters):
        w = op.adjoint(op.apply(v)).reshape(op.in_shape)
        nw = np.linalg.norm(w)
        if nw == 0:
            sigma = 0.0
            break
        v = w / nw
        new = float(np.linalg.norm(op.apply(v)))
        converged = abs(new - sigma) <= tol * new
        sigma = new
        if converged:
            break
    return (sigma, v) if full_output else sigma


def top_singular(layer, v0=None, in_shape=None, tol=1e-13):
    """Accurate largest singular value and right vector via Lanczos on ``A^T A``.

    Small operators are materialized and decomposed directly. Used where the
    estimate must be tight (projection), since power iteration converges
    slowly when the top singular values of a convolution cluster.
    """
    op = _as_operator(layer, in_shape)
    n = int(np.prod(op.in_shape))
    if n <= 48:
        mat = np.stack([op.apply(e.reshape(op.in_shape)).ravel() for e in np.eye(n)], axis=1)
        _, s, vt = np.linalg.svd(mat)
        return float(s[0]), vt[0].reshape(op.in_shape)
    gram = LinearOperator((n, n), matvec=lambda v: op.adjoint(op.apply(v.reshape(op.in_shape))).ravel(),
                          dtype=np.float64)
    start = None if v0 is None else np.asarray(v0, dtype=np.float64).ravel()
    if start is None or not np.any(start):
        # ARPACK's own random start depends on hidden state; a seeded one keeps runs reproducible
        start = np.random.default_rng(0).standard_normal(n)
    try:
        w, v = eigsh(gram, k=1, which="LA", v0=start, tol=tol, ncv=min(n - 1, 20), maxiter=50 * n)
    except ArpackNoConvergence as exc:
        if len(exc.eigenvalues) == 0:
            return power_iteration_sigma(op, iters=5000, v0=start, tol=1e-15, full_output=True)
        w, v = exc.eigenvalues, exc.eigenvectors
    except ArpackError:
        # raised when the Krylov space collapses, e.g. for an all-zero kernel
        return power_iteration_sigma(op, iters=5000, v0=start, tol=1e-15, full_output=True)
    vec = v[:, 0].reshape(op.in_shape)
    return float(np.linalg.norm(op.apply(vec)) / np.linalg.norm(vec)), vec


# ---------------------------------------------------------------------------
# layers

class Layer:
    spec: LayerSpec
    lip = 1.0

    def params(self) -> dict:
        return {}

    def grads(self) -> dict:
        return {}


class Conv2d(Layer):
    def __init__(self, spec: LayerSpec, in_shape, rng):
        self.spec = spec
        self.in_shape = tuple(in_shape)
        c, h, w = self.in_shape
        if c != spec.in_channels:
            raise ShapeMismatchError(f"conv expects {spec.in_channels} channels, got {c}")
        k = spec.kernel
        fan_in = spec.in_channels * k * k
        self.weight = rng.standard_normal((spec.out_channels, spec.in_channels, k, k)) * np.sqrt(2.0 / fan_in)
        self.bias = np.zeros(spec.out_channels)
        s = spec.stride
        pad = k // 2
        self.out_shape = (spec.out_channels, (h + 2 * pad - k) // s + 1, (w + 2 * pad - k) // s + 1)
        self._v = None
        self.gw = np.zeros_like(self.weight)
        self.gb = np.zeros_like(self.bias)

    @property
    def lip(self):
        return self.spec.lip_budget

    def operator(self) -> ConvOperator:
        return ConvOperator(self.weight, self.in_shape, self.spec.stride)

    def forward(self, x):
        self._x = x
        return kernels.conv2d(x, self.weight, self.spec.stride) + self.bias[:, None, None]

    def backward(self, g):
        self.gw = kernels.conv2d_grad_weight(self._x, g, self.spec.kernel, self.spec.stride)
        self.gb = g.sum(axis=(1, 2))
        return kernels.conv2d_grad_input(g, self.weight, self.spec.stride, self.in_shape[1], self.in_shape[2])

    def sigma(self, iters=50, seed=0, tol=0.0) -> float:
        return power_iteration_sigma(self.operator(), iters=iters, seed=seed, tol=tol)

    def project(self, budget=None):
        """Scale the kernel by ``1/max(1, sigma/L)``; sigma from warm-started Lanczos."""
        budget = self.spec.lip_budget if budget is None else budget
        sigma, self._v = top_singular(self.operator(), v0=self._v)
        scale = 1.0 / max(1.0, sigma / budget)
        self.weight = self.weight * scale
        return sigma * scale

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return {"weight": self.gw, "bias": self.gb}

    def set_param(self, name, value):
        setattr(self, name, np.asarray(value, dtype=np.float64).reshape(getattr(self, name).shape))


class MaxPool(Layer):
    def __init__(self, spec, in_shape):
        self.spec = spec
        c, h, w = in_shape
        f = spec.factor
        if h % f or w % f:
            raise ShapeMismatchError(f"spatial extent {(h, w)} not divisible by pool factor {f}")
        self.out_shape = (c, h // f, w // f)

    def forward(self, x):
        y, self._arg = _maxpool(x, self.spec.factor)
        return y

    def backward(self, g):
        return _maxpool_adjoint(g, self._arg, self.spec.factor)


class Activation(Layer):
    def __init__(self, spec, in_shape):
        self.spec = spec
        self.out_shape = tuple(in_shape)
        self.lip = max(1.0, abs(spec.slope)) if spec.activation == "leaky_relu" else 1.0

    def forward(self, x):
        if self.spec.activation == "identity":
            return x
        self._neg = x < 0
        return np.where(self._neg, self.spec.slope * x, x)

    def backward(self, g):
        if self.spec.activation == "identity":
            return g
        return np.where(self._neg, self.spec.slope * g, g)


class ModifiedBatchNorm(Layer):
    def __init__(self, spec, in_shape):
        self.spec = spec
        self.out_shape = tuple(in_shape)
        self.bias = np.zeros(in_shape[0])
        self.gb = np.zeros_like(self.bias)

    @property
    def lip(self):
        return self.spec.lip_budget

    def forward(self, x):
        return modified_batchnorm(x, self.spec.lip_budget, self.bias)

    def backward(self, g):
        self.gb = g.sum(axis=(1, 2))
        return self.spec.lip_budget * (g - g.mean(axis=(1, 2), keepdims=True))

    def params(self):
        return {"bias": self.bias}

    def grads(self):
        return {"bias": self.gb}

    def set_param(self, name, value):
        setattr(self, name, np.asarray(value, dtype=np.float64).reshape(getattr(self, name).shape))


class UpsampleScaled(Layer):
    def __init__(self, spec, in_shape):
        self.spec = spec
        c, h, w = in_shape
        self.out_shape = (c, h * spec.factor, w * spec.factor)

    def forward(self, x):
        return upsample_scaled(x, self.spec.factor)

    def backward(self, g):
        if self.spec.factor == 1:
            return g
        return _upsample_adjoint(g, self.spec.factor)


def _make_layer(spec, in_shape, rng):
    if spec.kind == "conv2d":
        return Conv2d(spec, in_shape, rng)
    if spec.kind == "maxpool":
        return MaxPool(spec, in_shape)
    if spec.kind == "activation":
        return Activation(spec, in_shape)
    if spec.kind == "modified_batchnorm":
        return ModifiedBatchNorm(spec, in_shape)
    return UpsampleScaled(spec, in_shape)


@dataclass
class AdamState:
    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Network:
    """Feed-forward stack of layers for inputs of shape (channels, rows, cols)."""

    def __init__(self, spec: NetworkSpec, rows: int, cols: int, seed: int = 0, project: bool = True,
                 lr: float = 0.1):
        self.spec = spec
        self.in_shape = (spec.channels, rows, cols)
        rng = np.random.default_rng(seed)
        shape = self.in_shape
        self.layers = []
        for s in spec.layers:
            layer = _make_layer(s, shape, rng)
            self.layers.append(layer)
            shape = layer.out_shape
        if shape != self.in_shape:
            raise ShapeMismatchError(f"network maps {self.in_shape} to {shape}; output must match input")
        self.adam = AdamState(lr=lr)
        self.frozen = False
        if project:
            self.project()

    @classmethod
    def identity(cls, channels, rows, cols) -> "Network":
        net = cls(identity_spec(channels), rows, cols, project=False)
        net.layers[0].weight = np.eye(channels)[:, :, None, None].copy()
        net.frozen = True
        return net

    # -- parameters
    @property
    def conv_layers(self):
        return [l for l in self.layers if isinstance(l, Conv2d)]

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for name, value in layer.params().items():
                yield (i, name), layer, value

    def get_flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for _, _, v in self.named_params()]) if self.layers else np.zeros(0)

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        pos = 0
        for (_, name), layer, value in self.named_params():
            n = value.size
            layer.set_param(name, flat[pos:pos + n])
            pos += n
        if pos != flat.size:
            raise ValueError(f"expected {pos} parameters, got {flat.size}")

    def flat_grads(self) -> np.ndarray:
        return np.concatenate([layer.grads()[name].ravel() for (_, name), layer, _ in self.named_params()])

    def copy(self) -> "Network":
        other = Network(self.spec, self.in_shape[1], self.in_shape[2], project=False, lr=self.adam.lr)
        other.set_flat(self.get_flat())
        other.frozen = self.frozen
        other.adam = AdamState(self.adam.lr, self.adam.beta1, self.adam.beta2, self.adam.eps, self.adam.step,
                               {k: v.copy() for k, v in self.adam.m.items()},
                               {k: v.copy() for k, v in self.adam.v.items()})
        return other

    # -- evaluation
    def _check_input(self, x):
        x = np.asarray(x.data if isinstance(x, HsiCube) else x, dtype=np.float64)
        if x.shape != self.in_shape:
            raise ShapeMismatchError(f"network expects input {self.in_shape}, got {x.shape}")
        return x

    def forward(self, x) -> np.ndarray:
        h = self._check_input(x)
        for layer in self.layers:
            h = layer.forward(h)
        return h

    def backward(self, g) -> np.ndarray:
        """Back-propagate ``g`` (gradient w.r.t. the last forward output); returns the input gradient."""
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def vjp(self, x, g) -> np.ndarray:
        self.forward(x)
        return self.backward(np.asarray(g, dtype=np.float64))

    def loss_and_grad(self, x, target, mask):
        """``||mask * (f(x) - target)||^2`` and its gradient (flat, ordered as :meth:`get_flat`)."""
        t = self._check_input(target)
        m = np.asarray(mask.data if isinstance(mask, MaskCube) else mask, dtype=np.float64)
        if m.shape != self.in_shape:
            raise ShapeMismatchError(f"mask shape {m.shape} does not match {self.in_shape}")
        r = m * (self.forward(x) - t)
        loss = float(np.sum(r * r))
        self.backward(2.0 * m * r)
        return loss, self.flat_grads()

    # -- Lipschitz control
    def project(self, budget=None):
        """Project every conv kernel onto spectral norm <= its budget; returns post-projection sigmas."""
        return [layer.project(budget) for layer in self.conv_layers]

    def layer_sigmas(self):
        """Per-conv spectral norms (Lanczos, tight to ~1e-12)."""
        return [top_singular(layer.operator())[0] for layer in self.conv_layers]

    def product_bound(self, sigmas=None) -> float:
        """Product of certified per-layer constants (conv sigmas measured, others analytic)."""
        sig = iter(self.layer_sigmas() if sigmas is None else sigmas)
        out = 1.0
        for layer in self.layers:
            out *= next(sig) if isinstance(layer, Conv2d) else layer.lip
        return out

    # -- training
    def adam_step(self, grads):
        a = self.adam
        a.step += 1
        new = []
        pos = 0
        for key, _, value in self.named_params():
            n = value.size
            g = grads[pos:pos + n].reshape(value.shape)
            pos += n
            m = a.m.get(key, np.zeros_like(value))
            v = a.v.get(key, np.zeros_like(value))
            m = a.beta1 * m + (1 - a.beta1) * g
            v = a.beta2 * v + (1 - a.beta2) * g * g
            a.m[key], a.v[key] = m, v
            mhat = m / (1 - a.beta1 ** a.step)
            vhat = v / (1 - a.beta2 ** a.step)
            new.append((value - a.lr * mhat / (np.sqrt(vhat) + a.eps)).ravel())
        self.set_flat(np.concatenate(new))

    # -- checkpoint
    def save(self, path):
        path = Path(path)
        if path.suffix in (".json", ".bin"):
            path = path.with_suffix("")
        header = {"spec": self.spec.to_dict(), "rows": self.in_shape[1], "cols": self.in_shape[2],
                  "dtype": "f64le", "n_params": int(self.get_flat().size)}
        path.with_name(path.name + ".json").write_text(json.dumps(header))
        path.with_name(path.name + ".bin").write_bytes(self.get_flat().astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "Network":
        path = Path(path)
        if path.suffix in (".json", ".bin"):
            path = path.with_suffix("")
        hp, bp = path.with_name(path.name + ".json"), path.with_name(path.name + ".bin")
        for p in (hp, bp):
            if not p.exists():
                raise FileNotFoundError(f"missing file: {p}")
        header = json.loads(hp.read_text())
        try:
            spec = NetworkSpec.from_dict(header["spec"])
            net = cls(spec, int(header["rows"]), int(header["cols"]), project=False)
        except (KeyError, TypeError, ValueError) as exc:
            raise CubeFormatError(f"bad network header {hp}: {exc}") from None
        raw = bp.read_bytes()
        flat = np.frombuffer(raw, dtype="<f8")
        if flat.size != net.get_flat().size or not np.all(np.isfinite(flat)):
            raise CubeFormatError(f"{bp}: payload does not match the declared topology")
        net.set_flat(flat.astype(np.float64))
        return net


def project_weights(weight, budget, in_shape=None):
    """Return ``weight / max(1, sigma/budget)`` for a dense matrix or conv kernel."""
    if not budget > 0:
        raise ValueError("budget must be positive")
    sigma = top_singular(weight, in_shape=in_shape)[0]
    return np.asarray(weight, dtype=np.float64) / max(1.0, sigma / budget)


def forward(net: Network, x: HsiCube) -> HsiCube:
    return x.with_data(net.forward(x))


def loss_and_grad(net: Network, x, target, mask):
    return net.loss_and_grad(x, target, mask)


def dip_train_steps(net: Network, x, target, mask, steps=1, lr=None):
    """``steps`` rounds of (loss, gradient, Adam update, projection of every conv).

    Mutates and returns ``net`` together with the loss recorded before each update.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if lr is not None:
        net.adam.lr = lr
    trace = []
    for k in range(steps):
        loss, grads = net.loss_and_grad(x, target, mask)
        if not np.isfinite(loss) or not np.all(np.isfinite(grads)):
            raise NumericalAbort(f"DIP loss became non-finite at step {k}", k)
        trace.append(loss)
        if net.adam.lr != 0:
            net.adam_step(grads)
            net.project()
        else:
            net.adam.step += 1
    return net, trace


def _jacobian_probe(net, x, rng, iters=30, eps=1e-6):
    """Direction near the top right-singular vector of the Jacobian at ``x``."""
    v = rng.standard_normal(x.shape)
    v /= np.linalg.norm(v)
    for _ in range(iters):
        jv = (net.forward(x + eps * v) - net.forward(x - eps * v)) / (2 * eps)
        w = net.vjp(x, jv)
        nw = np.linalg.norm(w)
        if nw == 0:
            break
        v = w / nw
    return v


def certify_lipschitz(net: Network, trials=200, seed=0, adversarial=4) -> dict:
    """Empirical Lipschitz ratio over random and Jacobian-aligned pairs, plus the layer product bound.

    Passes when the empirical ratio is <= 1 + 1e-4 and the product of the
    per-layer constants is <= 1 + 1e-4.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    shape = net.in_shape
    ratios = []
    for _ in range(trials):
        a = rng.standard_normal(shape)
        b = a + rng.standard_normal(shape) * rng.choice([1.0, 0.1, 0.01])
        ratios.append(np.linalg.norm(net.forward(a) - net.forward(b)) / np.linalg.norm(a - b))
    for _ in range(adversarial):
        x = rng.standard_normal(shape)
        v = _jacobian_probe(net, x, rng)
        for scale in (1e-3, 1e-1):
            d = scale * v
            nd = np.linalg.norm(d)
            if nd > 0:
                ratios.append(np.linalg.norm(net.forward(x + d) - net.forward(x)) / nd)
    sigmas = net.layer_sigmas()
    bound = net.product_bound(sigmas)
    emp = float(max(ratios)) if ratios else 0.0
    return {
        "empirical_ratio": emp,
        "product_bound": float(bound),
        "per_layer_sigma": [float(s) for s in sigmas],
        "pass": bool(emp <= 1 + LIP_TOL and bound <= 1 + LIP_TOL),
    }
