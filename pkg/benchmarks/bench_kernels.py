"""Time the compiled kernels against the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``. Both backends
are imported directly, so the result does not depend on HSINPAINT_PURE_PYTHON.
"""

import argparse
import timeit

import numpy as np

from hsinpaint import _pykernels

try:
    from hsinpaint import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    for cin, cout, size in ((16, 16, 8), (16, 32, 4), (32, 16, 8), (16, 16, 32)):
        x = rng.standard_normal((cin, size, size))
        w = rng.standard_normal((cout, cin, 3, 3))
        gy = rng.standard_normal((cout, size, size))
        tag = f"{cin}->{cout} @ {size}x{size}"
        yield f"conv2d {tag}", "conv2d", (x, w, 1)
        yield f"conv2d_grad_input {tag}", "conv2d_grad_input", (gy, w, 1, size, size)
        yield f"conv2d_grad_weight {tag}", "conv2d_grad_weight", (x, gy, 3, 1)
    for bands, size in ((16, 8), (4, 16), (4, 32)):
        g = rng.random((bands, size, size))
        yield f"nlm_affinity {bands}x{size}x{size}", "nlm_affinity", (g, 1, 2, 1.0)


def best_time(fn, args, repeat):
    number = max(1, int(0.05 / max(timeit.timeit(lambda: fn(*args), number=1), 1e-7)))
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; only the numpy backend is available")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':42s} {'numpy us':>10s} {'cython us':>10s} {'speedup':>8s} {'max diff':>10s}")
    for name, kernel, kargs in cases(rng):
        py = getattr(_pykernels, kernel)
        t_py = best_time(py, kargs, args.repeat)
        if _ckernels is None:
            print(f"{name:42s} {t_py * 1e6:10.1f}")
            continue
        cy = getattr(_ckernels, kernel)
        t_cy = best_time(cy, kargs, args.repeat)
        diff = float(np.max(np.abs(np.asarray(py(*kargs)) - np.asarray(cy(*kargs)))))
        print(f"{name:42s} {t_py * 1e6:10.1f} {t_cy * 1e6:10.1f} {t_py / t_cy:7.2f}x {diff:10.2e}")


if __name__ == "__main__":
    main()
