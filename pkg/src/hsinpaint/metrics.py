"""Band-averaged PSNR and SSIM, pixel-averaged spectral angle."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import fftconvolve

from hsinpaint.cube import HsiCube
from hsinpaint.errors import ShapeMismatchError

PSNR_CEILING = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


@dataclass(frozen=True)
class QualityReport:
    mpsnr: float
    mssim: float | None
    msam: float

    def to_dict(self):
        return asdict(self)


def _pair(ref: HsiCube, test: HsiCube):
    if ref.shape != test.shape:
        raise ShapeMismatchError(f"shape mismatch: {ref.shape} vs {test.shape}")
    return np.asarray(ref.data, dtype=np.float64), np.asarray(test.data, dtype=np.float64)


def mpsnr(ref: HsiCube, test: HsiCube, ceiling: float = PSNR_CEILING) -> float:
    """Mean over bands of 10 log10(range^2 / MSE), each band capped at ``ceiling``."""
    a, b = _pair(ref, test)
    lo, hi = ref.value_range
    mse = np.mean((a - b) ** 2, axis=(1, 2))
    with np.errstate(divide="ignore"):
        psnr = np.where(mse > 0, 10.0 * np.log10((hi - lo) ** 2 / np.where(mse > 0, mse, 1.0)), ceiling)
    return float(np.mean(np.minimum(psnr, ceiling)))


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    t = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (t / sigma) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_band(x, y, win, c1, c2):
    f = lambda img: fftconvolve(img, win, mode="valid")  # noqa: E731
    mx, my = f(x), f(y)
    sxx = f(x * x) - mx * mx
    syy = f(y * y) - my * my
    sxy = f(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def mssim(ref: HsiCube, test: HsiCube) -> float:
    """Mean over bands of SSIM (11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03)."""
    a, b = _pair(ref, test)
    if min(a.shape[1:]) < SSIM_WINDOW:
        raise ValueError(f"spatial extent {a.shape[1:]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    lo, hi = ref.value_range
    rng = hi - lo
    c1, c2 = (0.01 * rng) ** 2, (0.03 * rng) ** 2
    win = _gaussian_window()
    return float(np.mean([_ssim_band(a[k], b[k], win, c1, c2) for k in range(a.shape[0])]))


def msam(ref: HsiCube, test: HsiCube) -> float:
    """Mean spectral angle (radians) over pixels.

    Pixels where either spectrum is all-zero are skipped; if every pixel is
    skipped the result is 0 and a ``RuntimeWarning`` is emitted.
    """
    a, b = _pair(ref, test)
    sa = a.reshape(a.shape[0], -1)
    sb = b.reshape(b.shape[0], -1)
    na, nb = np.linalg.norm(sa, axis=0), np.linalg.norm(sb, axis=0)
    keep = (na > 0) & (nb > 0)
    if not np.any(keep):
        warnings.warn("msam: every pixel has a zero spectrum; returning 0", RuntimeWarning, stacklevel=2)
        return 0.0
    cos = np.sum(sa[:, keep] * sb[:, keep], axis=0) / (na[keep] * nb[keep])
    return float(np.mean(np.arccos(np.clip(cos, -1.0, 1.0))))


def quality_report(ref: HsiCube, test: HsiCube) -> QualityReport:
    """All three metrics; ``mssim`` is None when the cube is smaller than the SSIM window."""
    try:
        ssim = mssim(ref, test)
    except ValueError:
        ssim = None
    return QualityReport(mpsnr=mpsnr(ref, test), mssim=ssim, msam=msam(ref, test))
