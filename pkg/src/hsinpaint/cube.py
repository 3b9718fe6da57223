"""Hyperspectral cube data model, binary I/O, masks, noise and patch algebra.

Cubes are stored band-major: ``data[b, r, c]`` with each band a contiguous
row-major plane. The on-disk format is a JSON header ``<name>.json`` plus a raw
little-endian payload ``<name>.bin`` in the same order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage

from hsinpaint.errors import CubeFormatError, ShapeMismatchError

MASK_KINDS = ("stripes", "block", "random_pixels", "text")


@dataclass(frozen=True, eq=False)
class HsiCube:
    """A real-valued cube of shape (bands, rows, cols).

    ``value_range`` is the dynamic range used to normalize quality metrics.
    """

    data: np.ndarray
    value_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"cube data must be a non-empty 3D array, got shape {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if not np.all(np.isfinite(data)):
            raise ValueError("cube contains non-finite values")
        lo, hi = (float(v) for v in self.value_range)
        if not hi > lo:
            raise ValueError(f"value_range must satisfy lo < hi, got {(lo, hi)}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "value_range", (lo, hi))

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def rows(self) -> int:
        return self.data.shape[1]

    @property
    def cols(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def unfold(self) -> np.ndarray:
        """Pixels x bands matrix (rows*cols, bands)."""
        return self.data.reshape(self.bands, -1).T

    @classmethod
    def from_unfolded(cls, mat, rows, cols, value_range=(0.0, 1.0)) -> "HsiCube":
        mat = np.asarray(mat)
        return cls(np.ascontiguousarray(mat.T).reshape(mat.shape[1], rows, cols), value_range)

    def with_data(self, data) -> "HsiCube":
        return HsiCube(data, self.value_range)

    def __eq__(self, other):
        if not isinstance(other, HsiCube):
            return NotImplemented
        return (self.value_range == other.value_range
                and self.data.dtype == other.data.dtype
                and np.array_equal(self.data, other.data))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class MaskCube:
    """Binary cube; 1 marks an observed entry, 0 a missing one."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"mask data must be 3D, got shape {data.shape}")
        if not np.all((data == 0) | (data == 1)):
            raise ValueError("mask values must be exactly 0 or 1")
        object.__setattr__(self, "data", data.astype(np.uint8))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def missing_fraction(self) -> float:
        return float(1.0 - self.data.mean())

    def __eq__(self, other):
        if not isinstance(other, MaskCube):
            return NotImplemented
        return np.array_equal(self.data, other.data)

    __hash__ = None


def _check_shape(a, b, what="shape"):
    if tuple(a) != tuple(b):
        raise ShapeMismatchError(f"{what} mismatch: {tuple(a)} vs {tuple(b)}")


# ---------------------------------------------------------------------------
# binary I/O

def _pair(path) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix in (".json", ".bin"):
        path = path.with_suffix("")
    return path.with_name(path.name + ".json"), path.with_name(path.name + ".bin")


def _read_pair(path, dtype_tag):
    header_path, payload_path = _pair(path)
    for p in (header_path, payload_path):
        if not p.exists():
            raise FileNotFoundError(f"missing file: {p}")
    header = json.loads(header_path.read_text())
    try:
        rows, cols, bands = int(header["rows"]), int(header["cols"]), int(header["bands"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CubeFormatError(f"bad header {header_path}: {exc}") from None
    if header.get("dtype") != dtype_tag:
        raise CubeFormatError(f"{header_path}: expected dtype {dtype_tag!r}, got {header.get('dtype')!r}")
    if header.get("order", "band-major") != "band-major":
        raise CubeFormatError(f"{header_path}: unsupported order {header.get('order')!r}")
    np_dtype = "<f4" if dtype_tag == "f32le" else "u1"
    raw = payload_path.read_bytes()
    expected = rows * cols * bands * np.dtype(np_dtype).itemsize
    if len(raw) != expected:
        raise CubeFormatError(
            f"{payload_path}: header declares {rows}x{cols}x{bands} "
            f"({expected} bytes) but payload has {len(raw)} bytes")
    data = np.frombuffer(raw, dtype=np_dtype).reshape(bands, rows, cols)
    return header, data.astype(np.float32 if dtype_tag == "f32le" else np.uint8)


def _write_pair(path, header, payload: bytes):
    header_path, payload_path = _pair(path)
    header_path.write_text(json.dumps(header))
    payload_path.write_bytes(payload)


def save_cube(cube: HsiCube, path) -> None:
    """Write ``cube`` as ``<path>.json`` + ``<path>.bin`` (float32, little-endian).

    Values are quantized to float32; cubes whose values are already
    float32-representable round-trip bit-exactly through :func:`load_cube`.
    """
    header = {
        "rows": cube.rows, "cols": cube.cols, "bands": cube.bands,
        "dtype": "f32le", "order": "band-major", "range": list(cube.value_range),
    }
    _write_pair(path, header, np.ascontiguousarray(cube.data, dtype="<f4").tobytes())


def load_cube(path) -> HsiCube:
    header, data = _read_pair(path, "f32le")
    if not np.all(np.isfinite(data)):
        raise CubeFormatError(f"{path}: payload contains non-finite values")
    lo, hi = header.get("range", [0.0, 1.0])
    return HsiCube(data, (lo, hi))


def save_mask(mask: MaskCube, path) -> None:
    b, r, c = mask.shape
    header = {"rows": r, "cols": c, "bands": b, "dtype": "u8", "order": "band-major", "range": [0, 1]}
    _write_pair(path, header, np.ascontiguousarray(mask.data, dtype=np.uint8).tobytes())


def load_mask(path) -> MaskCube:
    _, data = _read_pair(path, "u8")
    try:
        return MaskCube(data)
    except ValueError as exc:
        raise CubeFormatError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# degradation

def apply_mask(cube: HsiCube, mask: MaskCube) -> HsiCube:
    """Zero the entries of ``cube`` where ``mask`` is 0."""
    _check_shape(cube.shape, mask.shape)
    return cube.with_data(cube.data * mask.data)


def add_gaussian_noise(cube: HsiCube, sigma: float, seed: int) -> HsiCube:
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    data = np.asarray(cube.data, dtype=np.float64)
    if sigma == 0:
        return cube.with_data(data.copy())
    rng = np.random.default_rng(seed)
    return cube.with_data(data + sigma * rng.standard_normal(data.shape))


def degrade(truth: HsiCube, mask: MaskCube, sigma: float, seed: int) -> HsiCube:
    """Noisy, incomplete observation: noise first, then masking, so missing entries read 0."""
    return apply_mask(add_gaussian_noise(truth, sigma, seed), mask)


# ---------------------------------------------------------------------------
# patches

def _starts(n, p, s):
    starts = list(range(0, n - p + 1, s))
    if starts[-1] + p < n:
        starts.append(n - p)
    return starts


@dataclass(frozen=True)
class PatchLayout:
    """Placement of rectangular patches over a ``rows`` x ``cols`` plane.

    Patch origins step by the stride; a final origin flush with the far edge
    is added when the stride would leave pixels uncovered.
    """

    rows: int
    cols: int
    patch_rows: int
    patch_cols: int
    stride_rows: int = 1
    stride_cols: int = 1

    def __post_init__(self):
        for name in ("rows", "cols", "patch_rows", "patch_cols", "stride_rows", "stride_cols"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.patch_rows > self.rows or self.patch_cols > self.cols:
            raise ValueError("patch larger than the spatial extent")
        if self.stride_rows > self.patch_rows or self.stride_cols > self.patch_cols:
            raise ValueError("stride larger than the patch would leave pixels uncovered")

    @classmethod
    def full(cls, rows: int, cols: int) -> "PatchLayout":
        """One patch per band covering the whole plane."""
        return cls(rows, cols, rows, cols, rows, cols)

    @cached_property
    def row_starts(self) -> list[int]:
        return _starts(self.rows, self.patch_rows, self.stride_rows)

    @cached_property
    def col_starts(self) -> list[int]:
        return _starts(self.cols, self.patch_cols, self.stride_cols)

    @property
    def grid_shape(self) -> tuple[int, int]:
        return len(self.row_starts), len(self.col_starts)

    @property
    def count(self) -> int:
        return len(self.row_starts) * len(self.col_starts)

    @property
    def patch_len(self) -> int:
        return self.patch_rows * self.patch_cols

    @cached_property
    def indices(self) -> np.ndarray:
        """(count, patch_len) flat indices of each patch into the plane."""
        local = (np.arange(self.patch_rows)[:, None] * self.cols
                 + np.arange(self.patch_cols)[None, :]).ravel()
        origins = (np.asarray(self.row_starts)[:, None] * self.cols
                   + np.asarray(self.col_starts)[None, :]).ravel()
        return origins[:, None] + local[None, :]

    @cached_property
    def overlap_counts(self) -> np.ndarray:
        counts = np.bincount(self.indices.ravel(), minlength=self.rows * self.cols)
        return counts.reshape(self.rows, self.cols).astype(np.float64)


def extract_patches(cube: HsiCube, layout: PatchLayout, band: int) -> np.ndarray:
    """Vectorized patches of one band, shape (layout.count, patch_len)."""
    if not 0 <= band < cube.bands:
        raise IndexError(f"band {band} out of range for a cube with {cube.bands} bands")
    _check_shape(cube.data.shape[1:], (layout.rows, layout.cols), "spatial extent")
    return cube.data[band].reshape(-1)[layout.indices].astype(np.float64)


def assemble_patches(patches, layout: PatchLayout, shape) -> tuple[np.ndarray, np.ndarray]:
    """Adjoint of :func:`extract_patches`: scatter-add patches back into a plane.

    Returns ``(plane, counts)`` where ``counts`` holds per-pixel overlap
    multiplicities.
    """
    _check_shape(shape, (layout.rows, layout.cols), "plane shape")
    if layout.count == 0 or len(patches) == 0:
        raise ValueError("no patches to assemble")
    lengths = {len(p) for p in patches}
    if lengths != {layout.patch_len}:
        raise ValueError(f"patch lengths {sorted(lengths)} do not match layout ({layout.patch_len})")
    if len(patches) != layout.count:
        raise ValueError(f"got {len(patches)} patches, layout has {layout.count}")
    arr = np.asarray(patches, dtype=np.float64)
    plane = np.bincount(layout.indices.ravel(), weights=arr.ravel(),
                        minlength=layout.rows * layout.cols)
    return plane.reshape(shape), layout.overlap_counts.copy()


def cube_to_patches(data: np.ndarray, layout: PatchLayout) -> np.ndarray:
    """All patches of a (bands, rows, cols) array as columns: (patch_len, bands*count).

    Column ``b * count + i`` is patch ``i`` of band ``b``.
    """
    flat = data.reshape(data.shape[0], -1)
    return flat[:, layout.indices].reshape(-1, layout.patch_len).T


def patches_to_cube(cols: np.ndarray, layout: PatchLayout, bands: int) -> np.ndarray:
    """Adjoint of :func:`cube_to_patches` (scatter-add, no normalization)."""
    n = layout.rows * layout.cols
    per_band = cols.T.reshape(bands, layout.count * layout.patch_len)
    offsets = (np.arange(bands) * n)[:, None]
    idx = (layout.indices.ravel()[None, :] + offsets).ravel()
    out = np.bincount(idx, weights=per_band.ravel(), minlength=bands * n)
    return out.reshape(bands, layout.rows, layout.cols)


# ---------------------------------------------------------------------------
# synthesis

def _smooth_field(rng, rows, cols):
    sigma = max(1.0, min(rows, cols) / 4.0)
    f = ndimage.gaussian_filter(rng.standard_normal((rows, cols)), sigma, mode="wrap")
    span = f.max() - f.min()
    return (f - f.min()) / span if span > 0 else np.ones_like(f)


def _smooth_spectrum(rng, bands):
    t = np.linspace(0.0, 1.0, bands)
    s = 0.2 + np.zeros(bands)
    for _ in range(3):
        s += rng.uniform(0.2, 1.0) * np.exp(-0.5 * ((t - rng.uniform()) / rng.uniform(0.08, 0.3)) ** 2)
    return s


def synth_lowrank_cube(rows, cols, bands, rank, seed, value_range=(0.0, 1.0)) -> HsiCube:
    """Spatially smooth cube whose pixels x bands unfolding has rank <= ``rank``.

    Built as a linear mixture ``A @ S.T`` of non-negative smooth abundance maps
    and smooth spectra, then scaled so the maximum equals ``value_range[1]``.
    Only a scale is applied (an offset would add a rank), so ``value_range[0]``
    must be <= 0.
    """
    if rank < 1 or rank > min(rows * cols, bands):
        raise ValueError(f"rank must be in [1, {min(rows * cols, bands)}], got {rank}")
    lo, hi = value_range
    if lo > 0 or hi <= 0:
        raise ValueError("synth_lowrank_cube needs value_range with lo <= 0 < hi")
    rng = np.random.default_rng(seed)
    abundances = np.stack([_smooth_field(rng, rows, cols).ravel() for _ in range(rank)], axis=1)
    spectra = np.stack([_smooth_spectrum(rng, bands) for _ in range(rank)], axis=1)
    mat = abundances @ spectra.T
    mat *= hi / mat.max()
    return HsiCube.from_unfolded(mat, rows, cols, (lo, hi))


# 3x5 glyphs used by the "text" mask
_GLYPHS = [
    ["111", "100", "111", "001", "111"],  # S
    ["101", "101", "111", "101", "101"],  # H
    ["111", "010", "010", "010", "111"],  # I
    ["111", "101", "111", "100", "100"],  # P
    ["101", "111", "111", "101", "101"],  # N
    ["111", "100", "110", "100", "111"],  # E
]


def _text_order(rows, cols, rng):
    """Pixels covered by glyph strokes in reading order, over a few shifted passes."""
    order = []
    seen = np.zeros((rows, cols), dtype=bool)
    for shift in range(4):
        r0, c0 = rng.integers(0, 6), rng.integers(0, 4)
        for top in range(r0 - 6 + shift, rows, 6):
            for left in range(c0 - 4 + 2 * shift, cols, 4):
                glyph = _GLYPHS[rng.integers(len(_GLYPHS))]
                for gr, line in enumerate(glyph):
                    for gc, ch in enumerate(line):
                        r, c = top + gr, left + gc
                        if ch == "1" and 0 <= r < rows and 0 <= c < cols and not seen[r, c]:
                            seen[r, c] = True
                            order.append(r * cols + c)
    order.extend(np.flatnonzero(~seen.ravel()).tolist())
    return np.asarray(order)


def make_mask(rows, cols, bands, kind, fraction, seed) -> MaskCube:
    """Spatial missing-data pattern replicated across all bands.

    ``random_pixels`` and ``text`` hit the requested missing count exactly
    (rounded, at least one pixel). ``stripes`` removes whole columns and
    ``block`` one rectangle, so their fraction is quantized to the column
    width / rectangle geometry.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    if kind not in MASK_KINDS:
        raise ValueError(f"unknown mask kind {kind!r}; expected one of {MASK_KINDS}")
    rng = np.random.default_rng(seed)
    n = rows * cols
    k = min(max(1, round(fraction * n)), n - 1)
    plane = np.ones(n, dtype=np.uint8)
    if kind == "random_pixels":
        plane[rng.choice(n, size=k, replace=False)] = 0
    elif kind == "text":
        plane[_text_order(rows, cols, rng)[:k]] = 0
    elif kind == "stripes":
        m = min(max(1, round(fraction * cols)), cols - 1) if cols > 1 else 1
        plane = plane.reshape(rows, cols)
        plane[:, rng.choice(cols, size=m, replace=False)] = 0
    else:  # block
        h = min(rows, max(1, round(math.sqrt(k * rows / cols))))
        w = min(cols, max(1, round(k / h)))
        if h * w >= n:
            w = max(1, w - 1)
        r0, c0 = rng.integers(0, rows - h + 1), rng.integers(0, cols - w + 1)
        plane = plane.reshape(rows, cols)
        plane[r0:r0 + h, c0:c0 + w] = 0
    plane = plane.reshape(rows, cols)
    return MaskCube(np.broadcast_to(plane, (bands, rows, cols)).copy())
