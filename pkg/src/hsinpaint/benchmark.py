"""The shipped desk-scale benchmark: a rank-2 8x8x16 cube with 10% missing pixels and noise 0.05."""

from __future__ import annotations

from dataclasses import replace

from hsinpaint.cube import HsiCube, MaskCube, degrade, make_mask, synth_lowrank_cube
from hsinpaint.solver import SolverConfig

ROWS, COLS, BANDS, RANK = 8, 8, 16, 2
MASK_KIND, MISSING_FRACTION, SIGMA = "random_pixels", 0.1, 0.05
TRUTH_SEED, MASK_SEED, NOISE_SEED = 0, 1, 2

# At 64 pixels the nuclear norm is large relative to the data misfit (it grows
# like sqrt(pixels*bands), the misfit linearly), so the data weight is raised.
PRESET = {"gamma": 5.0}


def make_benchmark(seed_offset: int = 0) -> tuple[HsiCube, MaskCube, HsiCube]:
    """``(truth, mask, observation)`` of the benchmark instance."""
    truth = synth_lowrank_cube(ROWS, COLS, BANDS, RANK, seed=TRUTH_SEED + seed_offset)
    mask = make_mask(ROWS, COLS, BANDS, MASK_KIND, MISSING_FRACTION, seed=MASK_SEED + seed_offset)
    y = degrade(truth, mask, SIGMA, seed=NOISE_SEED + seed_offset)
    return truth, mask, y


def benchmark_config(base: SolverConfig | None = None, **overrides) -> SolverConfig:
    """``base`` (default config if None) with the benchmark preset and ``overrides`` applied."""
    return replace(base or SolverConfig(), **{**PRESET, **overrides})
