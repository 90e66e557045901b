"""
Uniform fixed-point quantization grids

This module provides the integer grids used for latents, symbols and scale
prescales, together with post-training calibration: a per-tensor or
per-channel step sweep that picks the grid minimizing mean squared error.
"""

import logging
import math
from dataclasses import dataclass
from typing import List

import numpy as np

from ..errors import QuantizerError

logger = logging.getLogger(__name__)

SUPPORTED_BIT_WIDTHS = (8, 16)

# 63 geometric points over [0.5, 1.2] plus the plain max-abs scale.
SCALE_SWEEP = np.unique(np.append(np.geomspace(0.5, 1.2, 63), 1.0))

_MAX_OFFSET_CANDIDATES = 257


def round_half_away(values):
    """Round to nearest integer, halves away from zero."""
    values = np.asarray(values, dtype=np.float64)
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


@dataclass(frozen=True)
class QuantGrid:
    """
    Uniform integer grid.

    A level l represents the real value (l - zero_offset) * step. Symmetric
    grids have zero_offset 0 and levels in [-(2^(w-1) - 1), 2^(w-1) - 1];
    asymmetric grids have levels in [0, 2^w - 1].
    """

    step: float
    zero_offset: int = 0
    bit_width: int = 8
    symmetric: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.step) and self.step > 0):
            raise QuantizerError(f"Grid step must be positive and finite, got {self.step}")
        if self.bit_width not in SUPPORTED_BIT_WIDTHS:
            raise QuantizerError(f"Bit width must be one of {SUPPORTED_BIT_WIDTHS}, got {self.bit_width}")
        if self.symmetric and self.zero_offset != 0:
            raise QuantizerError("Symmetric grids cannot have a zero offset")

    @property
    def level_min(self) -> int:
        return -(2 ** (self.bit_width - 1) - 1) if self.symmetric else 0

    @property
    def level_max(self) -> int:
        return 2 ** (self.bit_width - 1) - 1 if self.symmetric else 2 ** self.bit_width - 1


def quantize(values, grid: QuantGrid) -> np.ndarray:
    """
    Map real values to grid levels, saturating at the grid limits.

    Args:
        values: Scalar or array of reals
        grid: Target grid

    Returns:
        int64 array of levels
    """
    scaled = np.asarray(values, dtype=np.float64) / grid.step
    levels = round_half_away(scaled) + grid.zero_offset
    return np.clip(levels, grid.level_min, grid.level_max).astype(np.int64)


def dequantize(levels, grid: QuantGrid) -> np.ndarray:
    """
    Map grid levels back to reals.

    Raises:
        QuantizerError: If any level lies outside the grid
    """
    levels = np.asarray(levels, dtype=np.int64)
    if levels.size and (levels.min() < grid.level_min or levels.max() > grid.level_max):
        error_msg = (f"Level outside grid range [{grid.level_min}, {grid.level_max}]: "
                     f"[{levels.min()}, {levels.max()}]")
        logger.error(error_msg)
        raise QuantizerError(error_msg)
    return (levels - grid.zero_offset).astype(np.float64) * grid.step


def quantization_mse(samples, grid: QuantGrid) -> float:
    """Mean squared error of snapping ``samples`` to ``grid``."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        return 0.0
    error = dequantize(quantize(samples, grid), grid) - samples
    return float(np.mean(error * error))


def _offset_candidates(lo: float, hi: float, step: float, level_max: int) -> np.ndarray:
    first = math.ceil(-lo / step)
    last = math.floor(level_max - hi / step)
    if first > last:
        # Range wider than the grid: centre it.
        return np.array([int(round(level_max / 2.0 - (lo + hi) / (2.0 * step)))])
    count = last - first + 1
    if count > _MAX_OFFSET_CANDIDATES:
        return np.unique(np.round(np.linspace(first, last, _MAX_OFFSET_CANDIDATES))).astype(np.int64)
    return np.arange(first, last + 1, dtype=np.int64)


def fit_grid_mse(samples, bit_width: int = 8, symmetric: bool = True) -> QuantGrid:
    """
    Calibrate a grid to ``samples`` by sweeping the step.

    Candidate steps are max|x| * s / (2^(w-1) - 1) for s in SCALE_SWEEP;
    asymmetric grids also sweep every zero offset that keeps [min, max]
    representable. The first candidate with the lowest MSE wins.

    Args:
        samples: Calibration data (any shape)
        bit_width: 8 or 16
        symmetric: Fit a symmetric grid if True

    Returns:
        Best QuantGrid; all-zero input gives step 1 and offset 0
    """
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if bit_width not in SUPPORTED_BIT_WIDTHS:
        raise QuantizerError(f"Bit width must be one of {SUPPORTED_BIT_WIDTHS}, got {bit_width}")
    amax = float(np.abs(samples).max()) if samples.size else 0.0
    if amax == 0.0:
        logger.warning("Degenerate calibration data (all zeros); using unit step")
        return QuantGrid(1.0, 0, bit_width, symmetric)

    half_levels = 2 ** (bit_width - 1) - 1
    best_grid = None
    best_mse = math.inf
    for scale in SCALE_SWEEP:
        step = amax * float(scale) / half_levels
        if symmetric:
            grid = QuantGrid(step, 0, bit_width, True)
            mse = quantization_mse(samples, grid)
            if mse < best_mse:
                best_grid, best_mse = grid, mse
            continue

        level_max = 2 ** bit_width - 1
        offsets = _offset_candidates(float(samples.min()), float(samples.max()), step, level_max)
        rounded = round_half_away(samples / step)
        levels = np.clip(rounded[None, :] + offsets[:, None], 0, level_max)
        errors = (levels - offsets[:, None]) * step - samples[None, :]
        mses = np.mean(errors * errors, axis=1)
        index = int(np.argmin(mses))
        if mses[index] < best_mse:
            best_grid = QuantGrid(step, int(offsets[index]), bit_width, False)
            best_mse = float(mses[index])

    logger.debug(f"Fitted grid step={best_grid.step:.6g} offset={best_grid.zero_offset} mse={best_mse:.6g}")
    return best_grid


def fit_per_channel(tensor, bit_width: int = 8, axis: int = 0,
                    symmetric: bool = True) -> List[QuantGrid]:
    """Fit one grid per slice of ``tensor`` along ``axis``."""
    tensor = np.asarray(tensor, dtype=np.float64)
    channels = np.moveaxis(tensor, axis, 0)
    return [fit_grid_mse(channel, bit_width, symmetric) for channel in channels]
