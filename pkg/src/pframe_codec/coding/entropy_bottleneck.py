"""
Integer entropy bottleneck and Gaussian symbol model

Latents and means are snapped to a fixed-point latent grid, their difference
is rounded into the signed 8-bit symbol alphabet, and each symbol is coded
under a zero-mean discretized Gaussian whose scale comes from an 8-bit
prescale level through an exponential transform. The probability tables for
all 256 prescale levels are precomputed and quantized to 16-bit precision.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy.special import ndtr

from ..errors import BottleneckError, SymbolRangeError
from .quantizer import QuantGrid, dequantize, quantize, round_half_away

logger = logging.getLogger(__name__)

SIGMA_MIN = 1.0 / 16.0
SIGMA_MAX = 256.0
RHO_LEVELS = 256
SYMBOL_MIN = -127
SYMBOL_MAX = 127
ALPHABET_SIZE = SYMBOL_MAX - SYMBOL_MIN + 1
PRECISION_BITS = 16
PRECISION_TOTAL = 1 << PRECISION_BITS

SYMBOL_GRID = QuantGrid(step=1.0, zero_offset=0, bit_width=8, symmetric=True)
# Level l represents rho = (l + 1) / 256, covering (0, 1].
PRESCALE_GRID = QuantGrid(step=1.0 / RHO_LEVELS, zero_offset=-1, bit_width=8, symmetric=False)


class LatentStep(Enum):
    """Latent grid choices, stored in the container as a one-byte code."""

    ONE = '1'
    FIFTH = '1/5'
    THIRD = '1/3'
    EXACT = 'exact'

    @property
    def code(self) -> int:
        return list(LatentStep).index(self)

    @property
    def divisor(self) -> Optional[int]:
        return {'1': 1, '1/5': 5, '1/3': 3}.get(self.value)

    @classmethod
    def from_code(cls, code: int) -> 'LatentStep':
        members = list(cls)
        if not 0 <= code < len(members):
            raise BottleneckError(f"Unknown latent grid code {code}")
        return members[code]


def latent_grid(step: LatentStep) -> Optional[QuantGrid]:
    """
    Grid used to snap latents and means; None for exact pass-through.

    Sub-integer steps use a 16-bit container so the grid still spans the
    full symbol alphabet.
    """
    if step is LatentStep.EXACT:
        return None
    if step is LatentStep.ONE:
        return QuantGrid(1.0, 0, 8, True)
    return QuantGrid(1.0 / step.divisor, 0, 16, True)


@dataclass(frozen=True)
class Bottleneck:
    """Entropy bottleneck configuration."""

    latent_step: LatentStep = LatentStep.FIFTH
    sigma_min: float = SIGMA_MIN
    sigma_max: float = SIGMA_MAX

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise BottleneckError(f"Need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}")

    @property
    def latent_grid(self) -> Optional[QuantGrid]:
        return latent_grid(self.latent_step)

    @property
    def symbol_grid(self) -> QuantGrid:
        return SYMBOL_GRID

    @property
    def prescale_grid(self) -> QuantGrid:
        return PRESCALE_GRID


def form_symbols(y, mu, bottleneck: Bottleneck) -> Tuple[np.ndarray, np.ndarray]:
    """
    Form transmitted symbols from latents and predicted means.

    s = round(Q(y) - Q(mu)) clamped to [-127, 127], and the decoded latent is
    y_hat = s + Q(mu). Grid arithmetic is carried out on integer levels, so
    steps of 1/5 and 1/3 never produce exact half-way ties.

    Args:
        y: Latent values
        mu: Predicted means (broadcast against y)
        bottleneck: Bottleneck configuration

    Returns:
        (symbols as int8, y_hat as float64)
    """
    y, mu = np.broadcast_arrays(np.asarray(y, dtype=np.float64), np.asarray(mu, dtype=np.float64))
    grid = bottleneck.latent_grid
    if grid is None:
        symbols = round_half_away(y - mu)
        mu_hat = mu
    else:
        divisor = bottleneck.latent_step.divisor
        diff = quantize(y, grid) - quantize(mu, grid)
        symbols = np.sign(diff) * ((2 * np.abs(diff) + divisor) // (2 * divisor))
        mu_hat = dequantize(quantize(mu, grid), grid)
    symbols = np.clip(symbols, SYMBOL_MIN, SYMBOL_MAX).astype(np.int8)
    return symbols, symbols.astype(np.float64) + mu_hat


def scale_transform(rho, sigma_min: float = SIGMA_MIN, sigma_max: float = SIGMA_MAX):
    """
    Exponential map from prescale rho in (0, 1] to sigma.

    Raises:
        BottleneckError: If any rho lies outside (0, 1]
    """
    rho = np.asarray(rho, dtype=np.float64)
    if rho.size and (rho.min() <= 0.0 or rho.max() > 1.0):
        error_msg = f"Prescale rho must lie in (0, 1], got range [{rho.min()}, {rho.max()}]"
        logger.error(error_msg)
        raise BottleneckError(error_msg)
    sigma = sigma_min * (sigma_max / sigma_min) ** rho
    return float(sigma) if sigma.ndim == 0 else sigma


def rho_for_level(level) -> np.ndarray:
    return dequantize(level, PRESCALE_GRID)


def rho_level_for_sigma(sigma, sigma_min: float = SIGMA_MIN, sigma_max: float = SIGMA_MAX) -> np.ndarray:
    """Snap sigma to the nearest prescale level (log domain); sigma <= 0 maps to level 0."""
    sigma = np.asarray(sigma, dtype=np.float64)
    safe = np.maximum(sigma, sigma_min * 1e-3)
    rho = np.log(safe / sigma_min) / math.log(sigma_max / sigma_min)
    return quantize(rho, PRESCALE_GRID)


def discretized_gaussian(sigma: float) -> np.ndarray:
    """
    Probabilities of s in [-127, 127] under N(0, sigma^2) integrated over
    unit bins, with the tail mass folded into the end symbols.
    """
    magnitude = np.arange(0, SYMBOL_MAX + 1, dtype=np.float64)
    tail = ndtr(-(magnitude + 0.5) / sigma)
    half = np.empty(SYMBOL_MAX + 1)
    half[0] = 1.0 - 2.0 * tail[0]
    half[1:] = tail[:-1] - tail[1:]
    half[SYMBOL_MAX] = tail[SYMBOL_MAX - 1]
    return np.concatenate([half[:0:-1], half])


def _quantize_symmetric(half: np.ndarray) -> np.ndarray:
    """
    Integer frequencies for |s| = 0..127 whose symmetric expansion sums to 2^16,
    every symbol at least 1.
    """
    target = half * PRECISION_TOTAL
    freq = np.maximum(1, np.floor(target)).astype(np.int64)
    remainder = target - np.floor(target)

    def deficit():
        return PRECISION_TOTAL - int(freq[0] + 2 * freq[1:].sum())

    diff = deficit()
    if diff % 2:
        freq[0] += 1 if diff > 0 or freq[0] <= 1 else -1
        diff = deficit()

    order = np.argsort(-remainder, kind='stable')
    cursor = 0
    while diff > 0:
        index = order[cursor % len(order)]
        freq[index] += 2 if index == 0 else 1
        diff -= 2
        cursor += 1
    while diff < 0:
        available = np.where(freq > np.where(np.arange(len(freq)) == 0, 2, 1), freq, -1)
        index = int(np.argmax(available))
        freq[index] -= 2 if index == 0 else 1
        diff += 2
    return freq


def _entropy_bits(freq: np.ndarray) -> float:
    p = freq / PRECISION_TOTAL
    return float(-(p * np.log2(p)).sum())


class SymbolModel:
    """
    Precomputed 16-bit probability tables for every prescale level.

    Tables are not distinct per level. At the sharp end the Gaussians are
    narrower than one symbol, so once quantized to 2^16 with every symbol
    kept at frequency 1 or more, and with flatter tables carried forward,
    roughly the lowest quarter of the levels (0 to about 63) code with one
    and the same table. Prescales in that range therefore all cost the same.

    Attributes:
        sigmas: Scale of each level, shape (256,)
        frequencies: Integer frequencies, shape (256, 255), rows sum to 2^16
        cumulative: Cumulative frequencies, shape (256, 256), int64
        bits: Ideal code length of each symbol in bits, shape (256, 255)
    """

    def __init__(self, sigma_min: float = SIGMA_MIN, sigma_max: float = SIGMA_MAX):
        """
        Initialize symbol model.

        Args:
            sigma_min: Scale at the lowest prescale
            sigma_max: Scale at rho = 1
        """
        self.sigma_min = sigma_min
        self.sigma_max = sigma_max
        levels = np.arange(RHO_LEVELS)
        self.sigmas = np.asarray(scale_transform(rho_for_level(levels), sigma_min, sigma_max))

        self.frequencies = np.empty((RHO_LEVELS, ALPHABET_SIZE), dtype=np.int64)
        previous_entropy = -1.0
        carried = 0
        for level, sigma in enumerate(self.sigmas):
            pmf = discretized_gaussian(float(sigma))
            half = _quantize_symmetric(pmf[SYMBOL_MAX:])
            row = np.concatenate([half[:0:-1], half])
            entropy = _entropy_bits(row)
            # Tail folding makes very wide Gaussians spikier at the alphabet
            # edges; keep the table family monotone by carrying the flatter one.
            if entropy < previous_entropy:
                row = self.frequencies[level - 1]
                carried += 1
            else:
                previous_entropy = entropy
            self.frequencies[level] = row

        self.cumulative = np.zeros((RHO_LEVELS, ALPHABET_SIZE + 1), dtype=np.int64)
        np.cumsum(self.frequencies, axis=1, out=self.cumulative[:, 1:])
        self.bits = -np.log2(self.frequencies / PRECISION_TOTAL)
        logger.info(f"Initialized SymbolModel (sigma {sigma_min}..{sigma_max}, {carried} levels carried)")

    def pmf(self, level: int) -> np.ndarray:
        """Unquantized probabilities for one prescale level."""
        return discretized_gaussian(float(self.sigmas[level]))

    def entropy(self, level: int) -> float:
        return _entropy_bits(self.frequencies[level])


@lru_cache(maxsize=8)
def _cached_model(sigma_min: float, sigma_max: float) -> SymbolModel:
    return SymbolModel(sigma_min, sigma_max)


def symbol_tables(bottleneck: Bottleneck) -> SymbolModel:
    """Probability tables for a bottleneck (cached per scale range)."""
    return _cached_model(bottleneck.sigma_min, bottleneck.sigma_max)


def validate_symbols(symbols, rho_levels) -> Tuple[np.ndarray, np.ndarray]:
    """
    Check symbol and prescale ranges and broadcast levels to the symbol shape.

    Returns:
        (symbols, levels) as flat int64 arrays
    """
    symbols = np.asarray(symbols)
    if symbols.size and (symbols.min() < SYMBOL_MIN or symbols.max() > SYMBOL_MAX):
        error_msg = f"Symbols must lie in [{SYMBOL_MIN}, {SYMBOL_MAX}], got [{symbols.min()}, {symbols.max()}]"
        logger.error(error_msg)
        raise SymbolRangeError(error_msg)
    levels = np.broadcast_to(np.asarray(rho_levels), symbols.shape)
    if levels.size and (levels.min() < 0 or levels.max() >= RHO_LEVELS):
        raise SymbolRangeError(f"Prescale levels must lie in [0, {RHO_LEVELS - 1}]")
    return symbols.astype(np.int64).ravel(), levels.astype(np.int64).ravel()


def rate_estimate(symbols, rho_levels, model: SymbolModel) -> float:
    """Ideal code length in bits under the quantized tables."""
    symbols, levels = validate_symbols(symbols, rho_levels)
    return float(model.bits[levels, symbols - SYMBOL_MIN].sum())


def rate_proxy_noise(symbols, rho_levels, model: SymbolModel,
                     noise_seed: Optional[int] = None) -> float:
    """
    Training-time rate proxy with additive uniform noise.

    Evaluates -sum log2 of the Gaussian mass over [s+u-0.5, s+u+0.5] with
    u ~ U[-0.5, 0.5] drawn from ``noise_seed``; ``noise_seed=None`` uses u = 0.
    """
    values = np.asarray(symbols, dtype=np.float64).ravel()
    levels = np.broadcast_to(np.asarray(rho_levels), np.asarray(symbols).shape).astype(np.int64).ravel()
    if noise_seed is not None:
        values = values + np.random.default_rng(noise_seed).uniform(-0.5, 0.5, size=values.shape)
    sigma = model.sigmas[levels]
    magnitude = np.abs(values)
    mass = ndtr((0.5 - magnitude) / sigma) - ndtr((-0.5 - magnitude) / sigma)
    mass = np.maximum(mass, np.finfo(np.float64).tiny)
    return float(-np.log2(mass).sum())
