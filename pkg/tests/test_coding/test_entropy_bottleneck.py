"""
Tests for the integer entropy bottleneck and symbol model
"""

import math

import numpy as np
import pytest

from pframe_codec.coding.entropy_bottleneck import (
    PRECISION_TOTAL, RHO_LEVELS, SIGMA_MAX, SIGMA_MIN, SYMBOL_MAX, Bottleneck, LatentStep,
    discretized_gaussian, form_symbols, latent_grid, rate_estimate, rate_proxy_noise,
    rho_for_level, rho_level_for_sigma, scale_transform, symbol_tables, validate_symbols
)
from pframe_codec.errors import BottleneckError, SymbolRangeError


class TestLatentStep:
    """Test latent grid selection."""

    def test_codes_round_trip(self):
        """Test container codes map back to the same step."""
        assert [step.code for step in LatentStep] == [0, 1, 2, 3]
        for step in LatentStep:
            assert LatentStep.from_code(step.code) is step

    def test_unknown_code(self):
        """Test unknown codes are rejected."""
        with pytest.raises(BottleneckError):
            LatentStep.from_code(4)

    def test_grids(self):
        """Test each step's grid."""
        assert latent_grid(LatentStep.ONE).step == 1.0
        assert latent_grid(LatentStep.FIFTH).step == pytest.approx(0.2)
        assert latent_grid(LatentStep.THIRD).step == pytest.approx(1 / 3)
        assert latent_grid(LatentStep.EXACT) is None

    def test_sub_integer_grids_span_alphabet(self):
        """Test 1/5 and 1/3 grids still reach the largest symbol."""
        for step in (LatentStep.FIFTH, LatentStep.THIRD):
            grid = latent_grid(step)
            assert grid.level_max * grid.step >= SYMBOL_MAX

    def test_invalid_scale_range(self):
        """Test sigma_min must be below sigma_max."""
        with pytest.raises(BottleneckError):
            Bottleneck(sigma_min=4.0, sigma_max=2.0)


class TestFormSymbols:
    """Test symbol formation."""

    def test_exact_mean_gives_zero_symbol(self):
        """Test y == mu on the grid gives s = 0 and y_hat == y."""
        y = np.array([0.4, -1.2, 7.0])
        symbols, y_hat = form_symbols(y, y, Bottleneck(LatentStep.FIFTH))
        assert not symbols.any()
        assert np.allclose(y_hat, y)

    def test_fifth_grid_example(self):
        """Test y = 2.6, mu = 0.4 on the 1/5 grid."""
        symbols, y_hat = form_symbols(2.6, 0.4, Bottleneck(LatentStep.FIFTH))
        assert symbols == 2
        assert y_hat == pytest.approx(2.4)

    def test_integer_grid_example(self):
        """Test y = 2.6, mu = 0.4 on the integer grid loses more."""
        symbols, y_hat = form_symbols(2.6, 0.4, Bottleneck(LatentStep.ONE))
        assert symbols == 3
        assert y_hat == pytest.approx(3.0)
        assert abs(y_hat - 2.6) > abs(2.4 - 2.6)

    def test_exact_mode(self):
        """Test exact mode only rounds the difference."""
        symbols, y_hat = form_symbols(np.array([2.6, -0.5]), np.array([0.35, 0.0]), Bottleneck(LatentStep.EXACT))
        assert list(symbols) == [2, -1]
        assert np.allclose(y_hat, [2.35, -1.0])

    def test_symbols_clamped(self):
        """Test large differences saturate to the alphabet."""
        symbols, _ = form_symbols(np.array([500.0, -500.0]), 0.0, Bottleneck(LatentStep.ONE))
        assert list(symbols) == [127, -127]
        assert symbols.dtype == np.int8

    def test_no_ties_on_fifth_grid(self):
        """Test k/5 never sits half way between integers."""
        k = np.arange(-635, 636)
        symbols, _ = form_symbols(k / 5.0, 0.0, Bottleneck(LatentStep.FIFTH))
        distance = np.abs(k / 5.0 - symbols.astype(np.float64))
        assert (distance < 0.5).all()
        assert not np.isclose(np.abs(k / 5.0 - np.floor(k / 5.0)), 0.5).any()

    def test_quarter_grid_has_ties(self):
        """Test a 1/4 grid produces exact half-way differences."""
        values = np.arange(-508, 509) / 4.0
        assert (np.abs(values - np.floor(values)) == 0.5).any()

    def test_reconstruction_error_bounded(self):
        """Test |y_hat - y| stays within half a symbol plus the grid snap."""
        rng = np.random.default_rng(0)
        y = rng.normal(0.0, 10.0, 5000)
        mu = y + rng.normal(0.0, 3.0, 5000)
        _, y_hat = form_symbols(y, mu, Bottleneck(LatentStep.FIFTH))
        assert np.abs(y_hat - y).max() <= 0.5 + 0.2 + 1e-9

    def test_integer_mean_grid_degrades_reconstruction(self):
        """Test an integer latent grid at least doubles the error of a 1/5 grid."""
        rng = np.random.default_rng(1)
        mu = rng.normal(0.0, 2.0, 100000)
        y = mu + rng.normal(0.0, 0.1, 100000)
        _, coarse = form_symbols(y, mu, Bottleneck(LatentStep.ONE))
        _, fine = form_symbols(y, mu, Bottleneck(LatentStep.FIFTH))
        assert np.abs(coarse - y).mean() >= 2.0 * np.abs(fine - y).mean()


class TestScaleTransform:
    """Test the prescale to scale mapping."""

    def test_endpoints(self):
        """Test T(1) = sigma_max and the geometric midpoint."""
        assert scale_transform(1.0) == pytest.approx(SIGMA_MAX)
        assert scale_transform(0.5) == pytest.approx(math.sqrt(SIGMA_MIN * SIGMA_MAX))
        assert scale_transform(0.5) == pytest.approx(4.0)

    def test_strictly_increasing(self):
        """Test sigma increases over all prescale levels."""
        sigmas = scale_transform(rho_for_level(np.arange(RHO_LEVELS)))
        assert (np.diff(sigmas) > 0).all()
        assert sigmas.min() >= SIGMA_MIN and sigmas.max() <= SIGMA_MAX

    @pytest.mark.parametrize('rho', [0.0, -0.1, 1.01])
    def test_out_of_range(self, rho):
        """Test rho outside (0, 1] is rejected."""
        with pytest.raises(BottleneckError):
            scale_transform(rho)

    def test_prescale_levels(self):
        """Test level l stands for rho = (l + 1) / 256."""
        assert rho_for_level(0) == pytest.approx(1 / 256)
        assert rho_for_level(255) == pytest.approx(1.0)
        assert rho_level_for_sigma(SIGMA_MAX) == 255
        assert rho_level_for_sigma(0.0) == 0
        assert rho_level_for_sigma(4.0) == 127


class TestSymbolModel:
    """Test the quantized probability tables."""

    def setup_method(self):
        """Setup test environment."""
        self.model = symbol_tables(Bottleneck())

    def test_tables_are_cached(self):
        """Test bottlenecks with the same scale range share tables."""
        assert symbol_tables(Bottleneck(LatentStep.ONE)) is self.model

    def test_shapes(self):
        """Test table dimensions."""
        assert self.model.frequencies.shape == (256, 255)
        assert self.model.cumulative.shape == (256, 256)

    def test_frequencies_valid(self):
        """Test every symbol has non-zero frequency and rows sum to 2^16."""
        assert (self.model.frequencies >= 1).all()
        assert (self.model.frequencies.sum(axis=1) == PRECISION_TOTAL).all()
        assert (self.model.cumulative[:, -1] == PRECISION_TOTAL).all()
        assert (self.model.cumulative[:, 0] == 0).all()

    def test_symmetric(self):
        """Test p(s) == p(-s) for every level."""
        assert np.array_equal(self.model.frequencies, self.model.frequencies[:, ::-1])

    def test_entropy_monotone(self):
        """Test flatter tables at larger prescales."""
        entropies = [self.model.entropy(level) for level in range(RHO_LEVELS)]
        assert all(b >= a for a, b in zip(entropies, entropies[1:]))

    def test_tiny_sigma_concentrates_on_zero(self):
        """Test the smallest scale puts almost all mass on zero."""
        assert self.model.pmf(0)[SYMBOL_MAX] > 0.999

    def test_discretized_gaussian_sums_to_one(self):
        """Test tail folding keeps the pmf proper."""
        for sigma in (0.1, 3.0, 500.0):
            assert discretized_gaussian(sigma).sum() == pytest.approx(1.0)


class TestRate:
    """Test rate estimation and the noise proxy."""

    def setup_method(self):
        """Setup test environment."""
        self.model = symbol_tables(Bottleneck())
        self.rng = np.random.default_rng(42)

    def test_zero_symbols_nearly_free(self):
        """Test all-zero symbols under the smallest scale."""
        bits = rate_estimate(np.zeros(1000, dtype=np.int8), 0, self.model)
        assert bits / 1000 < 0.01

    def test_rate_matches_table(self):
        """Test the estimate is the sum of table code lengths."""
        symbols = np.array([0, 3, -3, 127])
        expected = sum(-math.log2(self.model.frequencies[100, s + 127] / PRECISION_TOTAL) for s in symbols)
        assert rate_estimate(symbols, 100, self.model) == pytest.approx(expected)

    def test_per_symbol_levels(self):
        """Test prescale levels broadcast or vary per symbol."""
        symbols = np.array([1, 2])
        split = rate_estimate(symbols[:1], 10, self.model) + rate_estimate(symbols[1:], 200, self.model)
        assert rate_estimate(symbols, np.array([10, 200]), self.model) == pytest.approx(split)

    def test_range_checks(self):
        """Test out-of-alphabet symbols and levels are rejected."""
        with pytest.raises(SymbolRangeError):
            validate_symbols(np.array([128]), 0)
        with pytest.raises(SymbolRangeError):
            validate_symbols(np.array([0]), 256)

    def test_proxy_non_negative_and_seeded(self):
        """Test the proxy is non-negative and deterministic per seed."""
        symbols = self.rng.normal(0.0, 5.0, 500)
        assert rate_proxy_noise(symbols, 150, self.model, noise_seed=3) >= 0.0
        assert (rate_proxy_noise(symbols, 150, self.model, noise_seed=3)
                == rate_proxy_noise(symbols, 150, self.model, noise_seed=3))
        assert rate_proxy_noise(symbols, 150, self.model) >= 0.0

    def test_proxy_tracks_rate(self):
        """Test the seed-averaged proxy is close to the coded rate."""
        level = int(rho_level_for_sigma(8.0))
        sigma = self.model.sigmas[level]
        symbols = np.clip(np.round(self.rng.normal(0.0, sigma, 2000)), -127, 127).astype(np.int64)
        estimate = rate_estimate(symbols, level, self.model)
        proxy = np.mean([rate_proxy_noise(symbols, level, self.model, noise_seed=seed) for seed in range(200)])
        assert abs(proxy - estimate) <= 0.05 * estimate
