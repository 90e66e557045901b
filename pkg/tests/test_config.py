"""
Tests for codec configuration
"""

from fractions import Fraction

import pytest

from pframe_codec.coding.entropy_bottleneck import LatentStep
from pframe_codec.coding.parallel_coder import HeaderMode
from pframe_codec.config import CodecConfig, WarpMode, parse_step
from pframe_codec.errors import ConfigError


class TestParseStep:
    """Test quantizer step parsing."""

    @pytest.mark.parametrize('value, expected', [
        ('1/2', Fraction(1, 2)),
        (' 4 ', Fraction(4)),
        (0.25, Fraction(1, 4)),
        (0.2, Fraction(1, 5)),
        ('255/254', Fraction(255, 254)),
        (3, Fraction(3)),
        (Fraction(3, 2), Fraction(3, 2)),
    ])
    def test_valid_steps(self, value, expected):
        """Test text, numbers and fractions."""
        assert parse_step(value) == expected

    @pytest.mark.parametrize('value', ['abc', '1/0', 0, -2, 300, None])
    def test_invalid_steps(self, value):
        """Test unparsable, non-positive and too-large steps."""
        with pytest.raises(ConfigError):
            parse_step(value)

    @pytest.mark.parametrize('value', [0.3337, '1/256', '256/3', Fraction(1, 300)])
    def test_unrepresentable_steps_rejected(self, value):
        """Test steps needing more than u8/u8 are rejected instead of approximated."""
        with pytest.raises(ConfigError, match='u8/u8'):
            parse_step(value)


class TestCodecConfig:
    """Test CodecConfig validation and normalisation."""

    def test_defaults(self):
        """Test the default configuration."""
        config = CodecConfig()
        assert config.block_size == 16
        assert config.gop_size == 16
        assert config.residual_step == Fraction(4)
        assert config.latent_step is LatentStep.FIFTH
        assert config.warp_mode is WarpMode.OVERLAP
        assert config.header_mode is HeaderMode.NAIVE
        assert config.kernel_sigma == 8.0
        assert config.sigma_code == 64

    def test_values_normalised(self):
        """Test plain values are converted to their enum and Fraction types."""
        config = CodecConfig(residual_step='1/3', latent_step='1/3', warp_mode='dense', header_mode=1)
        assert config.residual_step == Fraction(1, 3)
        assert config.latent_step is LatentStep.THIRD
        assert config.warp_mode is WarpMode.DENSE
        assert config.header_mode is HeaderMode.OPTIMIZED

    def test_sigma_snapped_to_eighths(self):
        """Test kernel sigma is stored on the header's fixed-point grid."""
        assert CodecConfig(kernel_sigma=3.3).kernel_sigma == 3.25
        assert CodecConfig(block_size=254).sigma_code == 255

    def test_with_changes(self):
        """Test copies with replaced fields are validated again."""
        base = CodecConfig()
        changed = base.with_changes(block_size=8, residual_step=2)
        assert changed.block_size == 8
        assert base.block_size == 16
        with pytest.raises(ConfigError):
            base.with_changes(gop_size=0)

    @pytest.mark.parametrize('changes', [
        {'block_size': 7},
        {'block_size': 256},
        {'search_range': -1},
        {'search_method': 'random'},
        {'gop_size': 70000},
        {'stream_count': 0},
        {'stream_count': 2048},
        {'threads': 0},
        {'kernel_sigma': 0.01},
        {'kernel_sigma': 40.0},
    ])
    def test_invalid(self, changes):
        """Test unrepresentable settings are rejected."""
        with pytest.raises(ConfigError):
            CodecConfig(**changes)
