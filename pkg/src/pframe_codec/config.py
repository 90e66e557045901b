"""
Configuration for the P-frame codec

This module holds the codec configuration dataclass, the warp mode choices,
and the environment-backed runtime defaults used by the command line
front end.
"""

import logging
import os
from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction
from typing import Any, Dict, Optional, Union

from dotenv import load_dotenv

from .coding.entropy_bottleneck import LatentStep
from .coding.parallel_coder import MAX_STREAMS, HeaderMode
from .errors import ConfigError
from .motion import MAX_SEARCH_RANGE, SEARCH_METHODS

logger = logging.getLogger(__name__)

SIGMA_SCALE = 8
MAX_BYTE = 255

StepLike = Union[Fraction, int, float, str]


class WarpMode(Enum):
    OVERLAP = 'overlap'
    BLOCK = 'block'
    DENSE = 'dense'


def parse_step(value: StepLike) -> Fraction:
    """
    Parse a quantizer step given as a Fraction, number or text like "1/2".

    Floats are read through their shortest decimal form, so 0.2 is 1/5.
    Values are never approximated: a step whose exact fraction does not fit
    u8/u8 is rejected.

    Raises:
        ConfigError: If the step is not positive or needs more than 8 bits
            for its numerator or denominator
    """
    try:
        if isinstance(value, (str, float)):
            step = Fraction(str(value).strip())
        else:
            step = Fraction(value)
    except (ValueError, ZeroDivisionError, TypeError):
        raise ConfigError(f"Cannot parse quantizer step '{value}'")
    if step <= 0:
        raise ConfigError(f"Quantizer step must be positive, got {value}")
    if step.numerator > MAX_BYTE or step.denominator > MAX_BYTE:
        raise ConfigError(f"Quantizer step {value} is not representable as u8/u8")
    return step


@dataclass(frozen=True)
class CodecConfig:
    """
    Encoder configuration.

    Only the fields carried in the container header influence decoding;
    search settings, stream layout and threads are encoder-side choices
    (the stream layout is recorded inside every StreamSet).
    """

    block_size: int = 16
    search_range: int = 8
    search_method: str = 'exhaustive'
    gop_size: int = 16
    residual_step: StepLike = Fraction(4)
    iframe_step: StepLike = Fraction(4)
    latent_step: LatentStep = LatentStep.FIFTH
    kernel_sigma: Optional[float] = None
    warp_mode: WarpMode = WarpMode.OVERLAP
    stream_count: int = 8
    header_mode: HeaderMode = HeaderMode.NAIVE
    threads: int = 1

    def __post_init__(self):
        if not 2 <= self.block_size <= 254 or self.block_size % 2:
            raise ConfigError(f"Block size must be even in [2, 254], got {self.block_size}")
        if not 0 <= self.search_range <= MAX_SEARCH_RANGE:
            raise ConfigError(f"Search range must be in [0, {MAX_SEARCH_RANGE}], got {self.search_range}")
        if self.search_method not in SEARCH_METHODS:
            raise ConfigError(f"Unknown search method '{self.search_method}'")
        if not 1 <= self.gop_size <= 0xFFFF:
            raise ConfigError(f"GoP size must be in [1, 65535], got {self.gop_size}")
        if not 1 <= self.stream_count <= MAX_STREAMS:
            raise ConfigError(f"Stream count must be in [1, {MAX_STREAMS}], got {self.stream_count}")
        if self.threads < 1:
            raise ConfigError(f"Threads must be >= 1, got {self.threads}")

        object.__setattr__(self, 'residual_step', parse_step(self.residual_step))
        object.__setattr__(self, 'iframe_step', parse_step(self.iframe_step))
        object.__setattr__(self, 'latent_step', LatentStep(self.latent_step))
        object.__setattr__(self, 'warp_mode', WarpMode(self.warp_mode))
        object.__setattr__(self, 'header_mode', HeaderMode(self.header_mode))

        sigma = self.kernel_sigma
        if sigma is None:
            sigma = min(self.block_size / 2.0, MAX_BYTE / SIGMA_SCALE)
        code = int(round(float(sigma) * SIGMA_SCALE))
        if not 1 <= code <= MAX_BYTE:
            raise ConfigError(f"Kernel sigma {sigma} outside (0, {MAX_BYTE / SIGMA_SCALE}]")
        # Snap to the header's 1/8 fixed point so encoder and decoder agree.
        object.__setattr__(self, 'kernel_sigma', code / SIGMA_SCALE)

    @property
    def sigma_code(self) -> int:
        return int(round(self.kernel_sigma * SIGMA_SCALE))

    def with_changes(self, **changes: Any) -> 'CodecConfig':
        return replace(self, **changes)


def load_config() -> Dict[str, Any]:
    """
    Load runtime defaults from environment variables (and a .env file).

    Only settings that never change output bytes are read here: the log
    level and the entropy-coder thread count.
    """
    load_dotenv()

    level = os.getenv('PFRAME_LOG_LEVEL', 'INFO').upper()
    threads_text = os.getenv('PFRAME_THREADS', '1')
    try:
        threads = int(threads_text)
    except ValueError:
        raise ConfigError(f"PFRAME_THREADS must be an integer, got '{threads_text}'", module='config')
    if threads < 1:
        raise ConfigError(f"PFRAME_THREADS must be >= 1, got {threads}", module='config')

    return {
        'log_level': level,
        'threads': threads,
    }
