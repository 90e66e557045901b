"""
Coding package for the P-frame codec

This package contains the quantization grids, the integer entropy
bottleneck with its Gaussian symbol model, and the parallel range coder.
"""

from .quantizer import QuantGrid, quantize, dequantize, fit_grid_mse, fit_per_channel
from .entropy_bottleneck import (
    Bottleneck,
    LatentStep,
    SymbolModel,
    form_symbols,
    scale_transform,
    symbol_tables,
    rate_estimate,
    rate_proxy_noise,
)
from .parallel_coder import (
    HeaderMode,
    StreamSet,
    ParallelEntropyCoder,
    encode,
    decode,
    decode_stream,
    header_overhead,
)

__all__ = [
    'QuantGrid',
    'quantize',
    'dequantize',
    'fit_grid_mse',
    'fit_per_channel',
    'Bottleneck',
    'LatentStep',
    'SymbolModel',
    'form_symbols',
    'scale_transform',
    'symbol_tables',
    'rate_estimate',
    'rate_proxy_noise',
    'HeaderMode',
    'StreamSet',
    'ParallelEntropyCoder',
    'encode',
    'decode',
    'decode_stream',
    'header_overhead',
]
