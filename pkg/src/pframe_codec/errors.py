"""
Exception hierarchy for the P-frame codec toolkit

Every error raised by the library derives from CodecException and carries
the name of the module that detected it, so that command line front ends can
report "module: cause" without inspecting tracebacks.
"""

from typing import Optional


class CodecException(Exception):
    """Base exception for all codec toolkit errors."""

    module = 'pframe_codec'

    def __init__(self, message: str, module: Optional[str] = None):
        super().__init__(message)
        if module is not None:
            self.module = module


class FrameFormatError(CodecException):
    """Raised when raw YUV input does not match the declared geometry."""
    module = 'frame_io'


class GeometryError(CodecException):
    """Raised when frame, plane or block dimensions are incompatible."""
    module = 'frame_io'


class FlowRangeError(CodecException):
    """Raised when a motion vector falls outside the quarter-pel range."""
    module = 'motion'


class QuantizerError(CodecException):
    """Raised for invalid quantization grids or out-of-range levels."""
    module = 'quantizer'


class BottleneckError(CodecException):
    """Raised for invalid prescale values or symbol model parameters."""
    module = 'entropy_bottleneck'


class SymbolRangeError(CodecException):
    """Raised when a symbol lies outside the signed 8-bit alphabet."""
    module = 'parallel_coder'


class StreamFormatError(CodecException):
    """Raised when a StreamSet is malformed or a stream is truncated."""
    module = 'parallel_coder'


class StreamChecksumError(StreamFormatError):
    """Raised when a StreamSet payload fails its checksum."""


class ConfigError(CodecException):
    """Raised when a codec configuration cannot be represented."""
    module = 'codec'


class BitstreamFormatError(CodecException):
    """Raised for a bad container magic, version or section layout."""
    module = 'codec'


class BitstreamChecksumError(BitstreamFormatError):
    """Raised when a container header or frame section fails its checksum."""


class TruncatedBitstreamError(BitstreamFormatError):
    """Raised when a container ends in the middle of a section."""


class MetricsError(CodecException):
    """Raised for mismatched inputs or unusable rate-distortion data."""
    module = 'metrics'


class NoOverlapError(MetricsError):
    """Raised when two RD curves share no usable quality interval."""


class PipelineSpecError(CodecException):
    """Raised when a pipeline description cannot be parsed or validated."""
    module = 'pipeline_sim'


class CyclicDependencyError(PipelineSpecError):
    """Raised when intra-frame stage dependencies form a cycle."""
