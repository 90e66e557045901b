"""
GoP codec and bitstream container

Each GoP starts with an I-frame coded as per-block DC levels plus an entropy
coded residual. Every following P-frame is coded in three steps: the
previous transmitted flow is extrapolated, the flow correction measured by
block matching is transmitted, and the residual between the frame and the
warped previous reconstruction is quantized and entropy coded. The encoder
runs the decoder's reconstruction path itself, so both sides always hold the
same reference.

Container layout (little-endian)::

    "MNVC" | version u8 | width u16 | height u16 | gop u16 | b u8
    | residual step num u8 / den u8 | I-frame step num u8 / den u8
    | latent grid code u8 | kernel sigma u8 (sigma * 8) | header CRC32 u32
    | frame sections ...

    section: frame type u8 | u32 len + side data | u32 len + flow
             | u32 len + residual StreamSet | section CRC32 u32

Frame type 0 is an I-frame; 1, 2 and 3 are P-frames predicted with overlap,
block and dense warping. I-frame side data is the DC levels (u16 per block)
followed by the residual prescale map (u8 per block); P-frame side data is
the prescale map and the flow section is the flow prescale byte followed by
the flow StreamSet. Each residual prescale map is followed by one int32 escape per
residual symbol at +-127, in plane and raster order.
"""

import logging
import struct
import zlib
from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .coding.entropy_bottleneck import (
    SYMBOL_MAX,
    SYMBOL_MIN,
    Bottleneck,
    LatentStep,
    SymbolModel,
    form_symbols,
    rho_level_for_sigma,
    symbol_tables,
)
from .coding.parallel_coder import ParallelEntropyCoder, StreamSet, decode as decode_symbols
from .coding.quantizer import round_half_away
from .config import CodecConfig, WarpMode
from .errors import (
    BitstreamChecksumError,
    BitstreamFormatError,
    CodecException,
    GeometryError,
    TruncatedBitstreamError,
)
from .frame_io import Frame420
from .metrics import distortion_flow, distortion_modulated, distortion_yuv611, frame_psnrs
from .motion import estimate_flow, extrapolate_flow, flow_residual, reconstruct_flow, refine_dense_flow
from .warp_engine import (
    DENSE_PRECISION,
    FlowField,
    OverlapKernel,
    block_grid,
    block_warp,
    dense_flow_from_blocks,
    dense_warp,
    make_gaussian_kernel,
    overlap_block_warp,
    round_pixels,
)

logger = logging.getLogger(__name__)

MAGIC = b'MNVC'
VERSION = 1
_HEADER = struct.Struct('<4sBHHHBBBBBBB')
_U32 = struct.Struct('<I')
_ESCAPE_DTYPE = np.dtype('<i4')


class FrameType(IntEnum):
    INTRA = 0
    P_OVERLAP = 1
    P_BLOCK = 2
    P_DENSE = 3

    @property
    def is_intra(self) -> bool:
        return self is FrameType.INTRA


_P_TYPES = {
    WarpMode.OVERLAP: FrameType.P_OVERLAP,
    WarpMode.BLOCK: FrameType.P_BLOCK,
    WarpMode.DENSE: FrameType.P_DENSE,
}
_WARP_MODES = {frame_type: mode for mode, frame_type in _P_TYPES.items()}


@dataclass(frozen=True)
class ContainerHeader:
    """Fixed container header describing how the frames were coded."""

    width: int
    height: int
    gop_size: int
    block_size: int
    residual_step: Fraction
    iframe_step: Fraction
    latent_step: LatentStep
    sigma_code: int
    version: int = VERSION

    @classmethod
    def from_config(cls, config: CodecConfig, width: int, height: int) -> 'ContainerHeader':
        if not (2 <= width <= 0xFFFF and 2 <= height <= 0xFFFF):
            raise GeometryError(f"Frame size {width}x{height} does not fit the container", module='codec')
        return cls(width, height, config.gop_size, config.block_size, config.residual_step,
                   config.iframe_step, config.latent_step, config.sigma_code)

    @property
    def kernel_sigma(self) -> float:
        return self.sigma_code / 8.0

    def to_config(self, threads: int = 1) -> CodecConfig:
        """Decoder-side configuration reconstructed from the header."""
        return CodecConfig(
            block_size=self.block_size,
            gop_size=self.gop_size,
            residual_step=self.residual_step,
            iframe_step=self.iframe_step,
            latent_step=self.latent_step,
            kernel_sigma=self.kernel_sigma,
            threads=threads,
        )

    def to_bytes(self) -> bytes:
        packed = _HEADER.pack(
            MAGIC, self.version, self.width, self.height, self.gop_size, self.block_size,
            self.residual_step.numerator, self.residual_step.denominator,
            self.iframe_step.numerator, self.iframe_step.denominator,
            self.latent_step.code, self.sigma_code)
        return packed + _U32.pack(zlib.crc32(packed))

    @classmethod
    def from_bytes(cls, data: bytes) -> Tuple['ContainerHeader', int]:
        """
        Parse the header at the start of ``data``.

        Returns:
            (header, number of bytes consumed)
        """
        size = _HEADER.size + _U32.size
        if len(data) < 4 or data[:4] != MAGIC:
            error_msg = f"Bad container magic {bytes(data[:4])!r}"
            logger.error(error_msg)
            raise BitstreamFormatError(error_msg)
        if len(data) < size:
            raise TruncatedBitstreamError(f"Container header truncated ({len(data)} < {size} bytes)")
        fields = _HEADER.unpack_from(data, 0)
        (stored_crc,) = _U32.unpack_from(data, _HEADER.size)
        if zlib.crc32(data[:_HEADER.size]) != stored_crc:
            error_msg = "Container header checksum mismatch"
            logger.error(error_msg)
            raise BitstreamChecksumError(error_msg)
        _, version, width, height, gop, b, rn, rd, inum, iden, latent_code, sigma_code = fields
        if version != VERSION:
            error_msg = f"Unsupported container version {version}"
            logger.error(error_msg)
            raise BitstreamFormatError(error_msg)
        try:
            header = cls(width, height, gop, b, Fraction(rn, rd), Fraction(inum, iden),
                         LatentStep.from_code(latent_code), sigma_code, version)
            header.to_config()
        except (ZeroDivisionError, CodecException) as e:
            raise BitstreamFormatError(f"Invalid container header: {e}")
        return header, size


@dataclass(frozen=True)
class FrameSection:
    """One coded frame."""

    frame_type: FrameType
    side: bytes
    flow: bytes
    residual: bytes

    def to_bytes(self) -> bytes:
        body = bytearray([int(self.frame_type)])
        for part in (self.side, self.flow, self.residual):
            body += _U32.pack(len(part))
            body += part
        return bytes(body) + _U32.pack(zlib.crc32(body))

    @property
    def size(self) -> int:
        return 1 + 3 * _U32.size + len(self.side) + len(self.flow) + len(self.residual) + _U32.size

    @classmethod
    def from_bytes(cls, data: bytes, offset: int) -> Tuple['FrameSection', int]:
        """
        Parse the section starting at ``offset``.

        Returns:
            (section, offset just past the section)
        """
        start = offset
        if offset >= len(data):
            raise TruncatedBitstreamError("Frame section missing")
        frame_type_code = data[offset]
        offset += 1
        parts = []
        for name in ('side', 'flow', 'residual'):
            if offset + _U32.size > len(data):
                raise TruncatedBitstreamError(f"Frame section truncated before {name} length")
            (length,) = _U32.unpack_from(data, offset)
            offset += _U32.size
            if offset + length > len(data):
                raise TruncatedBitstreamError(f"Frame section truncated inside {name} ({length} bytes)")
            parts.append(bytes(data[offset:offset + length]))
            offset += length
        if offset + _U32.size > len(data):
            raise TruncatedBitstreamError("Frame section truncated before its checksum")
        (stored_crc,) = _U32.unpack_from(data, offset)
        if zlib.crc32(data[start:offset]) != stored_crc:
            error_msg = f"Frame section at byte {start} failed its checksum"
            logger.error(error_msg)
            raise BitstreamChecksumError(error_msg)
        try:
            frame_type = FrameType(frame_type_code)
        except ValueError:
            raise BitstreamFormatError(f"Unknown frame type {frame_type_code}")
        return cls(frame_type, *parts), offset + _U32.size


def parse_container(data: bytes) -> Tuple[ContainerHeader, List[FrameSection]]:
    """Split a container into its header and frame sections."""
    data = bytes(data)
    header, offset = ContainerHeader.from_bytes(data)
    sections = []
    while offset < len(data):
        section, offset = FrameSection.from_bytes(data, offset)
        sections.append(section)
    return header, sections


def build_container(header: ContainerHeader, sections: Iterable[FrameSection]) -> bytes:
    return header.to_bytes() + b''.join(section.to_bytes() for section in sections)


@dataclass(frozen=True)
class CodecState:
    """Reference carried from one frame to the next."""

    reference: Frame420
    flow: FlowField


@dataclass(frozen=True)
class FrameDebug:
    """Decoder intermediates for one P-frame."""

    warped: Frame420
    flow: FlowField
    residual: Tuple[np.ndarray, np.ndarray, np.ndarray]


@dataclass(frozen=True)
class FrameStats:
    """Per-frame coding statistics."""

    index: int
    frame_type: str
    bits: int
    side_bits: int
    flow_bits: int
    residual_bits: int
    psnr_y: float
    psnr_u: float
    psnr_v: float
    psnr_yuv611: float
    distortion: float
    flow_prediction_distortion: Optional[float] = None
    flow_distortion: Optional[float] = None


class _Tools:
    """Per-configuration coding helpers shared by encoder and decoder paths."""

    def __init__(self, config: CodecConfig):
        self.config = config
        self.bottleneck = Bottleneck(config.latent_step)
        self.model: SymbolModel = symbol_tables(self.bottleneck)
        self.coder = ParallelEntropyCoder(self.model, config.stream_count, config.header_mode, config.threads)
        self.kernel: OverlapKernel = _kernel(config.block_size, config.kernel_sigma)
        self.residual_step = float(config.residual_step)
        self.iframe_step = float(config.iframe_step)


@lru_cache(maxsize=16)
def _kernel(block_size: int, sigma: float) -> OverlapKernel:
    return make_gaussian_kernel(block_size, sigma)


def _plane_shapes(width: int, height: int) -> List[Tuple[int, int]]:
    return [(height, width), (height // 2, width // 2), (height // 2, width // 2)]


def _block_counts(width: int, height: int, block_size: int) -> List[Tuple[int, int]]:
    return [block_grid(w, h, block_size) for h, w in _plane_shapes(width, height)]


def _block_reduce(values: np.ndarray, block_size: int) -> np.ndarray:
    height, width = values.shape
    rows = np.arange(0, height, block_size)
    cols = np.arange(0, width, block_size)
    return np.add.reduceat(np.add.reduceat(values, rows, axis=0), cols, axis=1)


def _block_mean(values: np.ndarray, block_size: int) -> np.ndarray:
    counts = _block_reduce(np.ones_like(values, dtype=np.float64), block_size)
    return _block_reduce(values.astype(np.float64), block_size) / counts


def _block_std(values: np.ndarray, block_size: int) -> np.ndarray:
    mean = _block_mean(values, block_size)
    mean_sq = _block_mean(values.astype(np.float64) ** 2, block_size)
    return np.sqrt(np.maximum(mean_sq - mean * mean, 0.0))


def _expand(block_values: np.ndarray, block_size: int, shape: Tuple[int, int]) -> np.ndarray:
    expanded = np.repeat(np.repeat(block_values, block_size, axis=0), block_size, axis=1)
    return expanded[:shape[0], :shape[1]]


def _escapes(scaled: np.ndarray, symbols: np.ndarray) -> np.ndarray:
    """Exact remainders for symbols pinned at the edge of the alphabet."""
    pinned = np.abs(symbols.astype(np.int64)) == SYMBOL_MAX
    return (round_half_away(scaled[pinned]) - symbols[pinned]).astype(_ESCAPE_DTYPE)


def _code_residual(residuals: Sequence[np.ndarray], tools: _Tools) -> Tuple[bytes, bytes, List[np.ndarray]]:
    """
    Quantize and entropy code residual planes.

    Symbols that land on the alphabet edge (+-127) carry an escape: the
    remainder to the exactly rounded level, sent raw as int32 after the
    prescale maps. This keeps the reconstruction error at half a step for
    any residual step.

    Returns:
        (prescale map and escape bytes, residual StreamSet bytes, dequantized residual planes)
    """
    b = tools.config.block_size
    symbols_all, levels_all, rho_maps, escapes, decoded = [], [], [], [], []
    for residual in residuals:
        scaled = residual / tools.residual_step
        symbols, _ = form_symbols(scaled, 0.0, tools.bottleneck)
        rho_map = rho_level_for_sigma(_block_std(symbols.astype(np.float64), b),
                                      tools.bottleneck.sigma_min, tools.bottleneck.sigma_max)
        rho_maps.append(rho_map.astype(np.uint8))
        symbols_all.append(symbols.ravel())
        levels_all.append(_expand(rho_map, b, residual.shape).ravel())
        escape = _escapes(scaled.ravel(), symbols.ravel())
        escapes.append(escape)
        values = symbols.astype(np.float64).ravel()
        values[np.abs(symbols.ravel().astype(np.int64)) == SYMBOL_MAX] += escape
        decoded.append(values.reshape(residual.shape) * tools.residual_step)
    stream = tools.coder.encode(np.concatenate(symbols_all), np.concatenate(levels_all))
    side = b''.join(m.tobytes() for m in rho_maps) + np.concatenate(escapes).astype(_ESCAPE_DTYPE).tobytes()
    if any(e.size for e in escapes):
        logger.debug(f"Residual escapes: {sum(e.size for e in escapes)} samples")
    return side, stream.to_bytes(), decoded


def _decode_residual(side: bytes, residual_bytes: bytes, width: int, height: int,
                     tools: _Tools) -> List[np.ndarray]:
    b = tools.config.block_size
    shapes = _plane_shapes(width, height)
    grids = _block_counts(width, height, b)
    expected = sum(r * c for r, c in grids)
    if len(side) < expected:
        raise BitstreamFormatError(f"Prescale map has {len(side)} bytes, expected {expected}")
    flat = np.frombuffer(side[:expected], dtype=np.uint8)
    levels, offset = [], 0
    for (rows, cols), shape in zip(grids, shapes):
        rho_map = flat[offset:offset + rows * cols].reshape(rows, cols).astype(np.int64)
        offset += rows * cols
        levels.append(_expand(rho_map, b, shape).ravel())

    count = sum(h * w for h, w in shapes)
    stream = StreamSet.from_bytes(residual_bytes)
    symbols = decode_symbols(stream, np.concatenate(levels), tools.model, count, tools.config.threads)
    values = symbols.astype(np.float64)
    pinned = np.abs(symbols.astype(np.int64)) == SYMBOL_MAX
    escape_bytes = side[expected:]
    if len(escape_bytes) != pinned.sum() * _ESCAPE_DTYPE.itemsize:
        raise BitstreamFormatError(f"Residual escapes have {len(escape_bytes)} bytes, "
                                   f"expected {pinned.sum() * _ESCAPE_DTYPE.itemsize}")
    values[pinned] += np.frombuffer(escape_bytes, dtype=_ESCAPE_DTYPE)
    planes, offset = [], 0
    for h, w in shapes:
        planes.append(values[offset:offset + h * w].reshape(h, w) * tools.residual_step)
        offset += h * w
    return planes


def _intra_prediction(dc_levels: Sequence[np.ndarray], width: int, height: int,
                      tools: _Tools) -> List[np.ndarray]:
    b = tools.config.block_size
    return [_expand(levels.astype(np.float64) * tools.iframe_step, b, shape)
            for levels, shape in zip(dc_levels, _plane_shapes(width, height))]


def _reconstruct(prediction: Sequence[np.ndarray], residual: Sequence[np.ndarray],
                 width: int, height: int) -> Frame420:
    planes = [round_pixels(p.astype(np.float64) + r) for p, r in zip(prediction, residual)]
    return Frame420(width, height, *planes)


def encode_iframe(frame: Frame420, config: CodecConfig,
                  tools: Optional[_Tools] = None) -> Tuple[FrameSection, Frame420]:
    """
    Code a frame without reference to any other frame.

    Per plane and block the mean is quantized with the I-frame step and sent
    raw; the DC-removed samples go through the residual path.

    Returns:
        (frame section, reconstruction)
    """
    tools = tools or _Tools(config)
    b = config.block_size
    dc_levels = []
    for plane in frame.planes:
        means = _block_mean(plane, b)
        dc_levels.append(round_half_away(means / tools.iframe_step).astype(np.uint16))
    prediction = _intra_prediction(dc_levels, frame.width, frame.height, tools)
    residuals = [plane.astype(np.float64) - pred for plane, pred in zip(frame.planes, prediction)]
    rho_bytes, residual_bytes, decoded = _code_residual(residuals, tools)
    side = b''.join(levels.astype('<u2').tobytes() for levels in dc_levels) + rho_bytes
    reconstruction = _reconstruct(prediction, decoded, frame.width, frame.height)
    return FrameSection(FrameType.INTRA, side, b'', residual_bytes), reconstruction


def predict(reference: Frame420, flow: FlowField, mode: WarpMode,
            kernel: Optional[OverlapKernel] = None) -> Frame420:
    """Warp the reference with the selected operator."""
    if mode is WarpMode.OVERLAP:
        return overlap_block_warp(reference, flow, kernel)
    if mode is WarpMode.BLOCK:
        return block_warp(reference, flow)
    dense = dense_flow_from_blocks(flow, reference.width, reference.height, DENSE_PRECISION)
    return dense_warp(reference, dense, DENSE_PRECISION)


def _choose_flow_level(symbols: np.ndarray, model: SymbolModel) -> int:
    indices = symbols.astype(np.int64) - SYMBOL_MIN
    return int(np.argmin(model.bits[:, indices].sum(axis=1)))


def encode_pframe(frame: Frame420, state: CodecState, config: CodecConfig,
                  tools: Optional[_Tools] = None) -> Tuple[FrameSection, CodecState]:
    """
    Code a frame predicted from the previous reconstruction.

    Args:
        frame: Frame to code
        state: Previous reconstruction and previous transmitted flow
        config: Codec configuration

    Returns:
        (frame section, new state holding this frame's reconstruction)

    Raises:
        GeometryError: If the state was built for a different frame size
    """
    tools = tools or _Tools(config)
    reference = state.reference
    if (reference.width, reference.height) != (frame.width, frame.height):
        error_msg = (f"Frame {frame.width}x{frame.height} does not match the reference "
                     f"{reference.width}x{reference.height}")
        logger.error(error_msg)
        raise GeometryError(error_msg, module='codec')

    predicted_flow = extrapolate_flow(state.flow)
    measured = estimate_flow(reference, frame, config.block_size, config.search_range, config.search_method)
    if config.warp_mode is WarpMode.DENSE:
        measured = refine_dense_flow(reference, frame, measured)
    flow_symbols = flow_residual(measured, predicted_flow).astype(np.int8).ravel()
    flow_level = _choose_flow_level(flow_symbols, tools.model)
    flow_stream = tools.coder.encode(flow_symbols, flow_level)
    flow = reconstruct_flow(predicted_flow, flow_symbols.reshape(measured.vectors.shape))

    warped = predict(reference, flow, config.warp_mode, tools.kernel)
    residuals = [p.astype(np.float64) - w.astype(np.float64) for p, w in zip(frame.planes, warped.planes)]
    rho_bytes, residual_bytes, decoded = _code_residual(residuals, tools)
    reconstruction = _reconstruct(warped.planes, decoded, frame.width, frame.height)

    section = FrameSection(_P_TYPES[config.warp_mode], rho_bytes,
                           bytes([flow_level]) + flow_stream.to_bytes(), residual_bytes)
    return section, CodecState(reconstruction, flow)


def decode_iframe(section: FrameSection, header: ContainerHeader, tools: _Tools) -> Frame420:
    width, height = header.width, header.height
    grids = _block_counts(width, height, header.block_size)
    blocks = sum(r * c for r, c in grids)
    if len(section.side) < 3 * blocks:
        raise BitstreamFormatError(f"I-frame side data has {len(section.side)} bytes, expected at least {3 * blocks}")
    dc_flat = np.frombuffer(section.side[:2 * blocks], dtype='<u2')
    dc_levels, offset = [], 0
    for rows, cols in grids:
        dc_levels.append(dc_flat[offset:offset + rows * cols].reshape(rows, cols))
        offset += rows * cols
    prediction = _intra_prediction(dc_levels, width, height, tools)
    residual = _decode_residual(section.side[2 * blocks:], section.residual, width, height, tools)
    return _reconstruct(prediction, residual, width, height)


def decode_pframe(section: FrameSection, state: CodecState, header: ContainerHeader,
                  tools: _Tools) -> Tuple[Frame420, CodecState, FrameDebug]:
    width, height = header.width, header.height
    predicted_flow = extrapolate_flow(state.flow)
    if len(section.flow) < 1:
        raise BitstreamFormatError("P-frame flow section is empty")
    flow_level = section.flow[0]
    flow_stream = StreamSet.from_bytes(section.flow[1:])
    flow_count = predicted_flow.vectors.size
    flow_symbols = decode_symbols(flow_stream, flow_level, tools.model, flow_count, tools.config.threads)
    flow = reconstruct_flow(predicted_flow, flow_symbols.reshape(predicted_flow.vectors.shape))

    warped = predict(state.reference, flow, _WARP_MODES[section.frame_type], tools.kernel)
    residual = _decode_residual(section.side, section.residual, width, height, tools)
    reconstruction = _reconstruct(warped.planes, residual, width, height)
    return reconstruction, CodecState(reconstruction, flow), FrameDebug(warped, flow, tuple(residual))


@dataclass(frozen=True)
class DecodedFrame:
    frame: Frame420
    frame_type: FrameType
    debug: Optional[FrameDebug] = None


class VideoDecoder:
    """
    Container decoder.

    Decoding must start at an I-frame; any I-frame is a valid entry point.
    """

    def __init__(self, threads: int = 1):
        """
        Initialize video decoder.

        Args:
            threads: Worker threads for entropy decoding
        """
        self.threads = threads
        logger.info("Initialized VideoDecoder")

    def iter_frames(self, bitstream: bytes) -> Iterable[DecodedFrame]:
        """Decode frames one at a time, yielding P-frame intermediates as well."""
        header, sections = parse_container(bitstream)
        tools = _Tools(header.to_config(self.threads))
        state: Optional[CodecState] = None
        for index, section in enumerate(sections):
            if section.frame_type.is_intra:
                frame = decode_iframe(section, header, tools)
                state = CodecState(frame, FlowField.zeros(header.width, header.height, header.block_size))
                yield DecodedFrame(frame, section.frame_type)
            else:
                if state is None:
                    raise BitstreamFormatError(f"Section {index} is a P-frame with no preceding I-frame")
                frame, state, debug = decode_pframe(section, state, header, tools)
                yield DecodedFrame(frame, section.frame_type, debug)
            logger.debug(f"Decoded frame {index} ({section.frame_type.name})")

    def decode(self, bitstream: bytes) -> List[Frame420]:
        frames = [decoded.frame for decoded in self.iter_frames(bitstream)]
        logger.info(f"Decoded {len(frames)} frames")
        return frames


def decode_stream(bitstream: bytes, threads: int = 1) -> List[Frame420]:
    """
    Decode a full container.

    Raises:
        BitstreamFormatError: Bad magic, version or section layout
        BitstreamChecksumError: Header or section checksum failure
        TruncatedBitstreamError: Stream ends inside a section
    """
    return VideoDecoder(threads).decode(bitstream)


@dataclass
class EncodeResult:
    """Bitstream, encoder-side reconstructions and per-frame statistics."""

    bitstream: bytes
    reconstructions: List[Frame420]
    stats: List[FrameStats] = field(default_factory=list)
    width: int = 0
    height: int = 0
    gop_size: int = 1

    @property
    def total_bits(self) -> int:
        return 8 * len(self.bitstream)

    @property
    def bpp(self) -> float:
        pixels = self.width * self.height * max(1, len(self.reconstructions))
        return self.total_bits / pixels

    def mean_psnr(self, attribute: str = 'psnr_yuv611') -> float:
        """PSNR of the mean distortion over all frames for one column."""
        if attribute == 'psnr_yuv611':
            mean = float(np.mean([s.distortion for s in self.stats]))
            return float('inf') if mean == 0 else 10.0 * np.log10(255.0 ** 2 / mean)
        values = [10.0 ** (-getattr(s, attribute) / 10.0) for s in self.stats]
        mean = float(np.mean(values))
        return float('inf') if mean == 0 else -10.0 * np.log10(mean)

    def modulated_distortion(self, tau: float = 1.2) -> float:
        """Average of the per-GoP modulated distortions."""
        distortions = [s.distortion for s in self.stats]
        gops = [distortions[i:i + self.gop_size] for i in range(0, len(distortions), self.gop_size)]
        return float(np.mean([distortion_modulated(gop, tau) for gop in gops]))


class VideoEncoder:
    """
    Closed-loop GoP encoder.

    Frames whose index is a multiple of the GoP size are I-frames; all others
    are P-frames predicted from the previous reconstruction.
    """

    def __init__(self, config: CodecConfig, collect_flow_diagnostics: bool = True):
        """
        Initialize video encoder.

        Args:
            config: Codec configuration
            collect_flow_diagnostics: Also measure how well the extrapolated
                and the transmitted flow predict each P-frame
        """
        self.config = config
        self.tools = _Tools(config)
        self.collect_flow_diagnostics = collect_flow_diagnostics
        logger.info(f"Initialized VideoEncoder (b={config.block_size}, gop={config.gop_size}, "
                    f"warp={config.warp_mode.value}, latent={config.latent_step.value})")

    def encode(self, frames: Sequence[Frame420],
               progress: Optional[Callable[[FrameStats], None]] = None) -> EncodeResult:
        """
        Encode a sequence of frames.

        Args:
            frames: Frames of one geometry
            progress: Optional callback receiving each frame's statistics

        Returns:
            EncodeResult
        """
        if not frames:
            raise GeometryError("Nothing to encode: empty frame sequence", module='codec')
        width, height = frames[0].width, frames[0].height
        header = ContainerHeader.from_config(self.config, width, height)
        chunks = [header.to_bytes()]
        reconstructions: List[Frame420] = []
        stats: List[FrameStats] = []
        state: Optional[CodecState] = None

        for index, frame in enumerate(frames):
            if (frame.width, frame.height) != (width, height):
                raise GeometryError(f"Frame {index} is {frame.width}x{frame.height}, expected "
                                    f"{width}x{height}", module='codec')
            flow_pred_d = flow_d = None
            if index % self.config.gop_size == 0:
                section, reconstruction = encode_iframe(frame, self.config, self.tools)
                state = CodecState(reconstruction, FlowField.zeros(width, height, self.config.block_size))
            else:
                previous = state
                section, state = encode_pframe(frame, previous, self.config, self.tools)
                reconstruction = state.reference
                if self.collect_flow_diagnostics:
                    kernel = self.tools.kernel
                    flow_pred_d = distortion_flow(extrapolate_flow(previous.flow), previous.reference,
                                                  frame, kernel)
                    flow_d = distortion_flow(state.flow, previous.reference, frame, kernel)

            chunks.append(section.to_bytes())
            reconstructions.append(reconstruction)
            psnrs = frame_psnrs(frame, reconstruction)
            frame_stats = FrameStats(
                index=index,
                frame_type='I' if section.frame_type.is_intra else 'P',
                bits=8 * section.size,
                side_bits=8 * len(section.side),
                flow_bits=8 * len(section.flow),
                residual_bits=8 * len(section.residual),
                distortion=distortion_yuv611(frame, reconstruction)[0],
                flow_prediction_distortion=flow_pred_d,
                flow_distortion=flow_d,
                **psnrs,
            )
            stats.append(frame_stats)
            logger.debug(f"Frame {index} {frame_stats.frame_type}: {frame_stats.bits} bits, "
                         f"{frame_stats.psnr_yuv611:.2f} dB")
            if progress is not None:
                progress(frame_stats)

        bitstream = b''.join(chunks)
        logger.info(f"Encoded {len(frames)} frames into {len(bitstream)} bytes")
        return EncodeResult(bitstream, reconstructions, stats, width, height, self.config.gop_size)


def encode_sequence(frames: Sequence[Frame420], config: CodecConfig) -> EncodeResult:
    """Encode frames with a fresh encoder."""
    return VideoEncoder(config).encode(frames)
