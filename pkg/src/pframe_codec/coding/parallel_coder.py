"""
Parallel entropy coder

Symbols are distributed round-robin over N independent range-coded streams
so that a decoder can run one worker per stream. The streams are stored
back to back behind a small header giving each stream's length, either as
fixed 32-bit integers or as varint deltas from the mean length.

Wire format of a StreamSet (little-endian)::

    magic "PEC1" | N u16 | header mode u8 | checksum u32 | header | payload

The naive header is N x u32 lengths. The optimized header is a u32 mean
length followed by N zig-zag LEB128 deltas. The checksum is the CRC32 of the
payload.
"""

import logging
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import IntEnum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import StreamChecksumError, StreamFormatError
from . import range_kernels
from .entropy_bottleneck import SYMBOL_MIN, SymbolModel, validate_symbols

logger = logging.getLogger(__name__)

MAGIC = b'PEC1'
MAX_STREAMS = 1024
_PREAMBLE = struct.Struct('<4sHBI')

_STATUS_MESSAGES = {
    range_kernels.STATUS_TRUNCATED: 'truncated',
    range_kernels.STATUS_INVALID: 'corrupt (value outside the probability table)',
    range_kernels.STATUS_TRAILING: 'has unconsumed trailing bytes',
}


class HeaderMode(IntEnum):
    NAIVE = 0
    OPTIMIZED = 1


def _encode_varint(value: int) -> bytes:
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def _decode_varint(data: bytes, pos: int) -> Tuple[int, int]:
    value = 0
    shift = 0
    while True:
        if pos >= len(data):
            raise StreamFormatError("Varint runs past the end of the header")
        byte = data[pos]
        pos += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, pos
        shift += 7
        if shift > 35:
            raise StreamFormatError("Varint too long")


def _zigzag(value: int) -> int:
    return value * 2 if value >= 0 else -value * 2 - 1


def _unzigzag(value: int) -> int:
    return value // 2 if value % 2 == 0 else -(value + 1) // 2


def encode_header(lengths: Sequence[int], header_mode: HeaderMode) -> bytes:
    """Serialize the stream length block."""
    if header_mode == HeaderMode.NAIVE:
        return struct.pack(f'<{len(lengths)}I', *lengths)
    mean = sum(lengths) // len(lengths)
    return struct.pack('<I', mean) + b''.join(_encode_varint(_zigzag(n - mean)) for n in lengths)


def _check_stream_count(stream_count: int) -> None:
    if not 1 <= stream_count <= MAX_STREAMS:
        error_msg = f"Stream count must be in [1, {MAX_STREAMS}], got {stream_count}"
        logger.error(error_msg)
        raise StreamFormatError(error_msg)


@dataclass(frozen=True)
class StreamSet:
    """N independently decodable streams plus their length header."""

    stream_count: int
    header_mode: HeaderMode
    lengths: Tuple[int, ...]
    payload: bytes
    checksum: int

    def __post_init__(self):
        _check_stream_count(self.stream_count)
        if len(self.lengths) != self.stream_count:
            raise StreamFormatError(f"Expected {self.stream_count} lengths, got {len(self.lengths)}")
        if sum(self.lengths) != len(self.payload):
            raise StreamFormatError(f"Stream lengths sum to {sum(self.lengths)} but payload has "
                                    f"{len(self.payload)} bytes")

    @property
    def offsets(self) -> np.ndarray:
        lengths = np.asarray(self.lengths, dtype=np.int64)
        return np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)

    @property
    def header_bytes(self) -> int:
        return len(encode_header(self.lengths, self.header_mode))

    @property
    def header_overhead(self) -> float:
        return header_overhead(len(self.payload), self.stream_count, self.header_mode, self.lengths)

    def stream(self, index: int) -> bytes:
        offset = int(self.offsets[index])
        return self.payload[offset:offset + self.lengths[index]]

    def to_bytes(self) -> bytes:
        header = encode_header(self.lengths, self.header_mode)
        preamble = _PREAMBLE.pack(MAGIC, self.stream_count, int(self.header_mode), self.checksum)
        return preamble + header + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> 'StreamSet':
        """
        Parse a serialized StreamSet.

        Raises:
            StreamFormatError: Bad magic, stream count, header or lengths
            StreamChecksumError: Payload does not match its checksum
        """
        data = bytes(data)
        if len(data) < _PREAMBLE.size:
            raise StreamFormatError(f"StreamSet too short ({len(data)} bytes)")
        magic, stream_count, mode, checksum = _PREAMBLE.unpack_from(data, 0)
        if magic != MAGIC:
            error_msg = f"Bad StreamSet magic {magic!r}"
            logger.error(error_msg)
            raise StreamFormatError(error_msg)
        _check_stream_count(stream_count)
        try:
            header_mode = HeaderMode(mode)
        except ValueError:
            raise StreamFormatError(f"Unknown header mode {mode}")

        pos = _PREAMBLE.size
        if header_mode == HeaderMode.NAIVE:
            end = pos + 4 * stream_count
            if end > len(data):
                raise StreamFormatError("StreamSet header truncated")
            lengths = struct.unpack_from(f'<{stream_count}I', data, pos)
            pos = end
        else:
            if pos + 4 > len(data):
                raise StreamFormatError("StreamSet header truncated")
            (mean,) = struct.unpack_from('<I', data, pos)
            pos += 4
            lengths = []
            for _ in range(stream_count):
                delta, pos = _decode_varint(data, pos)
                length = mean + _unzigzag(delta)
                if length < 0:
                    raise StreamFormatError(f"Negative stream length {length}")
                lengths.append(length)
            lengths = tuple(lengths)

        payload = data[pos:]
        if sum(lengths) != len(payload):
            error_msg = f"Header declares {sum(lengths)} payload bytes, found {len(payload)}"
            logger.error(error_msg)
            raise StreamFormatError(error_msg)
        if zlib.crc32(payload) != checksum:
            error_msg = f"StreamSet checksum mismatch (stored {checksum:#010x})"
            logger.error(error_msg)
            raise StreamChecksumError(error_msg)
        return cls(stream_count, header_mode, tuple(lengths), payload, checksum)


def header_overhead(payload_bytes: int, stream_count: int, header_mode: HeaderMode,
                    lengths: Optional[Sequence[int]] = None) -> float:
    """
    Length-header size as a fraction of the payload.

    Args:
        payload_bytes: Payload size in bytes
        stream_count: Number of streams N
        header_mode: NAIVE (4N bytes) or OPTIMIZED
        lengths: Actual stream lengths; for OPTIMIZED without lengths an even
            split of the payload is assumed

    Returns:
        Header bytes divided by payload bytes
    """
    _check_stream_count(stream_count)
    if header_mode == HeaderMode.NAIVE:
        header = 4 * stream_count
    else:
        if lengths is None:
            base, extra = divmod(payload_bytes, stream_count)
            lengths = [base + (1 if k < extra else 0) for k in range(stream_count)]
        header = len(encode_header(list(lengths), header_mode))
    if payload_bytes == 0:
        return 0.0 if header == 0 else float('inf')
    return header / payload_bytes


def _chunks(stream_count: int, threads: int) -> List[Tuple[int, int]]:
    workers = max(1, min(threads, stream_count))
    bounds = np.linspace(0, stream_count, workers + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _symbols_in(first: int, last: int, count: int, stream_count: int) -> int:
    return sum(len(range(k, count, stream_count)) for k in range(first, last))


def encode(symbols, rho_levels, model: SymbolModel, stream_count: int,
           header_mode: HeaderMode = HeaderMode.NAIVE, threads: int = 1) -> StreamSet:
    """
    Entropy code symbols into N interleaved streams.

    Symbol i goes to stream i mod N. The output does not depend on the
    number of worker threads.

    Args:
        symbols: Integers in [-127, 127]
        rho_levels: Prescale level per symbol (or one level for all)
        model: Probability tables
        stream_count: N in [1, 1024]
        header_mode: Length header layout
        threads: Worker threads

    Returns:
        StreamSet

    Raises:
        SymbolRangeError: If a symbol or level is out of range
        StreamFormatError: If N is out of range
    """
    _check_stream_count(stream_count)
    indices, levels = validate_symbols(symbols, rho_levels)
    indices = indices - SYMBOL_MIN
    count = indices.shape[0]
    cumulative = np.ascontiguousarray(model.cumulative)

    def encode_chunk(bounds: Tuple[int, int]) -> Tuple[bytes, np.ndarray]:
        first, last = bounds
        capacity = range_kernels.output_capacity(_symbols_in(first, last, count, stream_count), last - first)
        out = np.empty(capacity, dtype=np.uint8)
        lengths = np.zeros(last - first, dtype=np.int64)
        written = range_kernels.encode_streams(indices, levels, cumulative, stream_count,
                                               first, last, out, lengths)
        return out[:written].tobytes(), lengths

    chunks = _chunks(stream_count, threads)
    if len(chunks) == 1:
        results = [encode_chunk(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as executor:
            results = list(executor.map(encode_chunk, chunks))

    payload = b''.join(part for part, _ in results)
    lengths = tuple(int(n) for _, chunk_lengths in results for n in chunk_lengths)
    logger.debug(f"Encoded {count} symbols into {stream_count} streams ({len(payload)} bytes)")
    return StreamSet(stream_count, HeaderMode(header_mode), lengths, payload, zlib.crc32(payload))


def _verify(stream_set: StreamSet) -> None:
    if zlib.crc32(stream_set.payload) != stream_set.checksum:
        error_msg = "StreamSet payload checksum mismatch"
        logger.error(error_msg)
        raise StreamChecksumError(error_msg)


def _run_decode(stream_set: StreamSet, levels: np.ndarray, model: SymbolModel,
                out: np.ndarray, bounds: Tuple[int, int]) -> None:
    payload = np.frombuffer(stream_set.payload, dtype=np.uint8)
    lengths = np.asarray(stream_set.lengths, dtype=np.int64)
    status, index = range_kernels.decode_streams(
        payload, stream_set.offsets, lengths, levels, np.ascontiguousarray(model.cumulative),
        stream_set.stream_count, bounds[0], bounds[1], out)
    if status != range_kernels.STATUS_OK:
        error_msg = f"Stream {index} is {_STATUS_MESSAGES[status]}"
        logger.error(error_msg)
        raise StreamFormatError(error_msg)


def _prepare_levels(rho_levels, count: int) -> np.ndarray:
    _, levels = validate_symbols(np.zeros(count, dtype=np.int64), rho_levels)
    return levels


def decode(stream_set: StreamSet, rho_levels, model: SymbolModel, count: int,
           threads: int = 1) -> np.ndarray:
    """
    Decode ``count`` symbols from a StreamSet.

    Args:
        stream_set: Encoded streams
        rho_levels: Prescale level per symbol, as used for encoding
        model: Probability tables
        count: Number of symbols
        threads: Worker threads

    Returns:
        int8 symbol array

    Raises:
        StreamChecksumError: Payload checksum mismatch
        StreamFormatError: Truncated, corrupt or over-long stream
    """
    _verify(stream_set)
    levels = _prepare_levels(rho_levels, count)
    out = np.zeros(count, dtype=np.int64)
    chunks = _chunks(stream_set.stream_count, threads)
    if len(chunks) == 1:
        _run_decode(stream_set, levels, model, out, chunks[0])
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as executor:
            list(executor.map(lambda bounds: _run_decode(stream_set, levels, model, out, bounds), chunks))
    logger.debug(f"Decoded {count} symbols from {stream_set.stream_count} streams")
    return (out + SYMBOL_MIN).astype(np.int8)


def decode_stream(stream_set: StreamSet, index: int, rho_levels, model: SymbolModel,
                  count: int) -> np.ndarray:
    """
    Decode a single stream in isolation.

    Returns the symbols of stream ``index`` in order, i.e. entries
    index, index + N, ... of the full symbol array.
    """
    _verify(stream_set)
    if not 0 <= index < stream_set.stream_count:
        raise StreamFormatError(f"Stream index {index} out of range")
    levels = _prepare_levels(rho_levels, count)
    out = np.zeros(count, dtype=np.int64)
    _run_decode(stream_set, levels, model, out, (index, index + 1))
    return (out[index::stream_set.stream_count] + SYMBOL_MIN).astype(np.int8)


class ParallelEntropyCoder:
    """
    Parallel entropy coder bound to one symbol model and stream layout.

    Provides encode/decode of symbol arrays and serialized StreamSets for
    use by the frame codec.
    """

    def __init__(self, model: SymbolModel, stream_count: int,
                 header_mode: HeaderMode = HeaderMode.NAIVE, threads: int = 1):
        """
        Initialize parallel entropy coder.

        Args:
            model: Probability tables
            stream_count: Streams per StreamSet
            header_mode: Length header layout
            threads: Worker threads for encode and decode
        """
        _check_stream_count(stream_count)
        self.model = model
        self.stream_count = stream_count
        self.header_mode = HeaderMode(header_mode)
        self.threads = max(1, threads)
        logger.info(f"Initialized ParallelEntropyCoder (N={stream_count}, {self.header_mode.name}, "
                    f"{self.threads} threads)")

    def encode(self, symbols, rho_levels) -> StreamSet:
        return encode(symbols, rho_levels, self.model, self.stream_count, self.header_mode, self.threads)

    def decode(self, stream_set: StreamSet, rho_levels, count: int) -> np.ndarray:
        return decode(stream_set, rho_levels, self.model, count, self.threads)

    def encode_bytes(self, symbols, rho_levels) -> bytes:
        return self.encode(symbols, rho_levels).to_bytes()

    def decode_bytes(self, data: bytes, rho_levels, count: int) -> np.ndarray:
        return self.decode(StreamSet.from_bytes(data), rho_levels, count)
