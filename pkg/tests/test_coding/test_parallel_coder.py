"""
Tests for the parallel range coder
"""

import threading
import zlib
from unittest.mock import patch

import numpy as np
import pytest

from pframe_codec.coding import range_kernels
from pframe_codec.coding.entropy_bottleneck import (
    PRECISION_TOTAL, Bottleneck, rate_estimate, symbol_tables
)
from pframe_codec.coding.parallel_coder import (
    MAGIC, HeaderMode, ParallelEntropyCoder, StreamSet, decode, decode_stream, encode,
    encode_header, header_overhead
)
from pframe_codec.errors import StreamChecksumError, StreamFormatError, SymbolRangeError

PREAMBLE_BYTES = 11


def model_samples(model, level, count, rng):
    p = model.frequencies[level] / PRECISION_TOTAL
    return rng.choice(np.arange(-127, 128), size=count, p=p)


class TestRoundTrip:
    """Test lossless encode/decode."""

    def setup_method(self):
        """Setup test environment."""
        self.model = symbol_tables(Bottleneck())
        self.rng = np.random.default_rng(2024)

    @pytest.mark.parametrize('stream_count', [1, 8, 256, 512, 1024])
    @pytest.mark.parametrize('header_mode', [HeaderMode.NAIVE, HeaderMode.OPTIMIZED])
    def test_round_trip(self, stream_count, header_mode):
        """Test decode(encode(x)) == x for the benchmark stream counts."""
        levels = self.rng.integers(0, 256, 5000)
        symbols = np.clip(np.round(self.rng.normal(0.0, self.model.sigmas[levels])), -127, 127)
        stream_set = encode(symbols, levels, self.model, stream_count, header_mode)
        parsed = StreamSet.from_bytes(stream_set.to_bytes())
        assert parsed == stream_set
        assert np.array_equal(decode(parsed, levels, self.model, len(symbols)), symbols)

    def test_random_property_cases(self):
        """Test round trips over many random shapes, levels and stream counts."""
        for _ in range(100):
            count = int(self.rng.integers(0, 400))
            stream_count = int(self.rng.integers(1, 64))
            levels = self.rng.integers(0, 256, count)
            symbols = self.rng.integers(-127, 128, count)
            stream_set = encode(symbols, levels, self.model, stream_count,
                                HeaderMode(int(self.rng.integers(0, 2))))
            assert np.array_equal(decode(stream_set, levels, self.model, count), symbols)

    @pytest.mark.parametrize('value', [-127, 127])
    def test_adversarial_extremes(self, value):
        """Test all-min and all-max symbols at the sharpest table."""
        symbols = np.full(500, value)
        stream_set = encode(symbols, 0, self.model, 4)
        assert np.array_equal(decode(stream_set, 0, self.model, 500), symbols)

    def test_empty_input(self):
        """Test no symbols gives N empty streams."""
        stream_set = encode(np.zeros(0, dtype=np.int8), 0, self.model, 8)
        assert stream_set.lengths == (0,) * 8
        assert stream_set.payload == b''
        assert decode(stream_set, 0, self.model, 0).size == 0

    def test_fewer_symbols_than_streams(self):
        """Test trailing streams stay empty."""
        symbols = np.array([5, -5, 0])
        stream_set = encode(symbols, 120, self.model, 8)
        assert stream_set.lengths[3:] == (0,) * 5
        assert np.array_equal(decode(stream_set, 120, self.model, 3), symbols)

    def test_thread_count_does_not_change_output(self):
        """Test byte-identical output for any number of workers."""
        levels = self.rng.integers(0, 256, 20000)
        symbols = self.rng.integers(-20, 21, 20000)
        single = ParallelEntropyCoder(self.model, 64, threads=1).encode_bytes(symbols, levels)
        multi = ParallelEntropyCoder(self.model, 64, threads=4).encode_bytes(symbols, levels)
        assert single == multi
        decoded = ParallelEntropyCoder(self.model, 64, threads=3).decode_bytes(multi, levels, 20000)
        assert np.array_equal(decoded, symbols)

    def test_worker_chunks_run_concurrently(self):
        """Test every worker is inside the decode kernel at the same time."""
        levels = self.rng.integers(0, 256, 4000)
        symbols = self.rng.integers(-20, 21, 4000)
        coder = ParallelEntropyCoder(self.model, 64, threads=4)
        stream_set = coder.encode(symbols, levels)
        # A serialized decode would leave the first worker waiting here until the timeout.
        barrier = threading.Barrier(4, timeout=10)
        kernel = range_kernels.decode_streams

        def gated(*args):
            barrier.wait()
            return kernel(*args)

        with patch.object(range_kernels, 'decode_streams', side_effect=gated) as mocked:
            decoded = coder.decode(stream_set, levels, 4000)
        assert mocked.call_count == 4
        assert np.array_equal(decoded, symbols)

    def test_streams_decode_independently_in_any_order(self):
        """Test decoding each stream alone, last stream first."""
        levels = self.rng.integers(0, 256, 3000)
        symbols = self.rng.integers(-127, 128, 3000)
        stream_set = encode(symbols, levels, self.model, 16)
        rebuilt = np.zeros(3000, dtype=np.int64)
        for index in reversed(range(16)):
            rebuilt[index::16] = decode_stream(stream_set, index, levels, self.model, 3000)
        assert np.array_equal(rebuilt, symbols)

    def test_symbol_out_of_range(self):
        """Test symbols outside the alphabet are rejected."""
        with pytest.raises(SymbolRangeError):
            encode(np.array([-128]), 0, self.model, 1)

    @pytest.mark.parametrize('stream_count', [0, 1025])
    def test_stream_count_limits(self, stream_count):
        """Test N outside [1, 1024] is rejected."""
        with pytest.raises(StreamFormatError):
            encode(np.zeros(4), 0, self.model, stream_count)


class TestCorruption:
    """Test detection of malformed or damaged stream sets."""

    def setup_method(self):
        """Setup test environment."""
        self.model = symbol_tables(Bottleneck())
        rng = np.random.default_rng(5)
        self.levels = rng.integers(100, 200, 4000)
        self.symbols = rng.integers(-30, 31, 4000)
        self.stream_set = encode(self.symbols, self.levels, self.model, 8)

    def test_truncated_serialization(self):
        """Test a cut-off byte string is rejected."""
        data = self.stream_set.to_bytes()
        with pytest.raises(StreamFormatError):
            StreamSet.from_bytes(data[:-10])
        with pytest.raises(StreamFormatError):
            StreamSet.from_bytes(data[:5])

    def test_truncated_stream(self):
        """Test a stream missing its last byte fails to decode."""
        lengths = list(self.stream_set.lengths)
        lengths[-1] -= 1
        payload = self.stream_set.payload[:-1]
        damaged = StreamSet(8, HeaderMode.NAIVE, tuple(lengths), payload, zlib.crc32(payload))
        with pytest.raises(StreamFormatError):
            decode(damaged, self.levels, self.model, 4000)

    def test_flipped_payload_byte(self):
        """Test the checksum catches payload damage."""
        data = bytearray(self.stream_set.to_bytes())
        data[-1] ^= 0x40
        with pytest.raises(StreamChecksumError):
            StreamSet.from_bytes(bytes(data))

    def test_bad_magic(self):
        """Test foreign data is rejected."""
        data = b'XXXX' + self.stream_set.to_bytes()[4:]
        with pytest.raises(StreamFormatError):
            StreamSet.from_bytes(data)

    def test_length_sum_checked(self):
        """Test lengths must add up to the payload."""
        with pytest.raises(StreamFormatError):
            StreamSet(2, HeaderMode.NAIVE, (1, 1), b'\x00', 0)

    def test_checksum_checked_before_decode(self):
        """Test decode refuses a set whose checksum does not match."""
        tampered = StreamSet(8, HeaderMode.NAIVE, self.stream_set.lengths,
                             self.stream_set.payload, self.stream_set.checksum ^ 1)
        with pytest.raises(StreamChecksumError):
            decode(tampered, self.levels, self.model, 4000)


class TestHeaderOverhead:
    """Test length header sizes."""

    def test_naive_benchmark_point(self):
        """Test 512 naive lengths over a 52,513-byte payload."""
        overhead = header_overhead(52513, 512, HeaderMode.NAIVE)
        assert overhead == pytest.approx(2048 / 52513)
        assert round(100 * overhead, 2) == 3.90

    def test_single_stream(self):
        """Test one stream costs four bytes."""
        assert header_overhead(10000, 1, HeaderMode.NAIVE) == pytest.approx(0.0004)

    def test_optimized_halves_overhead(self):
        """Test delta-coded lengths cost at most 0.55 of fixed lengths on even splits."""
        naive = header_overhead(52513, 512, HeaderMode.NAIVE)
        optimized = header_overhead(52513, 512, HeaderMode.OPTIMIZED)
        assert optimized / naive <= 0.55

    def test_monotone_in_stream_count(self):
        """Test more streams never cost less header."""
        for mode in HeaderMode:
            values = [header_overhead(52513, n, mode) for n in (1, 2, 8, 64, 256, 512, 1024)]
            assert all(b >= a for a, b in zip(values, values[1:]))

    def test_matches_serialized_header(self):
        """Test reported overhead equals the bytes actually written."""
        model = symbol_tables(Bottleneck())
        rng = np.random.default_rng(9)
        symbols = model_samples(model, 150, 100000, rng)
        for mode in HeaderMode:
            stream_set = encode(symbols, 150, model, 512, mode)
            written = len(stream_set.to_bytes()) - PREAMBLE_BYTES - len(stream_set.payload)
            assert stream_set.header_bytes == written
            assert stream_set.header_overhead == pytest.approx(written / len(stream_set.payload))
        naive = encode(symbols, 150, model, 512, HeaderMode.NAIVE)
        optimized = encode(symbols, 150, model, 512, HeaderMode.OPTIMIZED)
        assert optimized.header_bytes / naive.header_bytes <= 0.55
        assert optimized.payload == naive.payload

    def test_encode_header_layout(self):
        """Test both header layouts byte for byte."""
        assert encode_header([1, 2], HeaderMode.NAIVE) == b'\x01\x00\x00\x00\x02\x00\x00\x00'
        assert encode_header([10, 11, 9], HeaderMode.OPTIMIZED) == b'\x0a\x00\x00\x00\x00\x02\x01'

    def test_preamble(self):
        """Test the serialized set starts with the magic."""
        model = symbol_tables(Bottleneck())
        assert encode(np.zeros(3), 0, model, 1).to_bytes().startswith(MAGIC)


class TestCodedLength:
    """Test coder efficiency against the model's ideal code length."""

    def test_close_to_ideal(self):
        """Test coded bits stay within 0.1% plus 48 bits per stream of the estimate."""
        model = symbol_tables(Bottleneck())
        rng = np.random.default_rng(11)
        symbols = model_samples(model, 150, 200000, rng)
        ideal = rate_estimate(symbols, 150, model)
        for stream_count in (1, 8):
            stream_set = encode(symbols, 150, model, stream_count)
            assert 8 * len(stream_set.payload) <= ideal * 1.001 + 48 * stream_count

    @pytest.mark.slow
    def test_close_to_ideal_million(self):
        """Test the length bound on a million model-distributed symbols."""
        model = symbol_tables(Bottleneck())
        rng = np.random.default_rng(12)
        symbols = model_samples(model, 180, 1000000, rng)
        ideal = rate_estimate(symbols, 180, model)
        for stream_count in (1, 512):
            stream_set = encode(symbols, 180, model, stream_count)
            assert 8 * len(stream_set.payload) <= ideal * 1.001 + 48 * stream_count
