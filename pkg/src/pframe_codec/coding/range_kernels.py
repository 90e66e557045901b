"""
Compiled range coder kernels

Byte-oriented carry-propagating range coder over 16-bit cumulative tables.
The encoder keeps a 33-bit low register with a pending cache byte; the
decoder keeps a 32-bit code window. Kernels process a contiguous range of
interleaved streams and release the GIL, so worker threads run them in
parallel.

Stream k owns symbols k, k + N, k + 2N, ... of the input.
"""

import numpy as np
from numba import njit

TOP = 1 << 24
MASK32 = 0xFFFFFFFF
PRECISION_SHIFT = 16
PRIMING_BYTES = 4

STATUS_OK = 0
STATUS_TRUNCATED = 1
STATUS_INVALID = 2
STATUS_TRAILING = 3


@njit(cache=True, nogil=True)
def _shift_low(low, cache, cache_size, out, pos):
    if low < 0xFF000000 or low >= 0x100000000:
        carry = low >> 32
        temp = cache
        while True:
            out[pos] = (temp + carry) & 0xFF
            pos += 1
            temp = 0xFF
            cache_size -= 1
            if cache_size == 0:
                break
        cache = (low >> 24) & 0xFF
    cache_size += 1
    low = (low & 0x00FFFFFF) << 8
    return low, cache, cache_size, pos


@njit(cache=True, nogil=True)
def encode_streams(indices, levels, cumulative, stream_count, first, last, out, lengths):
    """
    Encode streams [first, last) into ``out``.

    Returns the number of bytes written; per-stream sizes go to ``lengths``.
    """
    n = indices.shape[0]
    pos = 0
    for k in range(first, last):
        start = pos
        if k >= n:
            lengths[k - first] = 0
            continue
        low = 0
        rng = MASK32
        cache = 0
        cache_size = 1
        for i in range(k, n, stream_count):
            row = levels[i]
            symbol = indices[i]
            c0 = cumulative[row, symbol]
            r = rng >> PRECISION_SHIFT
            low += r * c0
            rng = r * (cumulative[row, symbol + 1] - c0)
            while rng < TOP:
                rng <<= 8
                low, cache, cache_size, pos = _shift_low(low, cache, cache_size, out, pos)
        for _ in range(5):
            low, cache, cache_size, pos = _shift_low(low, cache, cache_size, out, pos)
        # The first byte of a stream is always zero; drop it.
        for j in range(start, pos - 1):
            out[j] = out[j + 1]
        pos -= 1
        lengths[k - first] = pos - start
    return pos


@njit(cache=True, nogil=True)
def decode_streams(payload, offsets, lengths, levels, cumulative, stream_count, first, last, out):
    """
    Decode streams [first, last) into ``out`` (symbol indices).

    Returns (status, stream index); status is STATUS_OK on success.
    """
    n = out.shape[0]
    symbols = cumulative.shape[1] - 1
    total = 1 << PRECISION_SHIFT
    for k in range(first, last):
        pos = offsets[k]
        end = pos + lengths[k]
        if k >= n:
            if lengths[k] != 0:
                return STATUS_TRAILING, k
            continue
        if lengths[k] < PRIMING_BYTES:
            return STATUS_TRUNCATED, k
        code = 0
        for _ in range(PRIMING_BYTES):
            code = (code << 8) | payload[pos]
            pos += 1
        rng = MASK32
        for i in range(k, n, stream_count):
            row = levels[i]
            r = rng >> PRECISION_SHIFT
            value = code // r
            if value >= total:
                return STATUS_INVALID, k
            lo = 0
            hi = symbols
            while hi - lo > 1:
                mid = (lo + hi) >> 1
                if cumulative[row, mid] <= value:
                    lo = mid
                else:
                    hi = mid
            c0 = cumulative[row, lo]
            code -= r * c0
            rng = r * (cumulative[row, lo + 1] - c0)
            while rng < TOP:
                if pos >= end:
                    return STATUS_TRUNCATED, k
                code = ((code << 8) | payload[pos]) & MASK32
                pos += 1
                rng <<= 8
            out[i] = lo
        if pos != end:
            return STATUS_TRAILING, k
    return STATUS_OK, -1


def output_capacity(symbol_count: int, stream_count: int) -> int:
    """Upper bound on encoded bytes: two per symbol plus the flush per stream."""
    return 2 * symbol_count + 5 * stream_count + 8
