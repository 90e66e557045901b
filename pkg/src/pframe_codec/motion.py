"""
Motion estimation and flow prediction

Block matching on the luma plane: an integer-pel search (exhaustive or
diamond) minimizing the sum of absolute differences, followed by a half-pel
and quarter-pel bilinear refinement, and an optional second refinement that
tunes the vectors for dense warping. Also provides the zero-latency flow
extrapolation used as the P-frame flow predictor and the lossless flow
residual that is entropy coded.
"""

import logging
from typing import Dict, List, Tuple

import numpy as np

from .errors import FlowRangeError, GeometryError
from .frame_io import Frame420
from .warp_engine import (
    DENSE_PRECISION,
    MV_LIMIT,
    FlowField,
    block_grid,
    interpolate_vectors,
    round_pixels,
    sample_plane,
    sample_points,
)

logger = logging.getLogger(__name__)

MAX_SEARCH_RANGE = 31
SEARCH_METHODS = ('exhaustive', 'diamond')

_KEY_BASE = 512
_LARGE_DIAMOND = [(0, 0), (-2, 0), (2, 0), (0, -2), (0, 2), (-1, -1), (1, -1), (-1, 1), (1, 1)]
_SMALL_DIAMOND = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)]
_REFINE_OFFSETS = [(dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dx, dy) != (0, 0)]


def tie_break_key(vx, vy):
    """Ordering key for equal-cost vectors: shorter first, then smaller y, then smaller x."""
    vx = np.asarray(vx, dtype=np.int64)
    vy = np.asarray(vy, dtype=np.int64)
    return ((vx * vx + vy * vy) * _KEY_BASE + (vy + _KEY_BASE // 2)) * _KEY_BASE + (vx + _KEY_BASE // 2)


def _block_sums(values: np.ndarray, block_size: int) -> np.ndarray:
    height, width = values.shape
    row_starts = np.arange(0, height, block_size)
    col_starts = np.arange(0, width, block_size)
    return np.add.reduceat(np.add.reduceat(values, row_starts, axis=0), col_starts, axis=1)


def _integer_candidates(search_range: int) -> List[Tuple[int, int]]:
    span = range(-search_range, search_range + 1)
    candidates = [(vx, vy) for vy in span for vx in span]
    return sorted(candidates, key=lambda v: int(tie_break_key(v[0], v[1])))


def _exhaustive_search(ref: np.ndarray, tgt: np.ndarray, block_size: int,
                       search_range: int) -> np.ndarray:
    height, width = tgt.shape
    r = search_range
    padded = np.pad(ref, r, mode='edge')
    candidates = _integer_candidates(r)
    sads = np.empty((len(candidates),) + block_grid(width, height, block_size), dtype=np.int64)
    for index, (vx, vy) in enumerate(candidates):
        shifted = padded[r + vy:r + vy + height, r + vx:r + vx + width]
        sads[index] = _block_sums(np.abs(tgt - shifted), block_size)
    best = np.argmin(sads, axis=0)
    table = np.array(candidates, dtype=np.int64)
    return table[best]


def _diamond_search(ref: np.ndarray, tgt: np.ndarray, block_size: int,
                    search_range: int) -> np.ndarray:
    height, width = tgt.shape
    r = search_range
    padded = np.pad(ref, r, mode='edge')
    rows, cols = block_grid(width, height, block_size)
    result = np.zeros((rows, cols, 2), dtype=np.int64)

    for by in range(rows):
        for bx in range(cols):
            y0, x0 = by * block_size, bx * block_size
            target_block = tgt[y0:y0 + block_size, x0:x0 + block_size]
            bh, bw = target_block.shape
            cache: Dict[Tuple[int, int], int] = {}

            def cost(v):
                if v not in cache:
                    vx, vy = v
                    window = padded[r + y0 + vy:r + y0 + vy + bh, r + x0 + vx:r + x0 + vx + bw]
                    cache[v] = int(np.abs(target_block - window).sum())
                return cache[v]

            def step(center, pattern):
                options = [(center[0] + dx, center[1] + dy) for dx, dy in pattern]
                options = [v for v in options if abs(v[0]) <= r and abs(v[1]) <= r]
                return min(options, key=lambda v: (cost(v), int(tie_break_key(v[0], v[1]))))

            center = (0, 0)
            while True:
                moved = step(center, _LARGE_DIAMOND)
                if moved == center:
                    break
                center = moved
            result[by, bx] = step(center, _SMALL_DIAMOND)
    return result


def _subpel_refine(ref: np.ndarray, tgt: np.ndarray, block_size: int,
                   vectors: np.ndarray) -> np.ndarray:
    """
    Half-pel then quarter-pel descent around ``vectors`` (quarter-pel units).

    The best of the 8 neighbours, ties going to the smaller tie-break key,
    replaces the centre only when its SAD is strictly lower.
    """
    height, width = tgt.shape

    def block_sad(candidate: np.ndarray) -> np.ndarray:
        expanded = np.repeat(np.repeat(candidate, block_size, axis=0), block_size, axis=1)
        expanded = expanded[:height, :width]
        scaled = sample_plane(ref.astype(np.uint8), expanded[..., 0], expanded[..., 1], 4)
        prediction = round_pixels(scaled / 16.0).astype(np.int64)
        return _block_sums(np.abs(tgt - prediction), block_size)

    best = vectors.copy()
    best_sad = block_sad(best)
    for step in (2, 1):
        winner = best.copy()
        winner_sad = np.full(best_sad.shape, np.iinfo(np.int64).max)
        winner_key = np.full(best_sad.shape, np.iinfo(np.int64).max)
        for dx, dy in _REFINE_OFFSETS:
            candidate = best + np.array([dx * step, dy * step], dtype=np.int64)
            np.clip(candidate, -MV_LIMIT, MV_LIMIT, out=candidate)
            sad = block_sad(candidate)
            key = tie_break_key(candidate[..., 0], candidate[..., 1])
            better = (sad < winner_sad) | ((sad == winner_sad) & (key < winner_key))
            winner[better] = candidate[better]
            winner_sad = np.where(better, sad, winner_sad)
            winner_key = np.where(better, key, winner_key)
        moved = winner_sad < best_sad
        best[moved] = winner[moved]
        best_sad = np.where(moved, winner_sad, best_sad)
    return best


def estimate_flow(reference: Frame420, target: Frame420, block_size: int,
                  search_range: int, method: str = 'exhaustive') -> FlowField:
    """
    Estimate a quarter-pel block flow from ``reference`` to ``target``.

    The returned flow predicts ``target`` when used to warp ``reference``.
    Ties between equal-SAD vectors go to the smallest |v|, then the smallest
    v_y, then the smallest v_x.

    Args:
        reference: Previous reconstruction
        target: Frame to predict
        block_size: Block size b
        search_range: Integer-pel search range R (0..31)
        method: 'exhaustive' or 'diamond'

    Returns:
        FlowField with vectors in quarter-pel units

    Raises:
        GeometryError: If the frames differ in size
        FlowRangeError: If R is outside [0, 31] or the method is unknown
    """
    if (reference.width, reference.height) != (target.width, target.height):
        raise GeometryError(f"Reference {reference.width}x{reference.height} and target "
                            f"{target.width}x{target.height} differ", module='motion')
    if not 0 <= search_range <= MAX_SEARCH_RANGE:
        error_msg = f"Search range must be in [0, {MAX_SEARCH_RANGE}], got {search_range}"
        logger.error(error_msg)
        raise FlowRangeError(error_msg)
    if method not in SEARCH_METHODS:
        raise FlowRangeError(f"Unknown search method '{method}', expected one of {SEARCH_METHODS}")

    ref = reference.y.astype(np.int64)
    tgt = target.y.astype(np.int64)
    if method == 'exhaustive':
        integer = _exhaustive_search(ref, tgt, block_size, search_range)
    else:
        integer = _diamond_search(ref, tgt, block_size, search_range)
    vectors = _subpel_refine(ref, tgt, block_size, integer * 4)
    logger.debug(f"Estimated {vectors.shape[0]}x{vectors.shape[1]} flow with {method} search R={search_range}")
    return FlowField(block_size, vectors)


def refine_dense_flow(reference: Frame420, target: Frame420, flow: FlowField,
                      precision: int = DENSE_PRECISION, passes: int = 2) -> FlowField:
    """
    Tune block vectors for dense warping.

    A dense prediction interpolates every pixel's vector from the nearest
    block centres, so the vector that best predicts a block on its own is
    not always the best anchor for the smooth field. Each pass visits the
    blocks in raster order and tries the 8 quarter-pel neighbours of the
    block's vector; the best one (tie-break order on equal cost) is kept
    only if it strictly lowers the luma SAD of the dense prediction over the
    block's 3x3 neighbourhood.

    Args:
        reference: Previous reconstruction
        target: Frame to predict
        flow: Block flow to start from, usually from estimate_flow
        precision: Per-pixel vector denominator used by the dense warp
        passes: Maximum number of raster passes; stops early when nothing moves

    Returns:
        FlowField on the same grid
    """
    if (reference.width, reference.height) != (target.width, target.height):
        raise GeometryError(f"Reference {reference.width}x{reference.height} and target "
                            f"{target.width}x{target.height} differ", module='motion')
    ref = reference.y
    tgt = target.y.astype(np.int64)
    height, width = tgt.shape
    b = flow.block_size
    vectors = flow.vectors.astype(np.int64)
    rows_b, cols_b = vectors.shape[:2]
    scale = float(precision * precision)

    def region_sad(r0: int, r1: int, c0: int, c1: int) -> int:
        rows, cols = np.mgrid[r0:r1, c0:c1]
        field = interpolate_vectors(vectors, b, rows, cols, precision)
        scaled = sample_points(ref, rows, cols, field[..., 0], field[..., 1], precision)
        prediction = round_pixels(scaled / scale).astype(np.int64)
        return int(np.abs(tgt[r0:r1, c0:c1] - prediction).sum())

    total_moves = 0
    for _ in range(passes):
        moves = 0
        for by in range(rows_b):
            for bx in range(cols_b):
                window = (max(0, (by - 1) * b), min(height, (by + 2) * b),
                          max(0, (bx - 1) * b), min(width, (bx + 2) * b))
                original = vectors[by, bx].copy()
                original_sad = region_sad(*window)
                candidates = sorted((original + np.array(offset) for offset in _REFINE_OFFSETS),
                                    key=lambda v: int(tie_break_key(v[0], v[1])))
                winner, winner_sad = original, original_sad
                for candidate in candidates:
                    if np.abs(candidate).max() > MV_LIMIT:
                        continue
                    vectors[by, bx] = candidate
                    sad = region_sad(*window)
                    if sad < winner_sad:
                        winner, winner_sad = candidate, sad
                vectors[by, bx] = winner
                moves += int(winner_sad < original_sad)
        total_moves += moves
        if not moves:
            break
    logger.debug(f"Dense refinement moved {total_moves} block vectors")
    return FlowField(b, vectors)


def extrapolate_flow(previous: FlowField) -> FlowField:
    """Constant-velocity prediction: the next frame reuses the previous flow."""
    return FlowField(previous.block_size, previous.vectors)


def _wrap(values: np.ndarray) -> np.ndarray:
    span = 2 * MV_LIMIT + 1
    return (values + MV_LIMIT) % span - MV_LIMIT


def flow_residual(measured: FlowField, predicted: FlowField) -> np.ndarray:
    """
    Difference between measured and predicted flow, wrapped into [-127, 127].

    Wrapping modulo 255 keeps the residual inside the symbol alphabet while
    staying invertible for every pair of in-range flows.
    """
    if measured.block_size != predicted.block_size or measured.vectors.shape != predicted.vectors.shape:
        raise GeometryError("Measured and predicted flows have different grids", module='motion')
    diff = measured.vectors.astype(np.int64) - predicted.vectors.astype(np.int64)
    return _wrap(diff).astype(np.int16)


def reconstruct_flow(predicted: FlowField, residual: np.ndarray) -> FlowField:
    """Inverse of flow_residual."""
    residual = np.asarray(residual, dtype=np.int64)
    if residual.shape != predicted.vectors.shape:
        raise GeometryError(f"Residual shape {residual.shape} != flow shape {predicted.vectors.shape}",
                            module='motion')
    if residual.size and np.abs(residual).max() > MV_LIMIT:
        raise FlowRangeError("Flow residual outside [-127, 127]")
    return FlowField(predicted.block_size, _wrap(predicted.vectors.astype(np.int64) + residual))
