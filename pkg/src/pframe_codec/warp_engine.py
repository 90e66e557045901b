"""
Warp Engine for motion-compensated prediction

This module implements the three warping operators used to build the
prediction of a P-frame from the previous reconstruction: dense per-pixel
bilinear warping, block-based warping with one vector per block, and
overlapped block warping that blends the predictions of the 3x3 block
neighbourhood with a Gaussian kernel.

Block vectors are quarter-pel fixed point; per-pixel fields may use a finer
denominator. Sub-pel samples are computed as exact integer bilinear sums so
that the three operators agree bit for bit whenever their inputs describe
the same motion.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from .errors import FlowRangeError, GeometryError
from .frame_io import Frame420

logger = logging.getLogger(__name__)

MV_LIMIT = 127
LUMA_DENOMINATOR = 4
CHROMA_DENOMINATOR = 8
# Per-pixel fields interpolated from block vectors keep 1/16-pel luma precision.
DENSE_PRECISION = 16

# Row-major over (dy, dx) in {-1, 0, 1}; index 4 is the block itself.
NEIGHBOR_OFFSETS: List[Tuple[int, int]] = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
CENTER_INDEX = 4

_ROUNDING_GUARD = 1e-6


def block_grid(width: int, height: int, block_size: int) -> Tuple[int, int]:
    """Number of (block rows, block columns) covering a frame, partial blocks included."""
    return -(-height // block_size), -(-width // block_size)


@dataclass(frozen=True)
class FlowField:
    """
    Block motion field.

    ``vectors`` has shape (block rows, block columns, 2) holding (x, y)
    components in quarter-pel units, each within [-127, 127].
    """

    block_size: int
    vectors: np.ndarray

    def __post_init__(self):
        if self.block_size < 2 or self.block_size % 2:
            raise GeometryError(f"Block size must be even and >= 2, got {self.block_size}",
                                module='warp_engine')
        vectors = np.asarray(self.vectors)
        if vectors.ndim != 3 or vectors.shape[2] != 2:
            raise GeometryError(f"Flow vectors must have shape (rows, cols, 2), got {vectors.shape}",
                                module='warp_engine')
        if vectors.size and np.abs(vectors).max() > MV_LIMIT:
            error_msg = f"Flow component {int(np.abs(vectors).max())} exceeds +/-{MV_LIMIT} quarter-pel"
            logger.error(error_msg)
            raise FlowRangeError(error_msg)
        vectors = np.array(vectors, dtype=np.int16, copy=True)
        vectors.flags.writeable = False
        object.__setattr__(self, 'vectors', vectors)

    @classmethod
    def zeros(cls, width: int, height: int, block_size: int) -> 'FlowField':
        rows, cols = block_grid(width, height, block_size)
        return cls(block_size, np.zeros((rows, cols, 2), dtype=np.int16))

    @classmethod
    def uniform(cls, width: int, height: int, block_size: int, vx: int, vy: int) -> 'FlowField':
        rows, cols = block_grid(width, height, block_size)
        vectors = np.empty((rows, cols, 2), dtype=np.int16)
        vectors[..., 0] = vx
        vectors[..., 1] = vy
        return cls(block_size, vectors)

    @property
    def blocks_y(self) -> int:
        return self.vectors.shape[0]

    @property
    def blocks_x(self) -> int:
        return self.vectors.shape[1]

    def covers(self, width: int, height: int) -> bool:
        return (self.blocks_y, self.blocks_x) == block_grid(width, height, self.block_size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FlowField):
            return NotImplemented
        return self.block_size == other.block_size and np.array_equal(self.vectors, other.vectors)

    __hash__ = None


@dataclass(frozen=True)
class OverlapKernel:
    """
    Per-pixel blending weights over the 3x3 block neighbourhood.

    ``weights`` has shape (b, b, 9); every pixel's nine weights are
    non-negative and sum to 1.
    """

    block_size: int
    weights: np.ndarray
    sigma: Optional[float] = field(default=None)

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.shape != (self.block_size, self.block_size, len(NEIGHBOR_OFFSETS)):
            raise GeometryError(f"Kernel weights shape {weights.shape} does not match block size "
                                f"{self.block_size}", module='warp_engine')
        if (weights < 0).any() or not np.allclose(weights.sum(axis=2), 1.0, atol=1e-9):
            raise GeometryError("Kernel weights must be non-negative and sum to 1 per pixel",
                                module='warp_engine')
        weights = weights.copy()
        weights.flags.writeable = False
        object.__setattr__(self, 'weights', weights)

    @classmethod
    def one_hot(cls, block_size: int) -> 'OverlapKernel':
        """Kernel giving each pixel its own block's vector only."""
        weights = np.zeros((block_size, block_size, len(NEIGHBOR_OFFSETS)))
        weights[..., CENTER_INDEX] = 1.0
        return cls(block_size, weights)

    def for_chroma(self) -> 'OverlapKernel':
        """Kernel for the half-resolution chroma blocks (2x2 average pooling)."""
        half = self.block_size // 2
        w = self.weights
        pooled = (w[0::2, 0::2] + w[1::2, 0::2] + w[0::2, 1::2] + w[1::2, 1::2]) / 4.0
        sigma = None if self.sigma is None else self.sigma / 2.0
        return OverlapKernel(half, pooled[:half, :half], sigma)


def make_gaussian_kernel(block_size: int, sigma: Optional[float] = None) -> OverlapKernel:
    """
    Build the isotropic Gaussian overlap kernel.

    The weight of neighbour k at block-local pixel (i, j) is proportional to
    exp(-d^2 / (2 sigma^2)), with d the distance from the pixel to the centre
    of neighbour k's footprint.

    Args:
        block_size: Block size b (even, >= 2)
        sigma: Gaussian width in pixels, default b / 2

    Returns:
        Normalized OverlapKernel

    Raises:
        GeometryError: If b is odd or sigma is not positive
    """
    if block_size < 2 or block_size % 2:
        raise GeometryError(f"Block size must be even and >= 2, got {block_size}",
                            module='warp_engine')
    sigma = block_size / 2.0 if sigma is None else float(sigma)
    if sigma <= 0:
        raise GeometryError(f"Kernel sigma must be positive, got {sigma}", module='warp_engine')

    center = (block_size - 1) / 2.0
    coords = np.arange(block_size, dtype=np.float64)
    ii, jj = np.meshgrid(coords, coords, indexing='ij')
    dist2 = np.stack([
        (ii - (center + dy * block_size)) ** 2 + (jj - (center + dx * block_size)) ** 2
        for dy, dx in NEIGHBOR_OFFSETS
    ], axis=2)
    # Shift by the nearest centre so tiny sigmas do not underflow to all zeros.
    dist2 -= dist2.min(axis=2, keepdims=True)
    weights = np.exp(-dist2 / (2.0 * sigma * sigma))
    weights /= weights.sum(axis=2, keepdims=True)
    logger.debug(f"Built Gaussian overlap kernel b={block_size} sigma={sigma}")
    return OverlapKernel(block_size, weights, sigma)


def sample_points(plane: np.ndarray, rows: np.ndarray, cols: np.ndarray,
                  vx: np.ndarray, vy: np.ndarray, denominator: int) -> np.ndarray:
    """
    Integer bilinear fetch at (rows + vy/d, cols + vx/d) with edge clamping.

    Returns the sample values scaled by d^2 as int64.
    """
    height, width = plane.shape
    pos_y = np.clip(rows * denominator + vy, 0, (height - 1) * denominator)
    pos_x = np.clip(cols * denominator + vx, 0, (width - 1) * denominator)
    y0, fy = np.divmod(pos_y, denominator)
    x0, fx = np.divmod(pos_x, denominator)
    y1 = np.minimum(y0 + 1, height - 1)
    x1 = np.minimum(x0 + 1, width - 1)
    p = plane.astype(np.int64)
    gx = denominator - fx
    gy = denominator - fy
    return (gx * gy * p[y0, x0] + fx * gy * p[y0, x1]
            + gx * fy * p[y1, x0] + fx * fy * p[y1, x1])


def sample_plane(plane: np.ndarray, vx: np.ndarray, vy: np.ndarray, denominator: int) -> np.ndarray:
    """Whole-plane sample_points: one vector per pixel of ``plane``."""
    rows, cols = np.indices(plane.shape, dtype=np.int64)
    return sample_points(plane, rows, cols, vx, vy, denominator)


def round_pixels(values: np.ndarray) -> np.ndarray:
    """Round half up and clamp to 8-bit."""
    return np.clip(np.floor(values + 0.5 + _ROUNDING_GUARD), 0, 255).astype(np.uint8)


def _warp_plane(plane: np.ndarray, vx: np.ndarray, vy: np.ndarray, denominator: int) -> np.ndarray:
    scaled = sample_plane(plane, vx.astype(np.int64), vy.astype(np.int64), denominator)
    return round_pixels(scaled / float(denominator * denominator))


def dense_warp(frame: Frame420, flow: np.ndarray, precision: int = LUMA_DENOMINATOR) -> Frame420:
    """
    Warp a frame with one vector per luma pixel.

    Args:
        frame: Reference frame
        flow: Integer array of shape (height, width, 2) holding (x, y)
        precision: Luma vector denominator, 4 for quarter-pel

    Returns:
        Warped frame; chroma uses the co-located luma vector at twice the
        denominator, i.e. halved
    """
    flow = np.asarray(flow)
    if flow.shape != (frame.height, frame.width, 2):
        error_msg = f"Dense flow shape {flow.shape} does not match frame {frame.height}x{frame.width}"
        logger.error(error_msg)
        raise GeometryError(error_msg, module='warp_engine')
    if precision < 1:
        raise GeometryError(f"Flow precision must be positive, got {precision}", module='warp_engine')
    flow = flow.astype(np.int64)
    chroma_flow = flow[0::2, 0::2]
    return Frame420(
        frame.width,
        frame.height,
        _warp_plane(frame.y, flow[..., 0], flow[..., 1], precision),
        _warp_plane(frame.u, chroma_flow[..., 0], chroma_flow[..., 1], 2 * precision),
        _warp_plane(frame.v, chroma_flow[..., 0], chroma_flow[..., 1], 2 * precision),
    )


def _check_flow(frame: Frame420, flow: FlowField) -> None:
    if not flow.covers(frame.width, frame.height):
        expected = block_grid(frame.width, frame.height, flow.block_size)
        error_msg = (f"Flow grid {flow.blocks_y}x{flow.blocks_x} does not cover "
                     f"{frame.width}x{frame.height} with b={flow.block_size} (expected {expected})")
        logger.error(error_msg)
        raise GeometryError(error_msg, module='warp_engine')


def _expand_vectors(vectors: np.ndarray, block: int, height: int, width: int) -> np.ndarray:
    expanded = np.repeat(np.repeat(vectors, block, axis=0), block, axis=1)
    return expanded[:height, :width].astype(np.int64)


def block_warp(frame: Frame420, flow: FlowField) -> Frame420:
    """
    Warp a frame with one vector per b x b block.

    Chroma planes use b/2 blocks with the same integer vectors read at
    eighth-pel precision.
    """
    _check_flow(frame, flow)
    b = flow.block_size
    luma = _expand_vectors(flow.vectors, b, frame.height, frame.width)
    chroma = _expand_vectors(flow.vectors, b // 2, frame.height // 2, frame.width // 2)
    return Frame420(
        frame.width,
        frame.height,
        _warp_plane(frame.y, luma[..., 0], luma[..., 1], LUMA_DENOMINATOR),
        _warp_plane(frame.u, chroma[..., 0], chroma[..., 1], CHROMA_DENOMINATOR),
        _warp_plane(frame.v, chroma[..., 0], chroma[..., 1], CHROMA_DENOMINATOR),
    )


def _overlap_plane(plane: np.ndarray, vectors: np.ndarray, block: int,
                   weights: np.ndarray, denominator: int) -> np.ndarray:
    height, width = plane.shape
    rows_b, cols_b = vectors.shape[:2]
    rows, cols = np.indices((height, width))
    block_row = rows // block
    block_col = cols // block
    pixel_weights = weights[rows % block, cols % block]
    scale = float(denominator * denominator)

    accumulated = np.zeros((height, width), dtype=np.float64)
    for k, (dy, dx) in enumerate(NEIGHBOR_OFFSETS):
        nr = np.clip(block_row + dy, 0, rows_b - 1)
        nc = np.clip(block_col + dx, 0, cols_b - 1)
        v = vectors[nr, nc].astype(np.int64)
        scaled = sample_plane(plane, v[..., 0], v[..., 1], denominator)
        accumulated += pixel_weights[..., k] * (scaled / scale)
    return round_pixels(accumulated)


def overlap_block_warp(frame: Frame420, flow: FlowField,
                       kernel: Optional[OverlapKernel] = None) -> Frame420:
    """
    Overlapped block warp.

    Each output pixel is the kernel-weighted sum of the nine predictions made
    with the vectors of its own block and the eight surrounding blocks.
    Neighbours beyond the frame edge reuse the nearest block's vector.

    Args:
        frame: Reference frame
        flow: Block motion field covering the frame
        kernel: Overlap kernel with the flow's block size, default Gaussian b/2

    Returns:
        Warped frame

    Raises:
        GeometryError: If the kernel or flow does not match the frame
    """
    _check_flow(frame, flow)
    if kernel is None:
        kernel = make_gaussian_kernel(flow.block_size)
    if kernel.block_size != flow.block_size:
        error_msg = f"Kernel block size {kernel.block_size} != flow block size {flow.block_size}"
        logger.error(error_msg)
        raise GeometryError(error_msg, module='warp_engine')

    chroma_kernel = kernel.for_chroma()
    b = flow.block_size
    return Frame420(
        frame.width,
        frame.height,
        _overlap_plane(frame.y, flow.vectors, b, kernel.weights, LUMA_DENOMINATOR),
        _overlap_plane(frame.u, flow.vectors, b // 2, chroma_kernel.weights, CHROMA_DENOMINATOR),
        _overlap_plane(frame.v, flow.vectors, b // 2, chroma_kernel.weights, CHROMA_DENOMINATOR),
    )


def interpolate_vectors(vectors: np.ndarray, block_size: int, rows: np.ndarray, cols: np.ndarray,
                        precision: int = LUMA_DENOMINATOR) -> np.ndarray:
    """
    Per-pixel vectors at the given pixel positions, in 1/precision pel.

    Block vectors are anchored at block centres and bilinearly interpolated,
    with the outermost vectors held constant beyond the outer centres.

    Raises:
        GeometryError: If precision is not a multiple of the quarter-pel denominator
    """
    if precision < LUMA_DENOMINATOR or precision % LUMA_DENOMINATOR:
        raise GeometryError(f"Flow precision must be a multiple of {LUMA_DENOMINATOR}, got {precision}",
                            module='warp_engine')
    offset = (block_size - 1) / 2.0
    coords = [(np.asarray(rows, dtype=np.float64) - offset) / block_size,
              (np.asarray(cols, dtype=np.float64) - offset) / block_size]
    scale = precision // LUMA_DENOMINATOR
    dense = np.empty(np.shape(rows) + (2,), dtype=np.int64)
    for component in range(2):
        values = ndimage.map_coordinates(
            vectors[..., component].astype(np.float64) * scale, coords, order=1, mode='nearest')
        dense[..., component] = np.sign(values) * np.floor(np.abs(values) + 0.5)
    return dense


def dense_flow_from_blocks(flow: FlowField, width: int, height: int,
                           precision: int = LUMA_DENOMINATOR) -> np.ndarray:
    """Upsample a block field to a per-pixel field in 1/precision pel."""
    rows, cols = np.indices((height, width))
    return interpolate_vectors(flow.vectors, flow.block_size, rows, cols, precision)


def flow_magnitude(flow: FlowField, width: int, height: int) -> np.ndarray:
    """Per-pixel vector length in pixels, for diagnostics."""
    expanded = _expand_vectors(flow.vectors, flow.block_size, height, width)
    return np.hypot(expanded[..., 0], expanded[..., 1]) / LUMA_DENOMINATOR
