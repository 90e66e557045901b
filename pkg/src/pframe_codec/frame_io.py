"""
Frame I/O for raw 8-bit YUV 4:2:0 video

This module reads and writes headerless planar YUV 4:2:0 files and provides
the immutable frame and residual containers shared by the rest of the codec,
together with the clamped add/subtract helpers used for reconstruction.
"""

import logging
import os
from dataclasses import dataclass
from typing import Iterator, List, Sequence, Tuple, Union

import numpy as np

from .errors import FrameFormatError, GeometryError

logger = logging.getLogger(__name__)


def _check_dimensions(width: int, height: int) -> None:
    if width < 2 or height < 2 or width % 2 or height % 2:
        error_msg = f"Frame dimensions must be even and at least 2x2, got {width}x{height}"
        logger.error(error_msg)
        raise GeometryError(error_msg)


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True, order='C')
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class Frame420:
    """
    One 8-bit YUV 4:2:0 frame.

    The planes are stored read-only; a frame never changes after construction.
    """

    width: int
    height: int
    y: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        _check_dimensions(self.width, self.height)
        expected = {
            'y': (self.height, self.width),
            'u': (self.height // 2, self.width // 2),
            'v': (self.height // 2, self.width // 2),
        }
        for name, shape in expected.items():
            plane = np.asarray(getattr(self, name))
            if plane.dtype != np.uint8:
                error_msg = f"Plane {name} must be 8-bit, got {plane.dtype}"
                logger.error(error_msg)
                raise FrameFormatError(error_msg)
            if plane.shape != shape:
                error_msg = f"Plane {name} has shape {plane.shape}, expected {shape}"
                logger.error(error_msg)
                raise GeometryError(error_msg)
            object.__setattr__(self, name, _frozen(plane))

    @classmethod
    def from_planes(cls, y: np.ndarray, u: np.ndarray, v: np.ndarray) -> 'Frame420':
        """Build a frame from three planes, taking the geometry from Y."""
        y = np.asarray(y)
        if y.ndim != 2:
            raise GeometryError(f"Luma plane must be 2-D, got {y.ndim} dimensions")
        return cls(width=y.shape[1], height=y.shape[0], y=y, u=u, v=v)

    @classmethod
    def blank(cls, width: int, height: int, value: int = 128) -> 'Frame420':
        """Build a flat frame with every sample set to ``value``."""
        _check_dimensions(width, height)
        return cls(
            width=width,
            height=height,
            y=np.full((height, width), value, dtype=np.uint8),
            u=np.full((height // 2, width // 2), value, dtype=np.uint8),
            v=np.full((height // 2, width // 2), value, dtype=np.uint8),
        )

    @property
    def planes(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.y, self.u, self.v

    @property
    def byte_size(self) -> int:
        return frame_byte_size(self.width, self.height)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Frame420):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and all(np.array_equal(a, b) for a, b in zip(self.planes, other.planes)))

    __hash__ = None


@dataclass(frozen=True)
class ResidualPlane:
    """Signed per-sample difference for one plane, range [-255, 255]."""

    width: int
    height: int
    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.shape != (self.height, self.width):
            error_msg = f"Residual shape {samples.shape} does not match {self.height}x{self.width}"
            logger.error(error_msg)
            raise GeometryError(error_msg)
        if samples.size and (samples.min() < -255 or samples.max() > 255):
            raise FrameFormatError("Residual samples must lie in [-255, 255]")
        object.__setattr__(self, 'samples', _frozen(samples.astype(np.int16)))

    @classmethod
    def from_array(cls, samples: np.ndarray) -> 'ResidualPlane':
        samples = np.asarray(samples)
        return cls(width=samples.shape[1], height=samples.shape[0], samples=samples)


ResidualSet = Tuple[ResidualPlane, ResidualPlane, ResidualPlane]


def frame_byte_size(width: int, height: int) -> int:
    """Number of bytes one 4:2:0 frame occupies on disk."""
    return width * height + 2 * (width // 2) * (height // 2)


def iter_yuv420(path: Union[str, os.PathLike], width: int, height: int) -> Iterator[Frame420]:
    """
    Lazily iterate over the frames of a raw YUV 4:2:0 file.

    Args:
        path: File to read
        width: Luma width in pixels
        height: Luma height in pixels

    Yields:
        Frame420 instances in file order

    Raises:
        GeometryError: If the dimensions are odd or smaller than 2x2
        FrameFormatError: If the file size is not a whole number of frames
    """
    _check_dimensions(width, height)
    frame_bytes = frame_byte_size(width, height)
    file_size = os.path.getsize(path)
    if file_size % frame_bytes != 0:
        error_msg = (f"{path}: size {file_size} bytes is not a multiple of the "
                     f"{frame_bytes}-byte frame size for {width}x{height} 4:2:0")
        logger.error(error_msg)
        raise FrameFormatError(error_msg)

    luma = width * height
    chroma = (width // 2) * (height // 2)
    count = file_size // frame_bytes
    logger.debug(f"Reading {count} frames of {width}x{height} from {path}")
    with open(path, 'rb') as f:
        for _ in range(count):
            data = np.fromfile(f, dtype=np.uint8, count=frame_bytes)
            yield Frame420(
                width=width,
                height=height,
                y=data[:luma].reshape(height, width),
                u=data[luma:luma + chroma].reshape(height // 2, width // 2),
                v=data[luma + chroma:].reshape(height // 2, width // 2),
            )


def read_yuv420(path: Union[str, os.PathLike], width: int, height: int) -> List[Frame420]:
    """
    Read every frame of a raw YUV 4:2:0 file.

    A zero-length file yields an empty list.
    """
    frames = list(iter_yuv420(path, width, height))
    logger.info(f"Read {len(frames)} frames from {path}")
    return frames


def write_yuv420(frames: Sequence[Frame420], path: Union[str, os.PathLike]) -> int:
    """
    Write frames as raw planar YUV 4:2:0.

    Args:
        frames: Frames to write; all must share one geometry
        path: Destination file (overwritten)

    Returns:
        Number of bytes written
    """
    written = 0
    with open(path, 'wb') as f:
        for index, frame in enumerate(frames):
            if frames and (frame.width, frame.height) != (frames[0].width, frames[0].height):
                raise GeometryError(f"Frame {index} is {frame.width}x{frame.height}, "
                                    f"expected {frames[0].width}x{frames[0].height}")
            for plane in frame.planes:
                f.write(plane.tobytes())
            written += frame.byte_size
    logger.info(f"Wrote {len(frames)} frames ({written} bytes) to {path}")
    return written


def _check_same_geometry(a, b) -> None:
    if (a.width, a.height) != (b.width, b.height):
        error_msg = f"Geometry mismatch: {a.width}x{a.height} vs {b.width}x{b.height}"
        logger.error(error_msg)
        raise GeometryError(error_msg)


def subtract(a: Frame420, b: Frame420) -> ResidualSet:
    """Per-plane ``a - b`` as signed residual planes."""
    _check_same_geometry(a, b)
    return tuple(
        ResidualPlane.from_array(pa.astype(np.int16) - pb.astype(np.int16))
        for pa, pb in zip(a.planes, b.planes)
    )


def add_clamped(a: Union[Frame420, ResidualSet], b: Union[Frame420, ResidualSet]) -> Frame420:
    """
    Per-sample sum clamped to [0, 255].

    Either operand may be a frame or a residual set, so both
    ``add_clamped(frame, residual)`` and ``add_clamped(residual, frame)`` work.
    """
    def planes_of(x):
        if isinstance(x, Frame420):
            return [p.astype(np.int16) for p in x.planes], x
        return [r.samples.astype(np.int16) for r in x], None

    planes_a, frame_a = planes_of(a)
    planes_b, frame_b = planes_of(b)
    template = frame_a or frame_b
    if template is None:
        raise GeometryError("add_clamped needs at least one Frame420 operand")
    sums = []
    for pa, pb in zip(planes_a, planes_b):
        if pa.shape != pb.shape:
            raise GeometryError(f"Plane shape mismatch: {pa.shape} vs {pb.shape}")
        sums.append(np.clip(pa + pb, 0, 255).astype(np.uint8))
    return Frame420(template.width, template.height, *sums)
