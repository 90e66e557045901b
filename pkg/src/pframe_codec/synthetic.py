"""
Synthetic test clips

Deterministic 4:2:0 clips with known motion: global pans, zooms, a static
scene and a sharp-edged pan. A smooth random texture is resampled with
scipy.ndimage for every frame, so motion is sub-pixel accurate and the clips
are reproducible from a seed.
"""

import logging
from typing import Dict, List, Tuple

import numpy as np
from scipy import ndimage

from .frame_io import Frame420, _check_dimensions

logger = logging.getLogger(__name__)

SUITE_WIDTH = 256
SUITE_HEIGHT = 256
SUITE_FRAMES = 64
DEFAULT_PAN = (1.25, 0.5)
DEFAULT_ZOOM = 1.01
# Motion then changes by about a third of a pixel across a 16x16 block.
SUITE_ZOOM = 1.02


def _texture(shape: Tuple[int, int], rng: np.random.Generator, smoothness: float,
             low: float, high: float) -> np.ndarray:
    noise = ndimage.gaussian_filter(rng.standard_normal(shape), smoothness, mode='wrap')
    noise -= noise.min()
    noise /= max(noise.max(), 1e-12)
    return low + (high - low) * noise


def _canvas(width: int, height: int, seed: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    y = _texture((height, width), rng, 3.0, 16.0, 235.0)
    y += _texture((height, width), rng, 0.8, -12.0, 12.0)
    u = _texture((height // 2, width // 2), rng, 2.0, 96.0, 160.0)
    v = _texture((height // 2, width // 2), rng, 2.0, 96.0, 160.0)
    return y, u, v


def _sample(canvas: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    values = ndimage.map_coordinates(canvas, [rows, cols], order=1, mode='reflect')
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def _render(canvas: Tuple[np.ndarray, np.ndarray, np.ndarray], width: int, height: int,
            shift: Tuple[float, float], scale: float) -> Frame420:
    """
    Sample the canvas so that the output pixel (r, c) shows canvas content at
    ``centre + ((r, c) - centre) / scale + shift`` (luma units; chroma halved).
    """
    shapes = [(height, width), (height // 2, width // 2), (height // 2, width // 2)]
    planes = []
    for plane, factor, (h, w) in zip(canvas, (1, 2, 2), shapes):
        ch, cw = plane.shape
        rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
        centre_r, centre_c = (ch - 1) / 2.0, (cw - 1) / 2.0
        out_r, out_c = (h - 1) / 2.0, (w - 1) / 2.0
        src_r = centre_r + (rows - out_r) / scale + shift[1] / factor
        src_c = centre_c + (cols - out_c) / scale + shift[0] / factor
        planes.append(_sample(plane, src_r, src_c))
    return Frame420.from_planes(*planes)


def pan_clip(width: int, height: int, frames: int, velocity: Tuple[float, float] = DEFAULT_PAN,
             seed: int = 0) -> List[Frame420]:
    """
    Global translation: the content moves by ``-velocity`` pixels per frame,
    so the block matcher sees vectors of ``velocity`` (x, y).
    """
    _check_dimensions(width, height)
    canvas = _canvas(width * 2, height * 2, seed)
    return [_render(canvas, width, height, (velocity[0] * t, velocity[1] * t), 1.0) for t in range(frames)]


def zoom_clip(width: int, height: int, frames: int, rate: float = DEFAULT_ZOOM,
              seed: int = 1) -> List[Frame420]:
    """Zoom into the image centre by ``rate`` per frame."""
    _check_dimensions(width, height)
    canvas = _canvas(width * 2, height * 2, seed)
    return [_render(canvas, width, height, (0.0, 0.0), rate ** t) for t in range(frames)]


def static_clip(width: int, height: int, frames: int, seed: int = 2) -> List[Frame420]:
    _check_dimensions(width, height)
    frame = _render(_canvas(width, height, seed), width, height, (0.0, 0.0), 1.0)
    return [frame] * frames


def edge_pan_clip(width: int, height: int, frames: int, step: int = 2) -> List[Frame420]:
    """
    Horizontal ramp with one hard vertical edge, panned by ``step`` whole
    pixels per frame. Every block sees the same integer motion; an even
    step keeps the chroma motion whole-pixel too.
    """
    _check_dimensions(width, height)
    span = width + step * frames + 2
    ramp = np.linspace(40.0, 200.0, span)
    ramp[span // 2:] += 30.0
    luma_row = np.clip(np.round(ramp), 0, 255).astype(np.uint8)
    chroma_row = luma_row[::2] // 2 + 64
    clip = []
    for t in range(frames):
        offset = step * t
        y = np.tile(luma_row[offset:offset + width], (height, 1))
        c_offset = offset // 2
        u = np.tile(chroma_row[c_offset:c_offset + width // 2], (height // 2, 1))
        clip.append(Frame420.from_planes(y, u, np.full_like(u, 128)))
    return clip


def standard_suite(width: int = SUITE_WIDTH, height: int = SUITE_HEIGHT,
                   frames: int = SUITE_FRAMES) -> Dict[str, List[Frame420]]:
    """The pan and zoom clips used for warping-mode comparisons."""
    suite = {
        'pan': pan_clip(width, height, frames),
        'zoom': zoom_clip(width, height, frames, rate=SUITE_ZOOM),
    }
    logger.info(f"Built synthetic suite: {', '.join(suite)} ({frames} frames of {width}x{height})")
    return suite
