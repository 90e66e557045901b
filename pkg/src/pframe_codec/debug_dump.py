"""
Debug image dumps

Writes decoder intermediates of P-frames as 8-bit PGM images: the warped
luma prediction, the flow magnitude and the decoded luma residual.
"""

import logging
import os
from pathlib import Path
from typing import List, Union

import imageio.v3 as iio
import numpy as np

from .warp_engine import flow_magnitude

logger = logging.getLogger(__name__)

# Flow magnitude is drawn at this many grey levels per pixel of motion.
FLOW_GAIN = 8.0
RESIDUAL_OFFSET = 128


def _write_pgm(path: Path, image: np.ndarray) -> Path:
    iio.imwrite(path, np.ascontiguousarray(image, dtype=np.uint8), extension='.pgm')
    return path


def dump_frame_debug(directory: Union[str, os.PathLike], index: int, debug) -> List[Path]:
    """
    Write the three PGMs for one decoded P-frame.

    Args:
        directory: Output directory (created if missing)
        index: Frame index used in the file names
        debug: FrameDebug from the decoder

    Returns:
        Paths written
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    warped = debug.warped
    magnitude = flow_magnitude(debug.flow, warped.width, warped.height)
    residual = np.asarray(debug.residual[0], dtype=np.float64)

    paths = [
        _write_pgm(out / f'frame{index:04d}_warped.pgm', warped.y),
        _write_pgm(out / f'frame{index:04d}_flow.pgm', np.clip(np.round(magnitude * FLOW_GAIN), 0, 255)),
        _write_pgm(out / f'frame{index:04d}_residual.pgm',
                   np.clip(np.round(residual) + RESIDUAL_OFFSET, 0, 255)),
    ]
    logger.debug(f"Wrote debug images for frame {index} to {out}")
    return paths
