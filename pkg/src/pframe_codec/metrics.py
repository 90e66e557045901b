"""
Evaluation metrics

Per-plane PSNR, YUV 6:1:1 weighted distortion, the exponentially modulated
GoP distortion, a flow-quality diagnostic, and Bjontegaard-delta rate and
PSNR between rate-distortion curves, with the 1.3 Mb/s and PSNR-overlap
point filters. RD points are exchanged as CSV.
"""

import csv
import logging
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import pchip_interpolate

from .errors import GeometryError, MetricsError, NoOverlapError
from .frame_io import Frame420
from .warp_engine import FlowField, OverlapKernel, overlap_block_warp

logger = logging.getLogger(__name__)

LOSSLESS = math.inf
PEAK = 255.0
DEFAULT_TAU = 1.2
DEFAULT_MAX_RATE_MBPS = 1.3
RD_FIELDS = ['label', 'bpp', 'psnr_y', 'psnr_u', 'psnr_v', 'psnr_yuv611']
BD_METRICS = ('yuv611', 'y')
BD_FITS = ('polynomial', 'pchip')

_PCHIP_SAMPLES = 100


def mse_plane(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        error_msg = f"Plane shapes differ: {a.shape} vs {b.shape}"
        logger.error(error_msg)
        raise GeometryError(error_msg, module='metrics')
    diff = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr_from_mse(mse: float) -> float:
    """PSNR in dB for 8-bit data; zero error gives the LOSSLESS sentinel."""
    if mse == 0:
        return LOSSLESS
    return 10.0 * math.log10(PEAK * PEAK / mse)


def psnr_plane(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR between two planes of equal size."""
    return psnr_from_mse(mse_plane(a, b))


def _check_frames(a: Frame420, b: Frame420) -> None:
    if (a.width, a.height) != (b.width, b.height):
        error_msg = f"Frame sizes differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        logger.error(error_msg)
        raise GeometryError(error_msg, module='metrics')


def distortion_yuv611(a: Frame420, b: Frame420) -> Tuple[float, float]:
    """
    YUV 6:1:1 weighted distortion.

    Returns:
        (D, PSNR) with D = (6 MSE_Y + MSE_U + MSE_V) / 8
    """
    _check_frames(a, b)
    mse_y, mse_u, mse_v = (mse_plane(pa, pb) for pa, pb in zip(a.planes, b.planes))
    distortion = (6.0 * mse_y + mse_u + mse_v) / 8.0
    return distortion, psnr_from_mse(distortion)


def frame_psnrs(a: Frame420, b: Frame420) -> Dict[str, float]:
    """PSNR of each plane plus the 6:1:1 aggregate."""
    _check_frames(a, b)
    mses = [mse_plane(pa, pb) for pa, pb in zip(a.planes, b.planes)]
    return {
        'psnr_y': psnr_from_mse(mses[0]),
        'psnr_u': psnr_from_mse(mses[1]),
        'psnr_v': psnr_from_mse(mses[2]),
        'psnr_yuv611': psnr_from_mse((6.0 * mses[0] + mses[1] + mses[2]) / 8.0),
    }


def distortion_modulated(distortions: Sequence[float], tau: float = DEFAULT_TAU) -> float:
    """
    Exponentially modulated distortion over a GoP.

    (T / sum tau^i) * sum tau^i D_i, so later frames weigh more for tau > 1
    and a constant sequence maps to itself.
    """
    values = np.asarray(distortions, dtype=np.float64)
    if values.size == 0:
        raise MetricsError("distortion_modulated needs at least one frame")
    if tau <= 0:
        raise MetricsError(f"tau must be positive, got {tau}")
    weights = tau ** np.arange(values.size, dtype=np.float64)
    return float(values.size / weights.sum() * (weights * values).sum())


def distortion_flow(flow: FlowField, previous: Frame420, target: Frame420,
                    kernel: Optional[OverlapKernel] = None) -> float:
    """Distortion of the overlap-warped previous reconstruction against the target."""
    _check_frames(previous, target)
    warped = overlap_block_warp(previous, flow, kernel)
    return distortion_yuv611(warped, target)[0]


@dataclass(frozen=True)
class RDPoint:
    """One rate-distortion operating point."""

    label: str
    bpp: float
    psnr_y: float
    psnr_u: float
    psnr_v: float
    psnr_yuv611: float

    def __post_init__(self):
        if not self.bpp > 0:
            raise MetricsError(f"bpp must be positive, got {self.bpp}")

    def psnr(self, metric: str = 'yuv611') -> float:
        return self.psnr_yuv611 if metric == 'yuv611' else self.psnr_y

    def rate_mbps(self, width: int, height: int, fps: float) -> float:
        return self.bpp * width * height * fps / 1e6


def format_psnr(value: float) -> str:
    return 'lossless' if math.isinf(value) else f'{value:.4f}'


def _parse_psnr(text: str) -> float:
    text = text.strip()
    return LOSSLESS if text.lower() == 'lossless' else float(text)


def write_rd_csv(points: Sequence[RDPoint], path_or_stream) -> None:
    """Write RD points as CSV with the standard column set."""
    def emit(stream):
        writer = csv.writer(stream, lineterminator='\n')
        writer.writerow(RD_FIELDS)
        for p in points:
            writer.writerow([p.label, f'{p.bpp:.6f}', format_psnr(p.psnr_y), format_psnr(p.psnr_u),
                             format_psnr(p.psnr_v), format_psnr(p.psnr_yuv611)])

    if isinstance(path_or_stream, (str, os.PathLike)):
        with open(path_or_stream, 'w', newline='') as f:
            emit(f)
    else:
        emit(path_or_stream)


def read_rd_csv(path: Union[str, os.PathLike]) -> List[RDPoint]:
    """
    Read RD points from CSV.

    Raises:
        MetricsError: Missing columns or unparsable values
    """
    with open(path, newline='') as f:
        reader = csv.DictReader(f)
        missing = [name for name in RD_FIELDS if name not in (reader.fieldnames or [])]
        if missing:
            error_msg = f"{path}: missing RD columns {missing}"
            logger.error(error_msg)
            raise MetricsError(error_msg)
        points = []
        for line, row in enumerate(reader, start=2):
            try:
                points.append(RDPoint(
                    label=row['label'],
                    bpp=float(row['bpp']),
                    psnr_y=_parse_psnr(row['psnr_y']),
                    psnr_u=_parse_psnr(row['psnr_u']),
                    psnr_v=_parse_psnr(row['psnr_v']),
                    psnr_yuv611=_parse_psnr(row['psnr_yuv611']),
                ))
            except ValueError as e:
                raise MetricsError(f"{path}:{line}: {e}")
    logger.debug(f"Read {len(points)} RD points from {path}")
    return points


def filter_rate(points: Sequence[RDPoint], max_rate_mbps: float, width: int, height: int,
                fps: float) -> List[RDPoint]:
    """Drop points whose bitrate exceeds ``max_rate_mbps``."""
    return [p for p in points if p.rate_mbps(width, height, fps) <= max_rate_mbps]


def filter_overlap(curves: Sequence[Sequence[RDPoint]], metric: str = 'yuv611') -> List[List[RDPoint]]:
    """Keep only points whose PSNR lies within the span of every other curve."""
    spans = []
    for curve in curves:
        values = [p.psnr(metric) for p in curve if math.isfinite(p.psnr(metric))]
        spans.append((min(values), max(values)) if values else (math.inf, -math.inf))
    kept = []
    for index, curve in enumerate(curves):
        others = [span for j, span in enumerate(spans) if j != index]
        kept.append([
            p for p in curve
            if math.isfinite(p.psnr(metric))
            and all(lo <= p.psnr(metric) <= hi for lo, hi in others)
        ])
    return kept


@dataclass(frozen=True)
class BDResult:
    """BD value together with the metadata needed to reproduce it."""

    value: float
    fit: str
    metric: str
    psnr_low: float
    psnr_high: float
    reference_points: int
    test_points: int


def _prepare(reference: Sequence[RDPoint], test: Sequence[RDPoint], metric: str,
             max_rate_mbps: Optional[float], width: Optional[int], height: Optional[int],
             fps: Optional[float]) -> Tuple[List[RDPoint], List[RDPoint]]:
    if metric not in BD_METRICS:
        raise MetricsError(f"Unknown BD metric '{metric}', expected one of {BD_METRICS}")
    if max_rate_mbps is not None:
        if not (width and height and fps):
            raise MetricsError("Rate filtering needs width, height and fps")
        reference = filter_rate(reference, max_rate_mbps, width, height, fps)
        test = filter_rate(test, max_rate_mbps, width, height, fps)
    reference, test = filter_overlap([reference, test], metric)
    for name, curve in (('reference', reference), ('test', test)):
        if len(curve) < 4:
            error_msg = f"{name} curve has {len(curve)} usable points after filtering, need 4"
            logger.error(error_msg)
            raise NoOverlapError(error_msg)
    return sorted(reference, key=lambda p: p.psnr(metric)), sorted(test, key=lambda p: p.psnr(metric))


def _integrate(x: np.ndarray, y: np.ndarray, low: float, high: float, fit: str) -> float:
    if fit == 'polynomial':
        poly = np.polyint(np.polyfit(x, y, 3))
        return float(np.polyval(poly, high) - np.polyval(poly, low))
    samples = np.linspace(low, high, _PCHIP_SAMPLES)
    values = pchip_interpolate(x, y, samples)
    return float(trapezoid(values, samples))


def bd_rate_report(reference: Sequence[RDPoint], test: Sequence[RDPoint], *,
                   metric: str = 'yuv611', fit: str = 'polynomial',
                   max_rate_mbps: Optional[float] = None, width: Optional[int] = None,
                   height: Optional[int] = None, fps: Optional[float] = None) -> BDResult:
    """
    Bjontegaard-delta rate of ``test`` against ``reference``.

    log10(rate) is fitted as a function of PSNR for each curve, the fits are
    integrated over the common PSNR interval, and the mean log-rate gap is
    turned into a percentage. Rate filtering is applied first when
    ``max_rate_mbps`` is given, then points outside the other curve's PSNR
    span are dropped.

    Args:
        reference: Anchor curve (>= 4 points)
        test: Curve under test (>= 4 points)
        metric: 'yuv611' or 'y'
        fit: 'polynomial' (cubic) or 'pchip'
        max_rate_mbps: Drop points above this bitrate
        width, height, fps: Needed to convert bpp to Mb/s when filtering

    Returns:
        BDResult with the percentage in ``value``

    Raises:
        NoOverlapError: Fewer than 4 usable points or no common PSNR interval
        MetricsError: Bad options
    """
    if fit not in BD_FITS:
        raise MetricsError(f"Unknown BD fit '{fit}', expected one of {BD_FITS}")
    reference, test = _prepare(reference, test, metric, max_rate_mbps, width, height, fps)
    ref_psnr = np.array([p.psnr(metric) for p in reference])
    test_psnr = np.array([p.psnr(metric) for p in test])
    low = max(ref_psnr.min(), test_psnr.min())
    high = min(ref_psnr.max(), test_psnr.max())
    if not high > low:
        error_msg = f"RD curves do not overlap in PSNR ({low:.3f} >= {high:.3f})"
        logger.error(error_msg)
        raise NoOverlapError(error_msg)

    ref_rate = np.log10([p.bpp for p in reference])
    test_rate = np.log10([p.bpp for p in test])
    ref_area = _integrate(ref_psnr, ref_rate, low, high, fit)
    test_area = _integrate(test_psnr, test_rate, low, high, fit)
    mean_gap = (test_area - ref_area) / (high - low)
    value = (10.0 ** mean_gap - 1.0) * 100.0
    logger.debug(f"BD-rate {value:.4f}% over [{low:.3f}, {high:.3f}] dB ({fit}, {metric})")
    return BDResult(value, fit, metric, float(low), float(high), len(reference), len(test))


def bd_rate(reference: Sequence[RDPoint], test: Sequence[RDPoint], **kwargs) -> float:
    """BD-rate in percent; see bd_rate_report for the options."""
    return bd_rate_report(reference, test, **kwargs).value


def bd_psnr(reference: Sequence[RDPoint], test: Sequence[RDPoint], *,
            metric: str = 'yuv611', fit: str = 'polynomial') -> float:
    """
    Bjontegaard-delta PSNR: average quality gap in dB at equal rate.

    PSNR is fitted as a function of log10(rate) over the common rate interval.
    """
    if fit not in BD_FITS:
        raise MetricsError(f"Unknown BD fit '{fit}', expected one of {BD_FITS}")
    reference, test = _prepare(reference, test, metric, None, None, None, None)
    ref_rate = np.log10([p.bpp for p in reference])
    test_rate = np.log10([p.bpp for p in test])
    ref_psnr = np.array([p.psnr(metric) for p in reference])
    test_psnr = np.array([p.psnr(metric) for p in test])
    ref_order = np.argsort(ref_rate)
    test_order = np.argsort(test_rate)
    low = max(ref_rate.min(), test_rate.min())
    high = min(ref_rate.max(), test_rate.max())
    if not high > low:
        raise NoOverlapError("RD curves do not overlap in rate")
    ref_area = _integrate(ref_rate[ref_order], ref_psnr[ref_order], low, high, fit)
    test_area = _integrate(test_rate[test_order], test_psnr[test_order], low, high, fit)
    return (test_area - ref_area) / (high - low)
