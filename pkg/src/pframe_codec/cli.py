"""
Command Line Interface for the P-frame codec

This module provides the batch front end: encoding and decoding raw YUV
4:2:0 files, quality metrics, BD-rate comparison of RD curves, quantizer
step sweeps and decode pipeline throughput simulation. All numeric output
is CSV on standard output; logging goes to standard error.
"""

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .codec import VideoDecoder, VideoEncoder
from .coding.entropy_bottleneck import LatentStep
from .coding.parallel_coder import HeaderMode
from .config import CodecConfig, WarpMode, load_config, parse_step
from .debug_dump import dump_frame_debug
from .errors import CodecException, ConfigError, FrameFormatError, MetricsError
from .frame_io import read_yuv420, write_yuv420
from .metrics import (
    BD_FITS,
    BD_METRICS,
    DEFAULT_MAX_RATE_MBPS,
    DEFAULT_TAU,
    RDPoint,
    bd_rate_report,
    distortion_modulated,
    format_psnr,
    mse_plane,
    psnr_from_mse,
    read_rd_csv,
    write_rd_csv,
)
from .motion import SEARCH_METHODS
from .pipeline_sim import default_spec, fps_report, load_pipeline_spec, load_variants, simulate, write_schedule

logger = logging.getLogger(__name__)

ENCODE_FIELDS = ['frame', 'type', 'bits', 'bpp', 'side_bits', 'flow_bits', 'residual_bits',
                 'psnr_y', 'psnr_u', 'psnr_v', 'psnr_yuv611']
METRICS_FIELDS = ['frame', 'psnr_y', 'psnr_u', 'psnr_v', 'psnr_yuv611']
BDRATE_FIELDS = ['metric', 'fit', 'bd_rate_percent', 'psnr_low', 'psnr_high', 'reference_points', 'test_points']


def setup_logging(level: str = 'INFO') -> None:
    """Setup logging configuration."""
    logging.basicConfig(
        level=getattr(logging, level.upper()),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr,
    )


def _csv_writer():
    return csv.writer(sys.stdout, lineterminator='\n')


def _codec_config(args) -> CodecConfig:
    return CodecConfig(
        block_size=args.block_size,
        search_range=args.search_range,
        search_method=args.search_method,
        gop_size=args.gop,
        residual_step=args.dr,
        iframe_step=args.di,
        latent_step=LatentStep(args.latent_step),
        kernel_sigma=args.sigma,
        warp_mode=WarpMode(args.warp),
        stream_count=args.streams,
        header_mode=HeaderMode[args.header.upper()],
        threads=args.threads,
    )


def _read_clip(path: str, width: int, height: int):
    frames = read_yuv420(path, width, height)
    if not frames:
        raise FrameFormatError(f"{path} holds no frames")
    return frames


def cmd_encode(args) -> None:
    """Encode a raw YUV file and print per-frame statistics."""
    config = _codec_config(args)
    frames = _read_clip(args.input, args.width, args.height)
    result = VideoEncoder(config).encode(frames)
    Path(args.output).write_bytes(result.bitstream)

    pixels = args.width * args.height
    writer = _csv_writer()
    writer.writerow(ENCODE_FIELDS)
    for s in result.stats:
        writer.writerow([s.index, s.frame_type, s.bits, f'{s.bits / pixels:.6f}', s.side_bits, s.flow_bits,
                         s.residual_bits, format_psnr(s.psnr_y), format_psnr(s.psnr_u),
                         format_psnr(s.psnr_v), format_psnr(s.psnr_yuv611)])
    writer.writerow(['total', '', result.total_bits, f'{result.bpp:.6f}',
                     sum(s.side_bits for s in result.stats), sum(s.flow_bits for s in result.stats),
                     sum(s.residual_bits for s in result.stats),
                     format_psnr(result.mean_psnr('psnr_y')), format_psnr(result.mean_psnr('psnr_u')),
                     format_psnr(result.mean_psnr('psnr_v')), format_psnr(result.mean_psnr('psnr_yuv611'))])


def cmd_decode(args) -> None:
    """Decode a bitstream to raw YUV, optionally dumping debug images."""
    data = Path(args.input).read_bytes()
    decoder = VideoDecoder(args.threads)
    frames = []
    for index, decoded in enumerate(decoder.iter_frames(data)):
        frames.append(decoded.frame)
        if args.dump_debug and decoded.debug is not None:
            dump_frame_debug(args.dump_debug, index, decoded.debug)
    written = write_yuv420(frames, args.output)

    writer = _csv_writer()
    writer.writerow(['frames', 'width', 'height', 'bytes'])
    width, height = (frames[0].width, frames[0].height) if frames else (0, 0)
    writer.writerow([len(frames), width, height, written])


def cmd_metrics(args) -> None:
    """Per-frame and average PSNR between two raw YUV files."""
    reference = read_yuv420(args.reference, args.width, args.height)
    test = read_yuv420(args.test, args.width, args.height)
    if len(reference) != len(test):
        error_msg = f"Frame counts differ: {len(reference)} vs {len(test)}"
        logger.error(error_msg)
        raise MetricsError(error_msg)
    if not reference:
        raise MetricsError("No frames to compare")

    mses = np.array([[mse_plane(a, b) for a, b in zip(ref.planes, tst.planes)]
                     for ref, tst in zip(reference, test)])
    weighted = (6.0 * mses[:, 0] + mses[:, 1] + mses[:, 2]) / 8.0

    def row(label, plane_mses, distortion):
        return [label] + [format_psnr(psnr_from_mse(m)) for m in plane_mses] + \
            [format_psnr(psnr_from_mse(distortion))]

    writer = _csv_writer()
    writer.writerow(METRICS_FIELDS)
    for index in range(len(reference)):
        writer.writerow(row(index, mses[index], weighted[index]))
    writer.writerow(row('average', mses.mean(axis=0), weighted.mean()))
    if args.tau is not None:
        gop = args.gop or len(weighted)
        gops = [weighted[i:i + gop] for i in range(0, len(weighted), gop)]
        modulated = float(np.mean([distortion_modulated(g, args.tau) for g in gops]))
        writer.writerow(['modulated', '', '', '', format_psnr(psnr_from_mse(modulated))])


def cmd_bdrate(args) -> None:
    """BD-rate of a test RD curve against a reference curve."""
    reference = read_rd_csv(args.reference)
    test = read_rd_csv(args.test)
    max_rate = args.filter_rate
    if max_rate is not None and (args.width is None or args.height is None):
        raise ConfigError("--filter-rate needs --width and --height", module='cli')
    report = bd_rate_report(reference, test, metric=args.metric, fit=args.fit, max_rate_mbps=max_rate,
                            width=args.width, height=args.height, fps=args.fps)
    writer = _csv_writer()
    writer.writerow(BDRATE_FIELDS)
    writer.writerow([report.metric, report.fit, f'{report.value:.4f}', f'{report.psnr_low:.4f}',
                     f'{report.psnr_high:.4f}', report.reference_points, report.test_points])


def cmd_sweep(args) -> None:
    """Encode one clip at several residual steps and print the RD curve."""
    steps = [s for s in args.steps.split(',') if s.strip()]
    if not steps:
        raise ConfigError("Sweep needs at least one residual step", module='cli')
    steps = [parse_step(s) for s in steps]
    frames = _read_clip(args.input, args.width, args.height)
    base = _codec_config(args)

    points: List[RDPoint] = []
    for step in steps:
        result = VideoEncoder(base.with_changes(residual_step=step), collect_flow_diagnostics=False).encode(frames)
        points.append(RDPoint(
            label=f'{args.label}@{step}',
            bpp=result.bpp,
            psnr_y=result.mean_psnr('psnr_y'),
            psnr_u=result.mean_psnr('psnr_u'),
            psnr_v=result.mean_psnr('psnr_v'),
            psnr_yuv611=result.mean_psnr('psnr_yuv611'),
        ))
        logger.info(f"Residual step {step}: {result.bpp:.4f} bpp, {points[-1].psnr_yuv611:.2f} dB")
    write_rd_csv(points, sys.stdout)


def cmd_pipeline_sim(args) -> None:
    """Simulate decode pipeline throughput."""
    if args.variants:
        variants = load_variants(args.variants)
    elif args.spec:
        variants = [(Path(args.spec).stem, load_pipeline_spec(args.spec))]
    else:
        variants = [('default', default_spec())]
    if args.frames is not None:
        variants = [(label, spec.with_frames(args.frames)) for label, spec in variants]

    if args.schedule:
        if len(variants) != 1:
            raise ConfigError("--schedule needs exactly one spec", module='cli')
        with open(args.schedule, 'w', newline='') as f:
            write_schedule(simulate(variants[0][1]), f)
    fps_report(variants, sys.stdout)


def _add_geometry_arguments(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument('--width', type=int, required=required, help='Luma width in pixels')
    parser.add_argument('--height', type=int, required=required, help='Luma height in pixels')


def _add_codec_arguments(parser: argparse.ArgumentParser) -> None:
    defaults = CodecConfig()
    _add_geometry_arguments(parser)
    parser.add_argument('--gop', type=int, default=defaults.gop_size, help='GoP size')
    parser.add_argument('--block-size', type=int, default=defaults.block_size, help='Motion block size')
    parser.add_argument('--dr', default=str(defaults.residual_step), help='Residual quantizer step (e.g. 4 or 1/2)')
    parser.add_argument('--di', default=str(defaults.iframe_step), help='I-frame DC quantizer step')
    parser.add_argument('--latent-step', choices=[s.value for s in LatentStep],
                        default=defaults.latent_step.value, help='Latent/mean grid step')
    parser.add_argument('--streams', type=int, default=defaults.stream_count, help='Entropy streams per set')
    parser.add_argument('--header', choices=['naive', 'optimized'], default='naive',
                        help='Stream length header layout')
    parser.add_argument('--warp', choices=[m.value for m in WarpMode], default=defaults.warp_mode.value,
                        help='Warping operator for P-frames')
    parser.add_argument('--search-range', type=int, default=defaults.search_range,
                        help='Integer-pel motion search range')
    parser.add_argument('--search-method', choices=list(SEARCH_METHODS), default=defaults.search_method,
                        help='Integer-pel search strategy')
    parser.add_argument('--sigma', type=float, default=None, help='Overlap kernel sigma (default b/2)')


def build_parser(defaults: Optional[dict] = None) -> argparse.ArgumentParser:
    defaults = defaults or {'log_level': 'INFO', 'threads': 1}
    parser = argparse.ArgumentParser(
        description='Low-delay P-frame video codec toolkit',
        formatter_class=argparse.RawDescriptionHelpFormatter
    )

    parser.add_argument(
        '--log-level',
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
        default=defaults['log_level'] if defaults['log_level'] in ('DEBUG', 'INFO', 'WARNING', 'ERROR') else 'INFO',
        help='Set logging level'
    )
    parser.add_argument('--threads', type=int, default=defaults['threads'],
                        help='Entropy coder worker threads (output is identical at any count)')

    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    encode_parser = subparsers.add_parser('encode', help='Encode a raw YUV 4:2:0 file')
    encode_parser.add_argument('input', help='Input .yuv file')
    encode_parser.add_argument('output', help='Output bitstream file')
    _add_codec_arguments(encode_parser)

    decode_parser = subparsers.add_parser('decode', help='Decode a bitstream to raw YUV 4:2:0')
    decode_parser.add_argument('input', help='Input bitstream file')
    decode_parser.add_argument('output', help='Output .yuv file')
    decode_parser.add_argument('--dump-debug', metavar='DIR', help='Write warped/flow/residual PGMs here')

    metrics_parser = subparsers.add_parser('metrics', help='PSNR between two raw YUV files')
    metrics_parser.add_argument('reference', help='Reference .yuv file')
    metrics_parser.add_argument('test', help='Test .yuv file')
    _add_geometry_arguments(metrics_parser)
    metrics_parser.add_argument('--tau', type=float, default=None,
                                help=f'Also report the modulated GoP distortion (e.g. {DEFAULT_TAU})')
    metrics_parser.add_argument('--gop', type=int, default=None, help='GoP length for --tau (default: all frames)')

    bdrate_parser = subparsers.add_parser('bdrate', help='BD-rate between two RD CSV files')
    bdrate_parser.add_argument('reference', help='Reference RD CSV')
    bdrate_parser.add_argument('test', help='Test RD CSV')
    bdrate_parser.add_argument('--metric', choices=list(BD_METRICS), default='yuv611', help='Quality column')
    bdrate_parser.add_argument('--fit', choices=list(BD_FITS), default='polynomial', help='Curve fit')
    bdrate_parser.add_argument('--fps', type=float, default=30.0, help='Frame rate for Mb/s conversion')
    bdrate_parser.add_argument('--filter-rate', type=float, nargs='?', const=DEFAULT_MAX_RATE_MBPS, default=None,
                               metavar='MBPS', help=f'Drop points above this rate (default {DEFAULT_MAX_RATE_MBPS})')
    _add_geometry_arguments(bdrate_parser, required=False)

    sweep_parser = subparsers.add_parser('sweep', help='RD curve over residual quantizer steps')
    sweep_parser.add_argument('input', help='Input .yuv file')
    sweep_parser.add_argument('--steps', required=True, help='Comma separated residual steps, e.g. 8,4,2,1')
    sweep_parser.add_argument('--label', default='sweep', help='Label prefix for the RD points')
    _add_codec_arguments(sweep_parser)

    pipeline_parser = subparsers.add_parser('pipeline-sim', help='Decode pipeline throughput')
    pipeline_parser.add_argument('spec', nargs='?', help='Pipeline spec file (default: bundled pipeline)')
    pipeline_parser.add_argument('--variants', help='File with [label] sections to compare')
    pipeline_parser.add_argument('--frames', type=int, default=None, help='Override the simulated frame count')
    pipeline_parser.add_argument('--schedule', metavar='CSV', help='Write the stage schedule to this file')

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main CLI entry point."""
    try:
        env = load_config()
    except CodecException as e:
        print(f"Error [{e.module}]: {e}", file=sys.stderr)
        return 1

    parser = build_parser(env)
    args = parser.parse_args(argv)

    # Setup logging
    setup_logging(args.log_level)

    handlers = {
        'encode': cmd_encode,
        'decode': cmd_decode,
        'metrics': cmd_metrics,
        'bdrate': cmd_bdrate,
        'sweep': cmd_sweep,
        'pipeline-sim': cmd_pipeline_sim,
    }
    handler = handlers.get(args.command)
    if handler is None:
        parser.print_help()
        return 1

    try:
        handler(args)
    except CodecException as e:
        print(f"Error [{e.module}]: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"Error [io]: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
