#!/usr/bin/env python3
"""
Examples for the PFrame Codec Util Library

This file demonstrates:
- Encoding and decoding a synthetic clip
- Comparing the warping operators on the same content
- A quantizer step sweep and BD-rate between two RD curves
- The parallel entropy coder on its own
- Decode pipeline throughput simulation
"""

import logging
import os

import numpy as np
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

logging.basicConfig(level=os.getenv('PFRAME_LOG_LEVEL', 'WARNING'))


def example_encode_decode():
    """Encode a panning clip and check the decoder reproduces it."""
    from pframe_codec import CodecConfig, VideoEncoder, decode_stream
    from pframe_codec.synthetic import pan_clip

    print("=== Encode / Decode ===\n")
    clip = pan_clip(128, 128, 16)
    config = CodecConfig(block_size=16, gop_size=8, residual_step=4)
    result = VideoEncoder(config).encode(clip)

    print(f"   - Frames: {len(clip)}, bitstream: {len(result.bitstream)} bytes ({result.bpp:.4f} bpp)")
    print(f"   - Mean PSNR (YUV 6:1:1): {result.mean_psnr():.2f} dB")
    for stats in result.stats[:3]:
        print(f"     * frame {stats.index} {stats.frame_type}: {stats.bits} bits, {stats.psnr_yuv611:.2f} dB")

    decoded = decode_stream(result.bitstream)
    print(f"   - Decoder matches encoder: {decoded == result.reconstructions}")
    print()


def example_warp_modes():
    """Compare overlapped, block and dense warping at one quantizer step."""
    from pframe_codec import CodecConfig, VideoEncoder, WarpMode
    from pframe_codec.synthetic import standard_suite

    print("=== Warping Operators ===\n")
    suite = standard_suite(128, 128, 12)
    base = CodecConfig(block_size=16, gop_size=12)
    for name, clip in suite.items():
        print(f"   {name}:")
        for mode in WarpMode:
            result = VideoEncoder(base.with_changes(warp_mode=mode), collect_flow_diagnostics=False).encode(clip)
            print(f"     * {mode.value:8s} {result.bpp:.4f} bpp  {result.mean_psnr():.2f} dB")
    print()


def example_rd_sweep():
    """Sweep the residual step and compare two latent grids by BD-rate."""
    from pframe_codec import CodecConfig, RDPoint, VideoEncoder
    from pframe_codec.coding import LatentStep
    from pframe_codec.metrics import bd_rate_report
    from pframe_codec.synthetic import zoom_clip

    print("=== RD Sweep and BD-rate ===\n")
    clip = zoom_clip(96, 96, 8)

    def curve(latent_step):
        points = []
        for step in (16, 8, 4, 2, 1):
            config = CodecConfig(block_size=16, gop_size=8, residual_step=step, latent_step=latent_step)
            result = VideoEncoder(config, collect_flow_diagnostics=False).encode(clip)
            points.append(RDPoint(latent_step.value, result.bpp, result.mean_psnr('psnr_y'),
                                  result.mean_psnr('psnr_u'), result.mean_psnr('psnr_v'), result.mean_psnr()))
        return points

    anchor = curve(LatentStep.EXACT)
    test = curve(LatentStep.ONE)
    for point in anchor:
        print(f"   - exact  {point.bpp:.4f} bpp  {point.psnr_yuv611:.2f} dB")
    try:
        report = bd_rate_report(anchor, test)
        print(f"   - BD-rate of the integer grid vs exact: {report.value:+.2f}% "
              f"over [{report.psnr_low:.2f}, {report.psnr_high:.2f}] dB")
    except Exception as e:
        print(f"   Error computing BD-rate: {e}")
    print()


def example_parallel_coder():
    """Code Gaussian symbols into many independent streams."""
    from pframe_codec.coding import Bottleneck, ParallelEntropyCoder, rate_estimate, symbol_tables
    from pframe_codec.coding.entropy_bottleneck import rho_level_for_sigma

    print("=== Parallel Entropy Coder ===\n")
    model = symbol_tables(Bottleneck())
    level = int(rho_level_for_sigma(6.0))
    rng = np.random.default_rng(0)
    symbols = np.clip(np.round(rng.normal(0.0, 6.0, 100000)), -127, 127).astype(np.int64)
    ideal = rate_estimate(symbols, level, model)

    for streams in (1, 64, 512):
        coder = ParallelEntropyCoder(model, streams, threads=4)
        stream_set = coder.encode(symbols, level)
        print(f"   - {streams:4d} streams: {len(stream_set.payload)} payload bytes "
              f"(ideal {ideal / 8:.0f}), header overhead {100 * stream_set.header_overhead:.2f}%")
    print()


def example_pipeline_sim():
    """Throughput of the bundled receiver pipeline and two variants."""
    from pframe_codec.pipeline_sim import default_spec, simulate

    print("=== Decode Pipeline Simulation ===\n")
    spec = default_spec()
    variants = {
        'default': spec,
        'no warp stage': spec.without_stage('Warp'),
        'faster parser': spec.with_duration('PEC', 6),
    }
    for label, variant in variants.items():
        result = simulate(variant)
        print(f"   - {label:14s} {result.fps:7.2f} fps (bottleneck {variant.bottleneck()})")
    print()


def main():
    """Run all examples."""
    print("PFrame Codec Util - Examples\n")
    print("=" * 60)

    example_encode_decode()
    example_warp_modes()
    example_rd_sweep()
    example_parallel_coder()
    example_pipeline_sim()

    print("=" * 60)
    print("Done.")


if __name__ == '__main__':
    main()
