"""
PFrame Codec Util

A low-delay P-frame video codec toolkit: overlapped block warping, block
motion estimation, a Gaussian mean-scale entropy bottleneck with a parallel
range coder, RD metrics and a decode pipeline throughput simulator.
"""

from .errors import CodecException
from .frame_io import Frame420, read_yuv420, write_yuv420
from .warp_engine import FlowField, OverlapKernel, block_warp, dense_warp, make_gaussian_kernel, overlap_block_warp
from .motion import estimate_flow, extrapolate_flow, flow_residual
from .config import CodecConfig, WarpMode
from .codec import VideoDecoder, VideoEncoder, decode_stream, encode_iframe, encode_pframe
from .metrics import RDPoint, bd_rate, distortion_yuv611
from .pipeline_sim import PipelineSpec, simulate

__version__ = "1.0.0"

__all__ = [
    'CodecException',
    'Frame420',
    'read_yuv420',
    'write_yuv420',
    'FlowField',
    'OverlapKernel',
    'block_warp',
    'dense_warp',
    'make_gaussian_kernel',
    'overlap_block_warp',
    'estimate_flow',
    'extrapolate_flow',
    'flow_residual',
    'CodecConfig',
    'WarpMode',
    'VideoDecoder',
    'VideoEncoder',
    'decode_stream',
    'encode_iframe',
    'encode_pframe',
    'RDPoint',
    'bd_rate',
    'distortion_yuv611',
    'PipelineSpec',
    'simulate',
]
