"""Conditional neural video codec with a scalable module family.

Structure/detail motion coding, temporal context mining, quadtree-scheduled
entropy models, real range-coded bitstreams, a staged training schedule, and
rate-distortion analysis tools.
"""

from .config import (AttentionConfig, ConfigError, ContextualEncDecConfig,
                     ContextualEntropyConfig, ModelConfig, MotionEncDecConfig,
                     MotionEntropyConfig, ParamReport, PRESETS, TcmConfig,
                     UnsupportedCombination, base, enumerate_sweep,
                     paper_pattern, tiny)
from .model import CodecModel, FrameState, build_model, count_parameters
from .bitstream import (BitstreamError, BitstreamUnit, decode_frame,
                        decode_sequence, encode_frame, encode_sequence,
                        parse_units, read_bitstream, write_bitstream)
from .training import (DEFAULT_SCHEDULE, LAMBDAS, LossBreakdown, NanLossError,
                       TrainingStage, cascaded_rollout, compute_loss,
                       frame_weight, load_checkpoint, run_schedule,
                       save_checkpoint)
from .metrics import (ChannelBitrateReport, RDCurve, RDPoint, bd_rate,
                      channel_bitrate_ratio, psnr_rgb, psnr_yuv_compound)
from .evaluate import analyze_channels, run_eval, run_scaling_sweep

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig", "BitstreamError", "BitstreamUnit", "CodecModel",
    "ChannelBitrateReport", "ConfigError", "ContextualEncDecConfig",
    "ContextualEntropyConfig", "DEFAULT_SCHEDULE", "FrameState", "LAMBDAS",
    "LossBreakdown", "ModelConfig", "MotionEncDecConfig", "MotionEntropyConfig",
    "NanLossError", "PRESETS", "ParamReport", "RDCurve", "RDPoint",
    "TcmConfig", "TrainingStage", "UnsupportedCombination", "analyze_channels",
    "base", "bd_rate", "build_model", "cascaded_rollout",
    "channel_bitrate_ratio", "compute_loss", "count_parameters",
    "decode_frame", "decode_sequence", "encode_frame", "encode_sequence",
    "enumerate_sweep", "frame_weight", "load_checkpoint", "paper_pattern",
    "parse_units", "psnr_rgb", "psnr_yuv_compound", "read_bitstream",
    "run_eval", "run_scaling_sweep", "run_schedule", "save_checkpoint",
    "tiny", "write_bitstream",
]
