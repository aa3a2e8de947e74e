"""Multi-task semantic segmentation with a hierarchical transformer encoder
and a cross-task attention decoder, on a small numpy autodiff core."""

from .decoder import AttentionRecord, DecoderConfig, MTLDecoder, export_attention
from .encoder import (
    AttentionCapture,
    Encoder,
    EncoderConfig,
    FeaturePyramid,
    encoder_config,
)
from .errors import ConfigError, DimensionError, FormatError, MtlsegError, NumericError
from .model import MTLSegFormer, masks_from_logits, preprocess
from .optim import AdamW, poly_lr
from .tensor import Tensor, no_grad, using_dtype

__all__ = [
    "AdamW",
    "AttentionCapture",
    "AttentionRecord",
    "ConfigError",
    "DecoderConfig",
    "DimensionError",
    "Encoder",
    "EncoderConfig",
    "FeaturePyramid",
    "FormatError",
    "MTLDecoder",
    "MTLSegFormer",
    "MtlsegError",
    "NumericError",
    "Tensor",
    "encoder_config",
    "export_attention",
    "masks_from_logits",
    "no_grad",
    "poly_lr",
    "preprocess",
    "using_dtype",
]

__version__ = "0.1.0"
