"""Self-supervised masked convolutional transformer block (SSMCTB) for anomaly detection."""

__version__ = "0.1.0"

from .block import SsmctbConfig, ssmctb_forward, total_loss
from .masked_conv import MaskedConvConfig, masked_conv_forward, receptive_offsets
from .transformer import TransformerConfig

__all__ = [
    "MaskedConvConfig",
    "SsmctbConfig",
    "TransformerConfig",
    "masked_conv_forward",
    "receptive_offsets",
    "ssmctb_forward",
    "total_loss",
]
