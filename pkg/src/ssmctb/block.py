"""The self-supervised masked convolutional transformer block and its losses."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import masked_conv as mc
from . import transformer as tr

DEFAULT_LAMBDA = 0.1
# for host losses much smaller than the block's MSE
SMALL_LAMBDA = 0.001


@dataclass(frozen=True)
class SsmctbConfig:
    conv: mc.MaskedConvConfig = field(default_factory=mc.MaskedConvConfig)
    transformer: tr.TransformerConfig = field(default_factory=tr.TransformerConfig)
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        object.__setattr__(self, "transformer", self.transformer.for_dims(self.conv.dims))


def init_params(config: SsmctbConfig, rng: np.random.Generator, prefix: str = "") -> dict[str, np.ndarray]:
    out = mc.init_params(config.conv, rng, prefix)
    out.update(tr.init_params(config.transformer, config.conv.channels, rng, prefix))
    return out


def ssmctb_forward(x, params, config: SsmctbConfig, prefix: str = ""):
    """Return ``(x_hat, block_loss)``.

    ``x_hat`` is the masked-conv output scaled by the per-channel gate and has
    the shape of ``x``; ``block_loss`` is the mean squared difference between
    ``x_hat`` and ``x`` over every element (and over the batch, if any).
    """
    dims = config.conv.dims
    xv = ad.value(x)
    squeeze = xv.ndim == dims + 1
    xb = ad.reshape(x, (1,) + xv.shape) if squeeze else x
    z = mc.masked_conv_forward(xb, params, config.conv, prefix)
    gate = tr.gate_weights(z, params, config.transformer, prefix)
    n, c = ad.value(gate).shape
    x_hat = ad.mul(z, ad.reshape(gate, (n,) + (1,) * dims + (c,)))
    loss = ad.mse(x_hat, xb)
    if squeeze:
        x_hat = ad.reshape(x_hat, xv.shape)
    return x_hat, loss


def total_loss(l_host, l_block, lam: float):
    """Host loss plus ``lam`` times the block loss."""
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    return ad.add(l_host, ad.mul(l_block, float(lam)))
