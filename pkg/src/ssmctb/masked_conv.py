"""Masked dilated convolution in 2D and 3D.

Each output filter sees only ``2**dims`` corner sub-kernels of a ``k``-wide
receptive field, ``k = 2k' + 2d + 1``.  The centre cell (and a gap of ``d``
cells around it) carries no weight, so the response at a position never
depends on the input at that position.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class MaskedConvConfig:
    dims: int = 2
    channels: int = 1
    sub_kernel_size: int = 1
    dilation: int = 3

    def __post_init__(self) -> None:
        if self.dims not in (2, 3):
            raise ValueError(f"dims must be 2 or 3, got {self.dims}")
        if self.channels < 1 or self.sub_kernel_size < 1:
            raise ValueError("channels and sub_kernel_size must be positive")
        if self.dilation < 0:
            raise ValueError("dilation must be nonnegative")

    @property
    def receptive_field(self) -> int:
        return 2 * self.sub_kernel_size + 2 * self.dilation + 1

    @property
    def n_sub_kernels(self) -> int:
        return 2 ** self.dims

    @property
    def padding(self) -> int:
        return self.sub_kernel_size + self.dilation


def receptive_offsets(config: MaskedConvConfig) -> list[tuple[int, tuple[int, ...]]]:
    """Every ``(sub-kernel index, offset)`` covered by the kernel, relative to its centre.

    Sub-kernels are numbered by corner sign pattern in lexicographic order
    (``-`` before ``+`` on each axis); cells inside a sub-kernel are listed in
    row-major order.  Along each axis an offset lies in ``±[d+1, d+k']``.
    """
    kp, d = config.sub_kernel_size, config.dilation
    near = {-1: range(-(d + kp), -d), 1: range(d + 1, d + kp + 1)}
    out = []
    for i, signs in enumerate(itertools.product((-1, 1), repeat=config.dims)):
        for cell in itertools.product(*(near[s] for s in signs)):
            out.append((i, tuple(cell)))
    return out


def offsets_array(config: MaskedConvConfig) -> np.ndarray:
    return np.array([off for _, off in receptive_offsets(config)], dtype=np.int64)


def param_name(prefix: str, j: int, i: int) -> str:
    return f"{prefix}masked_conv.filter{j}.sub{i}"


def init_params(config: MaskedConvConfig, rng: np.random.Generator, prefix: str = "") -> dict[str, np.ndarray]:
    """He-style Gaussian init, ``std = sqrt(2 / fan_in)`` with fan_in over all sub-kernels."""
    kp, c = config.sub_kernel_size, config.channels
    fan_in = config.n_sub_kernels * kp ** config.dims * c
    std = np.sqrt(2.0 / fan_in)
    shape = (kp,) * config.dims + (c,)
    return {
        param_name(prefix, j, i): rng.normal(0.0, std, size=shape)
        for j in range(c)
        for i in range(config.n_sub_kernels)
    }


def assemble_weight(params, config: MaskedConvConfig, prefix: str = ""):
    """Stack the per-filter sub-kernels into a ``(taps, c_in, c_out)`` weight.

    Tap order matches :func:`receptive_offsets`.
    """
    kp, c = config.sub_kernel_size, config.channels
    taps = config.n_sub_kernels * kp ** config.dims
    filters = []
    for j in range(c):
        subs = ad.stack([params[param_name(prefix, j, i)] for i in range(config.n_sub_kernels)])
        filters.append(ad.reshape(subs, (taps, c)))
    return ad.stack(filters, axis=-1)


def _batched(x, config: MaskedConvConfig):
    nd = ad.value(x).ndim
    if nd == config.dims + 1:
        return ad.reshape(x, (1,) + ad.value(x).shape), True
    if nd != config.dims + 2:
        raise ValueError(f"expected {config.dims} spatial axes plus channels, got shape {ad.value(x).shape}")
    return x, False


def masked_conv_preact(x, params, config: MaskedConvConfig, prefix: str = ""):
    """Masked convolution before the ReLU.

    ``x`` is ``(*spatial, c)`` or ``(batch, *spatial, c)``; the output has the same shape.
    """
    xb, squeeze = _batched(x, config)
    if ad.value(xb).shape[-1] != config.channels:
        raise ValueError(f"input has {ad.value(xb).shape[-1]} channels, config expects {config.channels}")
    w = assemble_weight(params, config, prefix)
    z = ad.conv(xb, w, offsets_array(config), stride=1)
    if squeeze:
        z = ad.reshape(z, ad.value(z).shape[1:])
    return z


def masked_conv_forward(x, params, config: MaskedConvConfig, prefix: str = ""):
    return ad.relu(masked_conv_preact(x, params, config, prefix))
