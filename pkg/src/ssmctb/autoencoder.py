"""A small convolutional autoencoder that can host one SSMCTB in its decoder.

Topology (2D shown; the 3D variant is identical over ``h x w x r``)::

    encoder.conv0   3x3 stride 2   c_in -> 16, ReLU
    encoder.conv1   3x3 stride 2     16 -> 32, ReLU
    bottleneck      3x3              32 -> 32, ReLU
    decoder.block1  up x2, 3x3       32 -> 32, ReLU
    decoder.block2  3x3              32 -> 16, ReLU
    decoder.block3  up x2, 3x3       16 -> 16, ReLU
    decoder.block4  3x3              16 -> c_in (linear output)

Putting SSMCTB at position ``i`` swaps the 3x3 conv of ``decoder.block{i}``
for the block (width = the block's input width).  Where the replaced conv
changed the width, a 1x1 conv after the block restores the output width.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import uniform_filter

from . import autodiff as ad
from . import block as B
from .params import ParameterStore
from .rng import numpy_rng

N_DECODER_BLOCKS = 4
UPSAMPLE_BEFORE = (1, 3)


@dataclass(frozen=True)
class AutoencoderConfig:
    input_shape: tuple[int, ...] = (32, 32, 1)  # spatial extents then channels
    encoder_widths: tuple[int, int] = (16, 32)
    decoder_widths: tuple[int, int, int] = (32, 16, 16)
    ssmctb_position: int | None = 3
    ssmctb: B.SsmctbConfig = field(default_factory=B.SsmctbConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "encoder_widths", tuple(int(s) for s in self.encoder_widths))
        object.__setattr__(self, "decoder_widths", tuple(int(s) for s in self.decoder_widths))
        if self.dims not in (2, 3):
            raise ValueError(f"input_shape must be (h, w, c) or (h, w, r, c), got {self.input_shape}")
        if any(s % 4 for s in self.input_shape[:-1]):
            raise ValueError(f"spatial extents must be multiples of 4, got {self.input_shape[:-1]}")
        if len(self.encoder_widths) != 2 or len(self.decoder_widths) != N_DECODER_BLOCKS - 1:
            raise ValueError("need 2 encoder widths and 3 hidden decoder widths")
        if min(self.encoder_widths + self.decoder_widths + (self.channels,)) < 1:
            raise ValueError("widths must be positive")
        if self.ssmctb_position is not None and not 1 <= self.ssmctb_position <= N_DECODER_BLOCKS:
            raise ValueError(f"ssmctb_position must be 1..{N_DECODER_BLOCKS} or None, got {self.ssmctb_position}")
        conv = self.ssmctb.conv
        if conv.dims != self.dims:
            object.__setattr__(self, "ssmctb", replace(self.ssmctb, conv=replace(conv, dims=self.dims)))

    @property
    def dims(self) -> int:
        return len(self.input_shape) - 1

    @property
    def channels(self) -> int:
        return self.input_shape[-1]

    def block_widths(self, i: int) -> tuple[int, int]:
        """Input and output width of decoder block ``i`` (1-based)."""
        chain = (self.encoder_widths[-1],) + self.decoder_widths + (self.channels,)
        return chain[i - 1], chain[i]

    def site_config(self) -> B.SsmctbConfig:
        """The SSMCTB config with its channel count set to the replacement site's width."""
        if self.ssmctb_position is None:
            raise ValueError("no SSMCTB in this autoencoder")
        cin, _ = self.block_widths(self.ssmctb_position)
        return replace(self.ssmctb, conv=replace(self.ssmctb.conv, channels=cin))


def dense_offsets(dims: int, radius: int = 1) -> np.ndarray:
    return np.array(list(itertools.product(range(-radius, radius + 1), repeat=dims)), dtype=np.int64)


def _conv_init(rng, taps: int, cin: int, cout: int, gain: float = 2.0):
    std = np.sqrt(gain / (taps * cin))
    return rng.normal(0.0, std, size=(taps, cin, cout)), np.zeros(cout)


def build(config: AutoencoderConfig, seed: int) -> ParameterStore:
    """Deterministically initialise every parameter from ``seed``."""
    rng = numpy_rng(seed, "init")
    taps = 3 ** config.dims
    store = ParameterStore()
    chans = (config.channels,) + config.encoder_widths
    for i in range(2):
        w, b = _conv_init(rng, taps, chans[i], chans[i + 1])
        store[f"encoder.conv{i}.weight"], store[f"encoder.conv{i}.bias"] = w, b
    cb = config.encoder_widths[-1]
    store["bottleneck.weight"], store["bottleneck.bias"] = _conv_init(rng, taps, cb, cb)
    for i in range(1, N_DECODER_BLOCKS + 1):
        cin, cout = config.block_widths(i)
        last = i == N_DECODER_BLOCKS
        prefix = f"decoder.block{i}."
        if i == config.ssmctb_position:
            for k, v in B.init_params(config.site_config(), rng, prefix).items():
                store[k] = v
            if cin != cout:
                w, b = _conv_init(rng, 1, cin, cout, 1.0 if last else 2.0)
                store[prefix + "adapter.weight"], store[prefix + "adapter.bias"] = w, b
        else:
            w, b = _conv_init(rng, taps, cin, cout, 1.0 if last else 2.0)
            store[prefix + "weight"], store[prefix + "bias"] = w, b
    return store


def _conv_layer(x, params, name: str, offsets, stride: int = 1):
    return ad.add(ad.conv(x, params[name + ".weight"], offsets, stride), params[name + ".bias"])


def forward(params, x, config: AutoencoderConfig):
    """Reconstruct a batch ``x`` of shape ``(n, *spatial, c)``.

    Returns ``(output, block_loss)``; ``block_loss`` is ``None`` without an SSMCTB.
    """
    xv = ad.value(x)
    if xv.shape[1:] != config.input_shape:
        raise ValueError(f"batch shape {xv.shape} does not match input_shape {config.input_shape}")
    dims = config.dims
    k3 = dense_offsets(dims)
    k1 = dense_offsets(dims, 0)
    h = ad.relu(_conv_layer(x, params, "encoder.conv0", k3, 2))
    h = ad.relu(_conv_layer(h, params, "encoder.conv1", k3, 2))
    h = ad.relu(_conv_layer(h, params, "bottleneck", k3))
    block_loss = None
    for i in range(1, N_DECODER_BLOCKS + 1):
        last = i == N_DECODER_BLOCKS
        name = f"decoder.block{i}"
        if i in UPSAMPLE_BEFORE:
            h = ad.upsample_nearest(h, 2, dims)
        if i == config.ssmctb_position:
            h, block_loss = B.ssmctb_forward(h, params, config.site_config(), name + ".")
            if name + ".adapter.weight" in params:
                h = _conv_layer(h, params, name + ".adapter", k1)
                if not last:
                    h = ad.relu(h)
        else:
            h = _conv_layer(h, params, name, k3)
            if not last:
                h = ad.relu(h)
    return h, block_loss


def host_loss(out, x):
    """Mean squared reconstruction error of the autoencoder."""
    return ad.mse(out, x)


def reconstruct(params, samples: np.ndarray, config: AutoencoderConfig, batch_size: int = 32) -> np.ndarray:
    outs = []
    for s in range(0, samples.shape[0], batch_size):
        out, _ = forward(params, samples[s:s + batch_size], config)
        outs.append(ad.value(out))
    return np.concatenate(outs)


def error_maps(samples: np.ndarray, recon: np.ndarray, smooth: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel channel-mean squared error, mean-filtered; frame score is its max."""
    err = ((recon - samples) ** 2).mean(axis=-1)
    if smooth > 1:
        size = (1,) + (smooth,) * (err.ndim - 1)
        err = uniform_filter(err, size=size, mode="nearest")
    frame = err.reshape(err.shape[0], -1).max(axis=1)
    return frame, err


def score(params, samples: np.ndarray, config: AutoencoderConfig, batch_size: int = 32,
          smooth: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Frame scores ``(n,)`` and smoothed pixel maps ``(n, *spatial)`` for ``samples``."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == config.dims + 1:
        samples = samples[None]
    return error_maps(samples, reconstruct(params, samples, config, batch_size), smooth)
