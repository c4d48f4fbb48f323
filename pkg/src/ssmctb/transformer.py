"""Channel-wise transformer that turns masked-conv activation maps into per-channel gates.

One token per channel: the map is average-pooled, flattened and projected to
``token_dim``; positional embeddings are added; ``blocks`` pre-norm blocks
run multi-head attention across the channel tokens (head outputs are summed)
and an MLP; finally each token is averaged and squashed by a sigmoid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class TransformerConfig:
    token_dim: int = 64
    heads: int = 4
    blocks: int = 2
    pooled: tuple[int, ...] = (1, 1)
    mlp_hidden: int | None = None
    norm_eps: float = 1e-5

    def __post_init__(self) -> None:
        object.__setattr__(self, "pooled", tuple(int(p) for p in self.pooled))
        if min(self.token_dim, self.heads, self.blocks) < 1:
            raise ValueError("token_dim, heads and blocks must be positive")
        if self.token_dim % self.heads:
            raise ValueError(f"token_dim {self.token_dim} is not divisible by heads {self.heads}")
        if not self.pooled or min(self.pooled) < 1:
            raise ValueError("pooled extents must be positive")

    @property
    def head_dim(self) -> int:
        return self.token_dim // self.heads

    @property
    def hidden(self) -> int:
        return self.mlp_hidden or 2 * self.token_dim

    @property
    def n_pooled(self) -> int:
        return int(np.prod(self.pooled))

    def for_dims(self, dims: int) -> "TransformerConfig":
        """Same config with ``pooled`` widened/narrowed to ``dims`` axes (padding with 1)."""
        if len(self.pooled) == dims:
            return self
        pooled = (self.pooled + (1,) * dims)[:dims]
        return TransformerConfig(self.token_dim, self.heads, self.blocks, pooled, self.mlp_hidden, self.norm_eps)


def init_params(config: TransformerConfig, channels: int, rng: np.random.Generator,
                prefix: str = "") -> dict[str, np.ndarray]:
    dt, dq, hid, n = config.token_dim, config.head_dim, config.hidden, config.n_pooled
    p = f"{prefix}transformer"
    out = {
        f"{p}.proj.weight": rng.normal(0.0, 1.0 / np.sqrt(n), size=(n, dt)),
        f"{p}.proj.bias": np.zeros(dt),
        f"{p}.pos": rng.normal(0.0, 0.02, size=(channels, dt)),
    }
    for l in range(config.blocks):
        b = f"{p}.block{l}"
        for norm in ("norm1", "norm2"):
            out[f"{b}.{norm}.scale"] = np.ones(dt)
            out[f"{b}.{norm}.shift"] = np.zeros(dt)
        for j in range(config.heads):
            out[f"{b}.head{j}.q"] = rng.normal(0.0, 1.0 / np.sqrt(dt), size=(dt, dq))
            out[f"{b}.head{j}.k"] = rng.normal(0.0, 1.0 / np.sqrt(dt), size=(dt, dq))
            out[f"{b}.head{j}.v"] = rng.normal(0.0, 1.0 / np.sqrt(dt * config.heads), size=(dt, dt))
        out[f"{b}.mlp.fc1.weight"] = rng.normal(0.0, np.sqrt(2.0 / dt), size=(dt, hid))
        out[f"{b}.mlp.fc1.bias"] = np.zeros(hid)
        out[f"{b}.mlp.fc2.weight"] = rng.normal(0.0, 1.0 / np.sqrt(hid), size=(hid, dt))
        out[f"{b}.mlp.fc2.bias"] = np.zeros(dt)
    return out


def tokenize(z, params, config: TransformerConfig, prefix: str = ""):
    """``(batch, *spatial, c)`` activation maps -> ``(batch, c, token_dim)`` tokens."""
    p = f"{prefix}transformer"
    zv = ad.value(z)
    dims = zv.ndim - 2
    if len(config.pooled) != dims:
        raise ValueError(f"pooled extents {config.pooled} do not match {dims} spatial axes")
    c = zv.shape[-1]
    pooled = ad.adaptive_avg_pool(z, config.pooled)
    a = ad.reshape(ad.transpose(pooled, (0, dims + 1) + tuple(range(1, dims + 1))), (zv.shape[0], c, config.n_pooled))
    t = ad.matmul(a, params[f"{p}.proj.weight"]) + params[f"{p}.proj.bias"]
    return t + params[f"{p}.pos"]


def attention_head(r, wq, wk, wv):
    """``softmax(Q K' / sqrt(d_q)) V`` with attention across the channel tokens."""
    q = ad.matmul(r, wq)
    k = ad.matmul(r, wk)
    v = ad.matmul(r, wv)
    dq = ad.value(wq).shape[-1]
    logits = ad.mul(ad.matmul(q, ad.swap_last(k)), 1.0 / np.sqrt(dq))
    return ad.mix_rows(ad.softmax_rows(logits), v)


def mlp(x, params, prefix: str):
    h = ad.relu(ad.matmul(x, params[f"{prefix}.fc1.weight"]) + params[f"{prefix}.fc1.bias"])
    return ad.matmul(h, params[f"{prefix}.fc2.weight"]) + params[f"{prefix}.fc2.bias"]


def transformer_block(r, params, config: TransformerConfig, l: int, prefix: str = ""):
    b = f"{prefix}transformer.block{l}"
    eps = config.norm_eps
    n1 = ad.layer_norm(r, params[f"{b}.norm1.scale"], params[f"{b}.norm1.shift"], eps)
    y = None
    for j in range(config.heads):
        h = attention_head(n1, params[f"{b}.head{j}.q"], params[f"{b}.head{j}.k"], params[f"{b}.head{j}.v"])
        y = h if y is None else y + h
    p = y + r
    n2 = ad.layer_norm(p, params[f"{b}.norm2.scale"], params[f"{b}.norm2.shift"], eps)
    return mlp(n2, params, f"{b}.mlp") + p


def run_blocks(tokens, params, config: TransformerConfig, prefix: str = ""):
    r = tokens
    for l in range(config.blocks):
        r = transformer_block(r, params, config, l, prefix)
    return r


def channel_gate(r):
    """Average each token and apply a sigmoid: ``(..., c, d_t) -> (..., c)``."""
    return ad.sigmoid(ad.mean(r, axes=-1))


def gate_weights(z, params, config: TransformerConfig, prefix: str = ""):
    """Full path from activation maps ``(batch, *spatial, c)`` to gates ``(batch, c)``."""
    return channel_gate(run_blocks(tokenize(z, params, config, prefix), params, config, prefix))
