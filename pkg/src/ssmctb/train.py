"""Adam training of the host autoencoder on normal samples."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autoencoder import AutoencoderConfig, build, forward, host_loss
from .block import total_loss
from .params import ParameterStore
from .rng import numpy_rng

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 8
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    lam: float = 0.1
    seed: int = 7

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate < 0 or self.lam < 0 or self.epsilon <= 0:
            raise ValueError("learning_rate and lambda must be nonnegative, epsilon positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("moment coefficients must lie in [0, 1)")


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: ParameterStore, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            update = self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)
            params[k] = params[k] - update


def loss_and_grads(params: ParameterStore, batch: np.ndarray, config: AutoencoderConfig, lam: float):
    tape = ad.Tape()
    p = tape.params_from(params)
    out, l_block = forward(p, batch, config)
    l_host = host_loss(out, batch)
    total = l_host if l_block is None else total_loss(l_host, l_block, lam)
    grads = ad.backward(total, tape)
    hb = ad.value(l_host).item()
    bb = 0.0 if l_block is None else ad.value(l_block).item()
    return hb, bb, ad.value(total).item(), grads


def train(samples: np.ndarray, config: AutoencoderConfig, tcfg: TrainConfig,
          params: ParameterStore | None = None) -> tuple[ParameterStore, list[dict]]:
    """Train on ``samples`` (normal data only); returns the parameters and a per-epoch log."""
    samples = np.asarray(samples, dtype=np.float64)
    params = build(config, tcfg.seed) if params is None else params.copy()
    opt = Adam(tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.epsilon)
    order_rng = numpy_rng(tcfg.seed, "batches")
    n = samples.shape[0]
    history = []
    for epoch in range(1, tcfg.epochs + 1):
        order = order_rng.permutation(n)
        sums = np.zeros(3)
        for s in range(0, n, tcfg.batch_size):
            idx = order[s:s + tcfg.batch_size]
            hb, bb, tot, grads = loss_and_grads(params, samples[idx], config, tcfg.lam)
            if not all(math.isfinite(v) for v in (hb, bb, tot)):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch starting {s}: "
                                     f"host={hb} block={bb}")
            opt.step(params, grads)
            sums += np.array([hb, bb, tot]) * len(idx)
        host, blk, tot = (sums / n).tolist()
        rec = {"epoch": epoch, "host_loss": host, "block_loss": blk, "total_loss": tot}
        history.append(rec)
        log.info("epoch %d host=%.6f block=%.6f total=%.6f", epoch, host, blk, tot)
    return params, history


def write_loss_log(history: list[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in history:
            fh.write(json.dumps(rec) + "\n")
