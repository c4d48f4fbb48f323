"""Run configuration: one JSON file, unknown keys rejected.

Schema (every key optional; defaults shown)::

    {
      "seed": 7,                      # root seed; sub-seeds "init", "batches" derive from it
      "data_dir": null,
      "out_dir": null,
      "video": {"clip_length": 4, "clip_stride": 2, "mode": "stack"},
      "autoencoder": {"encoder_widths": [16, 32], "decoder_widths": [32, 16, 16],
                      "ssmctb_position": 3},            # 1..4 or "none"
      "ssmctb": {"sub_kernel_size": 1, "dilation": 3, "token_dim": 64, "heads": 4,
                 "blocks": 2, "pooled": [1, 1], "mlp_hidden": null, "lambda": 0.1},
      "train": {"epochs": 10, "batch_size": 8, "learning_rate": 0.001,
                "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8},
      "eval": {"alpha": 0.1, "beta": 0.1, "max_thresholds": 256, "smooth": 3},
      "grad_check": {"target": "block", "channels": 2, "extents": [8, 8], "step": 1e-5,
                     "tolerance": 1e-4, "max_elements": 8}
    }

Video mode ``stack`` feeds ``clip_length`` frames as channels to the 2D
autoencoder; ``volume`` feeds them as a depth axis to the 3D autoencoder.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .autoencoder import AutoencoderConfig
from .block import SsmctbConfig
from .masked_conv import MaskedConvConfig
from .train import TrainConfig
from .transformer import TransformerConfig


class ConfigError(ValueError):
    pass


@dataclass
class VideoSection:
    clip_length: int = 4
    clip_stride: int = 2
    mode: str = "stack"


@dataclass
class AutoencoderSection:
    encoder_widths: list = field(default_factory=lambda: [16, 32])
    decoder_widths: list = field(default_factory=lambda: [32, 16, 16])
    ssmctb_position: int | str | None = 3


@dataclass
class SsmctbSection:
    sub_kernel_size: int = 1
    dilation: int = 3
    token_dim: int = 64
    heads: int = 4
    blocks: int = 2
    pooled: list = field(default_factory=lambda: [1, 1])
    mlp_hidden: int | None = None
    lam: float = 0.1


@dataclass
class TrainSection:
    epochs: int = 10
    batch_size: int = 8
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class EvalSection:
    alpha: float = 0.1
    beta: float = 0.1
    max_thresholds: int | None = 256
    smooth: int = 3


@dataclass
class GradCheckSection:
    target: str = "block"
    channels: int = 2
    extents: list = field(default_factory=lambda: [8, 8])
    step: float = 1e-5
    tolerance: float = 1e-4
    max_elements: int | None = 8


_SECTIONS = {
    "video": VideoSection,
    "autoencoder": AutoencoderSection,
    "ssmctb": SsmctbSection,
    "train": TrainSection,
    "eval": EvalSection,
    "grad_check": GradCheckSection,
}
# JSON key -> dataclass attribute where they differ
_RENAME = {"lambda": "lam"}


@dataclass
class RunConfig:
    seed: int = 7
    data_dir: str | None = None
    out_dir: str | None = None
    video: VideoSection = field(default_factory=VideoSection)
    autoencoder: AutoencoderSection = field(default_factory=AutoencoderSection)
    ssmctb: SsmctbSection = field(default_factory=SsmctbSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    grad_check: GradCheckSection = field(default_factory=GradCheckSection)

    # -- (de)serialisation -------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        top = {f.name for f in fields(cls)}
        unknown = set(raw) - top
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for k, v in raw.items():
            if k in _SECTIONS:
                kw[k] = _section(k, _SECTIONS[k], v)
            else:
                kw[k] = v
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ssmctb"]["lambda"] = d["ssmctb"].pop("lam")
        return d

    def dump(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def updated(self, **overrides) -> "RunConfig":
        """Copy with dotted-path overrides, e.g. ``updated(**{"train.epochs": 2})``."""
        d = self.to_dict()
        for path, v in overrides.items():
            if v is None:
                continue
            node = d
            *parents, leaf = path.split(".")
            for p in parents:
                node = node[p]
            if leaf not in node:
                raise ConfigError(f"unknown config key {path!r}")
            node[leaf] = v
        return RunConfig.from_dict(d)

    # -- derived component configs -------------------------------------------

    def validate(self) -> None:
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        if self.video.mode not in ("stack", "volume"):
            raise ConfigError(f"video.mode must be 'stack' or 'volume', got {self.video.mode!r}")
        if self.video.clip_length < 1 or self.video.clip_stride < 1:
            raise ConfigError("clip_length and clip_stride must be positive")
        if self.grad_check.target not in ("block", "autoencoder"):
            raise ConfigError("grad_check.target must be 'block' or 'autoencoder'")
        try:
            self.ssmctb_config(2)
            self.train_config()
            self.position
        except ValueError as e:
            raise ConfigError(str(e)) from None

    @property
    def position(self) -> int | None:
        p = self.autoencoder.ssmctb_position
        if p is None or (isinstance(p, str) and p.lower() == "none"):
            return None
        if isinstance(p, bool) or not isinstance(p, int) or not 1 <= p <= 4:
            raise ConfigError(f"ssmctb_position must be 1..4 or 'none', got {p!r}")
        return p

    def ssmctb_config(self, dims: int, channels: int = 1) -> SsmctbConfig:
        s = self.ssmctb
        return SsmctbConfig(
            conv=MaskedConvConfig(dims, channels, s.sub_kernel_size, s.dilation),
            transformer=TransformerConfig(s.token_dim, s.heads, s.blocks, tuple(s.pooled), s.mlp_hidden),
            lam=s.lam,
        )

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(t.epochs, t.batch_size, t.learning_rate, t.beta1, t.beta2, t.epsilon,
                           lam=self.ssmctb.lam, seed=self.seed)

    def autoencoder_config(self, input_shape: tuple[int, ...]) -> AutoencoderConfig:
        dims = len(input_shape) - 1
        try:
            return AutoencoderConfig(
                input_shape=tuple(input_shape),
                encoder_widths=tuple(self.autoencoder.encoder_widths),
                decoder_widths=tuple(self.autoencoder.decoder_widths),
                ssmctb_position=self.position,
                ssmctb=self.ssmctb_config(dims),
            )
        except ValueError as e:
            raise ConfigError(str(e)) from None


def _section(name: str, cls, raw) -> object:
    if not isinstance(raw, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    names = {f.name for f in fields(cls)}
    kw = {}
    for k, v in raw.items():
        attr = _RENAME.get(k, k)
        if attr not in names or (attr != k and name != "ssmctb"):
            raise ConfigError(f"unknown config key {name}.{k}")
        kw[attr] = v
    return cls(**kw)


def default_preset() -> RunConfig:
    """The chosen configuration: d=3, k'=1, d_t=64, H=4, L=2, lambda=0.1, penultimate placement."""
    return RunConfig()


def with_replaced(cfg: RunConfig, section: str, **kw) -> RunConfig:
    return replace(cfg, **{section: replace(getattr(cfg, section), **kw)})
