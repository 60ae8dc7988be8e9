"""Model and run configuration, persisted with every artifact."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

LOSS_WEIGHTS = {"cls": 5.0, "box": 5.0, "mask": 2.0, "span": 10.0, "rel": 5.0}


@dataclass
class ModelConfig:
    """Architecture and loss hyperparameters.

    The loss weights default to (cls, box, mask, span, rel) = (5, 5, 2, 10, 5);
    setting a weight to 0 disables that term (ablations).
    """

    num_scales: int = 3
    embed_dim: int = 64            # shared channel width for text and projected visuals
    num_heads: int = 1
    num_queries: int = 5
    vocab_size: int = 32
    mask_channels: int = 8         # fused mask-feature channels fed to dynamic conv
    fpn_channels: int = 32
    dynamic_layers: int = 3
    controller_hidden: int = 64
    head_hidden: int = 64
    srd_blocks: int = 2
    temporal_blocks: int = 1
    ffn_dim: int = 128
    layer_norm_eps: float = 1e-5
    per_scale_attention: bool = True   # distinct enhancement weights per pyramid scale
    coupled_srd: bool = False
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    sigma_frac: float = 0.05
    sigma_min: float = 1.0
    w_cls: float = 5.0
    w_box: float = 5.0
    w_mask: float = 2.0
    w_span: float = 10.0
    w_rel: float = 5.0

    def validate(self):
        if self.num_scales < 1:
            raise ConfigError("num_scales must be >= 1")
        if self.embed_dim % max(self.num_heads, 1) != 0:
            raise ConfigError("embed_dim must be divisible by num_heads")
        if self.num_queries < 1:
            raise ConfigError("num_queries must be >= 1")
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be >= 1")
        if self.dynamic_layers < 1:
            raise ConfigError("dynamic_layers must be >= 1")
        if not 0 < self.sigma_frac:
            raise ConfigError("sigma_frac must be positive")
        return self

    def loss_weights(self):
        return (self.w_cls, self.w_box, self.w_mask, self.w_span, self.w_rel)


@dataclass
class RunConfig:
    """Everything a training / inference run needs to be reproduced."""

    seed: int = 0
    steps: int = 500
    learning_rate: float = 1e-4
    decay_fraction: float = 0.6    # lr multiplied by 0.1 after this fraction of steps
    t_train: int = 24
    precision: str = "f32"         # f32 for training, f64 for reproducibility checks
    span_enabled: bool = True
    rel_enabled: bool = True
    dataset: str = ""
    out_dir: str = ""
    log_every: int = 50
    eval_every: int = 0            # 0 disables periodic train-set eval
    target_jf: float = 0.0         # early stop once train-set J&F reaches this (0 = off)
    target_tiou: float = 0.0       # paired with target_jf for the stop rule
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self):
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.t_train < 1:
            raise ConfigError("t_train must be >= 1")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if not 0 < self.decay_fraction <= 1:
            raise ConfigError("decay_fraction must be in (0, 1]")
        self.model.validate()
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        model_data = data.pop("model", {})
        known_run = {f.name for f in fields(cls)}
        known_model = {f.name for f in fields(ModelConfig)}
        bad = (set(data) - known_run) | (set(model_data) - known_model)
        if bad:
            raise ConfigError(f"unknown config keys: {sorted(bad)}")
        cfg = cls(**data)
        cfg.model = ModelConfig(**model_data)
        return cfg.validate()

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.from_dict(data)
