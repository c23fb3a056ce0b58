"""PlantViT assembly, prediction and parameter accounting."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .blocks import (CBAM, ClassifierHead, DepthConvBlock, EncoderBlock, GroupConvBlock,
                     Module, PatchEmbedding)
from .errors import ConfigError

# fields that fix the parameter layout; seed and dropout rates do not
ARCH_FIELDS = ("input_size", "in_channels", "stem_channels", "stage_formation", "stage_channels",
               "patch_size", "embed_dim", "ffn_dim", "encoder_blocks", "cbam_enabled",
               "cbam_reduction", "num_classes")


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    The default backbone runs its last stage at 256 channels so the feature
    map entering patch embedding is ``(H/8, W/8, 8 * stem_channels)``.
    """

    input_size: int = 224
    in_channels: int = 3
    stem_channels: int = 32
    stage_formation: tuple = (1, 2, 4)
    stage_channels: tuple = (32, 128, 256)
    patch_size: int = 2
    embed_dim: int = 256
    ffn_dim: int = 512
    encoder_blocks: int = 1
    encoder_dropout: float = 0.30
    classifier_dropout: float = 0.20
    cbam_enabled: bool = True
    cbam_reduction: int = 8
    num_classes: int = 38
    seed: int = 0

    def __post_init__(self):
        self.stage_formation = tuple(int(v) for v in self.stage_formation)
        self.stage_channels = tuple(int(v) for v in self.stage_channels)

    @property
    def feature_size(self) -> int:
        return self.input_size // 8

    @property
    def num_tokens(self) -> int:
        return (self.feature_size // self.patch_size) ** 2

    def validate(self) -> "ModelConfig":
        def fail(name, msg):
            raise ConfigError(f"ModelConfig.{name}: {msg}")

        for name in ("input_size", "in_channels", "stem_channels", "patch_size", "embed_dim",
                     "ffn_dim", "encoder_blocks", "cbam_reduction"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                fail(name, f"must be a positive integer, got {value!r}")
        if len(self.stage_formation) != 3:
            fail("stage_formation", f"needs 3 entries, got {len(self.stage_formation)}")
        if len(self.stage_channels) != 3:
            fail("stage_channels", f"needs 3 entries, got {len(self.stage_channels)}")
        if any(v < 1 for v in self.stage_formation):
            fail("stage_formation", "repeat counts must be >= 1")
        if any(c < 2 or c % 2 for c in self.stage_channels):
            fail("stage_channels", f"all channels must be even, got {self.stage_channels}")
        if self.stage_channels[0] != self.stem_channels:
            fail("stage_channels", "first stage must run at stem_channels (identity residual)")
        if self.input_size % (8 * self.patch_size):
            fail("input_size", f"{self.input_size} not divisible by 8 * patch_size = {8 * self.patch_size}")
        if self.embed_dim < 2:
            fail("embed_dim", "must be >= 2 for layer normalization")
        if self.cbam_enabled and self.stage_channels[2] % self.cbam_reduction:
            fail("cbam_reduction", f"stage-3 channels {self.stage_channels[2]} not divisible")
        for name in ("encoder_dropout", "classifier_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                fail(name, "must be in [0, 1)")
        if not isinstance(self.num_classes, (int, np.integer)) or self.num_classes < 2:
            fail("num_classes", f"must be >= 2, got {self.num_classes!r}")
        if not isinstance(self.cbam_enabled, bool):
            fail("cbam_enabled", "must be a boolean")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["stage_formation"] = list(self.stage_formation)
        d["stage_channels"] = list(self.stage_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**d)

    def arch_hash(self) -> str:
        d = self.to_dict()
        blob = json.dumps({k: d[k] for k in ARCH_FIELDS}, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


class PlantViT(Module):
    """Stem -> three GroupConv stages joined by pooling DepthConvs -> CBAM ->
    patch embedding -> linear-attention encoder(s) -> classifier head."""

    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        c1, c2, c3 = config.stage_channels
        f1, f2, f3 = config.stage_formation
        self.stem = DepthConvBlock(config.in_channels, config.stem_channels, rng, stride=2)
        self.stage1 = [GroupConvBlock(c1, rng) for _ in range(f1)]
        self.pool1 = DepthConvBlock(c1, c2, rng, stride=2)
        self.stage2 = [GroupConvBlock(c2, rng) for _ in range(f2)]
        self.pool2 = DepthConvBlock(c2, c3, rng, stride=2)
        self.stage3 = [GroupConvBlock(c3, rng) for _ in range(f3)]
        self.cbam = CBAM(c3, rng, config.cbam_reduction) if config.cbam_enabled else None
        self.patch_embed = PatchEmbedding(c3, config.embed_dim, config.patch_size, config.num_tokens, rng,
                                          cbam=config.cbam_enabled, reduction=config.cbam_reduction)
        self.encoders = [EncoderBlock(config.embed_dim, config.ffn_dim, rng, config.encoder_dropout)
                         for _ in range(config.encoder_blocks)]
        self.head = ClassifierHead(config.embed_dim, config.num_classes, rng, config.classifier_dropout)

    def features(self, x: Tensor) -> Tensor:
        """Backbone output before patch embedding, ``[B, C3, H/8, W/8]``."""
        x = self.stem(x)
        for blk in self.stage1:
            x = blk(x)
        x = self.pool1(x)
        for blk in self.stage2:
            x = blk(x)
        x = self.pool2(x)
        for blk in self.stage3:
            x = blk(x)
        if self.cbam is not None:
            x = self.cbam(x)
        return x

    def forward(self, images, rng: Optional[np.random.Generator] = None) -> Tensor:
        if not isinstance(images, Tensor):
            images = Tensor(images)
        cfg = self.config
        expected = (cfg.in_channels, cfg.input_size, cfg.input_size)
        if images.ndim != 4 or images.shape[1:] != expected:
            raise ConfigError(f"expected images of shape [B, {expected[0]}, {expected[1]}, {expected[2]}], "
                              f"got {list(images.shape)}")
        x = self.patch_embed(self.features(images))
        for enc in self.encoders:
            x = enc(x, rng)
        return self.head(x, rng)


def build_model(config: Optional[ModelConfig] = None, **overrides) -> PlantViT:
    """Construct and initialize a model in training mode."""
    config = (config or ModelConfig()).replace(**overrides) if overrides else (config or ModelConfig())
    return PlantViT(config).train()


def predict(logits) -> tuple[np.ndarray, np.ndarray]:
    """Softmax probabilities and argmax classes (lowest index wins ties)."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    with ag.no_grad():
        probs = ag.softmax(Tensor(data), axis=-1).data
    return probs, np.argmax(data, axis=-1)


def count_parameters(model: PlantViT) -> tuple[int, dict]:
    """Total learnable scalars and a per-component breakdown (BN running stats excluded)."""
    breakdown: dict[str, int] = {}
    for name, p in model.named_parameters():
        top = name.split(".")[0]
        breakdown[top] = breakdown.get(top, 0) + p.size
    return sum(breakdown.values()), breakdown


def summary(model: PlantViT) -> dict:
    """Per-component output shapes and parameter counts, derived from the config."""
    cfg = model.config
    s = cfg.input_size
    c1, c2, c3 = cfg.stage_channels
    _, counts = count_parameters(model)
    shapes = {
        "stem": [cfg.stem_channels, s // 2, s // 2],
        "stage1": [c1, s // 2, s // 2],
        "pool1": [c2, s // 4, s // 4],
        "stage2": [c2, s // 4, s // 4],
        "pool2": [c3, s // 8, s // 8],
        "stage3": [c3, s // 8, s // 8],
        "cbam": [c3, s // 8, s // 8],
        "patch_embed": [cfg.num_tokens, cfg.embed_dim],
        "encoders": [cfg.num_tokens, cfg.embed_dim],
        "head": [cfg.num_classes],
    }
    rows = [{"module": name, "output_shape": shape, "params": counts.get(name, 0)}
            for name, shape in shapes.items() if name in counts]
    return {"rows": rows, "total_params": sum(counts.values()), "num_tokens": cfg.num_tokens,
            "embed_dim": cfg.embed_dim, "arch_hash": cfg.arch_hash()}
