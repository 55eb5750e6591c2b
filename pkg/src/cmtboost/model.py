"""Configuration-driven assembly of RBCMT / CB-Res-RBCMT."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ops
from .blocks import (ClassifierHead, CMTBlock, PixelAttention, RBBlock, ResidualBranch,
                     StemBlock, channel_boost)
from .nn import Module, init_params
from .tensor import DimensionError, Tensor

NUM_STAGES = 4


class ConfigError(ValueError):
    """A model/train/run configuration violates a documented rule."""


@dataclass
class ModelConfig:
    input_channels: int = 1
    input_height: int = 64
    input_width: int = 64
    base_width: int = 16
    stage_depths: list = field(default_factory=lambda: [1, 1, 2, 1])
    heads: list = field(default_factory=lambda: [1, 2, 4, 8])
    kv_reduction: list = field(default_factory=lambda: [8, 4, 2, 1])
    irffn_ratio: int = 4
    dropout: float = 0.3
    residual_enabled: bool = True
    residual_channels: list = field(default_factory=lambda: [16, 32, 48, 64])
    pa_ratio: int = 8
    pa_residual_add: bool = False
    head_hidden: int = 256
    classes: int = 2
    seed: int = 0

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.input_channels, self.input_height, self.input_width)

    def stage_widths(self) -> list[int]:
        return [self.base_width * 2 ** i for i in range(NUM_STAGES)]

    def validate(self) -> "ModelConfig":
        for key in ("stage_depths", "heads", "kv_reduction", "residual_channels"):
            if len(getattr(self, key)) != NUM_STAGES:
                raise ConfigError(f"model.{key} must have {NUM_STAGES} entries")
        if self.base_width < 1 or self.input_channels < 1:
            raise ConfigError("model.base_width and model.input_channels must be >= 1")
        for i, (w, h) in enumerate(zip(self.stage_widths(), self.heads)):
            if h < 1 or w % h:
                raise ConfigError(
                    f"model.heads: stage {i + 1} width {w} is not divisible by {h} heads")
        if any(d < 0 for d in self.stage_depths):
            raise ConfigError("model.stage_depths entries must be >= 0")
        if any(r < 1 for r in self.kv_reduction):
            raise ConfigError("model.kv_reduction entries must be >= 1")
        m = 2 ** (NUM_STAGES + 1)
        if self.input_height % m or self.input_width % m or min(self.input_height, self.input_width) < m:
            raise ConfigError(
                f"model.input_height/input_width must be positive multiples of {m} "
                f"(got {self.input_height}x{self.input_width})")
        if self.irffn_ratio < 1:
            raise ConfigError("model.irffn_ratio must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ConfigError("model.dropout must be in [0, 1)")
        if any(c < 1 for c in self.residual_channels):
            raise ConfigError("model.residual_channels entries must be >= 1")
        if self.pa_ratio < 1:
            raise ConfigError("model.pa_ratio must be >= 1")
        if self.head_hidden < 1 or self.classes < 2:
            raise ConfigError("model.head_hidden must be >= 1 and model.classes >= 2")
        return self


PROFILES = {
    "desk64": ModelConfig(),
    "paper224": ModelConfig(input_channels=3, input_height=224, input_width=224, base_width=64,
                            residual_channels=[64, 128, 192, 256]),
}


def profile(name: str) -> ModelConfig:
    try:
        return dataclasses.replace(PROFILES[name])
    except KeyError:
        raise ConfigError(f"unknown model profile {name!r} (known: {', '.join(PROFILES)})") from None


class Stage(Module):
    def __init__(self, width: int, depth: int, heads: int, reduction: int, grid, ratio: int):
        super().__init__()
        self.depth = depth
        for i in range(depth):
            setattr(self, f"block{i}", CMTBlock(width, heads, reduction, grid, ratio))
        self.rb = RBBlock(width)

    @property
    def blocks(self) -> list[CMTBlock]:
        return [getattr(self, f"block{i}") for i in range(self.depth)]

    def forward(self, c: Tensor) -> Tensor:
        for block in self.blocks:
            c = block(c)
        return self.rb(c)


class CBResRBCMTModel(Module):
    """Two-stream classifier: stem + four CMT/RB stages, an optional residual CNN
    branch channel-concatenated at the end, pixel attention and the FC head."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        widths = cfg.stage_widths()
        self.stem = StemBlock(cfg.input_channels, cfg.base_width)
        shape = self.stem.out_shape(cfg.input_shape)
        for i in range(NUM_STAGES):
            stage = Stage(widths[i], cfg.stage_depths[i], cfg.heads[i], cfg.kv_reduction[i],
                          shape[1:], cfg.irffn_ratio)
            setattr(self, f"stage{i + 1}", stage)
            shape = stage.rb.out_shape(shape)
        boosted = shape[0]
        if cfg.residual_enabled:
            self.res = ResidualBranch(cfg.input_channels, cfg.base_width, cfg.residual_channels)
            res_shape = self.res.out_shape(cfg.input_shape)
            if res_shape[1:] != shape[1:]:
                raise ConfigError(f"residual branch output {res_shape} not aligned with {shape}")
            boosted += res_shape[0]
        self.boosted_channels = boosted
        self.pa = PixelAttention(boosted, cfg.pa_ratio, cfg.pa_residual_add)
        self.head = ClassifierHead(boosted, cfg.head_hidden, cfg.classes, cfg.dropout)

    @property
    def stages(self) -> list[Stage]:
        return [getattr(self, f"stage{i + 1}") for i in range(NUM_STAGES)]

    def _check_input(self, x: Tensor) -> None:
        if tuple(x.shape[1:]) != self.cfg.input_shape:
            raise DimensionError(f"model expects [N, {self.cfg.input_shape}], got {x.shape}")

    def boosted_features(self, x: Tensor) -> Tensor:
        self._check_input(x)
        c = self.stem(x)
        for stage in self.stages:
            c = stage(c)
        if self.cfg.residual_enabled:
            c = channel_boost(c, self.res(x))
        return self.pa(c)

    def logits(self, x: Tensor, training: bool = False, seed: int = 0) -> tuple[Tensor, Tensor]:
        """Pre-softmax class scores and hidden FC activations."""
        return self.head.logits(self.boosted_features(x), training, seed)

    def forward(self, x: Tensor, training: bool = False, seed: int = 0,
                return_features: bool = False):
        scores, hidden = self.logits(x, training, seed)
        probs = ops.softmax(scores, axis=1)
        return (probs, hidden) if return_features else probs

    def named_parameter_dict(self) -> dict:
        return dict(self.named_parameters())


def build_model(cfg: Optional[ModelConfig] = None, dtype=np.float32) -> CBResRBCMTModel:
    cfg = (cfg or ModelConfig()).validate()
    model = CBResRBCMTModel(cfg)
    model.astype(dtype)
    init_params(model, cfg.seed)
    return model


def forward(model: CBResRBCMTModel, batch: Tensor, training: bool = False, seed: int = 0,
            return_features: bool = False):
    return model(batch, training=training, seed=seed, return_features=return_features)


def _count(module: Optional[Module]) -> int:
    return 0 if module is None else module.num_parameters()


def shape_trace(model: CBResRBCMTModel) -> list[tuple[str, tuple, int]]:
    """Static ``(layer, per-sample output shape, parameter count)`` rows.

    Per-layer counts partition the full parameter registry.
    """
    cfg = model.cfg
    rows = []
    shape = model.stem.out_shape(cfg.input_shape)
    rows.append(("stem", shape, _count(model.stem)))
    for i, stage in enumerate(model.stages, start=1):
        for j, block in enumerate(stage.blocks):
            rows.append((f"stage{i}.block{j}", block.out_shape(shape), _count(block)))
        shape = stage.rb.out_shape(shape)
        rows.append((f"stage{i}.rb", shape, _count(stage.rb)))
    boosted = (shape[0],) + shape[1:]
    if cfg.residual_enabled:
        res = model.res
        _, H, W = cfg.input_shape
        rshape = (res.width, (H - 1) // 2 + 1, (W - 1) // 2 + 1)
        rows.append(("res.stem", rshape, res.stem_w.size + res.stem_b.size))
        for j, block in enumerate(res.blocks):
            rshape = block.out_shape(rshape)
            rows.append((f"res.block{j}", rshape, _count(block)))
        boosted = (shape[0] + rshape[0],) + shape[1:]
    rows.append(("boost", boosted, 0))
    rows.append(("pa", model.pa.out_shape(boosted), _count(model.pa)))
    head = model.head
    rows.append(("head.gap", (boosted[0],), 0))
    rows.append(("head.hidden", (head.hidden_size,), head.fc1_w.size + head.fc1_b.size))
    rows.append(("head.out", (head.classes,), head.fc2_w.size + head.fc2_b.size))
    return rows


def format_shape(shape: tuple) -> str:
    return "x".join(str(s) for s in shape)
