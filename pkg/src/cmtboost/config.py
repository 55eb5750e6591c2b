"""Line-oriented run configuration.

Each non-blank line is ``section.key = value``; ``#`` starts a comment.
Lists use ``[a, b, c]``. Sections are ``model``, ``train``, ``data`` and
``eval``. ``model.profile`` selects the base model profile and is applied
before every other model key, whatever its position in the file.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .data import AugmentationSpec
from .model import ConfigError, ModelConfig, profile
from .train import TrainConfig


@dataclass
class DataConfig:
    root: str = ""
    synthetic: bool = False
    synthetic_count: int = 32
    synthetic_size: int = 64
    synthetic_noise: float = 0.25
    split: list = field(default_factory=lambda: [0.7, 0.1, 0.2])
    seed: int = 0
    permissive: bool = False
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5
    scale_range: list = field(default_factory=lambda: [0.9, 1.1])
    shear_range: list = field(default_factory=lambda: [-10.0, 10.0])

    def validate(self) -> "DataConfig":
        if len(self.split) != 3 or min(self.split) < 0 or abs(sum(self.split) - 1) > 1e-9:
            raise ConfigError("data.split must be three non-negative fractions summing to 1")
        if self.synthetic_count < 1:
            raise ConfigError("data.synthetic_count must be >= 1")
        if self.synthetic_size < 2:
            raise ConfigError("data.synthetic_size must be >= 2")
        for key in ("hflip_prob", "vflip_prob"):
            if not 0 <= getattr(self, key) <= 1:
                raise ConfigError(f"data.{key} must be in [0, 1]")
        for key in ("scale_range", "shear_range"):
            lo_hi = getattr(self, key)
            if len(lo_hi) != 2 or lo_hi[0] > lo_hi[1]:
                raise ConfigError(f"data.{key} must be [low, high] with low <= high")
        if self.scale_range[0] <= 0:
            raise ConfigError("data.scale_range must be positive")
        return self

    def augmentation(self, seed: int) -> AugmentationSpec:
        return AugmentationSpec(self.hflip_prob, self.vflip_prob, tuple(self.scale_range),
                                tuple(self.shear_range), seed)


@dataclass
class EvalConfig:
    batch_size: int = 32
    pca_components: int = 2
    figures: bool = True

    def validate(self) -> "EvalConfig":
        if self.batch_size < 1:
            raise ConfigError("eval.batch_size must be >= 1")
        if self.pca_components < 1:
            raise ConfigError("eval.pca_components must be >= 1")
        return self


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=lambda: profile("desk64"))
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    profile: str = "desk64"
    command: str = ""
    config_path: Optional[str] = None
    overrides: list = field(default_factory=list)
    out_dir: str = "out"
    f64: bool = False

    def set_seed(self, seed: int) -> None:
        self.model.seed = self.train.seed = self.data.seed = seed

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.train.validate()
        self.data.validate()
        self.eval.validate()
        self.train.seed = self.data.seed
        self.train.augmentation = self.data.augmentation(self.train.seed)
        return self

    def echo(self) -> str:
        """Fully resolved configuration in the input syntax; parsing it back
        reproduces this configuration."""
        lines = [f"model.profile = {self.profile}"]
        for section in SECTIONS:
            obj = getattr(self, section)
            for key in _keys(obj):
                lines.append(f"{section}.{key} = {format_value(getattr(obj, key))}")
        return "\n".join(lines) + "\n"


SECTIONS = ("model", "train", "data", "eval")
_SKIP = {"train": {"augmentation", "seed"}, "data": set(), "model": set(), "eval": set()}


def _keys(obj) -> list[str]:
    section = {ModelConfig: "model", TrainConfig: "train", DataConfig: "data",
               EvalConfig: "eval"}[type(obj)]
    return [f.name for f in dataclasses.fields(obj) if f.name not in _SKIP[section]]


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(format_value(x) for x in v) + "]"
    return repr(v) if isinstance(v, float) else str(v)


def _scalar(text: str, like, key: str):
    text = text.strip()
    try:
        if isinstance(like, bool):
            low = text.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(text)
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected {type(like).__name__}, got {text!r}") from None
    return text


def parse_value(text: str, current, key: str):
    """Parse ``text`` into the type of ``current`` (the field's default)."""
    text = text.strip()
    if isinstance(current, list):
        if not (text.startswith("[") and text.endswith("]")):
            raise ConfigError(f"{key}: expected a list like [a, b], got {text!r}")
        body = text[1:-1].strip()
        items = [s for s in body.split(",")] if body else []
        like = current[0] if current else 0.0
        if isinstance(like, int) and not isinstance(like, bool):
            return [_scalar(s, 0, key) for s in items]
        return [_scalar(s, 0.0, key) for s in items]
    return _scalar(text, current, key)


def parse_assignments(lines: Sequence[str], origin: str) -> list[tuple[str, str, str]]:
    """``(key, value, location)`` triples from config-file lines."""
    out = []
    for n, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{n}: expected 'section.key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out.append((key, value, f"{origin}:{n}"))
    return out


def apply_assignment(cfg: RunConfig, key: str, value: str, where: str = "") -> None:
    if "." not in key:
        raise ConfigError(f"{key}: unknown key (expected section.key){' at ' + where if where else ''}")
    section, name = key.split(".", 1)
    if section not in SECTIONS:
        raise ConfigError(f"{key}: unknown section {section!r} (known: {', '.join(SECTIONS)})")
    obj = getattr(cfg, section)
    if name not in _keys(obj):
        raise ConfigError(f"{key}: unknown key")
    setattr(obj, name, parse_value(value, getattr(obj, name), key))


def parse_config(path: Optional[str] = None, overrides: Sequence[str] = (),
                 **run_fields) -> RunConfig:
    """Resolve defaults, then the file, then ``key=value`` overrides."""
    assignments = []
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {path} does not exist")
        assignments += parse_assignments(p.read_text(encoding="utf-8").splitlines(), str(p))
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} must look like section.key=value")
        k, v = (s.strip() for s in ov.split("=", 1))
        assignments.append((k, v, "--set"))
    prof = "desk64"
    for k, v, _ in assignments:
        if k == "model.profile":
            prof = v
    cfg = RunConfig(model=profile(prof), profile=prof, config_path=path,
                    overrides=list(overrides), **run_fields)
    for k, v, where in assignments:
        if k != "model.profile":
            apply_assignment(cfg, k, v, where)
    return cfg
