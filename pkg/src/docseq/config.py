"""Run configuration: one JSON file with a section per component."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from .codec import DEFAULT_T_MAX, Vocabulary, build_vocab
from .corpus import SynthConfig
from .document import MAX_ELEMENTS, PUBLAYNET_NAMES
from .errors import ConfigError
from .net import ModelConfig
from .sample import SampleConfig
from .train import TrainConfig

_MODEL_KEYS = ("context_length", "d_model", "n_layers", "n_heads", "d_ff", "dropout", "dtype")


@dataclass(frozen=True)
class RunConfig:
    categories: tuple = PUBLAYNET_NAMES
    non_textual: tuple = ("figure",)
    styles: tuple = ()
    style_enabled: bool = False
    t_max: int = DEFAULT_T_MAX
    max_elements: int = MAX_ELEMENTS
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    sample: dict = field(default_factory=lambda: {"temperature": 0.0})
    synth: dict = field(default_factory=dict)

    def vocab(self) -> Vocabulary:
        return build_vocab(self.categories, self.styles, self.style_enabled,
                           non_textual=self.non_textual, t_max=self.t_max)

    def model_config(self) -> ModelConfig:
        extra = set(self.model) - set(_MODEL_KEYS)
        if extra:
            raise ConfigError(f"unknown model settings: {sorted(extra)}")
        return ModelConfig(self.vocab().size, **self.model)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train)

    def sample_config(self) -> SampleConfig:
        return SampleConfig(**self.sample)

    def synth_config(self) -> SynthConfig:
        return SynthConfig.from_dict(self.synth)

    def to_dict(self) -> dict:
        return {
            "categories": list(self.categories),
            "non_textual": list(self.non_textual),
            "styles": list(self.styles),
            "style_enabled": self.style_enabled,
            "t_max": self.t_max,
            "max_elements": self.max_elements,
            "model": dict(self.model),
            "train": dict(self.train),
            "sample": dict(self.sample),
            "synth": dict(self.synth),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        d = dict(d)
        for k in ("categories", "non_textual", "styles"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def with_section(self, section: str, **overrides) -> "RunConfig":
        merged = dict(getattr(self, section))
        merged.update({k: v for k, v in overrides.items() if v is not None})
        return replace(self, **{section: merged})


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = RunConfig.from_dict(data)
        # fail early on bad sections
        cfg.model_config()
        cfg.train_config()
        cfg.sample_config()
        cfg.synth_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc
    return cfg
