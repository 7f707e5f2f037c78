"""Model and training configuration."""

import dataclasses
import json
from dataclasses import dataclass

from .errors import ConfigError

VARIANTS = ("EF", "LF", "VM", "QM", "VQ")
TASKS = ("open", "mc")


@dataclass
class ModelConfig:
    variant: str = "VQ"
    task: str = "open"
    appearance_dim: int = 10
    motion_dim: int = 10
    encoder_hidden: int = 32
    encoder_layers: int = 2
    embed_dim: int = 32
    memory_dim: int = 32
    controller_dim: int = 0  # 0 means "same as memory_dim"
    attention_dim: int = 0  # 0 means "same as memory_dim"
    visual_slots: int = 8
    question_slots: int = 4
    reasoning_steps: int = 3
    vocab_size: int = 23
    num_classes: int = 10
    num_choices: int = 4
    frames: int = 8
    margin: float = 1.0
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 300
    seed: int = 0
    val_fraction: float = 0.1
    clip_norm: float = 5.0
    strict_eq: bool = False
    open_head_input: str = "s_A"  # or "s_L"
    precision: str = "float64"
    target_train_accuracy: float = 0.0  # >0 enables early stop once both targets are met
    target_val_accuracy: float = 0.0

    def __post_init__(self):
        self.validate()

    @property
    def ctrl_dim(self):
        return self.controller_dim or self.memory_dim

    @property
    def att_dim(self):
        return self.attention_dim or self.memory_dim

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.precision not in ("float64", "float32"):
            raise ConfigError(f"precision must be float64 or float32, got {self.precision!r}")
        if self.open_head_input not in ("s_A", "s_L"):
            raise ConfigError("open_head_input must be 's_A' or 's_L'")
        positive = ("appearance_dim", "motion_dim", "encoder_hidden", "encoder_layers", "embed_dim",
                    "memory_dim", "visual_slots", "question_slots", "reasoning_steps", "vocab_size",
                    "num_classes", "num_choices", "frames", "batch_size")
        for name in positive:
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.epochs < 0 or self.controller_dim < 0 or self.attention_dim < 0:
            raise ConfigError("epochs, controller_dim and attention_dim must be non-negative")
        if self.margin <= 0 or self.learning_rate < 0 or self.clip_norm <= 0:
            raise ConfigError("margin and clip_norm must be positive, learning_rate non-negative")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if self.task == "mc" and self.num_choices < 2:
            raise ConfigError("multiple-choice needs at least two candidates")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(d)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


TINY = dict(encoder_hidden=8, embed_dim=8, memory_dim=8, visual_slots=3, question_slots=2,
            reasoning_steps=2, frames=4)
