"""Run configuration: nested sections, JSON files, dotted-path overrides,
and desk-scale presets. Defaults follow the published training recipe where
one exists; desk presets only shrink sizes (epochs, widths, batch), never the
ratios or loss settings."""

import copy
import json
from dataclasses import asdict, dataclass, field

from .errors import ConfigurationError

METHODS = ("plrd", "kmeans", "deepaligned", "e2e")
K_MODES = ("ground_truth", "estimate_self", "estimate_ind_frozen")


@dataclass
class DataConfig:
    source: str = "generate"  # or "file"
    path: str = None
    num_classes: int = 20
    dim: int = 16
    train_per_class: int = 30
    val_per_class: int = 10
    test_per_class: int = 20
    class_separation: float = 4.0
    within_class_std: float = 1.0


@dataclass
class SplitConfig:
    ood_ratio: float = 0.6
    num_stages: int = 3


@dataclass
class ModelConfig:
    hidden: list = field(default_factory=lambda: [64, 64])
    feature_dim: int = 32
    proj_dim: int = 16
    activation: str = "tanh"
    dropout: float = 0.5
    freeze_layers: list = field(default_factory=list)


@dataclass
class OptimConfig:
    peak_lr: float = 0.01
    ood_peak_lr: float = None  # discovery-stage rate; None falls back to peak_lr
    momentum: float = 0.9
    weight_decay: float = 1.5e-4
    warmup_ratio: float = 0.1


@dataclass
class TrainConfig:
    ind_epochs: int = 200
    ood_epochs: int = 200
    batch_size: int = 128


@dataclass
class PlrdConfig:
    tau: float = 0.5
    gamma: float = None  # default by ratio: 0.7 up to 60%, 0.9 above
    sk_epsilon: float = 0.05
    sk_iterations: int = 3
    ce_weight: float = 1.0
    pcl_weight: float = 1.0
    ins_weight: float = 1.0
    fd_weight: float = 1.0


@dataclass
class BaselinesConfig:
    replay_lambda: float = 3.0  # pipeline methods
    e2e_replay_lambda: float = 1.0
    e2e_ce_temperature: float = 0.1
    align_rounds: int = 5
    kmeans_max_iters: int = 100
    pipeline_peak_lr: float = 0.05
    e2e_peak_lr: float = 0.1


@dataclass
class MemoryConfig:
    capacity: int = 5
    strategy: str = "random"


@dataclass
class KConfig:
    mode: str = "ground_truth"
    k_prime: int = None  # None -> twice the stage's true class count


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    plrd: PlrdConfig = field(default_factory=PlrdConfig)
    baselines: BaselinesConfig = field(default_factory=BaselinesConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    k: KConfig = field(default_factory=KConfig)
    method: str = "plrd"
    seeds: list = field(default_factory=lambda: [0])
    align_per_block: bool = False

    def gamma(self):
        if self.plrd.gamma is not None:
            return self.plrd.gamma
        return 0.7 if self.split.ood_ratio <= 0.6 else 0.9

    def to_dict(self):
        return asdict(self)

    def validate(self):
        if self.method not in METHODS:
            raise ConfigurationError(
                f"method: must be one of {METHODS}, got {self.method!r}"
            )
        if self.k.mode not in K_MODES:
            raise ConfigurationError(
                f"k.mode: must be one of {K_MODES}, got {self.k.mode!r}"
            )
        if not self.seeds:
            raise ConfigurationError("seeds: need at least one seed")
        if self.memory.capacity < 0:
            raise ConfigurationError("memory.capacity: must be >= 0")
        if self.data.source not in ("generate", "file"):
            raise ConfigurationError(
                f"data.source: must be generate|file, got {self.data.source!r}"
            )
        if self.data.source == "file" and not self.data.path:
            raise ConfigurationError("data.path: required when source=file")
        if self.train.batch_size < 1:
            raise ConfigurationError("train.batch_size: must be >= 1")
        return self


_SECTIONS = {
    "data": DataConfig, "split": SplitConfig, "model": ModelConfig,
    "optim": OptimConfig, "train": TrainConfig, "plrd": PlrdConfig,
    "baselines": BaselinesConfig, "memory": MemoryConfig, "k": KConfig,
}


def config_from_dict(raw):
    """Build a RunConfig from nested dicts, rejecting unknown keys."""
    raw = copy.deepcopy(raw)
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = raw.pop(name, {})
        if not isinstance(section, dict):
            raise ConfigurationError(f"{name}: expected a section/object")
        valid = {f for f in cls.__dataclass_fields__}
        unknown = set(section) - valid
        if unknown:
            raise ConfigurationError(
                f"{name}.{sorted(unknown)[0]}: unknown field"
            )
        kwargs[name] = cls(**section)
    for scalar in ("method", "seeds", "align_per_block"):
        if scalar in raw:
            kwargs[scalar] = raw.pop(scalar)
    if raw:
        raise ConfigurationError(f"{sorted(raw)[0]}: unknown field")
    return RunConfig(**kwargs).validate()


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(raw)


def _coerce(text, like):
    if isinstance(like, bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ConfigurationError(f"cannot parse boolean from {text!r}")
    if isinstance(like, int) and not isinstance(like, bool):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, list):
        return json.loads(text)
    return text


def apply_overrides(config, overrides):
    """Apply ``section.field=value`` strings on top of a RunConfig."""
    raw = config.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not KEY=VALUE")
        dotted, text = item.split("=", 1)
        parts = dotted.split(".")
        node = raw
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigurationError(f"{dotted}: unknown field")
            node = node[part]
        leaf = parts[-1]
        if leaf not in node:
            raise ConfigurationError(f"{dotted}: unknown field")
        current = node[leaf]
        if isinstance(current, dict):
            raise ConfigurationError(f"{dotted}: cannot assign to a section")
        try:
            node[leaf] = _coerce(text, current) if current is not None \
                else json.loads(text) if text and text[0] in "[{" else _auto(text)
        except (ValueError, json.JSONDecodeError):
            raise ConfigurationError(
                f"{dotted}: cannot parse {text!r}"
            ) from None
    return config_from_dict(raw)


def _auto(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    if text.lower() in ("null", "none"):
        return None
    return text


def preset(name):
    """Named desk-scale presets."""
    if name == "desk-banking-like":
        # 20 classes at 60% OOD over 3 stages, 3 seeds
        raw = {
            "data": {"num_classes": 20, "dim": 16, "train_per_class": 30,
                     "val_per_class": 10, "test_per_class": 20,
                     "class_separation": 4.0, "within_class_std": 1.0},
            "split": {"ood_ratio": 0.6, "num_stages": 3},
            "model": {"hidden": [64, 64], "feature_dim": 32, "proj_dim": 16},
            "train": {"ind_epochs": 40, "ood_epochs": 30, "batch_size": 32},
            "memory": {"capacity": 5},
            "seeds": [0, 1, 2],
        }
    elif name == "desk-smoke":
        raw = {
            "data": {"num_classes": 8, "dim": 8, "train_per_class": 12,
                     "val_per_class": 4, "test_per_class": 8,
                     "class_separation": 6.0},
            "split": {"ood_ratio": 0.5, "num_stages": 2},
            "model": {"hidden": [16], "feature_dim": 12, "proj_dim": 8},
            "train": {"ind_epochs": 8, "ood_epochs": 5, "batch_size": 16},
            "memory": {"capacity": 3},
            "seeds": [0],
        }
    else:
        raise ConfigurationError(f"unknown preset {name!r}")
    return config_from_dict(raw)
