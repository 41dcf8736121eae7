"""Run configuration: dataclasses mirrored by a sectioned TOML file.

Sections: [encoder], [decoder], [loss], [optimizer], [data], [synth],
[ablation]; top-level keys ``rng_seed`` and ``n_queries``. Every field
is optional and falls back to the desk-scale defaults below.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .losses import LossWeights
from .synthdata import SynthConfig


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    steps: int = 500
    batch_size: int = 2
    grad_clip: float = 1.0
    eval_every: int = 100
    early_stop_dice: float = 0.0  # 0 disables early stopping
    early_stop_count_acc: float = 1.0

    def __post_init__(self):
        if self.kind != "adam":
            raise ConfigError(f"unsupported optimizer kind {self.kind!r}")
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be positive")


@dataclass(frozen=True)
class DataConfig:
    train_seed_base: int = 1000
    train_count: int = 8
    val_seed_base: int = 2000
    val_count: int = 4
    test_seed_base: int = 3000
    test_count: int = 4


@dataclass(frozen=True)
class AblationConfig:
    disable_pciqg_cqrd: bool = False
    disable_cnn_branch: bool = False


@dataclass(frozen=True)
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    n_queries: int = 10
    loss: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_queries < 1:
            raise ConfigError("n_queries must be >= 1")
        if tuple(self.synth.shape) != tuple(self.encoder.volume_shape):
            raise ConfigError(
                f"synth shape {self.synth.shape} != encoder volume shape {self.encoder.volume_shape}"
            )


_SECTIONS = {
    "encoder": EncoderConfig,
    "decoder": DecoderConfig,
    "loss": LossWeights,
    "optimizer": OptimizerConfig,
    "data": DataConfig,
    "synth": SynthConfig,
    "ablation": AblationConfig,
}

_TUPLE_FIELDS = {"volume_shape", "cnn_channels", "betas", "shape", "radius_range", "spacing"}


def _build_section(cls, values: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    coerced = {k: tuple(v) if k in _TUPLE_FIELDS and isinstance(v, list) else v for k, v in values.items()}
    return cls(**coerced)


def config_from_dict(data: dict) -> RunConfig:
    data = dict(data)
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = data.pop(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"section [{name}] must be a table")
        kwargs[name] = _build_section(cls, section)
    for key in ("rng_seed", "n_queries"):
        if key in data:
            kwargs[key] = int(data.pop(key))
    if data:
        raise ConfigError(f"unknown top-level config keys: {sorted(data)}")
    return RunConfig(**kwargs)


def config_to_dict(cfg: RunConfig) -> dict:
    raw = asdict(cfg)
    out = {"rng_seed": raw.pop("rng_seed"), "n_queries": raw.pop("n_queries")}
    for name in _SECTIONS:
        section = raw.pop(name)
        out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in section.items()}
    return out


def load_config(path) -> RunConfig:
    try:
        with open(Path(path), "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from err
    return config_from_dict(data)
