"""JSON pipeline configuration. Every field has a default."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .embedding import p_from_reduction
from .optim import CalrConfig, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    kind: str = "dan"
    dan_hidden: tuple = (1024, 512)
    lstm_hidden: int = 168


@dataclass
class SyntheticSection:
    num_classes: int = 4
    vocab_size: int = 500
    sentences_per_class: int = 625
    sep: float = 1.0
    seed: int = 0


@dataclass
class DataSection:
    train: str | None = None
    dev: str | None = None
    test: str | None = None
    min_count: int = 1
    max_len: int | None = None     # applied to the LSTM only; None means 400
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)

    @property
    def uses_files(self) -> bool:
        return self.train is not None


@dataclass
class EmbeddingSection:
    dim: int = 64
    glove: str | None = None


@dataclass
class CompressionSection:
    p: float | None = None
    R: float | None = 0.9
    retrain_epochs: int | None = None

    @property
    def retained(self) -> float:
        if self.p is not None and self.R is not None:
            raise ConfigError("give either compression.p or compression.R, not both")
        if self.p is not None:
            return self.p
        if self.R is None:
            raise ConfigError("compression needs p or R")
        return p_from_reduction(self.R)


@dataclass
class SweepSection:
    R: tuple = (0.1, 0.3, 0.5, 0.7, 0.9)
    seeds: tuple = (0,)
    bits: tuple = (16, 8)


@dataclass
class AnalyzeSection:
    m: int = 10000
    n: int = 300
    p: tuple = (0.1, 0.2, 0.25, 0.3, 0.5, 0.7, 0.9, 1.0)
    b_s: int = 32
    b_q: int = 8
    t_s: float | None = None
    t_q: float | None = None


# desk-scale defaults for the built-in synthetic corpus; the library-level
# CalrConfig keeps the 0.001 upper bound used for full-size corpora
DESK_CALR = {"lr_lb": 0.005, "lr_ub_init": 0.5, "step_size": None, "decay": -0.05}
DESK_TRAIN = {"l2_weight": 0.005, "dropout": 0.4, "batch_size": 32, "epochs": 20,
              "schedule": "calr"}


@dataclass
class PipelineConfig:
    seed: int = 0
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    embedding: EmbeddingSection = field(default_factory=EmbeddingSection)
    train: dict = field(default_factory=lambda: dict(DESK_TRAIN))
    calr: dict = field(default_factory=lambda: dict(DESK_CALR))
    compression: CompressionSection = field(default_factory=CompressionSection)
    quantize_bits: int = 8
    sweep: SweepSection = field(default_factory=SweepSection)
    analyze: AnalyzeSection = field(default_factory=AnalyzeSection)

    def train_config(self, epochs: int | None = None) -> TrainConfig:
        kw = dict(self.train)
        if epochs is not None:
            kw["epochs"] = epochs
        return TrainConfig(seed=self.seed, **kw)

    def calr_config(self) -> CalrConfig:
        return CalrConfig(**self.calr)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _build(cls, raw, where):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kw = {}
    for name, value in raw.items():
        default = known[name].default_factory() if callable(known[name].default_factory) \
            else known[name].default
        if hasattr(default, "__dataclass_fields__"):
            kw[name] = _build(type(default), value, f"{where}.{name}")
        elif isinstance(default, tuple) and isinstance(value, list):
            kw[name] = tuple(value)
        else:
            kw[name] = value
    return cls(**kw)


def load_config(path=None, **overrides) -> PipelineConfig:
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    cfg = _build(PipelineConfig, raw, "config")
    for section in ("train", "calr"):
        merged = dict(DESK_TRAIN if section == "train" else DESK_CALR)
        merged.update(getattr(cfg, section))
        setattr(cfg, section, merged)
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    validate(cfg)
    return cfg


def validate(cfg: PipelineConfig):
    if cfg.model.kind not in ("dan", "lstm"):
        raise ConfigError(f"model.kind must be 'dan' or 'lstm', got {cfg.model.kind!r}")
    d = cfg.data
    if d.uses_files and not (d.dev and d.test):
        raise ConfigError("data.train given without data.dev and data.test")
    if cfg.quantize_bits not in (8, 16):
        raise ConfigError(f"quantize_bits must be 8 or 16, got {cfg.quantize_bits}")
    cfg.compression.retained  # raises on p/R conflicts
    try:
        cfg.train_config()
        cfg.calr_config()
    except TypeError as exc:
        raise ConfigError(f"train/calr section: {exc}") from None
