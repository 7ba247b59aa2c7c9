"""Versioned run configuration (JSON) and its content hash."""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .model.config import ModelConfig
from .world.scenario import WorldConfig

CONFIG_VERSION = 1


@dataclass(frozen=True)
class DataConfig:
    seed: int = 0
    num_train: int = 200
    num_test: int = 50
    test_seed_offset: int = 1_000_000
    empty_pose_fraction: float = 0.0  # share of training clips from the empty-pose generator
    test_kind: str = "random"  # random | empty_pose | truncation

    def validate(self):
        if self.num_train < 1 or self.num_test < 0:
            raise ConfigError("num_train must be >= 1 and num_test >= 0")
        if not 0.0 <= self.empty_pose_fraction <= 1.0:
            raise ConfigError("empty_pose_fraction must lie in [0, 1]")
        if self.test_kind not in ("random", "empty_pose", "truncation"):
            raise ConfigError(f"unknown test_kind {self.test_kind!r}")
        return self


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 4
    lr: float = 2e-3
    warmup: int = 50
    betas: tuple = (0.9, 0.95)
    grad_clip: float = 1.0
    seed: int = 0
    log_interval: int = 10
    checkpoint_interval: int = 500

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))

    def validate(self):
        if self.steps < 0 or self.batch_size < 1 or self.log_interval < 1:
            raise ConfigError("steps >= 0, batch_size >= 1 and log_interval >= 1 required")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        return self


@dataclass(frozen=True)
class SampleConfig:
    sample_steps: int = 10
    seed: int = 0
    split: int = None

    def validate(self):
        if self.sample_steps < 1:
            raise ConfigError("sample_steps must be >= 1")
        if self.split is not None and (self.split < 4 or self.split % 4):
            raise ConfigError("split must be a positive multiple of 4")
        return self


@dataclass(frozen=True)
class PathConfig:
    data: str = None
    test_data: str = None


def desk_model():
    """Default network for the toy world: overlapping temporal tokens, small K."""
    return ModelConfig(tokenizer_stride=(1, 4, 4), top_k=3)


SECTIONS = {
    "model": ModelConfig,
    "world": WorldConfig,
    "data": DataConfig,
    "train": TrainConfig,
    "eval": SampleConfig,
    "paths": PathConfig,
}


def _section_from_dict(cls, d, name):
    if not isinstance(d, dict):
        raise ConfigError(f"section {name!r} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    d = dict(d)
    if cls is WorldConfig and "speed_range" in d:
        d["speed_range"] = tuple(d["speed_range"])
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"section {name!r}: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=desk_model)
    world: WorldConfig = field(default_factory=WorldConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: SampleConfig = field(default_factory=SampleConfig)
    paths: PathConfig = field(default_factory=PathConfig)
    version: int = CONFIG_VERSION

    def validate(self):
        self.model.validate()
        self.world.validate()
        self.data.validate()
        self.train.validate()
        self.eval.validate()
        return self

    def to_dict(self):
        d = {name: asdict(getattr(self, name)) for name in SECTIONS}
        d["version"] = self.version
        return d

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - set(SECTIONS) - {"version"}
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        version = d.get("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"config version {version} unsupported (expected {CONFIG_VERSION})")
        kw = {}
        for name, sec in SECTIONS.items():
            if name in d:
                base = asdict(getattr(cls(), name))
                base.update(d[name])
                kw[name] = _section_from_dict(sec, base, name)
        return cls(version=version, **kw).validate()

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def hash(self):
        """Content hash of everything except paths."""
        d = self.to_dict()
        d.pop("paths")
        return _digest(d)

    def world_hash(self):
        """Hash of the generator settings a dataset depends on."""
        return _digest({"world": asdict(self.world), "version": self.version})

    def update(self, section, **changes):
        return replace(self, **{section: replace(getattr(self, section), **changes)}).validate()


def _digest(obj):
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def load_config(path):
    if path is None:
        return RunConfig().validate()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"reading config {path}: {exc}") from exc
    try:
        return RunConfig.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def save_config(config, path):
    Path(path).write_text(config.to_json())
