"""Run configuration: model/graph settings, training schedule, key-value config files."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from .episodes import EpisodeSpec


@dataclass
class DPGNConfig:
    n_way: int = 5
    k_shot: int = 1
    generations: int = 6
    emb_dim: int = 32
    lambda_p: float = 1.0
    lambda_d: float = 0.1
    transductive: bool = True
    labeled_ratio: float = 1.0
    backbone: str = "mlp"
    input_shape: tuple = (16,)
    hidden: int = 64
    mlp_depth: int = 2
    dropout: float = 0.1
    # "exchangeable": P2D and distribution-edge encoders treat the shots of a
    # class alike; "dense": unconstrained per-support weights
    support_tying: str = "exchangeable"
    share_generations: bool = False
    # "query" or "all"
    loss_on: str = "query"

    def __post_init__(self):
        if self.generations < 1:
            raise ValueError("at least one generation is required")
        if self.support_tying not in ("exchangeable", "dense"):
            raise ValueError(f"unknown support tying {self.support_tying!r}")
        if self.loss_on not in ("query", "all"):
            raise ValueError(f"unknown loss set {self.loss_on!r}")
        self.input_shape = tuple(int(s) for s in self.input_shape)

    @property
    def num_support(self) -> int:
        return self.n_way * self.k_shot


@dataclass
class TrainConfig:
    episodes_per_iter: int = 28
    lr: float = 1e-3
    lr_decay_every: int = 15000
    lr_decay_factor: float = 0.1
    weight_decay: float = 1e-5
    max_iters: int = 3000
    eval_every: int = 500
    eval_tasks: int = 200
    seed: int = 0
    log_every: int = 100
    # random orthogonal map per training episode (vector inputs)
    rotate_episodes: bool = True
    # horizontal flip + pad-crop (image inputs)
    augment_images: bool = False

    def __post_init__(self):
        if self.lr <= 0 or self.lr_decay_factor <= 0 or self.weight_decay < 0:
            raise ValueError("rates must be positive")
        if self.lr_decay_every < 1:
            raise ValueError("lr_decay_every must be >= 1")
        if self.episodes_per_iter < 1:
            raise ValueError("episodes_per_iter must be >= 1")


@dataclass
class DataConfig:
    """Where episodes come from: a synthetic source or a dataset root."""

    dataset: str = "clusters"  # clusters | images | <path to dataset root>
    num_classes: int = 30
    dim: int = 16
    separation: float = 6.0
    samples_per_class: int = 100
    data_seed: int = 0
    # synthetic: "train,val,test" class counts; on-disk: manifest path (default root/split.txt)
    split: str = ""
    n_query: int = 5
    balanced_queries: bool = True


@dataclass
class RunConfig:
    model: DPGNConfig = field(default_factory=DPGNConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def episode_spec(self, **overrides) -> EpisodeSpec:
        kw = dict(
            n_way=self.model.n_way,
            k_shot=self.model.k_shot,
            n_query=self.data.n_query,
            labeled_ratio=self.model.labeled_ratio,
            transductive=self.model.transductive,
            balanced_queries=self.data.balanced_queries,
        )
        kw.update(overrides)
        return EpisodeSpec(**kw)

    # key-value file format -------------------------------------------------

    def to_dict(self) -> dict[str, object]:
        out = {}
        for part in (self.model, self.train, self.data):
            out.update(dataclasses.asdict(part))
        return out

    def to_text(self) -> str:
        lines = []
        for key, value in self.to_dict().items():
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]

    def update(self, **values) -> "RunConfig":
        parts = {"model": {}, "train": {}, "data": {}}
        owners = {f.name: name for name, part in
                  (("model", self.model), ("train", self.train), ("data", self.data))
                  for f in fields(part)}
        for key, value in values.items():
            if key not in owners:
                raise KeyError(f"unknown config key {key!r}")
            parts[owners[key]][key] = value
        return RunConfig(
            model=dataclasses.replace(self.model, **parts["model"]),
            train=dataclasses.replace(self.train, **parts["train"]),
            data=dataclasses.replace(self.data, **parts["data"]),
        )

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        base = cls()
        types = {}
        for part in (base.model, base.train, base.data):
            for f in fields(part):
                types[f.name] = type(getattr(part, f.name))
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" in line:
                key, value = (s.strip() for s in line.split("=", 1))
            else:
                key, _, value = line.partition(" ")
                value = value.strip()
            if key not in types:
                raise KeyError(f"line {lineno}: unknown config key {key!r}")
            values[key] = _coerce(value, types[key])
        return base.update(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def parse_bool(value: str) -> bool:
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _coerce(value: str, kind: type):
    if kind is bool:
        return parse_bool(value)
    if kind is tuple:
        return tuple(int(v) for v in value.replace("x", ",").split(",") if v.strip())
    if kind is int:
        return int(float(value))
    return kind(value)
