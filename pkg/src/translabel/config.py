"""Run configuration: YAML schema, defaults, and whole-file validation.

Validation collects every problem it can find and reports them as one
error, so a bad file is fixed in one round trip instead of many.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from typing import Optional

import yaml

from .vocab import DEFAULT_MIN_COUNT

TRAIN_MODES = ("monolingual", "multilingual", "crosslingual")
CORPUS_FORMATS = ("conll09", "conll05", "parallel")


class ConfigError(ValueError):
    """One or more problems with a run configuration."""

    def __init__(self, problems: list[str]):
        super().__init__("bad configuration:\n  - " + "\n  - ".join(problems))
        self.problems = problems


@dataclass
class CorpusSpec:
    path: str
    format: str = "conll09"
    lang: str = "EN"

    def validate(self, prefix: str, problems: list[str], base_dir: str = ".") -> None:
        if self.format not in CORPUS_FORMATS:
            problems.append(
                f"{prefix}: unknown format {self.format!r}, expected one of {CORPUS_FORMATS}")
        if not self.path:
            problems.append(f"{prefix}: missing path")
        elif not os.path.exists(os.path.join(base_dir, self.path)):
            problems.append(f"{prefix}: no such file: {self.path}")
        if self.format in ("conll09", "conll05") and not self.lang:
            problems.append(f"{prefix}: labeled corpus needs a language tag")


@dataclass
class ModelSection:
    d_w: int = 64
    d_p: int = 8
    d_l: int = 8
    d_h: int = 64
    d_s: int = 128
    d_a: int = 64
    enc_layers: int = 2
    enc_style: str = "bidi"


@dataclass
class EmbeddingSection:
    path: Optional[str] = None
    dim: Optional[int] = None


@dataclass
class TrainConfig:
    mode: str = "monolingual"
    corpora: list[CorpusSpec] = field(default_factory=list)
    dev: Optional[CorpusSpec] = None
    out_dir: str = "runs/out"
    seed: int = 13
    precision: int = 32
    batch_size: int = 16
    epochs: int = 50
    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    mt_data_cap: float = 0.5
    min_count: int = DEFAULT_MIN_COUNT
    patience: int = 5
    eval_every: int = 5
    state_every: int = 0          # extra mid-epoch state saves, in steps (0 = off)
    max_decode_len: int = 100
    stop_train_acc: Optional[float] = None
    model: ModelSection = field(default_factory=ModelSection)
    embeddings: EmbeddingSection = field(default_factory=EmbeddingSection)
    base_dir: str = "."

    def corpus_path(self, spec: CorpusSpec) -> str:
        return os.path.join(self.base_dir, spec.path)

    def validate(self) -> None:
        problems: list[str] = []
        if self.mode not in TRAIN_MODES:
            problems.append(f"mode must be one of {TRAIN_MODES}, got {self.mode!r}")
        if not self.corpora:
            problems.append("at least one training corpus is required")
        for i, spec in enumerate(self.corpora):
            spec.validate(f"corpora[{i}]", problems, self.base_dir)
        if self.dev is not None:
            self.dev.validate("dev", problems, self.base_dir)
        if self.mode == "crosslingual":
            bad = [s.path for s in self.corpora if s.format != "parallel"]
            if bad:
                problems.append(f"crosslingual training reads parallel corpora, got {bad}")
        else:
            bad = [s.path for s in self.corpora if s.format == "parallel"]
            if bad:
                problems.append(f"{self.mode} training reads column corpora, got {bad}")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if self.learning_rate <= 0:
            problems.append("learning_rate must be positive")
        if self.clip_norm <= 0:
            problems.append("clip_norm must be positive")
        if not 0.0 <= self.mt_data_cap <= 1.0:
            problems.append(f"mt_data_cap must be in [0, 1], got {self.mt_data_cap}")
        if self.min_count < 1:
            problems.append("min_count must be >= 1")
        if self.patience < 1:
            problems.append("patience must be >= 1")
        if self.eval_every < 1:
            problems.append("eval_every must be >= 1")
        if self.max_decode_len < 1:
            problems.append("max_decode_len must be >= 1")
        if self.stop_train_acc is not None and not 0.0 < self.stop_train_acc <= 1.0:
            problems.append("stop_train_acc must be in (0, 1]")
        if self.precision not in (32, 64):
            problems.append(f"precision must be 32 or 64, got {self.precision}")
        if (self.embeddings.path is None) != (self.embeddings.dim is None):
            problems.append("embeddings need both path and dim (or neither)")
        if self.embeddings.path and self.embeddings.dim != self.model.d_w:
            problems.append(
                f"embeddings dim {self.embeddings.dim} must equal model d_w {self.model.d_w}")
        if problems:
            raise ConfigError(problems)

    def as_dict(self) -> dict:
        return asdict(self)


def _build_section(cls, raw, where: str, problems: list[str]):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        problems.append(f"{where}: expected a mapping")
        return cls()
    known = {f for f in cls.__dataclass_fields__}
    unknown = set(raw) - known
    if unknown:
        problems.append(f"{where}: unknown key(s) {sorted(unknown)}")
    kwargs = {k: v for k, v in raw.items() if k in known}
    try:
        return cls(**kwargs)
    except TypeError as err:
        problems.append(f"{where}: {err}")
        return cls()


def config_from_dict(raw: dict, base_dir: str = ".") -> TrainConfig:
    problems: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["configuration root must be a mapping"])
    raw = dict(raw)
    corpora_raw = raw.pop("corpora", [])
    dev_raw = raw.pop("dev", None)
    model_raw = raw.pop("model", None)
    emb_raw = raw.pop("embeddings", None)

    corpora = []
    if not isinstance(corpora_raw, list):
        problems.append("corpora: expected a list")
    else:
        for i, item in enumerate(corpora_raw):
            corpora.append(_build_section(CorpusSpec, item, f"corpora[{i}]", problems))
    dev = _build_section(CorpusSpec, dev_raw, "dev", problems) if dev_raw else None
    model = _build_section(ModelSection, model_raw, "model", problems)
    embeddings = _build_section(EmbeddingSection, emb_raw, "embeddings", problems)

    known = {f for f in TrainConfig.__dataclass_fields__} - {
        "corpora", "dev", "model", "embeddings", "base_dir"}
    unknown = set(raw) - known
    if unknown:
        problems.append(f"unknown key(s) {sorted(unknown)}")
    kwargs = {k: v for k, v in raw.items() if k in known}

    config = None
    try:
        config = TrainConfig(corpora=corpora, dev=dev, model=model,
                             embeddings=embeddings, base_dir=base_dir, **kwargs)
    except TypeError as err:
        problems.append(str(err))
    if problems:
        raise ConfigError(problems)
    assert config is not None
    if not os.path.isabs(config.out_dir):
        config.out_dir = os.path.join(base_dir, config.out_dir)
    config.validate()
    return config


def load_config(path: str) -> TrainConfig:
    try:
        with open(path, encoding="utf-8") as handle:
            raw = yaml.safe_load(handle)
    except FileNotFoundError:
        raise ConfigError([f"no such config file: {path}"]) from None
    except yaml.YAMLError as err:
        raise ConfigError([f"{path}: {err}"]) from None
    if raw is None:
        raise ConfigError([f"{path}: empty configuration"])
    return config_from_dict(raw, base_dir=os.path.dirname(os.path.abspath(path)))
