"""One declarative YAML document drives a whole experiment.

Sections mirror the pipeline stages (augment, head, train, cv, stats,
explain); missing keys fall back to the package defaults, unknown keys are
configuration errors, and the ``HYDRO_SEED`` environment variable overrides
both the fold-plan seed and the training seed.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .model import HeadConfig, OneCycleConfig, TrainConfig
from .preprocess import AugmentPolicy, NormalizationStats

SEED_ENV_VAR = "HYDRO_SEED"


@dataclass(frozen=True)
class CVConfig:
    j: int = 5
    k: int = 5
    seed: int = 7
    group_by_patient: bool = True
    val_fraction: float = 0.2


@dataclass(frozen=True)
class StatsConfig:
    n_resamples: int = 10_000
    threshold: float = 0.5
    objective: str = "max_youden"
    constraint: float | None = None
    seed: int = 0
    pooled: bool = False


@dataclass(frozen=True)
class ExplainConfig:
    target_layer: str = "final"
    alpha: float = 0.5


@dataclass
class PipelineConfig:
    manifest: str | None = None
    out_dir: str = "runs/latest"
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    normalization: NormalizationStats = field(default_factory=NormalizationStats)
    head: HeadConfig = field(default_factory=HeadConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    cv: CVConfig = field(default_factory=CVConfig)
    stats: StatsConfig = field(default_factory=StatsConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)

    def validate(self) -> None:
        try:
            self.augment.validate()
            self.normalization.validate()
            self.head.validate()
            self.train.validate()
        except Exception as exc:
            raise ConfigurationError(str(exc)) from exc

    def to_dict(self) -> dict:
        data = asdict(self)
        data["head"]["hidden_sizes"] = list(self.head.hidden_sizes)
        data["normalization"]["mean"] = list(self.normalization.mean)
        data["normalization"]["std"] = list(self.normalization.std)
        return data


def _build_section(cls, data: dict, section: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigurationError(
            f"unknown keys in section {section!r}: {', '.join(sorted(unknown))}"
        )
    return cls(**data)


def _coerce_section(cls, raw, section: str, tuple_keys: tuple[str, ...] = ()):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigurationError(f"section {section!r} must be a mapping")
    data = dict(raw)
    for key in tuple_keys:
        if key in data and isinstance(data[key], list):
            data[key] = tuple(data[key])
    return _build_section(cls, data, section)


def load_config(path: str | Path | None = None, env: dict | None = None) -> PipelineConfig:
    """Read a config file (or the defaults) and apply the seed override."""
    raw: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"malformed config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigurationError(f"config root must be a mapping: {path}")

    known = {
        "manifest",
        "out_dir",
        "augment",
        "normalization",
        "head",
        "train",
        "cv",
        "stats",
        "explain",
    }
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(f"unknown top-level config keys: {', '.join(sorted(unknown))}")

    train_raw = dict(raw.get("train") or {})
    one_cycle = None
    if train_raw.get("one_cycle") is not None:
        one_cycle = _coerce_section(OneCycleConfig, train_raw.pop("one_cycle"), "train.one_cycle")
    elif "one_cycle" in train_raw:
        train_raw.pop("one_cycle")
    train = _coerce_section(TrainConfig, train_raw, "train")
    train = replace(train, one_cycle=one_cycle)

    config = PipelineConfig(
        manifest=raw.get("manifest"),
        out_dir=raw.get("out_dir", "runs/latest"),
        augment=_coerce_section(AugmentPolicy, raw.get("augment"), "augment"),
        normalization=_coerce_section(
            NormalizationStats, raw.get("normalization"), "normalization", ("mean", "std")
        ),
        head=_coerce_section(HeadConfig, raw.get("head"), "head", ("hidden_sizes",)),
        train=train,
        cv=_coerce_section(CVConfig, raw.get("cv"), "cv"),
        stats=_coerce_section(StatsConfig, raw.get("stats"), "stats"),
        explain=_coerce_section(ExplainConfig, raw.get("explain"), "explain"),
    )

    env = os.environ if env is None else env
    seed_override = env.get(SEED_ENV_VAR)
    if seed_override is not None:
        try:
            seed = int(seed_override)
        except ValueError as exc:
            raise ConfigurationError(f"{SEED_ENV_VAR} must be an integer: {seed_override!r}") from exc
        config.cv = replace(config.cv, seed=seed)
        config.train = replace(config.train, seed=seed)

    config.validate()
    return config


def save_config(config: PipelineConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config.to_dict(), sort_keys=True), encoding="utf-8")
    return path
