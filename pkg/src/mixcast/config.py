"""Experiment configuration: one file of key=value sections plus dotted-path
command-line overrides (``section.key=value``).

All defaults live on the dataclasses below; a config file overrides defaults
and ``--set`` overrides the file.  Overrides may only reference existing
keys, and every run report embeds the fully merged snapshot so a run can be
reproduced from its artifacts alone.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig


@dataclass
class RunSection:
    name: str = "run"
    out_dir: str = ""          # empty: $MIXCAST_OUT or ./out
    jobs: int = 1


@dataclass
class DataSection:
    name: str = "synthetic"
    path: str = ""
    frequency: str = ""
    ett_protocol: bool = False
    ratio_train: float | None = None
    ratio_val: float | None = None
    ratio_test: float | None = None
    # zero-shot target dataset
    target_name: str = ""
    target_path: str = ""
    target_frequency: str = ""
    target_ett_protocol: bool = False

    def ratios(self) -> tuple[float, float, float] | None:
        parts = (self.ratio_train, self.ratio_val, self.ratio_test)
        if all(p is None for p in parts):
            return None
        if any(p is None for p in parts):
            raise ConfigError("ratio overrides need all three of train/val/test")
        return parts  # validated by SplitSpec


@dataclass
class ProtocolSection:
    kind: str = "long_term"                 # long_term | few_shot | zero_shot
    horizons: tuple[int, ...] = (96,)
    fraction: float = 0.05                  # few-shot training fraction

    def __post_init__(self):
        if isinstance(self.horizons, list):
            self.horizons = tuple(self.horizons)
        if not self.horizons:
            raise ConfigError("at least one horizon is required")


@dataclass
class ExperimentConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    protocol: ProtocolSection = field(default_factory=ProtocolSection)

    def sections(self) -> dict[str, object]:
        return {"run": self.run, "data": self.data, "model": self.model,
                "train": self.train, "protocol": self.protocol}

    def snapshot(self) -> dict[str, str]:
        """Flattened ``section.key -> value`` view of the merged config."""
        snap: dict[str, str] = {}
        for sec_name, sec in self.sections().items():
            for f in dataclasses.fields(sec):
                snap[f"{sec_name}.{f.name}"] = _render(getattr(sec, f.name))
        return snap

    def replace_model(self, **kw) -> "ExperimentConfig":
        clone = copy_config(self)
        clone.model = clone.model.with_overrides(**kw)
        return clone


def copy_config(cfg: ExperimentConfig) -> ExperimentConfig:
    return ExperimentConfig(
        run=dataclasses.replace(cfg.run),
        data=dataclasses.replace(cfg.data),
        model=dataclasses.replace(cfg.model),
        train=dataclasses.replace(cfg.train),
        protocol=dataclasses.replace(cfg.protocol),
    )


def _render(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


# fields whose default is None still need a concrete parse type
_NONE_FIELD_TYPES = {
    "model.patch_pad": int,
    "model.d_hidden": int,
    "train.max_steps": int,
    "data.ratio_train": float,
    "data.ratio_val": float,
    "data.ratio_test": float,
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_value(key: str, raw: str, current) -> object:
    raw = raw.strip()
    if isinstance(current, bool):
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(current, tuple):
        try:
            return tuple(int(p) for p in raw.replace(" ", "").split(",") if p)
        except ValueError:
            raise ConfigError(f"{key}: expected comma-separated integers, got {raw!r}") from None
    if current is None:
        if raw.lower() in ("none", ""):
            return None
        target = _NONE_FIELD_TYPES.get(key, str)
    else:
        target = type(current)
    if target is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if target is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    return raw


def set_key(cfg: ExperimentConfig, dotted: str, raw: str) -> None:
    """Apply one ``section.key=value`` override; unknown keys are errors."""
    if "." not in dotted:
        raise ConfigError(f"override key must be section.key, got {dotted!r}")
    sec_name, key = dotted.split(".", 1)
    sections = cfg.sections()
    if sec_name not in sections:
        raise ConfigError(f"unknown config section {sec_name!r}")
    sec = sections[sec_name]
    names = {f.name for f in dataclasses.fields(sec)}
    if key not in names:
        raise ConfigError(f"unknown config key {dotted!r}")
    value = _parse_value(dotted, raw, getattr(sec, key))
    setattr(sec, key, value)
    # re-run dataclass validation
    if hasattr(sec, "__post_init__"):
        sec.__post_init__()


def load_config(path: str | Path | None = None,
                overrides: list[str] | None = None) -> ExperimentConfig:
    """Defaults, optionally overlaid by a config file, then by overrides."""
    cfg = ExperimentConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for sec_name in parser.sections():
            for key, raw in parser.items(sec_name):
                set_key(cfg, f"{sec_name}.{key}", raw)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        set_key(cfg, dotted.strip(), raw)
    return cfg
