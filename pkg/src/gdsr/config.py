"""``key = value`` run configuration spanning model, training, degradation and wavelet-loss settings."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .degradation import DegradationConfig
from .model import ModelConfig
from .trainer import TrainConfig, parse_key_values
from .wavelet import WaveletLossConfig

SECTIONS = ("model", "train", "degrade", "wavelet")


class ConfigError(ValueError):
    """Unknown key or uncoercible value in a run configuration."""


def _coerce(raw: str, current, key: str):
    if isinstance(current, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(current, tuple):
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        if not parts:
            raise ConfigError(f"{key}: empty list")
        sample = current[0] if current else ""
        return tuple(_coerce(p, sample, key) for p in parts)
    try:
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(current).__name__}") from None
    return raw


def _apply(obj, overrides: dict, section: str):
    current = {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)
               if not dataclasses.is_dataclass(getattr(obj, f.name))}
    values = dict(current)
    for key, raw in overrides.items():
        if key not in current:
            raise ConfigError(f"unknown key {section}.{key}")
        values[key] = _coerce(raw, current[key], f"{section}.{key}")
    return values


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    degrade: DegradationConfig = field(default_factory=DegradationConfig)
    wavelet: WaveletLossConfig = field(default_factory=WaveletLossConfig)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        try:
            pairs = parse_key_values(text)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        grouped = {s: {} for s in SECTIONS}
        for key, value in pairs.items():
            section, _, name = key.partition(".")
            if section not in grouped or not name:
                raise ConfigError(f"unknown key {key} (expected a {', '.join(SECTIONS)} prefix)")
            grouped[section][name] = value
        base = cls()
        try:
            model = ModelConfig(**_apply(base.model, grouped["model"], "model"))
            wavelet = WaveletLossConfig(**_apply(base.wavelet, grouped["wavelet"], "wavelet"))
            train = TrainConfig(**_apply(base.train, grouped["train"], "train"), wavelet=wavelet)
            deg_values = _apply(base.degrade, grouped["degrade"], "degrade")
            if "scale" not in grouped["degrade"]:
                deg_values["scale"] = model.scale
            degrade = DegradationConfig(**deg_values)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if degrade.scale != model.scale:
            raise ConfigError(f"degrade.scale {degrade.scale} differs from model.scale {model.scale}")
        return cls(model, train, degrade, wavelet)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())

    def items(self) -> list[tuple[str, object]]:
        out = []
        for section in SECTIONS:
            obj = getattr(self, section)
            for f in dataclasses.fields(obj):
                value = getattr(obj, f.name)
                if not dataclasses.is_dataclass(value):
                    out.append((f"{section}.{f.name}", value))
        return out

    def to_text(self) -> str:
        def fmt(v):
            return ", ".join(str(x) for x in v) if isinstance(v, tuple) else str(v)

        return "\n".join(f"{k} = {fmt(v)}" for k, v in self.items()) + "\n"
