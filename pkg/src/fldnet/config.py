"""Plain-text ``key=value`` run configuration.

Keys are dotted ``section.field`` names mirroring the config dataclasses,
plus a top-level ``seed`` that every command requires.  Unknown keys are
rejected so typos never pass silently.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

from .data import SynthSpec
from .encoder import EncoderConfig
from .model import LCMConfig, ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class EvalConfig:
    threshold: float = 0.5


@dataclass
class GradCheckConfig:
    image_size: int = 32
    step: float = 1e-4
    op_tol: float = 1e-5
    model_tol: float = 1e-4
    max_coords: int = 64


@dataclass
class ModelHeadConfig:
    head_width: int = 32


SECTIONS = {
    "train": TrainConfig,
    "encoder": EncoderConfig,
    "lcm": LCMConfig,
    "model": ModelHeadConfig,
    "synth": SynthSpec,
    "eval": EvalConfig,
    "gradcheck": GradCheckConfig,
}
# filled from the top-level seed instead
_DERIVED = {("train", "seed"), ("synth", "seed")}


@dataclass
class RunConfig:
    seed: int | None = None
    sections: dict = field(default_factory=dict)

    def section(self, name: str):
        return self.sections[name]

    @property
    def train(self) -> TrainConfig:
        return self.sections["train"]

    @property
    def synth(self) -> SynthSpec:
        return self.sections["synth"]

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(self.sections["encoder"], self.sections["lcm"],
                           self.sections["model"].head_width)

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("config must set 'seed' (all randomness derives from it)")
        return self.seed

    def resolved(self) -> str:
        """Every key with its effective value, one per line."""
        lines = [f"seed={'' if self.seed is None else self.seed}"]
        for sec, obj in self.sections.items():
            for f in fields(obj):
                if (sec, f.name) in _DERIVED:
                    continue
                lines.append(f"{sec}.{f.name}={_format(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"


def _format(value) -> str:
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def config_keys() -> list[str]:
    keys = ["seed"]
    for sec, cls in SECTIONS.items():
        for f in fields(cls):
            if (sec, f.name) not in _DERIVED:
                keys.append(f"{sec}.{f.name}")
    return keys


def _coerce(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse value {raw!r}") from None
    return raw


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in config_keys():
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = raw

    seed = None
    if "seed" in values:
        seed = _coerce(values.pop("seed"), 0, "seed")
    sections = {}
    for sec, cls in SECTIONS.items():
        kwargs = {}
        for f in fields(cls):
            key = f"{sec}.{f.name}"
            if key in values:
                default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
                kwargs[f.name] = _coerce(values[key], default, key)
            elif (sec, f.name) in _DERIVED and seed is not None:
                kwargs[f.name] = seed
        try:
            sections[sec] = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: {exc}") from None
    return RunConfig(seed, sections)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))
