"""Run configuration as flat ``section.key = value`` text.

Sections map onto the dataclasses that already carry the defaults::

    sim.duration = 20
    model.core_hidden = 64
    train.epochs = 50
    data.augment_deg = 0, 10
    # comments and blank lines are ignored

Tuples are comma separated, rows of a table by ``;`` (as in
``train.ratio_schedule = 0.6, 100; 0.8, 10; 1, 0.1``). ``none`` clears an
optional value. Unknown sections or keys are errors.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .evaluation import DESK_SEGMENTS
from .model import ModelConfig
from .simulator import TrajectorySpec
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    n_sequences: int = 5
    n_val: int = 1
    n_test: int = 1
    augment_deg: tuple = ()  # calibration magnitudes for training copies, empty: none
    kappa: float = 50.0
    seed: int = 0


@dataclass
class EvalConfig:
    segments: tuple = DESK_SEGMENTS
    align: str = "first"
    magnitudes: tuple = (0.0, 5.0, 10.0, 15.0)
    offsets: tuple = (0.0, 0.05, 0.1, 0.2)
    kappa: float = 50.0
    seed: int = 0


@dataclass
class RunConfig:
    sim: TrajectorySpec = field(default_factory=TrajectorySpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


SECTIONS = {"sim": TrajectorySpec, "model": ModelConfig, "train": TrainConfig, "data": DataConfig, "eval": EvalConfig}
# not expressible as flat text
HIDDEN = {("sim", "control_poses")}


def fields_of(section):
    return [f for f in dataclasses.fields(SECTIONS[section]) if (section, f.name) not in HIDDEN]


def _scalar(text, like):
    if isinstance(like, bool):
        low = text.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, str):
        return text
    # unknown or absent default: the narrowest numeric type that parses
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def parse_value(text, default):
    text = text.strip()
    if text.lower() == "none":
        return None
    if isinstance(default, tuple):
        if not text:
            return ()
        like = default[0] if default else None
        if isinstance(like, tuple):
            return tuple(parse_value(p, like) for p in text.split(";"))
        parts = [p.strip() for p in text.split(",")]
        if isinstance(like, int) and not isinstance(like, bool) and any("." in p or "e" in p.lower() for p in parts):
            like = 1.0
        return tuple(_scalar(p, like) for p in parts)
    return _scalar(text, default)


def format_value(value):
    if value is None:
        return "none"
    if isinstance(value, tuple):
        sep = "; " if value and isinstance(value[0], tuple) else ", "
        return sep.join(format_value(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_lines(lines, source="<config>"):
    """{(section, key): raw text}, with located errors for malformed lines."""
    out = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected section.key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        out[_split_key(key, f"{source}:{lineno}")] = value
    return out


def _split_key(key, where):
    if "." not in key:
        raise ConfigError(f"{where}: key {key!r} needs a section prefix ({', '.join(SECTIONS)})")
    section, name = key.split(".", 1)
    if section not in SECTIONS:
        raise ConfigError(f"{where}: unknown section {section!r}")
    if name not in {f.name for f in fields_of(section)}:
        raise ConfigError(f"{where}: unknown key {key!r}")
    return section, name


def build(raw, base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    updates = {s: {} for s in SECTIONS}
    for (section, name), text in raw.items():
        default = getattr(getattr(base, section), name)
        try:
            updates[section][name] = parse_value(text, default)
        except ValueError as exc:
            raise ConfigError(f"{section}.{name}: {exc}") from exc
    parts = {}
    for section in SECTIONS:
        current = getattr(base, section)
        try:
            parts[section] = dataclasses.replace(current, **updates[section]) if updates[section] else current
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}] {exc}") from exc
    return RunConfig(**parts)


def load_config(path=None, overrides=()) -> RunConfig:
    """File values first, then ``section.key=value`` overrides in order."""
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file {p} not found")
        raw.update(parse_lines(p.read_text().splitlines(), str(p)))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected section.key=value")
        key, value = item.split("=", 1)
        raw[_split_key(key.strip(), f"override {item!r}")] = value
    return build(raw)


def dump_config(cfg: RunConfig):
    lines = []
    for section in SECTIONS:
        obj = getattr(cfg, section)
        for f in fields_of(section):
            lines.append(f"{section}.{f.name} = {format_value(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"
