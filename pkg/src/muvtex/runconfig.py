"""Run configuration: ``section.key = value`` text files, presets and overrides.

Sections are ``model`` (:class:`ModelConfig`), ``train`` (:class:`TrainConfig`),
``sample`` (:class:`SampleSettings`) and ``data`` (:class:`DataConfig`).  A
file may also use ``[section]`` headers, after which bare keys belong to that
section.  Lines starting with ``#`` are comments.  Unknown sections or keys
are errors.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .geomesh import FAMILIES, KINDS
from .muvnet import ModelConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    count: int = 16
    seed: int = 0
    kinds: tuple[str, ...] = KINDS
    textures: tuple[str, ...] = FAMILIES
    ratios: tuple[float, float, float] = (0.6, 0.25, 0.15)  # train-tex / train-mv / eval
    mv_size: int = 32
    atlas_res: int = 64
    # how training assets feed the two tasks:
    #   hybrid: train-tex -> img2tex, train-mv -> geo2mv
    #   split:  train-tex divided 3:2 between img2tex and geo2mv, train-mv unused
    pools: str = "hybrid"

    def __post_init__(self):
        self.kinds = tuple(self.kinds)
        self.textures = tuple(self.textures)
        self.ratios = tuple(float(r) for r in self.ratios)
        for k in self.kinds:
            if k not in KINDS:
                raise ConfigError(f"unknown primitive kind {k!r}; choose from {', '.join(KINDS)}")
        for t in self.textures:
            if t not in FAMILIES:
                raise ConfigError(f"unknown texture family {t!r}; choose from {', '.join(FAMILIES)}")
        if not self.kinds or not self.textures:
            raise ConfigError("kinds and textures must be non-empty")
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios) or abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ConfigError(f"ratios must be three non-negative numbers summing to 1, got {self.ratios}")
        if self.count < 1:
            raise ConfigError(f"count must be >= 1, got {self.count}")
        if self.pools not in ("hybrid", "split"):
            raise ConfigError(f"pools must be 'hybrid' or 'split', got {self.pools!r}")


@dataclass
class SampleSettings:
    steps: int = 30
    cf_view_index: int = 0
    seed: int = 0
    flow_shift: float = 1.0
    uv_only: bool = False
    use_ema: bool = True
    batch_size: int = 4


SECTIONS: dict[str, type] = {
    "model": ModelConfig,
    "train": TrainConfig,
    "sample": SampleSettings,
    "data": DataConfig,
}

# One-flag ablation switches.  Each maps to plain key=value overrides.
PRESETS: dict[str, dict[str, str]] = {
    "full": {},
    "no-geo-attention": {"model.use_geo": "false"},
    "no-decoupling": {"model.decoupled": "false"},
    "uv-only": {"train.uv_only": "true", "sample.uv_only": "true"},
    "3d-only": {"train.stage": "1"},
    "split-3d": {"train.stage": "2", "train.p_img2tex": "0.6", "data.pools": "split"},
    "hybrid": {"train.stage": "2", "train.p_img2tex": "0.6", "data.pools": "hybrid"},
    "flow-shift-5": {"train.flow_shift": "5", "sample.flow_shift": "5"},
    "tiny": {"model.dim": "48", "model.heads": "1", "model.depth": "1", "model.lora_rank": "2"},
}


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _convert(raw: str, default: Any) -> Any:
    raw = raw.strip()
    if isinstance(default, bool):
        return _parse_bool(raw)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        items = [x.strip() for x in raw.split(",") if x.strip()]
        if default and isinstance(default[0], float):
            return tuple(float(x) for x in items)
        return tuple(items)
    return raw


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _defaults(cls) -> dict[str, Any]:
    return {f.name: (f.default if f.default is not dataclasses.MISSING else f.default_factory())
            for f in fields(cls)}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sample: SampleSettings = field(default_factory=SampleSettings)
    data: DataConfig = field(default_factory=DataConfig)

    @classmethod
    def build(cls, overrides: dict[str, str] | None = None) -> "RunConfig":
        """Defaults updated with ``{"section.key": "value"}`` string overrides."""
        values = {s: {} for s in SECTIONS}
        for key, raw in (overrides or {}).items():
            section, _, name = key.partition(".")
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section {section!r} in {key!r}")
            defaults = _defaults(SECTIONS[section])
            if name not in defaults:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                values[section][name] = _convert(raw, defaults[name])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from None
        try:
            return cls(**{s: SECTIONS[s](**values[s]) for s in SECTIONS})
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def flat(self) -> dict[str, str]:
        out = {}
        for section in SECTIONS:
            obj = getattr(self, section)
            for f in fields(obj):
                out[f"{section}.{f.name}"] = _format(getattr(obj, f.name))
        return out

    def dump(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.flat().items())


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    section = ""
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"{origin}:{lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key:
            if not section:
                raise ConfigError(f"{origin}:{lineno}: key {key!r} needs a section prefix")
            key = f"{section}.{key}"
        out[key] = value
    return out


def load_run_config(path=None, presets=(), overrides: dict[str, str] | None = None) -> RunConfig:
    """Merge order: defaults < presets (in order) < config file < explicit overrides."""
    merged: dict[str, str] = {}
    for name in presets:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
        merged.update(PRESETS[name])
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        merged.update(parse_config_text(p.read_text(), str(p)))
    merged.update(overrides or {})
    return RunConfig.build(merged)
