"""Run configuration stored as an INI file.

Every key is optional; missing keys take the defaults below. Unknown
sections or keys are reported as warnings, not errors. See README for the
full key list.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .coopt import SELECTIONS
from .dgn import TrainConfig
from .errors import ConfigError
from .reservoir import UPDATE_RULES, EsnConfig

UPDATE_RULE_ALIASES = {"paper": "paper_eq1", "standard": "standard_leaky"}


@dataclass
class SynthSection:
    n_subjects: int = 20
    n_regions: int = 35
    n_views: int = 4
    classes: int = 2
    noise_sigma: float = 0.1
    view_scales: tuple = ()


@dataclass
class CooptSection:
    readout_refit_every: int = 10
    selection: str = "combined_loss"


@dataclass
class RecallSection:
    lags: tuple = tuple(range(5, 41))
    n_train_frames: int = 15
    n_test_frames: int = 5
    image_offset: int = 0
    image_size: tuple = (10, 10)


@dataclass
class RunSection:
    seed: int = 0
    folds: int = 5
    workers: int = 1


@dataclass
class RunConfig:
    synth: SynthSection = field(default_factory=SynthSection)
    dgn: TrainConfig = field(default_factory=TrainConfig)
    esn: EsnConfig = field(default_factory=EsnConfig)
    coopt: CooptSection = field(default_factory=CooptSection)
    recall: RecallSection = field(default_factory=RecallSection)
    run: RunSection = field(default_factory=RunSection)


# keys that exist on the dataclasses but are driven by [run] seed
_DERIVED = {("dgn", "seed"), ("esn", "seed")}

# short spellings accepted on input; dumps always use the full name
KEY_ALIASES = {"dgn": {"lr": "learning_rate"}}


def parse_int_list(text: str) -> tuple:
    """``"5-8, 12"`` -> ``(5, 6, 7, 8, 12)``. Non-negative integers only."""
    out = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValueError(f"empty range {part}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _coerce(key: str, raw: str, default):
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            if key == "view_scales":
                return tuple(float(t) for t in text.split(",") if t.strip())
            return parse_int_list(text)
        return text
    except ValueError as exc:
        raise ConfigError(key, f"cannot parse {raw!r} as {type(default).__name__}") from exc


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_from_mapping(sections: dict) -> tuple:
    """Build a :class:`RunConfig` from ``{section: {key: text}}``; returns ``(cfg, warnings)``."""
    warnings = []
    base = RunConfig()
    built = {}
    for sec_field in dataclasses.fields(RunConfig):
        name = sec_field.name
        default_obj = getattr(base, name)
        values = {}
        given = dict(sections.get(name, {}))
        for alias, full in KEY_ALIASES.get(name, {}).items():
            if alias in given:
                if full in given:
                    raise ConfigError(f"{name}.{alias}", f"given together with {full}")
                given[full] = given.pop(alias)
        for f in dataclasses.fields(default_obj):
            if (name, f.name) in _DERIVED:
                if f.name in given:
                    warnings.append(f"{name}.{f.name}: ignored, seeds come from run.seed")
                    given.pop(f.name)
                continue
            if f.name in given:
                raw = given.pop(f.name)
                if name == "esn" and f.name == "update_rule":
                    raw = UPDATE_RULE_ALIASES.get(raw.strip(), raw.strip())
                values[f.name] = _coerce(f"{name}.{f.name}", raw, getattr(default_obj, f.name))
        for extra in sorted(given):
            warnings.append(f"{name}.{extra}: unknown key")
        try:
            built[name] = dataclasses.replace(default_obj, **values)
        except (ValueError, TypeError) as exc:
            raise ConfigError(name, str(exc)) from exc
    for extra in sorted(set(sections) - set(built)):
        warnings.append(f"{extra}: unknown section")
    cfg = RunConfig(**built)
    cfg.dgn.seed = cfg.run.seed
    cfg.esn.seed = cfg.run.seed
    _validate(cfg)
    return cfg, warnings


def _validate(cfg: RunConfig) -> None:
    if cfg.esn.update_rule not in UPDATE_RULES:
        raise ConfigError("esn.update_rule", f"must be one of {UPDATE_RULES} or paper/standard")
    if cfg.coopt.selection not in SELECTIONS:
        raise ConfigError("coopt.selection", f"must be one of {SELECTIONS}")
    if cfg.coopt.readout_refit_every < 1:
        raise ConfigError("coopt.readout_refit_every", "must be >= 1")
    if len(cfg.recall.image_size) != 2 or min(cfg.recall.image_size) < 1:
        raise ConfigError("recall.image_size", "needs two positive integers")
    if cfg.recall.n_train_frames < 1 or cfg.recall.n_test_frames < 1:
        raise ConfigError("recall.n_train_frames", "train and test frame counts must be >= 1")
    if not cfg.recall.lags:
        raise ConfigError("recall.lags", "at least one lag is required")
    if cfg.run.folds < 1 or cfg.run.workers < 1:
        raise ConfigError("run.folds", "folds and workers must be >= 1")
    if cfg.synth.view_scales and len(cfg.synth.view_scales) != cfg.synth.n_views:
        raise ConfigError("synth.view_scales", "length must equal n_views")


def load_config(path=None) -> tuple:
    """Read an INI file (``None`` gives pure defaults); returns ``(cfg, warnings)``."""
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        path = Path(path)
        try:
            parser.read_string(path.read_text(), source=str(path))
        except configparser.Error as exc:
            raise ConfigError(str(path), f"malformed config ({exc})") from exc
    sections = {s: dict(parser.items(s)) for s in parser.sections()}
    return config_from_mapping(sections)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for sec_field in dataclasses.fields(RunConfig):
        obj = getattr(cfg, sec_field.name)
        lines.append(f"[{sec_field.name}]")
        for f in dataclasses.fields(obj):
            if (sec_field.name, f.name) in _DERIVED:
                continue
            lines.append(f"{f.name} = {_format(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(dump_config(cfg))
