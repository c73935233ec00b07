'''
Experiment configuration files.

A config file is a list of `key = value` lines. It is tokenised with
python-dotenv's parser, so `#` comments, quoting and blank lines behave as in
a `.env` file. Unknown keys are errors; missing keys keep their defaults.
'''
from __future__ import annotations

import io
from dataclasses import dataclass, field, fields, replace
from typing import Callable

from dotenv.parser import parse_stream

from models.agents import DqnHyperparams
from models.mdp_env import EnvConfig

SCHEMES = ("with-cache", "no-cache", "myopic-static")


class ConfigError(ValueError):
    """Invalid configuration; `line` is 1-based when the problem sits on one line."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None, path=None):
        self.line = line
        self.key = key
        self.path = path
        where = f"{path}" if path is not None else "config"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    hyper: DqnHyperparams = field(default_factory=DqnHyperparams)
    seed: int = 0
    out_dir: str = "results"
    scheme: str = "with-cache"
    sweep_p_stay: tuple[float, ...] = (0.3, 0.489, 0.7, 0.9, 1.0)
    replicas: int = 3
    mc_samples: int = 200
    tabular_slots: int = 20_000
    full_episodes: int = 5000

    def __post_init__(self):
        object.__setattr__(self, "sweep_p_stay", tuple(float(p) for p in self.sweep_p_stay))
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {', '.join(SCHEMES)}, got {self.scheme!r}")
        bad = [p for p in self.sweep_p_stay if not 0.0 < p <= 1.0]
        if bad:
            raise ValueError(f"sweep_p_stay values must lie in (0, 1], got {bad}")
        if self.replicas < 1:
            raise ValueError(f"replicas must be >= 1, got {self.replicas}")
        if self.mc_samples < 1:
            raise ValueError(f"mc_samples must be >= 1, got {self.mc_samples}")
        if self.tabular_slots < 1:
            raise ValueError(f"tabular_slots must be >= 1, got {self.tabular_slots}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")


def _parse_int(text):
    return int(text)


def _parse_float(text):
    return float(text)


def _parse_str(text):
    if not text:
        raise ValueError("empty value")
    return text


def _list_of(item):
    def parse(text):
        return tuple(item(part.strip()) for part in text.split(",") if part.strip())
    return parse


def _format(value):
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


_TYPE_NAMES = {_parse_int: "an integer", _parse_float: "a number", _parse_str: "a string"}

# key -> (section, parser); section None means a top-level ExperimentConfig field
_KEYS: dict[str, tuple[str | None, Callable]] = {}
for _f in fields(EnvConfig):
    _KEYS[_f.name] = ("env", _parse_int if _f.type in ("int", int) else _parse_float)
for _f in fields(DqnHyperparams):
    if _f.name == "hidden":
        _KEYS[_f.name] = ("hyper", _list_of(_parse_int))
    else:
        _KEYS[_f.name] = ("hyper", _parse_int if _f.type in ("int", int) else _parse_float)
_KEYS.update({
    "seed": (None, _parse_int),
    "out_dir": (None, _parse_str),
    "scheme": (None, _parse_str),
    "sweep_p_stay": (None, _list_of(_parse_float)),
    "replicas": (None, _parse_int),
    "mc_samples": (None, _parse_int),
    "tabular_slots": (None, _parse_int),
    "full_episodes": (None, _parse_int),
})


def _binding_line(binding):
    # dotenv folds the blank lines before a binding into it
    text = binding.original.string
    leading = text[: len(text) - len(text.lstrip())]
    return binding.original.line + leading.count("\n")


def parse_config_text(text: str, path=None) -> ExperimentConfig:
    sections: dict[str | None, dict] = {"env": {}, "hyper": {}, None: {}}
    seen: dict[str, int] = {}

    for binding in parse_stream(io.StringIO(text)):
        line = _binding_line(binding)
        if binding.error:
            raise ConfigError("expected `key = value`", line=line, path=path)
        if binding.key is None:
            continue
        key = binding.key
        if binding.value is None:
            raise ConfigError(f"key {key!r} has no value", line=line, key=key, path=path)
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}", line=line, key=key, path=path)
        if key in seen:
            raise ConfigError(f"key {key!r} already set on line {seen[key]}", line=line, key=key, path=path)
        seen[key] = line

        section, parser = _KEYS[key]
        try:
            sections[section][key] = parser(binding.value.strip())
        except ValueError:
            expected = _TYPE_NAMES.get(parser, "a comma-separated list")
            raise ConfigError(f"{key} expects {expected}, got {binding.value!r}", line=line, key=key, path=path) from None

    try:
        env = EnvConfig(**sections["env"])
        hyper = DqnHyperparams(**sections["hyper"])
        return ExperimentConfig(env=env, hyper=hyper, **sections[None])
    except ValueError as e:
        raise ConfigError(str(e), path=path) from e


def load_config(path):
    """Read and validate a config file; an empty file yields the full defaults."""
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror or e}", path=path) from e
    return parse_config_text(text, path=path)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Every key with its current value, in a form `parse_config_text` reads back."""
    lines = []
    for key, (section, _) in _KEYS.items():
        owner = cfg if section is None else getattr(cfg, section)
        lines.append(f"{key} = {_format(getattr(owner, key))}")
    return "\n".join(lines) + "\n"


def apply_overrides(cfg, seed=None, out_dir=None, full=False):
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if out_dir is not None:
        cfg = replace(cfg, out_dir=out_dir)
    if full:
        cfg = replace(cfg, hyper=replace(cfg.hyper, episodes=cfg.full_episodes))
    return cfg
