"""Flat ``key = value`` config files.

Blank lines and ``#`` comments are ignored. Values are parsed according to
the type of the target dataclass field; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import os
from pathlib import Path

from .autodiff import ConfigurationError
from .data import ToyCorpusSpec
from .model import ModelConfig
from .trainer import TrainConfig

SEED_ENV = "XSPEECH_SEED"


def parse_pairs(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _parse_value(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(","))
        return raw
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None


def _defaults(cls) -> dict:
    return {f.name: getattr(cls(), f.name) for f in dataclasses.fields(cls)}


def _build(cls, pairs: dict[str, str]):
    defaults = _defaults(cls)
    kwargs = {k: _parse_value(k, v, defaults[k]) for k, v in pairs.items()}
    return cls(**kwargs)


def _seed_override(pairs: dict[str, str]) -> dict[str, str]:
    env = os.environ.get(SEED_ENV)
    if env is not None:
        pairs = dict(pairs, seed=env)
    return pairs


def corpus_spec_from_text(text: str) -> ToyCorpusSpec:
    pairs = _seed_override(parse_pairs(text))
    unknown = sorted(set(pairs) - set(_defaults(ToyCorpusSpec)))
    if unknown:
        raise ConfigurationError(f"unknown corpus spec keys: {unknown}")
    return _build(ToyCorpusSpec, pairs)


def run_config_from_text(text: str) -> tuple[ModelConfig, TrainConfig]:
    """One flat namespace covering model and training keys; ``seed`` sets both."""
    pairs = _seed_override(parse_pairs(text))
    mkeys, tkeys = set(_defaults(ModelConfig)), set(_defaults(TrainConfig))
    unknown = sorted(set(pairs) - mkeys - tkeys)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {unknown}")
    mconf = _build(ModelConfig, {k: v for k, v in pairs.items() if k in mkeys})
    tconf = _build(TrainConfig, {k: v for k, v in pairs.items() if k in tkeys})
    return mconf, tconf


def read_text(path) -> str:
    return Path(path).read_text() if path is not None else ""


def dump(obj) -> str:
    lines = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = str(v).lower()
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
