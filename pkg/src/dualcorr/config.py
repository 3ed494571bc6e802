"""Flat ``key=value`` run configuration covering every module's settings.

A config file holds one ``key=value`` per line; ``#`` starts a comment.
Keys are the field names of the model, correspondence, loss-weight and
optimizer configs plus the clip sampling and split fields below. Unknown
keys are rejected so a typo never silently falls back to a default.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Mapping

from .correspondence import CorrespondenceConfig
from .model import ModelConfig
from .train_eval import LossWeights, OptimizerConfig, TrainConfig

SEED_ENV = "DUALCORR_SEED"

_SECTIONS = {
    "model": ModelConfig,
    "correspondence": CorrespondenceConfig,
    "weights": LossWeights,
    "optimizer": OptimizerConfig,
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = TrainConfig()
    train_split: str = "train"
    test_split: str = "test"

    @property
    def seed(self) -> int:
        return self.train.seed

    def items(self) -> list[tuple[str, object]]:
        """Every key with its effective value, in a fixed order."""
        out: list[tuple[str, object]] = []
        for section in _SECTIONS:
            obj = getattr(self.train, section)
            out += [(f.name, getattr(obj, f.name)) for f in fields(obj)]
        out += [("frames", self.train.frames), ("distance", self.train.distance), ("seed", self.train.seed)]
        out += [("train_split", self.train_split), ("test_split", self.test_split)]
        return out

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.items())

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    def with_overrides(self, pairs: Mapping[str, str]) -> "RunConfig":
        train = self.train
        top: dict[str, object] = {}
        section_updates: dict[str, dict[str, object]] = {s: {} for s in _SECTIONS}
        defaults = dict(self.items())
        owner = _key_owner()
        for key, raw in pairs.items():
            if key not in defaults:
                raise ConfigError(f"unknown config key {key!r}")
            value = _coerce(key, raw, defaults[key])
            section = owner.get(key)
            if section is None:
                top[key] = value
            else:
                section_updates[section][key] = value
        try:
            for section, updates in section_updates.items():
                if updates:
                    train = replace(train, **{section: replace(getattr(train, section), **updates)})
            train = replace(train, **{k: v for k, v in top.items() if k in ("frames", "distance", "seed")})
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        splits = {k: v for k, v in top.items() if k in ("train_split", "test_split")}
        return replace(self, train=train, **splits)


def _key_owner() -> dict[str, str]:
    owner: dict[str, str] = {}
    for section, cls in _SECTIONS.items():
        for f in fields(cls):
            if f.name in owner:
                raise AssertionError(f"config key {f.name!r} is ambiguous")
            owner[f.name] = section
    return owner


def _coerce(key: str, raw: str, default: object) -> object:
    raw = str(raw).strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_lines(lines: Iterable[str]) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        pairs[key.strip()] = value.strip()
    return pairs


def load_run_config(
    path: str | Path | None = None,
    overrides: Iterable[str] = (),
    environ: Mapping[str, str] | None = None,
) -> RunConfig:
    """File values, then ``key=value`` overrides; the seed falls back to the environment.

    The ``DUALCORR_SEED`` variable applies only when neither the file nor the
    overrides set ``seed``.
    """
    environ = os.environ if environ is None else environ
    pairs = parse_lines(Path(path).read_text().splitlines()) if path is not None else {}
    pairs.update(parse_lines(overrides))
    if "seed" not in pairs and SEED_ENV in environ:
        pairs["seed"] = environ[SEED_ENV]
    return RunConfig().with_overrides(pairs)
