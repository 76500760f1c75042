"""Flat key-value experiment configuration.

Format: one `key = value` per line, `#` comments, blank lines allowed.
Simulator keys carry a `sim.` prefix, training keys a `train.` prefix.
Unknown keys are rejected with the offending line number so typos cannot
silently fall back to defaults.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .env import ConfigError, SimConfig
from .train import TrainConfig

VARIANTS = ("ma_rdpg", "independent", "main_only_ew")


@dataclass
class ExperimentConfig:
    variant: str = "ma_rdpg"
    sim: SimConfig = field(default_factory=SimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple = ()          # paired seed list, used by `compare`
    plots: bool = True

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant '{self.variant}'")
        self.sim.validate()
        self.train.validate()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        sim = dataclasses.replace(self.sim, seed=seed)
        train = dataclasses.replace(self.train, seed=seed)
        return dataclasses.replace(self, sim=sim, train=train)

    def canonical_text(self) -> str:
        """Stable textual form used for hashing (excludes plot toggle)."""
        lines = [f"variant = {self.variant}"]
        for prefix, obj in (("sim", self.sim), ("train", self.train)):
            for f in sorted(dataclasses.fields(obj), key=lambda f: f.name):
                lines.append(f"{prefix}.{f.name} = {getattr(obj, f.name)!r}")
        if self.seeds:
            lines.append("seeds = " + ",".join(str(s) for s in self.seeds))
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()


def _convert(raw: str, typ, key: str, lineno: int):
    raw = raw.strip()
    try:
        if typ is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is str:
            return raw
    except ValueError:
        raise ConfigError(
            f"line {lineno}: cannot parse value '{raw}' for key '{key}' "
            f"as {typ.__name__}") from None
    raise ConfigError(f"line {lineno}: unsupported type for key '{key}'")


def parse_config_text(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    sim_fields = {f.name for f in dataclasses.fields(SimConfig)}
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)}

    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got "
                              f"'{stripped}'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key == "variant":
            cfg.variant = raw
        elif key == "plots":
            cfg.plots = _convert(raw, bool, key, lineno)
        elif key == "seeds":
            try:
                cfg.seeds = tuple(int(s) for s in raw.split(",") if s.strip())
            except ValueError:
                raise ConfigError(
                    f"line {lineno}: seeds must be a comma-separated list of "
                    "integers") from None
        elif key == "seed":
            seed = _convert(raw, int, key, lineno)
            cfg.sim.seed = seed
            cfg.train.seed = seed
        elif key.startswith("sim."):
            name = key[4:]
            if name not in sim_fields:
                raise ConfigError(f"line {lineno}: unknown key '{key}'")
            typ = type(getattr(cfg.sim, name))
            setattr(cfg.sim, name, _convert(raw, typ, key, lineno))
        elif key.startswith("train."):
            name = key[6:]
            if name not in train_fields:
                raise ConfigError(f"line {lineno}: unknown key '{key}'")
            typ = type(getattr(cfg.train, name))
            setattr(cfg.train, name, _convert(raw, typ, key, lineno))
        else:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text())
