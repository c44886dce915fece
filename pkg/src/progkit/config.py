"""Run configuration defaults with key=value file overrides.

A config file holds one ``key = value`` pair per line; blank lines and
``#`` comments are ignored. File values override the built-in defaults,
and command-line flags override both.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path


class ConfigError(Exception):
    """A configuration file fails to parse or holds an invalid value."""


@dataclass(frozen=True)
class RunConfig:
    """Tunable pipeline knobs shared across commands."""

    theta: float = 0.6
    epsilon: float = 0.4
    tau_s: float = 0.5
    k: int = 1
    target_ratio: float = 1.0
    min_insertions: int = 0
    max_insertions: int = 3
    max_balance_rounds: int = 10_000
    mismatch_fraction: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.theta <= 1.0:
            raise ConfigError(f"theta must be in (0, 1], got {self.theta}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if not 0.0 < self.tau_s < 1.0:
            raise ConfigError(f"tau_s must be in (0, 1), got {self.tau_s}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.target_ratio <= 0.0:
            raise ConfigError(
                f"target_ratio must be positive, got {self.target_ratio}"
            )
        if not 0 <= self.min_insertions <= self.max_insertions:
            raise ConfigError(
                "insertion bounds need 0 <= min_insertions <= max_insertions,"
                f" got {self.min_insertions}..{self.max_insertions}"
            )
        if self.max_balance_rounds < 1:
            raise ConfigError(
                f"max_balance_rounds must be >= 1, got {self.max_balance_rounds}"
            )
        if not 0.0 <= self.mismatch_fraction <= 1.0:
            raise ConfigError(
                f"mismatch_fraction must be in [0, 1], got {self.mismatch_fraction}"
            )


def _field_types() -> dict[str, type]:
    defaults = RunConfig()
    return {
        f.name: type(getattr(defaults, f.name))
        for f in dataclasses.fields(RunConfig)
    }


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse key=value lines into a RunConfig, rejecting unknown keys."""
    types = _field_types()
    overrides: dict[str, float | int] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, equals, value = line.partition("=")
        if not equals:
            raise ConfigError(
                f"{source} line {number}: expected key=value, got {line!r}"
            )
        key = key.strip()
        value = value.strip()
        if key not in types:
            raise ConfigError(
                f"{source} line {number}: unknown key {key!r};"
                f" valid keys: {', '.join(sorted(types))}"
            )
        if key in overrides:
            raise ConfigError(f"{source} line {number}: duplicate key {key!r}")
        caster = types[key]
        try:
            overrides[key] = caster(value)
        except ValueError as exc:
            raise ConfigError(
                f"{source} line {number}: {key} expects"
                f" {caster.__name__}, got {value!r}"
            ) from exc
    return RunConfig(**overrides)


def load_config(path: str | Path) -> RunConfig:
    """Read and parse a configuration file."""
    resolved = Path(path)
    return parse_config(resolved.read_text(encoding="utf-8"), source=str(resolved))
