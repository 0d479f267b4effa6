"""Analysis configuration: defaults, key=value files and override merging."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

ATTRIBUTIONS = ("caller_only", "both_parties")
POPULARITY_MEASURES = ("episodes", "cooccurrences")
POI_NORMALIZATIONS = ("row", "global")
DISTANCE_GRAPHS = ("filtered", "unfiltered")
IET_ALIGNMENTS = ("centered", "left")

DEFAULT_BUCKETS = "1,2,3,4,5-9,10+"
WORKERS_ENV = "ENCOUNTER_ATLAS_WORKERS"


class ConfigError(ValueError):
    """Raised for malformed configuration files or out-of-range values."""


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError as exc:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from exc
        if value < 1:
            raise ConfigError(f"{WORKERS_ENV} must be >= 1, got {value}")
        return value
    return os.cpu_count() or 1


@dataclass(frozen=True)
class AnalysisConfig:
    window_seconds: int = 3600
    max_degree: int = 100
    iet_bin_seconds: int = 3600
    min_edge_pairs: int = 2000
    distance_floor_km: float = 0.1
    presence_attribution: str = "caller_only"
    rng_seed: int = 0
    tz_offset: float = 2.0
    distance_buckets: str = DEFAULT_BUCKETS
    popularity: str = "episodes"
    poi_normalization: str = "row"
    distance_graph: str = "filtered"
    iet_alignment: str = "centered"
    strict: bool = False
    workers: int = field(default_factory=default_workers)

    def __post_init__(self) -> None:
        for name in ("window_seconds", "iet_bin_seconds"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be strictly positive")
        if self.max_degree < 1:
            raise ConfigError("max_degree must be >= 1")
        if self.min_edge_pairs < 0:
            raise ConfigError("min_edge_pairs must be >= 0")
        if self.distance_floor_km < 0:
            raise ConfigError("distance_floor_km must be >= 0")
        if not -2**63 <= self.rng_seed < 2**64:
            raise ConfigError("rng_seed must fit in 64 bits")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        _check_choice("presence_attribution", self.presence_attribution, ATTRIBUTIONS)
        _check_choice("popularity", self.popularity, POPULARITY_MEASURES)
        _check_choice("poi_normalization", self.poi_normalization, POI_NORMALIZATIONS)
        _check_choice("distance_graph", self.distance_graph, DISTANCE_GRAPHS)
        _check_choice("iet_alignment", self.iet_alignment, IET_ALIGNMENTS)
        # Surface bad bucket specs at construction time.
        from .network import parse_buckets

        parse_buckets(self.distance_buckets)

    def replace(self, **changes: Any) -> "AnalysisConfig":
        return dataclasses.replace(self, **changes)

    def snapshot(self) -> dict[str, Any]:
        """Effective values, excluding knobs that must not affect outputs."""
        data = dataclasses.asdict(self)
        data.pop("workers")
        return data


def _check_choice(name: str, value: str, choices: tuple[str, ...]) -> None:
    if value not in choices:
        raise ConfigError(f"{name} must be one of {', '.join(choices)}; got {value!r}")


_ALIASES = {"attribution": "presence_attribution", "seed": "rng_seed"}
_ATTRIBUTION_SHORT = {"caller": "caller_only", "both": "both_parties"}


def coerce_values(raw: Mapping[str, Any]) -> dict[str, Any]:
    """Convert string values to the field types of AnalysisConfig."""
    types = {f.name: f.type for f in dataclasses.fields(AnalysisConfig)}
    out: dict[str, Any] = {}
    for key, value in raw.items():
        name = _ALIASES.get(key.replace("-", "_"), key.replace("-", "_"))
        if name not in types:
            raise ConfigError(f"unknown configuration key {key!r}")
        if isinstance(value, str):
            value = value.strip()
            kind = types[name]
            try:
                if kind == "int":
                    value = int(value)
                elif kind == "float":
                    value = float(value)
                elif kind == "bool":
                    lowered = value.lower()
                    if lowered not in ("true", "false", "1", "0", "yes", "no"):
                        raise ValueError(value)
                    value = lowered in ("true", "1", "yes")
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {value!r}") from exc
        if name == "presence_attribution":
            value = _ATTRIBUTION_SHORT.get(value, value)
        out[name] = value
    return out


def read_config_file(path: str | Path) -> dict[str, Any]:
    """Parse a ``key = value`` file; ``#`` starts a comment."""
    values: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return coerce_values(values)


def resolve_config(
    config_path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> AnalysisConfig:
    """Defaults, then file values, then overrides (flags win)."""
    merged: dict[str, Any] = {}
    if config_path is not None:
        merged.update(read_config_file(config_path))
    if overrides:
        merged.update(coerce_values({k: v for k, v in overrides.items() if v is not None}))
    return AnalysisConfig(**merged)
