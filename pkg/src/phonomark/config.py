"""Run configuration: one YAML document holding every module's parameters."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from .ml import FEATURE_SETS, ModelHyper
from .mps import MPSConfig
from .phonatory import PhonatoryConfig
from .pitch import PitchConfig

__all__ = ["ConfigError", "EvalConfig", "RunConfig", "load_config"]


class ConfigError(ValueError):
    """Malformed or unreadable configuration."""


@dataclass(frozen=True)
class EvalConfig:
    repeats: int = 100
    test_frac: float = 0.2
    feature_sets: tuple = FEATURE_SETS
    alpha: float = 0.05

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if not 0 < self.test_frac < 1:
            raise ValueError("test_frac must lie in (0, 1)")
        bad = set(self.feature_sets) - set(FEATURE_SETS)
        if bad:
            raise ValueError(f"unknown feature sets {sorted(bad)}")


_SECTIONS = {
    "pitch": PitchConfig,
    "phonatory": PhonatoryConfig,
    "mps": MPSConfig,
    "model": ModelHyper,
    "evaluation": EvalConfig,
}


def _build(cls, raw, where):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kw = {}
    for k, v in raw.items():
        default = known[k].default
        kw[k] = tuple(v) if isinstance(default, tuple) and isinstance(v, list) else v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    pitch: PitchConfig = field(default_factory=PitchConfig)
    phonatory: PhonatoryConfig = field(default_factory=PhonatoryConfig)
    mps: MPSConfig = field(default_factory=MPSConfig)
    model: ModelHyper = field(default_factory=ModelHyper)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, d):
        d = d or {}
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a mapping")
        unknown = sorted(set(d) - set(_SECTIONS) - {"seed"})
        if unknown:
            raise ConfigError(f"unknown top-level keys {unknown}")
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        return cls(seed=seed, **{k: _build(c, d.get(k), k) for k, c in _SECTIONS.items()})

    def to_dict(self):
        out = {"seed": self.seed}
        for k in _SECTIONS:
            sec = asdict(getattr(self, k))
            out[k] = {kk: list(v) if isinstance(v, tuple) else v for kk, v in sec.items()}
        return out

    def dump(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=True, default_flow_style=False)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, seed=None, repeats=None, test_frac=None, feature_sets=None):
        ev = self.evaluation
        try:
            ev = replace(
                ev,
                repeats=ev.repeats if repeats is None else repeats,
                test_frac=ev.test_frac if test_frac is None else test_frac,
                feature_sets=ev.feature_sets if not feature_sets else tuple(feature_sets),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return replace(self, seed=self.seed if seed is None else seed, evaluation=ev)


def load_config(path=None) -> RunConfig:
    """Read a YAML config; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return RunConfig.from_dict(raw)
