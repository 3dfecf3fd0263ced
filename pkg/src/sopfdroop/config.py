"""Run configuration: ``key = value`` files with command-line overrides.

Example file::

    # sopfdroop run
    network = builtin
    tau1 = 0.3
    tau2 = 0.7
    epsilon = 0.05
    degree = 2
    margin_rule = chebyshev
    k_base = 20
    n_per_zone = 30
    seed = 0
    mc_samples = 10000
    forecast = 0.5, 0.4
    out = results

Blank lines and ``#`` comments are ignored.  Unknown keys are an error.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

from .errors import PreconditionError
from .sopf import MarginRule
from .wind import ZoneConfig

OUT_ENV = "SOPFDROOP_OUT"


class ConfigError(PreconditionError):
    pass


@dataclass(frozen=True)
class RunConfig:
    network: str = "builtin"
    tau1: float = 0.3
    tau2: float = 0.7
    epsilon: float = 0.05
    degree: int = 2
    margin_rule: MarginRule = MarginRule.CHEBYSHEV
    k_base: float = 20.0
    n_per_zone: int = 30
    seed: int = 0
    mc_samples: int = 10_000
    out: str = "results"
    zone_stats: Optional[str] = None        # CSV from fit-zones; built-in table when unset
    calibration: Optional[str] = None       # CSV from calibrate; benchmark self-calibrates when unset
    forecast: tuple[float, ...] = (0.5, 0.5)
    jobs: int = 1

    def __post_init__(self):
        try:
            ZoneConfig(self.tau1, self.tau2)
        except PreconditionError as e:
            raise ConfigError(str(e)) from None
        if not 0.0 < self.epsilon < 0.5:
            raise ConfigError(f"epsilon must lie in (0, 0.5), got {self.epsilon}")
        if self.degree < 0:
            raise ConfigError(f"degree must be >= 0, got {self.degree}")
        if not self.k_base > 0:
            raise ConfigError(f"k_base must be positive, got {self.k_base}")
        if self.n_per_zone < 1:
            raise ConfigError(f"n_per_zone must be >= 1, got {self.n_per_zone}")
        if self.mc_samples < 2:
            raise ConfigError(f"mc_samples must be >= 2, got {self.mc_samples}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if not self.forecast or any(not 0.0 <= p <= 1.0 for p in self.forecast):
            raise ConfigError(f"forecast values must lie in [0, 1], got {self.forecast}")

    @property
    def zones(self) -> ZoneConfig:
        return ZoneConfig(self.tau1, self.tau2)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _convert(key: str, text: str):
    default = getattr(RunConfig, key, None)
    try:
        if key == "margin_rule":
            t = text.strip().lower()
            for rule in MarginRule:
                if t in (rule.value.lower(), rule.name.lower()):
                    return rule
            raise ValueError(t)
        if key == "forecast":
            return tuple(float(t) for t in text.replace(",", " ").split())
        if key in ("zone_stats", "calibration"):
            return text or None
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def parse_config(text: str, source: str = "<config>") -> dict:
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        values[key] = _convert(key, val)
    return values


def load_config(path=None, overrides: Optional[dict] = None, env=None) -> RunConfig:
    """Defaults, then the file, then the output-dir env var, then explicit overrides."""
    env = os.environ if env is None else env
    values = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        values.update(parse_config(p.read_text(), str(p)))
    if env.get(OUT_ENV):
        values["out"] = env[OUT_ENV]
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        values[k] = _convert(k, v) if isinstance(v, str) else v
    return replace(RunConfig(), **values) if values else RunConfig()


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, MarginRule):
            v = v.value
        elif isinstance(v, tuple):
            v = ", ".join(repr(x) for x in v)
        elif v is None:
            v = ""
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
